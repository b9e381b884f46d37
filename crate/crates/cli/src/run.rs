//! Subcommand execution and report emission.

use std::fmt::Write as _;
use std::path::Path;

use casf_core::estimator::{
    asf_average, effect_table, fit, quantile_grid, Dataset, EffectTable, EstimatorConfig, FittedEstimator,
    ResolvedPenalties,
};
use casf_core::inference::{bootstrap, bootstrap_se, sup_t_bands, BootstrapConfig, BAND_CAVEAT};
use casf_core::oracle::{oracle_suite, random_model, SuiteConfig, SuiteReport};
use casf_core::panel::{order_condition, split_predetermined, split_with_outcomes, OrderCondition, ProxySplit};
use casf_core::simulate::{monte_carlo, MonteCarloConfig, MonteCarloReport, Scenario};
use serde::{Deserialize, Serialize};

use crate::config::{BandFunctional, RunConfig};
use crate::data::{load_csv, Loaded};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Estimate,
    PanelEstimate,
    Simulate,
    OracleSuite,
    Bands,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::PanelEstimate => "panel-estimate",
            Command::Simulate => "simulate",
            Command::OracleSuite => "oracle-suite",
            Command::Bands => "bands",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub warnings: Vec<String>,
    pub result: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub draws: usize,
    pub failed_draws: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub n: usize,
    pub penalties: ResolvedPenalties,
    pub targets: Vec<TargetEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effects: Option<EffectTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelResult {
    pub target_period: usize,
    pub periods: usize,
    pub split: ProxySplit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order_condition: Option<OrderCondition>,
    pub estimate: EstimateResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandsResult {
    pub functional: BandFunctional,
    pub x: Vec<f64>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub critical_value: f64,
    pub level: f64,
    pub draws: usize,
    pub failed_draws: usize,
    pub caveat: String,
}

/// What a run produced: the JSON report text, an optional CSV, and whether
/// the run counts as a failed check.
pub struct Output {
    pub report: String,
    pub csv: Option<String>,
    pub failed: Option<String>,
}

fn report<T: Serialize>(command: Command, config: &RunConfig, warnings: Vec<String>, result: T) -> Result<String, CliError> {
    let r = Report {
        command: command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config: config.clone(),
        warnings,
        result,
    };
    serde_json::to_string_pretty(&r).map_err(|e| CliError::Usage(format!("cannot serialize report: {e}")))
}

fn load(config: &RunConfig, target_period: Option<usize>) -> Result<Loaded, CliError> {
    let data = config
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs a [data] section or --data".into()))?;
    load_csv(&data.path, &data.roles, target_period)
}

fn estimator_for(config: &RunConfig, data: &Dataset) -> EstimatorConfig {
    config.estimator.build(data.x.ncols(), data.z.ncols(), data.v.ncols())
}

fn boot_config(config: &RunConfig) -> Option<BootstrapConfig> {
    config.bootstrap.as_ref().map(|b| BootstrapConfig {
        draws: b.draws,
        seed: config.seed,
        level: b.level,
        execution: config.execution,
    })
}

fn point_warnings(fitted: &FittedEstimator, points: &[&[f64]], warnings: &mut Vec<String>) {
    for p in points {
        if let Some(w) = fitted.extrapolation_warning(p) {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
    }
}

fn estimate_dataset(config: &RunConfig, data: &Dataset, warnings: &mut Vec<String>) -> Result<EstimateResult, CliError> {
    let targets = config.targets();
    if targets.is_empty() && config.effects.is_none() {
        return Err(CliError::Usage("nothing to estimate: add [[targets]] or [effects]".into()));
    }
    let est = estimator_for(config, data);
    let fitted = fit(data, &est)?;
    let estimates = targets
        .iter()
        .map(|(a, b)| fitted.casf(a, b))
        .collect::<casf_core::Result<Vec<f64>>>()?;
    for (a, b) in &targets {
        point_warnings(&fitted, &[a, b], warnings);
    }
    let (ses, summary) = match boot_config(config) {
        Some(boot) if !targets.is_empty() => {
            let se = bootstrap_se(data, &est, &targets, &boot)?;
            if se.failed_draws > 0 {
                warnings.push(format!("{} of {} bootstrap draws failed and were discarded", se.failed_draws, se.draws));
            }
            (
                se.standard_errors.into_iter().map(Some).collect(),
                Some(BootstrapSummary {
                    draws: se.draws,
                    failed_draws: se.failed_draws,
                    level: boot.level,
                }),
            )
        }
        _ => (vec![None; targets.len()], None),
    };
    let effects = match &config.effects {
        Some(e) => Some(effect_table(&fitted, &e.levels, &e.baseline)?),
        None => None,
    };
    Ok(EstimateResult {
        n: data.n(),
        penalties: fitted.penalties,
        targets: targets
            .into_iter()
            .zip(estimates)
            .zip(ses)
            .map(|(((x1, x2), estimate), se)| TargetEstimate { x1, x2, estimate, se })
            .collect(),
        bootstrap: summary,
        effects,
    })
}

fn estimate(config: &RunConfig) -> Result<Output, CliError> {
    let data = match load(config, None)? {
        Loaded::Cross(d) => d,
        Loaded::Panel(_) => return Err(CliError::Usage("estimate expects a cross-sectional file; use panel-estimate".into())),
    };
    let mut warnings = Vec::new();
    let result = estimate_dataset(config, &data, &mut warnings)?;
    Ok(Output {
        report: report(Command::Estimate, config, warnings, result)?,
        csv: None,
        failed: None,
    })
}

fn panel_estimate(config: &RunConfig) -> Result<Output, CliError> {
    let section = config.panel.clone().unwrap_or_default();
    let panel = match load(config, section.target_period)? {
        Loaded::Panel(p) => p,
        Loaded::Cross(_) => return Err(CliError::Usage("panel-estimate needs id and period roles".into())),
    };
    let (data, split) = if section.with_outcomes {
        split_with_outcomes(&panel)?
    } else {
        split_predetermined(&panel)?
    };
    let mut warnings = Vec::new();
    let order = section.dim_latent.map(|d| order_condition(d, &panel, section.with_outcomes));
    if let Some(o) = order.filter(|o| !o.pass) {
        warnings.push(format!(
            "order condition fails: latent dimension {} exceeds {}",
            section.dim_latent.unwrap_or(0),
            o.max_dim
        ));
    }
    let estimate = estimate_dataset(config, &data, &mut warnings)?;
    let result = PanelResult {
        target_period: panel.target_period,
        periods: panel.periods(),
        split,
        order_condition: order,
        estimate,
    };
    Ok(Output {
        report: report(Command::PanelEstimate, config, warnings, result)?,
        csv: None,
        failed: None,
    })
}

fn simulate(config: &RunConfig) -> Result<Output, CliError> {
    let section = config.simulate.clone().unwrap_or_default();
    let targets = config.targets();
    if targets.is_empty() {
        return Err(CliError::Usage("simulate needs [[targets]]".into()));
    }
    let scenario = match &section.discrete {
        Some(d) => {
            // Reserved stream, disjoint from the replication streams.
            let mut rng = casf_core::exec::stream_rng(config.seed, u64::MAX);
            let model = random_model(&mut rng, d.nw, d.nx, d.nz, d.nv, d.floor);
            model.validate()?;
            Scenario::Discrete {
                model,
                noise_sd: d.noise_sd,
            }
        }
        None => Scenario::Gaussian(section.gaussian),
    };
    // Both scenarios draw scalar X, Z and V.
    let estimator = config.estimator.build(1, 1, 1);
    let mc = MonteCarloConfig {
        estimator,
        n_list: section.n_list.clone(),
        reps: section.reps,
        seed: config.seed,
        targets,
        naive: section.naive,
        execution: config.execution,
    };
    let result: MonteCarloReport = monte_carlo(&scenario, &mc)?;
    let mut warnings = Vec::new();
    for s in &result.per_n {
        if s.failures > 0 {
            warnings.push(format!("{} of {} replications failed at n = {}", s.failures, section.reps, s.n));
        }
    }
    Ok(Output {
        report: report(Command::Simulate, config, warnings, result)?,
        csv: None,
        failed: None,
    })
}

fn run_oracle_suite(config: &RunConfig) -> Result<Output, CliError> {
    let section = config.oracle_suite.clone().unwrap_or_default();
    let suite = SuiteConfig {
        models: section.models,
        seed: config.seed,
        probes: section.probes,
        floor: section.floor,
    };
    let result: SuiteReport = oracle_suite(&suite)?;
    let failed = (!result.pass).then(|| {
        let names: Vec<&str> = result.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        format!("oracle checks failed: {}", names.join(", "))
    });
    Ok(Output {
        report: report(Command::OracleSuite, config, Vec::new(), result)?,
        csv: None,
        failed,
    })
}

fn bands(config: &RunConfig) -> Result<Output, CliError> {
    let section = config.bands.clone().unwrap_or_default();
    let data = match load(config, None)? {
        Loaded::Cross(d) => d,
        Loaded::Panel(_) => return Err(CliError::Usage("bands expects a cross-sectional file".into())),
    };
    if data.x.ncols() != 1 {
        return Err(CliError::Usage("bands need a scalar treatment".into()));
    }
    let grid = match &section.grid {
        Some(g) => g.clone(),
        None => {
            let xs: Vec<f64> = data.x.column(0).iter().copied().collect();
            quantile_grid(&xs, section.lower_quantile, section.upper_quantile, section.points)?
        }
    };
    let est = estimator_for(config, &data);
    let boot = boot_config(config).unwrap_or(BootstrapConfig {
        seed: config.seed,
        execution: config.execution,
        ..Default::default()
    });
    let functional = |d: &Dataset| -> casf_core::Result<Vec<f64>> {
        let fitted = fit(d, &est)?;
        match section.functional {
            BandFunctional::Diagonal => grid.iter().map(|&x| fitted.casf(&[x], &[x])).collect(),
            BandFunctional::FixedX2 => {
                let x2 = section.x2.unwrap_or_default();
                grid.iter().map(|&x| fitted.casf(&[x], &[x2])).collect()
            }
            BandFunctional::ScaledEffect => casf_core::estimator::scaled_effect_curve(&fitted, &grid, section.scale),
            BandFunctional::Asf => asf_average(&fitted, &grid.iter().map(|&x| vec![x]).collect::<Vec<_>>()),
        }
    };
    let draws = bootstrap(&data, &boot, functional)?;
    let b = sup_t_bands(&draws, boot.level);
    let mut warnings = vec![BAND_CAVEAT.to_string()];
    if b.failed_draws > 0 {
        warnings.push(format!("{} of {} bootstrap draws failed and were discarded", b.failed_draws, b.draws));
    }
    let fitted = fit(&data, &est)?;
    for &x in &grid {
        point_warnings(&fitted, &[&[x]], &mut warnings);
    }
    let mut csv = String::from("x,estimate,lo,hi\n");
    for g in 0..grid.len() {
        writeln!(csv, "{:.16e},{:.16e},{:.16e},{:.16e}", grid[g], b.estimates[g], b.lo[g], b.hi[g]).expect("string write");
    }
    let result = BandsResult {
        functional: section.functional,
        x: grid,
        estimate: b.estimates,
        se: b.standard_errors,
        lo: b.lo,
        hi: b.hi,
        critical_value: b.critical_value,
        level: b.level,
        draws: b.draws,
        failed_draws: b.failed_draws,
        caveat: b.caveat,
    };
    Ok(Output {
        report: report(Command::Bands, config, warnings, result)?,
        csv: Some(csv),
        failed: None,
    })
}

pub fn run(command: Command, config: &RunConfig) -> Result<Output, CliError> {
    config.validate()?;
    match command {
        Command::Estimate => estimate(config),
        Command::PanelEstimate => panel_estimate(config),
        Command::Simulate => simulate(config),
        Command::OracleSuite => run_oracle_suite(config),
        Command::Bands => bands(config),
    }
}

/// Writes the report (to a file or stdout) and the CSV, if any.
pub fn emit(config: &RunConfig, output: &Output) -> Result<(), CliError> {
    let write = |path: &Path, text: &str| {
        std::fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
    };
    match &config.output.report {
        Some(path) => write(path, &output.report)?,
        None => println!("{}", output.report),
    }
    if let Some(csv) = &output.csv {
        match &config.output.csv {
            Some(path) => write(path, csv)?,
            None => eprintln!("no output.csv path configured; plot data not written"),
        }
    }
    Ok(())
}
