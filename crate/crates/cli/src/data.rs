//! CSV ingestion with a column-role map.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use casf_core::estimator::Dataset;
use casf_core::panel::PanelDataset;
use nalgebra::{DMatrix, DVector};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Y,
    X(usize),
    Z(usize),
    V(usize),
    Id,
    Period,
}

impl std::str::FromStr for Role {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Usage(format!("unknown role {s:?}; expected y, x:j, z:j, v:j, id or period"));
        match s {
            "y" => Ok(Role::Y),
            "id" => Ok(Role::Id),
            "period" => Ok(Role::Period),
            _ => {
                let (kind, index) = s.split_once(':').ok_or_else(bad)?;
                let j: usize = index.parse().map_err(|_| bad())?;
                if j == 0 {
                    return Err(bad());
                }
                match kind {
                    "x" => Ok(Role::X(j - 1)),
                    "z" => Ok(Role::Z(j - 1)),
                    "v" => Ok(Role::V(j - 1)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Cross(Dataset),
    Panel(PanelDataset),
}

/// Column indices per role, with `x:j`, `z:j`, `v:j` required to be
/// contiguous from 1.
struct Layout {
    y: usize,
    x: Vec<usize>,
    z: Vec<usize>,
    v: Vec<usize>,
    id: Option<usize>,
    period: Option<usize>,
}

fn layout(headers: &[String], roles: &BTreeMap<String, String>) -> Result<Layout, CliError> {
    let mut by_role: BTreeMap<Role, usize> = BTreeMap::new();
    for (column, role) in roles {
        let role: Role = role.parse()?;
        let index = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| CliError::Usage(format!("role map names column {column:?}, which the header lacks")))?;
        if by_role.insert(role, index).is_some() {
            return Err(CliError::Usage(format!("role {role:?} assigned twice")));
        }
    }
    let block = |make: fn(usize) -> Role, name: &str| -> Result<Vec<usize>, CliError> {
        let cols: Vec<usize> = (0..).map_while(|j| by_role.get(&make(j)).copied()).collect();
        let total = by_role.keys().filter(|r| std::mem::discriminant(*r) == std::mem::discriminant(&make(0))).count();
        if total != cols.len() {
            return Err(CliError::Usage(format!("{name}:j roles must be numbered 1..k without gaps")));
        }
        Ok(cols)
    };
    let x = block(Role::X, "x")?;
    let z = block(Role::Z, "z")?;
    let v = block(Role::V, "v")?;
    let y = *by_role.get(&Role::Y).ok_or_else(|| CliError::Usage("role map has no y column".into()))?;
    if x.is_empty() {
        return Err(CliError::Usage("role map has no x:1 column".into()));
    }
    Ok(Layout {
        y,
        x,
        z,
        v,
        id: by_role.get(&Role::Id).copied(),
        period: by_role.get(&Role::Period).copied(),
    })
}

/// Reads a headed CSV. With both `id` and `period` roles the file is a long
/// panel and is reshaped to a balanced wide panel; otherwise it is a cross
/// section and needs `z` and `v` columns. Row order is preserved.
pub fn load_csv(path: &Path, roles: &BTreeMap<String, String>, target_period: Option<usize>) -> Result<Loaded, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read header of {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let lay = layout(&headers, roles)?;

    let numeric: Vec<usize> = std::iter::once(lay.y)
        .chain(lay.x.iter().copied())
        .chain(lay.z.iter().copied())
        .chain(lay.v.iter().copied())
        .chain(lay.period)
        .collect();
    let mut values: Vec<HashMap<usize, f64>> = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    let mut missing: Vec<u64> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("malformed CSV: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = HashMap::new();
        let mut row_missing = false;
        for &c in &numeric {
            let cell = record.get(c).unwrap_or("").trim();
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                row_missing = true;
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Data(format!("line {line}: column {:?} has non-numeric value {cell:?}", headers[c]))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("line {line}: column {:?} is not finite", headers[c])));
            }
            row.insert(c, v);
        }
        if let Some(c) = lay.id {
            let cell = record.get(c).unwrap_or("").trim();
            if cell.is_empty() {
                row_missing = true;
            }
            ids.push(cell.to_string());
        }
        if row_missing {
            missing.push(line);
        }
        values.push(row);
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(u64::to_string).collect();
        return Err(CliError::Data(format!("missing values on lines {}", list.join(", "))));
    }
    if values.is_empty() {
        return Err(CliError::Data(format!("{} has no data rows", path.display())));
    }

    let matrix = |cols: &[usize]| DMatrix::from_fn(values.len(), cols.len(), |i, j| values[i][&cols[j]]);
    match (lay.id, lay.period) {
        (Some(_), Some(p)) => {
            if !lay.z.is_empty() || !lay.v.is_empty() {
                return Err(CliError::Usage("panel files build z and v from history; drop the z/v roles".into()));
            }
            let periods: Vec<f64> = values.iter().map(|r| r[&p]).collect();
            let panel = reshape_panel(&ids, &periods, &matrix(&[lay.y]), &matrix(&lay.x), target_period)?;
            Ok(Loaded::Panel(panel))
        }
        (None, Some(_)) => Err(CliError::Usage("a period role needs an id role".into())),
        (id, None) => {
            if lay.z.is_empty() || lay.v.is_empty() {
                return Err(CliError::Usage("cross-sectional files need z:1 and v:1 roles".into()));
            }
            let y = DVector::from_iterator(values.len(), values.iter().map(|r| r[&lay.y]));
            let data = Dataset::new(y, matrix(&lay.x), matrix(&lay.z), matrix(&lay.v))?;
            Ok(Loaded::Cross(match id {
                Some(_) => data.with_unit_ids(ids)?,
                None => data,
            }))
        }
    }
}

/// Long to wide. Units keep their order of first appearance; periods are
/// sorted and numbered from 1.
pub fn reshape_panel(
    ids: &[String],
    periods: &[f64],
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    target_period: Option<usize>,
) -> Result<PanelDataset, CliError> {
    let mut levels: Vec<f64> = periods.iter().map(|p| p + 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut units: Vec<&str> = Vec::new();
    let mut unit_index: HashMap<&str, usize> = HashMap::new();
    for id in ids {
        unit_index.entry(id.as_str()).or_insert_with(|| {
            units.push(id.as_str());
            units.len() - 1
        });
    }
    let (n, t, dx) = (units.len(), levels.len(), x.ncols());
    let mut seen = vec![vec![None::<usize>; t]; n];
    for (row, (id, p)) in ids.iter().zip(periods).enumerate() {
        let u = unit_index[id.as_str()];
        let k = levels.binary_search_by(|l| l.total_cmp(&(p + 0.0))).expect("period level present");
        if seen[u][k].replace(row).is_some() {
            return Err(CliError::Data(format!("unit {id:?} has period {p} twice")));
        }
    }
    let incomplete: Vec<&str> = units
        .iter()
        .zip(&seen)
        .filter(|(_, s)| s.iter().any(Option::is_none))
        .map(|(u, _)| *u)
        .collect();
    if !incomplete.is_empty() {
        return Err(CliError::Core(casf_core::Error::UnbalancedPanel(format!(
            "units missing periods: {}",
            incomplete.join(", ")
        ))));
    }
    let row_of = |u: usize, k: usize| seen[u][k].expect("balanced");
    let wide_y = DMatrix::from_fn(n, t, |u, k| y[(row_of(u, k), 0)]);
    let wide_x = (0..t).map(|k| DMatrix::from_fn(n, dx, |u, j| x[(row_of(u, k), j)])).collect();
    let panel = PanelDataset::new(wide_y, wide_x, target_period.unwrap_or(t))?;
    Ok(panel.with_unit_ids(units.iter().map(|u| u.to_string()).collect())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn roles(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn role_parsing() {
        assert_eq!("x:2".parse::<Role>().unwrap(), Role::X(1));
        assert!("x:0".parse::<Role>().is_err());
        assert!("w:1".parse::<Role>().is_err());
    }

    #[test]
    fn cross_section_keeps_row_order() {
        let f = write("a,b,c,d,unused\n1,2,3,4,x\n5,6,7,8,y\n9,10,11,12,z\n");
        let r = roles(&[("a", "y"), ("b", "x:1"), ("c", "z:1"), ("d", "v:1")]);
        let Loaded::Cross(d) = load_csv(f.path(), &r, None).unwrap() else { panic!() };
        assert_eq!(d.n(), 3);
        assert_eq!(d.y.as_slice(), &[1.0, 5.0, 9.0]);
        assert_eq!(d.v[(2, 0)], 12.0);
    }

    #[test]
    fn data_errors_name_lines() {
        let r = roles(&[("a", "y"), ("b", "x:1"), ("c", "z:1"), ("d", "v:1")]);
        let f = write("a,b,c,d\n1,2,3,4\n1,,3,4\n1,2,NA,4\n");
        let err = load_csv(f.path(), &r, None).unwrap_err();
        assert!(matches!(err, CliError::Data(ref m) if m.contains("3") && m.contains("4")), "{err}");
        let f = write("a,b,c,d\n1,2,3,4\n1,two,3,4\n");
        let err = load_csv(f.path(), &r, None).unwrap_err();
        assert!(matches!(err, CliError::Data(ref m) if m.contains("line 3")), "{err}");
        assert!(matches!(
            load_csv(f.path(), &roles(&[("a", "y"), ("q", "x:1")]), None),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            load_csv(f.path(), &roles(&[("a", "y"), ("b", "x:2"), ("c", "z:1"), ("d", "v:1")]), None),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn long_panel_is_reshaped() {
        let mut text = String::from("unit,t,y,x\n");
        for u in ["b", "a"] {
            for p in (1..=10).rev() {
                text.push_str(&format!("{u},{p},{},{}\n", p * 10, p));
            }
        }
        let f = write(&text);
        let r = roles(&[("unit", "id"), ("t", "period"), ("y", "y"), ("x", "x:1")]);
        let Loaded::Panel(p) = load_csv(f.path(), &r, None).unwrap() else { panic!() };
        assert_eq!((p.n(), p.periods(), p.target_period), (2, 10, 10));
        assert_eq!(p.unit_ids.as_deref().unwrap(), &["b".to_string(), "a".to_string()]);
        assert_eq!(p.y[(0, 2)], 30.0);
        assert_eq!(p.x[4][(1, 0)], 5.0);
    }

    #[test]
    fn unbalanced_panel_names_units() {
        let mut text = String::from("unit,t,y,x\n");
        for u in ["a", "b"] {
            for p in 1..=10 {
                if u == "b" && p == 7 {
                    continue;
                }
                text.push_str(&format!("{u},{p},1,1\n"));
            }
        }
        let f = write(&text);
        let r = roles(&[("unit", "id"), ("t", "period"), ("y", "y"), ("x", "x:1")]);
        let err = load_csv(f.path(), &r, None).unwrap_err();
        assert!(matches!(err, CliError::Core(casf_core::Error::UnbalancedPanel(ref m)) if m.contains('b') && !m.contains('a')));
        assert_eq!(err.exit_code(), 2);
    }
}
