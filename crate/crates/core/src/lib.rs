pub mod basis;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod inference;
pub mod oracle;
pub mod panel;
pub mod ridge;
pub mod simulate;

pub use error::{Error, ErrorClass, Result};
