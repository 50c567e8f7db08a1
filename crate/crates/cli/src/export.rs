//! CSV and JSON export.

use std::fs;
use std::path::Path;

use magclt_core::experiments::EnsembleResult;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("nothing to export: {0} is empty")]
    Empty(&'static str),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const CSV_HEADER: &str = "sample_index,trace,z_value,seed";

/// One row per sample: `sample_index,trace,z_value,seed`.
pub fn ensemble_csv(result: &EnsembleResult) -> Result<String, ExportError> {
    if result.is_empty() {
        return Err(ExportError::Empty("ensemble"));
    }
    let mut out = String::with_capacity(64 * result.len());
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (s, z) in result.samples.iter().zip(&result.z) {
        out.push_str(&format!("{},{:e},{:e},{}\n", s.index, s.trace, z, s.seed));
    }
    Ok(out)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize");
    s.push('\n');
    s
}

pub fn write(path: &Path, text: &str) -> Result<(), ExportError> {
    fs::write(path, text).map_err(|source| ExportError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use magclt_core::experiments::SampleRecord;
    use magclt_core::geometry::BoundaryCondition;

    fn result(n: usize) -> EnsembleResult {
        let samples = (0..n)
            .map(|i| SampleRecord {
                index: i,
                seed: 100 + i as u64,
                trace: 1.0 + i as f64 / 7.0,
            })
            .collect();
        EnsembleResult::from_samples(1, 4, BoundaryCondition::Dirichlet, samples)
    }

    #[test]
    fn csv_rows_and_stability() {
        let r = result(5);
        let a = ensemble_csv(&r).unwrap();
        assert_eq!(a, ensemble_csv(&r.clone()).unwrap());
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 5);
        assert!(lines[1].starts_with("0,1e0,"));
    }

    #[test]
    fn empty_is_an_error() {
        let r = EnsembleResult::from_samples(1, 4, BoundaryCondition::Dirichlet, Vec::new());
        assert!(matches!(ensemble_csv(&r), Err(ExportError::Empty(_))));
    }
}
