//! Per-column min-max maps onto `[margin, 1 - margin]` and their inverses.

use serde::{Deserialize, Serialize};

use crate::dataset::Table;
use crate::error::{CliError, CliResult};

pub const DEFAULT_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ColumnMap {
    fn slope(&self, margin: f64) -> f64 {
        (1.0 - 2.0 * margin) / (self.max - self.min)
    }

    pub fn forward(&self, x: f64, margin: f64) -> f64 {
        margin + (x - self.min) * self.slope(margin)
    }

    pub fn inverse(&self, u: f64, margin: f64) -> f64 {
        self.min + (u - margin) / self.slope(margin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMetadata {
    pub margin: f64,
    /// Outcome and covariate columns in file order; `w` is never rescaled.
    pub columns: Vec<ColumnMap>,
    /// Factor converting a squared-Euclidean cost on rescaled outcomes back to
    /// original units; absent when outcome axes were scaled differently.
    pub outcome_cost_factor: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn fit(table: &Table, margin: f64) -> CliResult<AffineMetadata> {
    if !(0.0..0.5).contains(&margin) {
        return Err(CliError::Input(format!("margin {margin} must lie in [0, 0.5)")));
    }
    if table.rows.is_empty() {
        return Err(CliError::Degenerate("no data rows to rescale".into()));
    }
    let mut columns = Vec::with_capacity(table.header.len() - 1);
    for k in 1..table.header.len() {
        let (min, max) =
            table.rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[k]), hi.max(r[k])));
        if max <= min {
            return Err(CliError::Degenerate(format!("column '{}' is constant ({min}); zero range", table.header[k])));
        }
        columns.push(ColumnMap { name: table.header[k].clone(), min, max });
    }
    let outcome = &columns[..table.d_y];
    let first = outcome[0].slope(margin);
    let shared = outcome.iter().all(|c| ((c.slope(margin) - first) / first).abs() <= 1e-12);
    let mut warnings = Vec::new();
    let outcome_cost_factor = if shared {
        Some(1.0 / (first * first))
    } else {
        warnings.push(
            "outcome columns have different ranges; costs on the rescaled data are in normalized units only".to_owned(),
        );
        None
    };
    Ok(AffineMetadata { margin, columns, outcome_cost_factor, warnings })
}

/// Applies the maps (or their inverses) to every non-`w` column.
pub fn apply(table: &Table, meta: &AffineMetadata, inverse: bool) -> CliResult<Vec<Vec<f64>>> {
    let names: Vec<&str> = meta.columns.iter().map(|c| c.name.as_str()).collect();
    if table.header[1..].iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(CliError::Input(format!(
            "metadata columns {} do not match the file header {}",
            names.join(","),
            table.header[1..].join(",")
        )));
    }
    Ok(table
        .rows
        .iter()
        .map(|row| {
            let mut out = Vec::with_capacity(row.len());
            out.push(row[0]);
            for (c, &x) in meta.columns.iter().zip(&row[1..]) {
                out.push(if inverse { c.inverse(x, meta.margin) } else { c.forward(x, meta.margin) });
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: Vec<Vec<f64>>) -> Table {
        let lines = (2..2 + rows.len() as u64).collect();
        Table { header: vec!["w".into(), "y1".into(), "z1".into()], d_y: 1, d_z: 1, rows, lines }
    }

    proptest! {
        #[test]
        fn round_trip(xs in prop::collection::vec((-1e3f64..1e3, -5f64..5.0), 2..40)) {
            let mut rows: Vec<Vec<f64>> = xs.iter().map(|&(a, b)| vec![0.0, a, b]).collect();
            rows[0][1] = -1e3 - 1.0;
            rows[0][2] = -6.0;
            let t = table(rows.clone());
            let meta = fit(&t, DEFAULT_MARGIN).unwrap();
            let mapped = apply(&t, &meta, false).unwrap();
            for r in &mapped {
                prop_assert!(r[1] >= DEFAULT_MARGIN - 1e-15 && r[1] <= 1.0 - DEFAULT_MARGIN + 1e-15);
            }
            let back = apply(&table(mapped), &meta, true).unwrap();
            for (a, b) in back.iter().zip(&rows) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() <= 1e-12 * b[k].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn interior_data_with_margins_is_unchanged() {
        let t = table(vec![vec![0.0, 1e-3, 0.5], vec![1.0, 0.999, 1e-3], vec![0.0, 0.4, 0.999]]);
        let meta = fit(&t, DEFAULT_MARGIN).unwrap();
        for (a, b) in apply(&t, &meta, false).unwrap().iter().zip(&t.rows) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
        assert!((meta.outcome_cost_factor.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let t = table(vec![vec![0.0, 0.2, 0.5], vec![1.0, 0.3, 0.5]]);
        assert_eq!(fit(&t, DEFAULT_MARGIN).unwrap_err().exit_code(), 3);
    }
}
