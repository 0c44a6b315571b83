//! Chained-equation imputation for numeric columns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::categorical::{impute_categorical_conditional, CategoricalTable};
use super::PipelineError;
use crate::features::cyclical_encode;
use crate::model::{CrashRecord, Flag, WeatherCategory};

/// Column-named table of optional numeric cells.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl NumericTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Self {
        NumericTable { columns, rows }
    }

    fn observed_count(&self, col: usize) -> usize {
        self.rows.iter().filter(|r| r[col].is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiceConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub ridge_lambda: f64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        MiceConfig { max_iter: 10, tol: 1e-3, ridge_lambda: 1e-6 }
    }
}

/// Ridge conditional model for one column given every other column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub target: String,
    pub predictors: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationModel {
    pub numeric_models: Vec<LinearModel>,
    pub ridge_lambda: f64,
    pub categorical_tables: Vec<CategoricalTable>,
    pub iteration_count: usize,
    pub converged: bool,
}

/// Ridge regression with an unpenalised intercept: centre, then solve
/// `(XᵀX + λI) β = Xᵀy`.
fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let p = x.first().map_or(0, Vec::len);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return (Vec::new(), y_mean);
    }
    let x_mean: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let xm = DMatrix::from_fn(n, p, |i, j| x[i][j] - x_mean[j]);
    let yv = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xm.transpose() * &xm;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = xm.transpose() * yv;
    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.svd(true, true).solve(&rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(p)),
    };
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    (beta.iter().copied().collect(), intercept)
}

/// Fills every missing cell by iterated ridge regressions, starting from
/// column means. Observed cells are never written.
pub fn impute_numeric_mice(
    table: &NumericTable,
    cfg: &MiceConfig,
) -> Result<(Vec<Vec<f64>>, ImputationModel), PipelineError> {
    let p = table.columns.len();
    let n = table.rows.len();
    let mut means = vec![0.0; p];
    for (j, mean) in means.iter_mut().enumerate() {
        let observed = table.observed_count(j);
        if observed == 0 {
            return Err(PipelineError::AllMissingFeature(table.columns[j].clone()));
        }
        *mean = table.rows.iter().filter_map(|r| r[j]).sum::<f64>() / observed as f64;
    }
    let mut filled: Vec<Vec<f64>> =
        table.rows.iter().map(|r| r.iter().zip(&means).map(|(c, m)| c.unwrap_or(*m)).collect()).collect();
    let incomplete: Vec<usize> = (0..p).filter(|&j| table.observed_count(j) < n).collect();
    let mut model = ImputationModel {
        numeric_models: Vec::new(),
        ridge_lambda: cfg.ridge_lambda,
        categorical_tables: Vec::new(),
        iteration_count: 0,
        converged: false,
    };
    if incomplete.is_empty() {
        model.iteration_count = 1;
        model.converged = true;
        return Ok((filled, model));
    }

    for _ in 0..cfg.max_iter.max(1) {
        model.iteration_count += 1;
        model.numeric_models.clear();
        let mut max_change = 0.0f64;
        for &j in &incomplete {
            let predictors: Vec<usize> = (0..p).filter(|&c| c != j).collect();
            let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) = table
                .rows
                .iter()
                .zip(&filled)
                .filter_map(|(raw, row)| raw[j].map(|y| (predictors.iter().map(|&c| row[c]).collect(), y)))
                .unzip();
            let (coef, intercept) = fit_ridge(&xs, &ys, cfg.ridge_lambda);
            for (raw, row) in table.rows.iter().zip(filled.iter_mut()) {
                if raw[j].is_none() {
                    let pred = intercept + predictors.iter().zip(&coef).map(|(&c, b)| b * row[c]).sum::<f64>();
                    max_change = max_change.max((pred - row[j]).abs());
                    row[j] = pred;
                }
            }
            model.numeric_models.push(LinearModel {
                target: table.columns[j].clone(),
                predictors: predictors.iter().map(|&c| table.columns[c].clone()).collect(),
                coefficients: coef,
                intercept,
            });
        }
        if max_change < cfg.tol {
            model.converged = true;
            break;
        }
    }
    Ok((filled, model))
}

/// Numeric view of records for flag imputation: the 15 flags (possibly
/// missing) followed by always-observed context columns.
pub(crate) fn flag_table(records: &[CrashRecord]) -> NumericTable {
    let mut columns: Vec<String> = Flag::ALL.iter().map(|f| f.name().to_string()).collect();
    columns.extend(["hour_sin", "hour_cos", "month_sin", "month_cos"].map(String::from));
    columns.extend(WeatherCategory::ALL.iter().map(|w| format!("WEATHER1_{}", w.code())));
    let rows = records
        .iter()
        .map(|r| {
            let mut row: Vec<Option<f64>> = r.flags.iter().map(|f| f.map(|b| if b { 1.0 } else { 0.0 })).collect();
            let (hs, hc) = cyclical_encode(r.hour_of_day as f64, 24.0);
            let (ms, mc) = cyclical_encode(r.crash_month as f64, 12.0);
            row.extend([hs, hc, ms, mc].map(Some));
            row.extend(WeatherCategory::ALL.iter().map(|w| Some(if r.weather == Some(*w) { 1.0 } else { 0.0 })));
            row
        })
        .collect();
    NumericTable { columns, rows }
}

/// Full record imputation: categorical codes by conditional mode, then flags
/// by chained ridge regression rounded at 0.5. Also returns the unrounded
/// flag estimates (rows × 15) for error measurement.
pub(crate) fn impute_records_detailed(
    records: &[CrashRecord],
    cfg: &MiceConfig,
) -> Result<(Vec<CrashRecord>, ImputationModel, Vec<[f64; 15]>), PipelineError> {
    let (mut completed, tables) = impute_categorical_conditional(records)?;
    let table = flag_table(&completed);
    let (filled, mut model) = impute_numeric_mice(&table, cfg)?;
    let mut raw = Vec::with_capacity(completed.len());
    for (rec, row) in completed.iter_mut().zip(&filled) {
        let mut est = [0.0; 15];
        for (i, slot) in est.iter_mut().enumerate() {
            *slot = row[i].clamp(0.0, 1.0);
            if rec.flags[i].is_none() {
                rec.flags[i] = Some(row[i] >= 0.5);
            }
        }
        raw.push(est);
    }
    model.categorical_tables = tables;
    Ok((completed, model, raw))
}

pub fn impute_records(
    records: &[CrashRecord],
    cfg: &MiceConfig,
) -> Result<(Vec<CrashRecord>, ImputationModel), PipelineError> {
    impute_records_detailed(records, cfg).map(|(r, m, _)| (r, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn planted_linear(n: usize, mask_every: usize) -> (NumericTable, Vec<f64>) {
        let mut rng = crate::rng::seeded(5);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let rows = a
            .iter()
            .enumerate()
            .map(|(i, &x)| vec![Some(x), if i % mask_every == 0 { None } else { Some(2.0 * x) }])
            .collect();
        (NumericTable::new(vec!["A".into(), "B".into()], rows), a)
    }

    #[test]
    fn no_missing_cells_is_identity() {
        let rows = vec![vec![Some(1.0), Some(2.0)], vec![Some(3.0), Some(4.5)]];
        let t = NumericTable::new(vec!["a".into(), "b".into()], rows);
        let (filled, model) = impute_numeric_mice(&t, &MiceConfig::default()).unwrap();
        assert_eq!(filled, vec![vec![1.0, 2.0], vec![3.0, 4.5]]);
        assert_eq!(model.iteration_count, 1);
        assert!(model.converged);
    }

    #[test]
    fn recovers_exact_linear_relation() {
        let (t, a) = planted_linear(500, 10);
        let (filled, model) = impute_numeric_mice(&t, &MiceConfig::default()).unwrap();
        for (i, row) in filled.iter().enumerate() {
            assert!((row[1] - 2.0 * a[i]).abs() < 1e-6, "row {i}: {} vs {}", row[1], 2.0 * a[i]);
        }
        assert!(model.converged);
    }

    #[test]
    fn zero_tolerance_runs_every_iteration() {
        let (t, _) = planted_linear(100, 10);
        let cfg = MiceConfig { max_iter: 5, tol: 0.0, ..MiceConfig::default() };
        let (_, model) = impute_numeric_mice(&t, &cfg).unwrap();
        assert_eq!(model.iteration_count, 5);
        assert!(!model.converged);
    }

    #[test]
    fn all_missing_column_is_rejected() {
        let t = NumericTable::new(vec!["a".into(), "b".into()], vec![vec![Some(1.0), None], vec![Some(2.0), None]]);
        assert!(matches!(impute_numeric_mice(&t, &MiceConfig::default()), Err(PipelineError::AllMissingFeature(c)) if c == "b"));
    }

    #[test]
    fn observed_cells_untouched() {
        let (t, _) = planted_linear(200, 3);
        let (filled, _) = impute_numeric_mice(&t, &MiceConfig::default()).unwrap();
        for (raw, row) in t.rows.iter().zip(&filled) {
            for (c, v) in raw.iter().zip(row) {
                if let Some(obs) = c {
                    assert_eq!(obs.to_bits(), v.to_bits());
                }
            }
        }
    }
}
