//! Imputation quality measured on deliberately hidden cells.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::mice::{impute_numeric_mice, impute_records_detailed, MiceConfig, NumericTable};
use super::PipelineError;
use crate::model::{CodeField, CrashRecord};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedEvalReport {
    pub categorical_accuracy: f64,
    pub numeric_mae: f64,
    pub masked_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NumericImputer {
    Mice(MiceConfig),
    /// Column mean of the observed cells.
    GlobalMean,
}

fn check_fraction(mask_fraction: f64) -> Result<(), PipelineError> {
    if mask_fraction > 0.0 && mask_fraction <= 0.5 {
        Ok(())
    } else {
        Err(PipelineError::InvalidConfig(format!("mask_fraction must lie in (0, 0.5], got {mask_fraction}")))
    }
}

fn mask_count(known: usize, fraction: f64) -> usize {
    if known == 0 {
        0
    } else {
        ((known as f64 * fraction).round() as usize).clamp(1, known)
    }
}

#[derive(Clone, Copy)]
enum Cell {
    Flag(usize, usize),
    Code(usize, CodeField),
}

/// Hides a uniformly chosen subset of observed flag and code cells, imputes
/// them, and scores the imputed values against the hidden truth. Flags are
/// scored by absolute error of the continuous estimate, codes by exact match.
pub fn masked_imputation_eval(
    records: &[CrashRecord],
    mask_fraction: f64,
    seed: u64,
    cfg: &MiceConfig,
) -> Result<MaskedEvalReport, PipelineError> {
    check_fraction(mask_fraction)?;
    let mut known = Vec::new();
    for (i, r) in records.iter().enumerate() {
        known.extend((0..15).filter(|&f| r.flags[f].is_some()).map(|f| Cell::Flag(i, f)));
        known.extend(CodeField::ALL.iter().filter(|&&c| r.code(c).is_some()).map(|&c| Cell::Code(i, c)));
    }
    if known.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mut rng = rng::stream(seed, 0x6d61736b);
    let chosen: Vec<Cell> =
        index::sample(&mut rng, known.len(), mask_count(known.len(), mask_fraction)).into_iter().map(|i| known[i]).collect();

    let mut masked = records.to_vec();
    for cell in &chosen {
        match *cell {
            Cell::Flag(i, f) => masked[i].flags[f] = None,
            Cell::Code(i, c) => masked[i].set_code(c, None)?,
        }
    }
    let (completed, _, estimates) = impute_records_detailed(&masked, cfg)?;

    let (mut hits, mut cat_n, mut abs_err, mut num_n) = (0usize, 0usize, 0.0f64, 0usize);
    for cell in &chosen {
        match *cell {
            Cell::Flag(i, f) => {
                let truth = if records[i].flags[f] == Some(true) { 1.0 } else { 0.0 };
                abs_err += (estimates[i][f] - truth).abs();
                num_n += 1;
            }
            Cell::Code(i, c) => {
                hits += usize::from(completed[i].code(c) == records[i].code(c));
                cat_n += 1;
            }
        }
    }
    Ok(MaskedEvalReport {
        categorical_accuracy: if cat_n == 0 { 0.0 } else { hits as f64 / cat_n as f64 },
        numeric_mae: if num_n == 0 { 0.0 } else { abs_err / num_n as f64 },
        masked_fraction: chosen.len() as f64 / known.len() as f64,
    })
}

/// Masked-cell MAE of a numeric imputer on a fully or partly observed table.
pub fn masked_numeric_eval(
    table: &NumericTable,
    mask_fraction: f64,
    seed: u64,
    imputer: NumericImputer,
) -> Result<f64, PipelineError> {
    check_fraction(mask_fraction)?;
    let known: Vec<(usize, usize)> = table
        .rows
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().filter(|(_, c)| c.is_some()).map(move |(j, _)| (i, j)))
        .collect();
    if known.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mut rng = rng::stream(seed, 0x6e756d);
    let chosen: Vec<(usize, usize)> =
        index::sample(&mut rng, known.len(), mask_count(known.len(), mask_fraction)).into_iter().map(|i| known[i]).collect();
    let mut masked = table.clone();
    for &(i, j) in &chosen {
        masked.rows[i][j] = None;
    }
    let filled = match imputer {
        NumericImputer::Mice(cfg) => impute_numeric_mice(&masked, &cfg)?.0,
        NumericImputer::GlobalMean => {
            let means: Vec<f64> = (0..masked.columns.len())
                .map(|j| {
                    let obs: Vec<f64> = masked.rows.iter().filter_map(|r| r[j]).collect();
                    if obs.is_empty() {
                        Err(PipelineError::AllMissingFeature(masked.columns[j].clone()))
                    } else {
                        Ok(obs.iter().sum::<f64>() / obs.len() as f64)
                    }
                })
                .collect::<Result<_, _>>()?;
            masked.rows.iter().map(|r| r.iter().zip(&means).map(|(c, m)| c.unwrap_or(*m)).collect()).collect()
        }
    };
    let err: f64 = chosen.iter().map(|&(i, j)| (filled[i][j] - table.rows[i][j].unwrap_or_default()).abs()).sum();
    Ok(err / chosen.len() as f64)
}
