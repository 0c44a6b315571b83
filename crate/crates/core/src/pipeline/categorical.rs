//! Context-conditional mode imputation for coded fields.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::model::{CodeField, CrashRecord};

pub const HOUR_BUCKETS: u8 = 6;

/// Four-hour bin, 0..=5.
pub fn hour_bucket(hour: u8) -> u8 {
    (hour / 4).min(HOUR_BUCKETS - 1)
}

/// Empirical distribution over small-integer codes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub counts: BTreeMap<u8, usize>,
}

impl Distribution {
    pub fn add(&mut self, code: u8) {
        *self.counts.entry(code).or_default() += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Most frequent code, smallest code on ties.
    pub fn mode(&self) -> Option<u8> {
        let mut best: Option<(u8, usize)> = None;
        for (&code, &n) in &self.counts {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((code, n));
            }
        }
        best.map(|(c, _)| c)
    }

    pub fn probabilities(&self) -> BTreeMap<u8, f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|(&c, &n)| (c, n as f64 / total)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRow {
    pub hour_bucket: u8,
    pub county: String,
    pub distribution: Distribution,
}

/// Conditional frequency tables for one coded field, from most to least
/// specific context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalTable {
    pub field: CodeField,
    pub by_context: Vec<ContextRow>,
    pub by_county: BTreeMap<String, Distribution>,
    pub global: Distribution,
}

impl CategoricalTable {
    pub fn fit(records: &[CrashRecord], field: CodeField) -> Result<CategoricalTable, PipelineError> {
        let mut ctx: BTreeMap<(u8, &str), Distribution> = BTreeMap::new();
        let mut by_county: BTreeMap<String, Distribution> = BTreeMap::new();
        let mut global = Distribution::default();
        for r in records {
            if let Some(code) = r.code(field) {
                ctx.entry((hour_bucket(r.hour_of_day), r.county.as_str())).or_default().add(code);
                by_county.entry(r.county.clone()).or_default().add(code);
                global.add(code);
            }
        }
        if global.is_empty() {
            return Err(PipelineError::NoObservedValues(field.name().to_string()));
        }
        let by_context = ctx
            .into_iter()
            .map(|((hour_bucket, county), distribution)| ContextRow { hour_bucket, county: county.to_string(), distribution })
            .collect();
        Ok(CategoricalTable { field, by_context, by_county, global })
    }

    /// (bucket, county) mode, then county mode, then global mode.
    pub fn impute(&self, hour: u8, county: &str) -> u8 {
        let bucket = hour_bucket(hour);
        self.by_context
            .iter()
            .find(|row| row.hour_bucket == bucket && row.county == county)
            .and_then(|row| row.distribution.mode())
            .or_else(|| self.by_county.get(county).and_then(Distribution::mode))
            .or_else(|| self.global.mode())
            .expect("fitted tables have a non-empty global distribution")
    }
}

/// Fills missing WEATHER1, ILLUMINATION and ROAD_CONDITION codes. Fields with
/// no missing cells are left alone and produce no table.
pub fn impute_categorical_conditional(
    records: &[CrashRecord],
) -> Result<(Vec<CrashRecord>, Vec<CategoricalTable>), PipelineError> {
    let mut out = records.to_vec();
    let mut tables = Vec::new();
    for field in CodeField::ALL {
        if records.iter().all(|r| r.code(field).is_some()) {
            continue;
        }
        let table = CategoricalTable::fit(records, field)?;
        for r in out.iter_mut().filter(|r| r.code(field).is_none()) {
            let code = table.impute(r.hour_of_day, &r.county);
            r.set_code(field, Some(code))?;
        }
        tables.push(table);
    }
    Ok((out, tables))
}
