//! Seeded random search over booster hyperparameters with a scalarised
//! accuracy/latency objective and a Pareto front over accuracy, latency and
//! model size.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::ensemble::{fit_booster, stratified_split, Booster, BoosterConfig, GossConfig, Variant};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Error, PartialEq)]
pub enum HyperoptError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("budget must be at least one trial")]
    ZeroBudget,
    #[error("every trial failed")]
    AllTrialsFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamRange {
    Int { low: i64, high: i64 },
    Float { low: f64, high: f64, log: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamRange>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        let params = [
            ("max_depth", ParamRange::Int { low: 3, high: 10 }),
            ("learning_rate", ParamRange::Float { low: 0.01, high: 0.3, log: false }),
            ("min_child_weight", ParamRange::Int { low: 1, high: 7 }),
            ("subsample", ParamRange::Float { low: 0.6, high: 1.0, log: false }),
            ("colsample_bytree", ParamRange::Float { low: 0.6, high: 1.0, log: false }),
            ("lambda", ParamRange::Float { low: 1e-8, high: 1.0, log: true }),
            ("alpha", ParamRange::Float { low: 1e-8, high: 1.0, log: true }),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        SearchSpace { params }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), HyperoptError> {
        for (name, r) in &self.params {
            let ok = match *r {
                ParamRange::Int { low, high } => low <= high,
                ParamRange::Float { low, high, log } => {
                    low.is_finite() && high.is_finite() && low <= high && (!log || low > 0.0)
                }
            };
            if !ok {
                return Err(HyperoptError::InvalidSpace(format!("{name}: {r:?}")));
            }
        }
        Ok(())
    }
}

pub type TrialParams = BTreeMap<String, f64>;

/// Uniform on linear ranges, log-uniform where flagged, inclusive integers.
pub fn sample_trial(space: &SearchSpace, seed: u64) -> TrialParams {
    let mut rng = seeded(seed);
    space
        .params
        .iter()
        .map(|(name, r)| {
            let v = match *r {
                ParamRange::Int { low, high } => rng.random_range(low..=high) as f64,
                ParamRange::Float { low, high, log: false } => {
                    if low == high {
                        low
                    } else {
                        rng.random_range(low..=high)
                    }
                }
                ParamRange::Float { low, high, log: true } => {
                    let (a, b) = (low.ln(), high.ln());
                    if a == b {
                        low
                    } else {
                        rng.random_range(a..=b).exp().clamp(low, high)
                    }
                }
            };
            (name.clone(), v)
        })
        .collect()
}

/// Applies sampled parameters over a base configuration.
pub fn apply_params(base: &BoosterConfig, params: &TrialParams) -> BoosterConfig {
    let mut c = base.clone();
    for (k, &v) in params {
        match k.as_str() {
            "max_depth" => c.max_depth = v as usize,
            "learning_rate" => c.learning_rate = v,
            "min_child_weight" => c.min_child_weight = v,
            "subsample" => c.subsample = v,
            "colsample_bytree" => c.colsample_bytree = v,
            "lambda" | "reg_lambda" => c.reg_lambda = v,
            "alpha" | "reg_alpha" => c.reg_alpha = v,
            "num_leaves" => c.num_leaves = v as usize,
            "n_estimators" => c.n_estimators = v as usize,
            "gamma" => c.gamma = v,
            "min_child_samples" => c.min_child_samples = v as usize,
            _ => {}
        }
    }
    c
}

/// `accuracy − 0.1·latency`, latency in seconds per 1,000 predictions.
pub fn scalarize(accuracy: f64, latency: f64) -> f64 {
    accuracy - 0.1 * latency
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    pub accuracy: f64,
    pub latency: f64,
    pub complexity: usize,
}

/// Maximise accuracy; minimise latency and complexity.
pub fn dominates(a: &Objectives, b: &Objectives) -> bool {
    let no_worse = a.accuracy >= b.accuracy && a.latency <= b.latency && a.complexity <= b.complexity;
    let better = a.accuracy > b.accuracy || a.latency < b.latency || a.complexity < b.complexity;
    no_worse && better
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub seed: u64,
    pub params: TrialParams,
    pub objectives: Objectives,
    pub scalar: f64,
}

/// Inserts `trial` unless a member dominates it, dropping members it dominates.
pub fn pareto_update(front: &mut Vec<Trial>, trial: &Trial) {
    if front.iter().any(|m| dominates(&m.objectives, &trial.objectives)) {
        return;
    }
    front.retain(|m| !dominates(&trial.objectives, &m.objectives));
    front.push(trial.clone());
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub trial: usize,
    pub params: TrialParams,
    pub accuracy: Option<f64>,
    pub latency: Option<f64>,
    pub complexity: Option<usize>,
    pub scalar: Option<f64>,
    pub best_so_far: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StudyResult<T> {
    pub best: Trial,
    pub best_artifact: T,
    pub front: Vec<Trial>,
    pub history: Vec<HistoryEntry>,
}

/// Evaluates `budget` sampled trials in order. A failing trial is recorded
/// and skipped. Ties on the scalar keep the earlier trial.
pub fn run_study<T, F>(space: &SearchSpace, budget: usize, seed: u64, mut eval: F) -> Result<StudyResult<T>, HyperoptError>
where
    F: FnMut(&TrialParams, u64) -> Result<(Objectives, T), String>,
{
    space.validate()?;
    if budget == 0 {
        return Err(HyperoptError::ZeroBudget);
    }
    let mut best: Option<(Trial, T)> = None;
    let mut front = Vec::new();
    let mut history = Vec::with_capacity(budget);
    for t in 0..budget {
        let trial_seed = derive_seed(seed, t as u64);
        let params = sample_trial(space, trial_seed);
        match eval(&params, trial_seed) {
            Ok((objectives, artifact)) => {
                let trial = Trial {
                    trial: t,
                    seed: trial_seed,
                    params: params.clone(),
                    objectives,
                    scalar: scalarize(objectives.accuracy, objectives.latency),
                };
                pareto_update(&mut front, &trial);
                if best.as_ref().is_none_or(|(b, _)| trial.scalar > b.scalar) {
                    best = Some((trial.clone(), artifact));
                }
                history.push(HistoryEntry {
                    trial: t,
                    params,
                    accuracy: Some(objectives.accuracy),
                    latency: Some(objectives.latency),
                    complexity: Some(objectives.complexity),
                    scalar: Some(trial.scalar),
                    best_so_far: best.as_ref().map(|(b, _)| b.scalar),
                    error: None,
                });
            }
            Err(e) => history.push(HistoryEntry {
                trial: t,
                params,
                accuracy: None,
                latency: None,
                complexity: None,
                scalar: None,
                best_so_far: best.as_ref().map(|(b, _)| b.scalar),
                error: Some(e),
            }),
        }
    }
    let (best, best_artifact) = best.ok_or(HyperoptError::AllTrialsFailed)?;
    Ok(StudyResult { best, best_artifact, front, history })
}

pub const LATENCY_PROBE_SIZE: usize = 1000;
pub const LATENCY_REPETITIONS: usize = 3;

/// Median over `reps` runs of the wall-clock seconds needed for one
/// single-vector prediction per probe row, scaled to 1,000 predictions.
pub fn measure_latency<F: FnMut(&[f64]) -> f64>(mut predict: F, probe: &[Vec<f64>], reps: usize) -> f64 {
    if probe.is_empty() {
        return 0.0;
    }
    let mut times: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let start = Instant::now();
            let mut sink = 0.0;
            for x in probe {
                sink += predict(x);
            }
            std::hint::black_box(sink);
            start.elapsed().as_secs_f64() * 1000.0 / probe.len() as f64
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn argmax(p: &[f64; 4]) -> usize {
    (1..4).fold(0, |b, c| if p[c] > p[b] { c } else { b })
}

/// Tunes one booster variant: each trial trains on a stratified 80% of
/// `train` and is scored on the rest.
pub fn tune_booster(
    train: &Dataset,
    variant: Variant,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<StudyResult<Booster>, HyperoptError> {
    let (fit_idx, val_idx) = stratified_split(&train.labels, 0.2, seed);
    let fit_set = train.subset(&fit_idx);
    let val_set = train.subset(&val_idx);
    let probe: Vec<Vec<f64>> = val_set.rows.iter().cycle().take(LATENCY_PROBE_SIZE).cloned().collect();
    let base = BoosterConfig::preset(variant);
    run_study(space, budget, seed, |params, trial_seed| {
        let config = BoosterConfig { seed: trial_seed, ..apply_params(&base, params) };
        let (booster, _) = fit_booster(&fit_set, &config, &GossConfig::default()).map_err(|e| e.to_string())?;
        let hits = val_set
            .rows
            .iter()
            .zip(&val_set.labels)
            .filter(|(x, y)| argmax(&booster.predict_proba(x)) == y.index())
            .count();
        let accuracy = hits as f64 / val_set.len().max(1) as f64;
        let latency = measure_latency(|x| booster.predict_proba(x)[0], &probe, LATENCY_REPETITIONS);
        let complexity = booster.node_count();
        Ok((Objectives { accuracy, latency, complexity }, booster))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_front(trials: &[Trial]) -> Vec<usize> {
        let mut out: Vec<usize> = trials
            .iter()
            .filter(|t| !trials.iter().any(|o| dominates(&o.objectives, &t.objectives)))
            .map(|t| t.trial)
            .collect();
        out.sort_unstable();
        out
    }

    fn synthetic_eval(p: &TrialParams, _seed: u64) -> Result<(Objectives, ()), String> {
        let acc = 1.0 - (p["learning_rate"] - 0.1).abs() - 0.01 * p["max_depth"];
        let lat = p["max_depth"] * 0.01 + p["subsample"] * 0.001;
        Ok((Objectives { accuracy: acc, latency: lat, complexity: (p["max_depth"] * 10.0) as usize }, ()))
    }

    #[test]
    fn scalarize_formula() {
        assert_eq!(scalarize(0.9, 0.5), 0.85);
        assert_eq!(scalarize(0.7, 0.0), 0.7);
        assert!(scalarize(0.7, 0.2) < scalarize(0.7, 0.1));
    }

    #[test]
    fn degenerate_range_and_bounds() {
        let mut space = SearchSpace::default();
        space.params.insert("max_depth".into(), ParamRange::Int { low: 3, high: 3 });
        for s in 0..500 {
            let p = sample_trial(&space, s);
            assert_eq!(p["max_depth"], 3.0);
            for (k, r) in &space.params {
                let v = p[k];
                match *r {
                    ParamRange::Int { low, high } => assert!(v >= low as f64 && v <= high as f64 && v.fract() == 0.0),
                    ParamRange::Float { low, high, .. } => assert!(v >= low && v <= high),
                }
            }
        }
    }

    #[test]
    fn log_uniform_median() {
        let space = SearchSpace::default();
        let mut v: Vec<f64> = (0..10_000).map(|s| sample_trial(&space, s)["lambda"]).collect();
        v.sort_by(f64::total_cmp);
        let median = v[5000];
        assert!(median > 1e-4 * 10f64.powf(-0.5) && median < 1e-4 * 10f64.powf(0.5), "{median}");
    }

    #[test]
    fn study_front_history_and_determinism() {
        let space = SearchSpace::default();
        fn run_study_wrapper(space: &SearchSpace, seed: u64) -> StudyResult<()> {
            run_study(space, 60, seed, synthetic_eval).unwrap()
        }
        let a = run_study_wrapper(&space, 7);
        let b = run_study_wrapper(&space, 7);
        assert_eq!(a.best, b.best);
        assert_eq!(a.history, b.history);
        let scalars: Vec<f64> = a.history.iter().map(|h| h.best_so_far.unwrap()).collect();
        assert!(scalars.windows(2).all(|w| w[1] >= w[0]));
        let all: Vec<Trial> = a
            .history
            .iter()
            .map(|h| Trial {
                trial: h.trial,
                seed: 0,
                params: h.params.clone(),
                objectives: Objectives { accuracy: h.accuracy.unwrap(), latency: h.latency.unwrap(), complexity: h.complexity.unwrap() },
                scalar: h.scalar.unwrap(),
            })
            .collect();
        let mut got: Vec<usize> = a.front.iter().map(|t| t.trial).collect();
        got.sort_unstable();
        assert_eq!(got, brute_front(&all));
        let one = run_study(&space, 1, 3, synthetic_eval).unwrap();
        assert_eq!(one.best.trial, 0);
    }

    #[test]
    fn failures_are_recorded() {
        let space = SearchSpace::default();
        let r = run_study(&space, 5, 1, |p, s| if p["max_depth"] > 6.0 { Err("boom".to_string()) } else { synthetic_eval(p, s) });
        match r {
            Ok(r) => assert_eq!(r.history.len(), 5),
            Err(e) => assert_eq!(e, HyperoptError::AllTrialsFailed),
        }
        assert_eq!(run_study(&space, 0, 1, synthetic_eval).unwrap_err(), HyperoptError::ZeroBudget);
    }

    fn obj() -> impl Strategy<Value = Objectives> {
        (0u8..5, 0u8..5, 0usize..5).prop_map(|(a, l, c)| Objectives { accuracy: a as f64 / 4.0, latency: l as f64, complexity: c })
    }

    proptest! {
        #[test]
        fn pareto_matches_dominance_filter(objs in proptest::collection::vec(obj(), 1..40)) {
            let trials: Vec<Trial> = objs.iter().enumerate().map(|(i, o)| Trial { trial: i, seed: 0, params: TrialParams::new(), objectives: *o, scalar: 0.0 }).collect();
            let mut front = Vec::new();
            for t in &trials {
                pareto_update(&mut front, t);
            }
            for a in &front {
                for b in &front {
                    prop_assert!(!dominates(&a.objectives, &b.objectives));
                }
            }
            // Equal-objective duplicates are kept by both; compare objective sets.
            let mut got: Vec<(u64, u64, usize)> = front.iter().map(|t| (t.objectives.accuracy.to_bits(), t.objectives.latency.to_bits(), t.objectives.complexity)).collect();
            let mut want: Vec<(u64, u64, usize)> = brute_front(&trials).iter().map(|&i| (trials[i].objectives.accuracy.to_bits(), trials[i].objectives.latency.to_bits(), trials[i].objectives.complexity)).collect();
            got.sort_unstable();
            want.sort_unstable();
            prop_assert_eq!(got, want);
        }
    }
}
