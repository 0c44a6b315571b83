//! Crash-risk modelling: record schema, data pipeline, feature engineering,
//! class rebalancing, boosted-tree ensemble, tuning and evaluation.

pub mod bundle;
pub mod cell;
pub mod dataset;
pub mod ensemble;
pub mod evaluation;
pub mod features;
pub mod hyperopt;
pub mod model;
pub mod pipeline;
pub mod resampling;
pub mod rng;
