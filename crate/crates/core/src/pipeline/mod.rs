//! Ingestion, validation, imputation and synthetic data generation.

mod categorical;
mod csv_io;
mod masked;
mod mice;
mod missingness;
mod quality;
mod synthetic;

pub use categorical::{impute_categorical_conditional, hour_bucket, CategoricalTable, Distribution, HOUR_BUCKETS};
pub use csv_io::{ingest_csv, read_csv, write_csv, write_csv_file, csv_header, IngestResult, RowError};
pub use masked::{masked_imputation_eval, masked_numeric_eval, MaskedEvalReport, NumericImputer};
pub use mice::{impute_numeric_mice, impute_records, ImputationModel, LinearModel, MiceConfig, NumericTable};
pub use missingness::{exclude_high_missingness, missing_critical_fraction, CRITICAL_FIELD_COUNT};
pub use quality::{
    fit_adaptive_thresholds, validate_batch, ControlLimit, FieldLimits, GroupKey, GroupThresholds, QualityThresholds,
    RejectReason, ValidationConfig, ValidationReport, MIN_GROUP_SIZE,
};
pub use synthetic::{
    generate_synthetic, generate_weather_timeline, ClusterCenter, SyntheticConfig, SyntheticDataset, PAPER_SEVERITY_COUNTS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile { path: String, source: std::io::Error },
    #[error("missing header columns: {0:?}")]
    MissingHeader(Vec<String>),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no records to process")]
    EmptyInput,
    #[error("feature {0} has no observed values")]
    AllMissingFeature(String),
    #[error("field {0} has no observed values")]
    NoObservedValues(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
