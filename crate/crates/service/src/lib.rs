//! Real-time crash-risk serving: a two-tier prediction cache over a
//! hierarchical grid, a checksummed record store, the HTTP API and a
//! closed-loop load tester.

pub mod api;
pub mod cache;
pub mod clock;
pub mod config;
pub mod loadtest;
pub mod metrics;
pub mod predictor;
pub mod recommend;
pub mod service;
pub mod store;
pub mod weather;

use thiserror::Error;

pub use service::Service;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("out of region: {0}")]
    OutOfRegion(String),
    #[error("no model loaded")]
    ModelNotLoaded,
    #[error("weather source unavailable: {0}")]
    WeatherUnavailable(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error("load test: {0}")]
    LoadTest(String),
}
