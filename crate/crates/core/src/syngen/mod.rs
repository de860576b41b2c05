//! Synthetic flowsheet generator.
//!
//! A flowsheet starts from one or two raw-material feeds, picks a first
//! sub-process, and then every open outlet draws its next sub-process from a
//! fixed Markov transition table until all outlets end in purification and a
//! product. Sub-process templates, pattern weights and probabilities live in
//! [`GeneratorConfig`]; `configs/generator_default.json` holds the defaults.

mod config;
mod dataset;
mod generate;

pub use config::{GeneratorConfig, PatternSite, PatternWeights, SubProcess, CONFIG_VERSION};
pub use dataset::{generate_dataset, sample_rng, stats, DatasetStats};
pub use generate::{generate_flowsheet, MAX_RESAMPLES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SyngenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("no acceptable sample after {attempts} attempts")]
    ResampleLimitExceeded { attempts: usize },
    #[error(transparent)]
    Sfiles(#[from] crate::sfiles::SfilesError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
