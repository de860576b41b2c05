use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::GeneratorConfig;
use super::generate::generate_flowsheet;
use super::SyngenError;
use crate::sfiles::{parse, serialize, Mode};
use crate::tokenizer::Vocabulary;

/// Generator state for sample `index`: ChaCha8 keyed by the config seed,
/// one stream per sample, so datasets are identical on every platform.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n_target` distinct canonical SFILES strings, sorted lexicographically.
pub fn generate_dataset(cfg: &GeneratorConfig, n_target: usize) -> Result<Vec<String>, SyngenError> {
    cfg.validate()?;
    if n_target == 0 {
        return Err(SyngenError::InvalidConfig("n_target must be at least 1".into()));
    }
    let limit = (50 * n_target).max(1000);
    let mut seen = BTreeSet::new();
    for index in 0..limit {
        let g = generate_flowsheet(cfg, &mut sample_rng(cfg.seed, index as u64))?;
        seen.insert(serialize(&g)?);
        if seen.len() == n_target {
            return Ok(seen.into_iter().collect());
        }
    }
    Err(SyngenError::ResampleLimitExceeded { attempts: limit })
}

/// Corpus statistics in the layout of the dataset-properties table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub samples_tr: usize,
    pub samples_val: usize,
    pub samples_te: usize,
    pub mean_nodes: f64,
    pub std_nodes: f64,
    pub vocab_size: usize,
}

impl DatasetStats {
    /// Statistics over the union of three splits. Node counts use the
    /// population standard deviation; the vocabulary includes the four
    /// special tokens.
    pub fn of_splits<S: AsRef<str>>(train: &[S], val: &[S], test: &[S]) -> Result<Self, SyngenError> {
        let all: Vec<&str> = train.iter().chain(val).chain(test).map(AsRef::as_ref).collect();
        if all.is_empty() {
            return Err(SyngenError::InvalidConfig("dataset is empty".into()));
        }
        let mut counts = Vec::with_capacity(all.len());
        for s in &all {
            counts.push(parse(s, Mode::Lenient)?.node_count() as f64);
        }
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<f64>() / n;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
        let vocab = Vocabulary::build(&all).map_err(|e| SyngenError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            samples_tr: train.len(),
            samples_val: val.len(),
            samples_te: test.len(),
            mean_nodes: mean,
            std_nodes: var.sqrt(),
            vocab_size: vocab.len(),
        })
    }
}

/// Statistics of an unsplit corpus (all samples counted as training).
pub fn stats<S: AsRef<str>>(dataset: &[S]) -> Result<DatasetStats, SyngenError> {
    DatasetStats::of_splits(dataset, &[], &[])
}
