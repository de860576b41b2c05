use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, Precision, TrainConfig};
use super::params::{Layout, Params, TensorSpec};
use super::train::TrainReport;
use super::TransformerError;
use crate::tokenizer::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub steps: usize,
    pub epochs: usize,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Hash of the checkpoint this one was fine-tuned from.
    #[serde(default)]
    pub parent: Option<String>,
}

impl TrainingMeta {
    pub fn from_report(report: &TrainReport, cfg: &TrainConfig, parent: Option<String>) -> Self {
        Self {
            steps: report.steps,
            epochs: report.epochs,
            best_step: report.best_step,
            best_val_loss: report.best_val_loss,
            seed: cfg.seed,
            precision: cfg.precision,
            parent,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    training: TrainingMeta,
    tensors: Vec<TensorSpec>,
    blob: String,
    blob_len: usize,
}

/// A trained model: weights, the vocabulary they index and training metadata.
///
/// On disk a checkpoint is a directory holding `manifest.json` and
/// `weights.bin` (little-endian f32 in layout order).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub params: Params<f32>,
    pub meta: TrainingMeta,
}

fn format_err(m: impl Into<String>) -> TransformerError {
    TransformerError::CheckpointFormat(m.into())
}

impl Checkpoint {
    fn blob(&self) -> Vec<u8> {
        self.params.data.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            config: self.params.cfg.clone(),
            vocab: self.vocab.tokens().to_vec(),
            training: self.meta.clone(),
            tensors: self.params.layout.tensors.clone(),
            blob: BLOB.into(),
            blob_len: self.params.data.len() * 4,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), TransformerError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(BLOB), self.blob())?;
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TransformerError> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
        if m.format_version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported format_version {}", m.format_version)));
        }
        m.config.validate()?;
        let vocab = Vocabulary::from_tokens(m.vocab).map_err(|e| format_err(e.to_string()))?;
        if vocab.len() != m.config.vocab_size {
            return Err(format_err(format!("vocabulary has {} tokens, config says {}", vocab.len(), m.config.vocab_size)));
        }
        let mut params = Params::<f32>::zeros(&m.config);
        if params.layout.tensors != m.tensors {
            return Err(format_err("tensor table does not match the config"));
        }
        if m.blob.contains('/') || m.blob.contains('\\') {
            return Err(format_err("blob must be a plain file name"));
        }
        let bytes = fs::read(dir.join(&m.blob))?;
        if bytes.len() != m.blob_len || bytes.len() != params.data.len() * 4 {
            return Err(format_err(format!("weights blob is {} bytes, expected {}", bytes.len(), params.data.len() * 4)));
        }
        for (x, c) in params.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *x = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        Ok(Self { vocab, params, meta: m.training })
    }

    /// SHA-256 over the manifest and the weights, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.manifest()).expect("manifest serialises"));
        h.update(self.blob());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn layout(&self) -> &Layout {
        &self.params.layout
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let vocab = Vocabulary::build(&["(raw)(hex)(prod)"]).unwrap();
        let params = Params::init(&ModelConfig::tiny(vocab.len()), 9);
        Checkpoint { vocab, params, meta: TrainingMeta { steps: 3, seed: 9, ..Default::default() } }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample();
        c.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn hash_sees_weights() {
        let c = sample();
        let mut d = c.clone();
        d.params.data[5] += 1.0;
        assert_ne!(c.hash(), d.hash());
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let blob = dir.path().join(BLOB);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(TransformerError::CheckpointFormat(_))));
    }

    #[test]
    fn missing_dir_is_io_error() {
        assert!(matches!(Checkpoint::load(Path::new("/nonexistent/ckpt")), Err(TransformerError::Io(_))));
    }
}
