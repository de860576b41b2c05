use serde::{Deserialize, Serialize};

use super::TransformerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    #[default]
    Learned,
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_embd: usize,
    pub d_ff: usize,
    pub context_length: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub positional: Positional,
    pub dropout: f64,
}

impl ModelConfig {
    /// GPT-2 small: 12 layers, 12 heads, 768 wide, 512 positions.
    pub fn paper(vocab_size: usize) -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            n_embd: 768,
            d_ff: 3072,
            context_length: 512,
            vocab_size,
            positional: Positional::Learned,
            dropout: 0.1,
        }
    }

    /// CPU-sized default.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            n_embd: 128,
            d_ff: 512,
            context_length: 256,
            vocab_size,
            positional: Positional::Learned,
            dropout: 0.1,
        }
    }

    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            n_layers: 1,
            n_heads: 2,
            n_embd: 8,
            d_ff: 32,
            context_length: 16,
            vocab_size,
            positional: Positional::Learned,
            dropout: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.n_embd / self.n_heads
    }

    pub fn validate(&self) -> Result<(), TransformerError> {
        let bad = |m: &str| Err(TransformerError::InvalidConfig(m.to_string()));
        if self.n_heads == 0 || self.n_embd == 0 || !self.n_embd.is_multiple_of(self.n_heads) {
            return bad("n_embd must be a positive multiple of n_heads");
        }
        if self.context_length < 2 {
            return bad("context_length must be at least 2");
        }
        if self.vocab_size == 0 || self.d_ff == 0 {
            return bad("vocab_size and d_ff must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Number of trainable scalars. The output head is tied to the token
/// embedding and sinusoidal positions have no parameters.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (v, d, f) = (cfg.vocab_size, cfg.n_embd, cfg.d_ff);
    let positions = match cfg.positional {
        Positional::Learned => cfg.context_length * d,
        Positional::Sinusoidal => 0,
    };
    let layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
    v * d + positions + cfg.n_layers * layer + 2 * d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub eval_interval_steps: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Optional hard cap on optimizer steps; `Some(0)` performs no update.
    #[serde(default)]
    pub max_steps: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// When false, sequences of a batch are processed in parallel. Results
    /// are identical either way since gradients are reduced in batch order.
    #[serde(default = "yes")]
    pub deterministic: bool,
    /// Append rows for tokens missing from a checkpoint's vocabulary when
    /// fine-tuning.
    #[serde(default)]
    pub extend_vocab: bool,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            batch_size: 8,
            eval_interval_steps: 200,
            patience: 3,
            max_epochs: 50,
            max_steps: None,
            learning_rate: 3e-4,
            seed: 0,
            precision: Precision::F32,
            deterministic: true,
            extend_vocab: false,
        }
    }

    pub fn finetune() -> Self {
        Self { batch_size: 2, eval_interval_steps: 20, patience: 20, ..Self::pretrain() }
    }

    pub fn validate(&self) -> Result<(), TransformerError> {
        if self.batch_size == 0 || self.eval_interval_steps == 0 || self.max_epochs == 0 {
            return Err(TransformerError::InvalidConfig(
                "batch_size, eval_interval_steps and max_epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TransformerError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gpt2_small_config_is_about_86_million() {
        let n = param_count(&ModelConfig::paper(53));
        assert_eq!(n, 85_489_920);
        assert!((n as f64 - 85.9e6).abs() / 85.9e6 < 0.02);
    }

    #[test]
    fn zero_layers_is_embeddings_plus_final_norm() {
        let mut cfg = ModelConfig::desk(50);
        cfg.n_layers = 0;
        assert_eq!(param_count(&cfg), 50 * 128 + 256 * 128 + 2 * 128);
        cfg.positional = Positional::Sinusoidal;
        assert_eq!(param_count(&cfg), 50 * 128 + 2 * 128);
    }

    #[test]
    fn tiny_config_hand_tally() {
        // vocab 5, width 8, ff 32, 16 positions, one layer:
        // wte 40, wpe 128, ln1 16, q/k/v/o 4*(64+8)=288, ln2 16,
        // mlp 8*32+32 + 32*8+8 = 552, final norm 16.
        assert_eq!(param_count(&ModelConfig::tiny(5)), 40 + 128 + 16 + 288 + 16 + 552 + 16);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ModelConfig::desk(10);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk(10);
        cfg.context_length = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk(10);
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
    }
}
