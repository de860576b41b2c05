//! Autoregressive decoding over any model that yields next-token logits.
//!
//! Scores are always sums of untempered next-token log-probabilities, so
//! greedy and beam search ignore `temperature`; it only reshapes the
//! distributions that sampling draws from.

mod search;
mod sample;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{TokenSequence, EOS_ID};
use crate::transformer::{Float, KvCache, Params, TransformerError};

pub use sample::{nucleus, top_k_sample, top_k_set, top_p_sample, NucleusSet};
pub use search::{beam_search, greedy};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decoding configuration: {0}")]
    InvalidConfig(String),
    #[error("context is empty")]
    EmptyContext,
    #[error("sequence of {len} tokens exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error(transparent)]
    Model(TransformerError),
}

impl From<TransformerError> for DecodeError {
    fn from(e: TransformerError) -> Self {
        match e {
            TransformerError::SequenceTooLong { len, max } => DecodeError::SequenceTooLong { len, max },
            other => DecodeError::Model(other),
        }
    }
}

/// A model that can be queried one token at a time.
pub trait LanguageModel {
    /// Whatever the model needs to continue a sequence (e.g. a KV cache).
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Maximum number of input positions.
    fn context_length(&self) -> usize;

    /// Consumes `context` and returns logits for the next token.
    fn start(&self, context: &[u32]) -> Result<(Self::State, Vec<f64>), DecodeError>;

    /// Appends `token` and returns logits for the token after it.
    fn advance(&self, state: &mut Self::State, token: u32) -> Result<Vec<f64>, DecodeError>;
}

impl<F: Float> LanguageModel for Params<F> {
    type State = KvCache<F>;

    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn context_length(&self) -> usize {
        self.cfg.context_length
    }

    fn start(&self, context: &[u32]) -> Result<(KvCache<F>, Vec<f64>), DecodeError> {
        if context.is_empty() {
            return Err(DecodeError::EmptyContext);
        }
        if context.len() > self.cfg.context_length {
            return Err(DecodeError::SequenceTooLong { len: context.len(), max: self.cfg.context_length });
        }
        let mut cache = self.new_cache();
        let mut logits = Vec::new();
        for &t in context {
            logits = self.step(&mut cache, t)?;
        }
        Ok((cache, logits.iter().map(|x| x.f64()).collect()))
    }

    fn advance(&self, state: &mut KvCache<F>, token: u32) -> Result<Vec<f64>, DecodeError> {
        Ok(self.step(state, token)?.iter().map(|x| x.f64()).collect())
    }
}

/// Toy model defined by a function from the history to next-token
/// probabilities. Used by tests and examples.
pub struct FnModel<P> {
    pub vocab_size: usize,
    pub context_length: usize,
    pub probs: P,
}

impl<P: Fn(&[u32]) -> Vec<f64>> FnModel<P> {
    pub fn new(vocab_size: usize, probs: P) -> Self {
        Self { vocab_size, context_length: usize::MAX / 2, probs }
    }

    fn logits(&self, history: &[u32]) -> Vec<f64> {
        let p = (self.probs)(history);
        assert_eq!(p.len(), self.vocab_size, "toy model returned wrong vocabulary size");
        p.iter().map(|x| x.ln()).collect()
    }
}

impl<P: Fn(&[u32]) -> Vec<f64>> LanguageModel for FnModel<P> {
    type State = Vec<u32>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_length(&self) -> usize {
        self.context_length
    }

    fn start(&self, context: &[u32]) -> Result<(Vec<u32>, Vec<f64>), DecodeError> {
        if context.is_empty() {
            return Err(DecodeError::EmptyContext);
        }
        if context.len() > self.context_length {
            return Err(DecodeError::SequenceTooLong { len: context.len(), max: self.context_length });
        }
        Ok((context.to_vec(), self.logits(context)))
    }

    fn advance(&self, state: &mut Vec<u32>, token: u32) -> Result<Vec<f64>, DecodeError> {
        state.push(token);
        if state.len() > self.context_length {
            return Err(DecodeError::SequenceTooLong { len: state.len(), max: self.context_length });
        }
        Ok(self.logits(state))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    #[default]
    Beam,
    TopK,
    TopP,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    pub p: f64,
    pub k: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub num_return: usize,
    pub seed: u64,
    /// Rank beams by mean instead of summed log-probability.
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_width: 5,
            p: 0.9,
            k: 10,
            temperature: 1.0,
            max_new_tokens: 200,
            num_return: 3,
            seed: 0,
            length_normalize: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::InvalidConfig(m.into()));
        if self.beam_width == 0 {
            return bad("beam_width must be at least 1");
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad("p must lie in (0, 1]");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.num_return == 0 {
            return bad("num_return must be at least 1");
        }
        if self.strategy == Strategy::Beam && self.num_return > self.beam_width {
            return bad("num_return cannot exceed beam_width");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    /// Context followed by the generated tokens.
    pub ids: TokenSequence,
    /// Sum of log-probabilities of the generated tokens.
    pub log_prob: f64,
    /// True when EOS was produced.
    pub finished: bool,
}

/// `log softmax(logits / temperature)`.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    log_softmax(logits, temperature).into_iter().map(f64::exp).collect()
}

/// Probabilities of the token following `context`.
pub fn next_distribution<M: LanguageModel>(model: &M, context: &[u32], temperature: f64) -> Result<Vec<f64>, DecodeError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(DecodeError::InvalidConfig("temperature must be positive".into()));
    }
    let (_, logits) = model.start(context)?;
    Ok(softmax(&logits, temperature))
}

/// Sum of `log P(t_i | t_<i)` for `i ≥ 1`.
pub fn sequence_log_prob<M: LanguageModel>(model: &M, seq: &[u32]) -> Result<f64, DecodeError> {
    if seq.len() < 2 {
        return Err(DecodeError::InvalidConfig("sequence needs at least two tokens".into()));
    }
    if seq.len() - 1 > model.context_length() {
        return Err(DecodeError::SequenceTooLong { len: seq.len() - 1, max: model.context_length() });
    }
    let (mut state, mut logits) = model.start(&seq[..1])?;
    let mut total = 0.0;
    for (i, &t) in seq[1..].iter().enumerate() {
        total += log_softmax(&logits, 1.0)[t as usize];
        if i + 2 < seq.len() {
            logits = model.advance(&mut state, t)?;
        }
    }
    Ok(total)
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Whether a sequence of `len` tokens can still be fed to the model.
pub(crate) fn can_feed<M: LanguageModel>(model: &M, len: usize) -> bool {
    len <= model.context_length()
}

pub(crate) fn is_eos(t: u32) -> bool {
    t == EOS_ID
}

/// Runs the configured strategy. Sampled completions use one RNG stream per
/// returned sample and come back sorted by `log_prob`, best first.
pub fn decode<M: LanguageModel>(model: &M, context: &[u32], cfg: &DecodeConfig) -> Result<Vec<Completion>, DecodeError> {
    cfg.validate()?;
    match cfg.strategy {
        Strategy::Greedy => Ok(vec![greedy(model, context, cfg)?]),
        Strategy::Beam => beam_search(model, context, cfg),
        Strategy::TopK | Strategy::TopP => {
            let mut out = Vec::with_capacity(cfg.num_return);
            for i in 0..cfg.num_return {
                let mut rng = crate::syngen::sample_rng(cfg.seed, i as u64);
                out.push(match cfg.strategy {
                    Strategy::TopK => top_k_sample(model, context, cfg, &mut rng)?,
                    _ => top_p_sample(model, context, cfg, &mut rng)?,
                });
            }
            out.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
            Ok(out)
        }
    }
}
