//! Dataset splits, perplexity and report formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::syngen::DatasetStats;
use crate::decoding::{log_softmax, DecodeConfig, DecodeError, FnModel, LanguageModel};
use crate::interface::{complete, CompletionItem, CompletionRequest, InterfaceError};
use crate::tokenizer::{detokenize, tokenize};
use crate::tokenizer::{TokenSequence, PAD_ID};
use crate::transformer::{Checkpoint, Float, LossPoint, Params, TransformerError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid fractions: {0}")]
    InvalidFractions(String),
    #[error("invalid prefix length range {0}..={1}")]
    PrefixRange(usize, usize),
    #[error("no sequence fits the context window ({skipped} skipped)")]
    NothingToScore { skipped: usize },
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] TransformerError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Interface(#[from] InterfaceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Train, validation and test corpora of SFILES strings.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> Result<DatasetStats, crate::syngen::SyngenError> {
        DatasetStats::of_splits(&self.train, &self.val, &self.test)
    }

    /// Writes `train.sfiles`, `val.sfiles` and `test.sfiles` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EvalError> {
        fs::create_dir_all(dir)?;
        for split in Split::ALL {
            write_corpus(&dir.join(split.file_name()), self.get(split))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        Ok(Self {
            train: read_corpus(&dir.join(Split::Train.file_name()))?,
            val: read_corpus(&dir.join(Split::Val.file_name()))?,
            test: read_corpus(&dir.join(Split::Test.file_name()))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn file_name(self) -> String {
        format!("{}.sfiles", self.name())
    }
}

/// One SFILES string per line; blank lines are ignored.
pub fn read_corpus(path: &Path) -> Result<Vec<String>, EvalError> {
    Ok(fs::read_to_string(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn write_corpus<S: AsRef<str>>(path: &Path, corpus: &[S]) -> Result<(), EvalError> {
    let mut text = String::new();
    for s in corpus {
        text.push_str(s.as_ref());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Seeded shuffle, then contiguous train/val/test slices. Validation and
/// test sizes are `round(fraction * n)`; train takes the remainder.
pub fn split_dataset<S: AsRef<str>>(corpus: &[S], fractions: (f64, f64, f64), seed: u64) -> Result<Splits, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(EvalError::InvalidFractions(format!("{a}, {b}, {c} must be in [0, 1] and sum to 1")));
    }
    let n = corpus.len();
    let n_val = (b * n as f64).round() as usize;
    let n_test = ((c * n as f64).round() as usize).min(n - n_val);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| corpus[i].as_ref().to_string()).collect();
    let n_train = n - n_val - n_test;
    Ok(Splits { train: take(0..n_train), val: take(n_train..n_train + n_val), test: take(n_train + n_val..n) })
}

/// Anything that can report the summed target NLL of a sequence.
pub trait SequenceScorer: Sync {
    fn context_length(&self) -> usize;

    /// Summed `-log P` over non-PAD targets after the first token, and
    /// their count.
    fn nll(&self, seq: &[u32]) -> Result<(f64, usize), EvalError>;
}

impl<F: Float> SequenceScorer for Params<F> {
    fn context_length(&self) -> usize {
        self.cfg.context_length
    }

    fn nll(&self, seq: &[u32]) -> Result<(f64, usize), EvalError> {
        Ok(self.sequence_nll(seq)?)
    }
}

impl<P: Fn(&[u32]) -> Vec<f64> + Sync> SequenceScorer for FnModel<P> {
    fn context_length(&self) -> usize {
        self.context_length
    }

    fn nll(&self, seq: &[u32]) -> Result<(f64, usize), EvalError> {
        let end = seq.iter().rposition(|&t| t != PAD_ID).map_or(0, |i| i + 1);
        let seq = &seq[..end];
        if seq.len() < 2 {
            return Ok((0.0, 0));
        }
        let (mut state, mut logits) = self.start(&seq[..1])?;
        let (mut nll, mut n) = (0.0, 0);
        for (i, &t) in seq[1..].iter().enumerate() {
            if t != PAD_ID {
                nll -= log_softmax(&logits, 1.0)[t as usize];
                n += 1;
            }
            if i + 2 < seq.len() {
                logits = self.advance(&mut state, t)?;
            }
        }
        Ok((nll, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Perplexity {
    pub perplexity: f64,
    /// Mean NLL per target token (the cross-entropy loss).
    pub loss: f64,
    pub tokens: usize,
    pub sequences: usize,
    /// Sequences longer than the context window, left out.
    pub skipped: usize,
}

/// Pooled perplexity: `exp` of the mean NLL over every non-PAD target
/// token of the corpus (BOS is never a target, EOS is).
pub fn perplexity<M: SequenceScorer>(model: &M, corpus: &[TokenSequence]) -> Result<Perplexity, EvalError> {
    let ctx = model.context_length();
    let fits = |s: &TokenSequence| s.len().saturating_sub(1) <= ctx;
    let kept: Vec<&TokenSequence> = corpus.iter().filter(|s| fits(s)).collect();
    let skipped = corpus.len() - kept.len();
    let parts: Vec<(f64, usize)> = kept.par_iter().map(|s| model.nll(s)).collect::<Result<_, _>>()?;
    let (nll, tokens) = parts.iter().fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y));
    if tokens == 0 {
        return Err(EvalError::NothingToScore { skipped });
    }
    let loss = nll / tokens as f64;
    Ok(Perplexity { perplexity: loss.exp(), loss, tokens, sequences: kept.len(), skipped })
}

/// Encodes SFILES lines with BOS/EOS under the checkpoint vocabulary.
pub fn encode_corpus<S: AsRef<str>>(ckpt: &Checkpoint, corpus: &[S]) -> Result<Vec<TokenSequence>, EvalError> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, s)| {
            ckpt.vocab.encode(s.as_ref(), true, true).map_err(|e| EvalError::Corpus { line: i + 1, message: e.to_string() })
        })
        .collect()
}

pub fn checkpoint_perplexity<S: AsRef<str>>(ckpt: &Checkpoint, corpus: &[S]) -> Result<Perplexity, EvalError> {
    perplexity(&ckpt.params, &encode_corpus(ckpt, corpus)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportCell {
    pub model: String,
    pub dataset: String,
    pub split: Split,
    #[serde(flatten)]
    pub result: Perplexity,
}

/// Perplexity of every model on every dataset split.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct PerplexityReport {
    pub cells: Vec<ReportCell>,
}

pub fn report(models: &[(&str, &Checkpoint)], datasets: &[(&str, &Splits)], splits: &[Split]) -> Result<PerplexityReport, EvalError> {
    let mut cells = Vec::new();
    for (model, ckpt) in models {
        for (dataset, data) in datasets {
            for &split in splits {
                let result = checkpoint_perplexity(ckpt, data.get(split))?;
                cells.push(ReportCell { model: model.to_string(), dataset: dataset.to_string(), split, result });
            }
        }
    }
    Ok(PerplexityReport { cells })
}

impl PerplexityReport {
    pub fn get(&self, model: &str, dataset: &str, split: Split) -> Option<&Perplexity> {
        self.cells.iter().find(|c| c.model == model && c.dataset == dataset && c.split == split).map(|c| &c.result)
    }

    /// Rows are models, columns are `dataset/split`.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<(String, Split)> = Vec::new();
        let mut rows: Vec<String> = Vec::new();
        for c in &self.cells {
            if !cols.iter().any(|(d, s)| d == &c.dataset && *s == c.split) {
                cols.push((c.dataset.clone(), c.split));
            }
            if !rows.contains(&c.model) {
                rows.push(c.model.clone());
            }
        }
        let headers: Vec<String> = cols.iter().map(|(d, s)| format!("{d}/{}", s.name())).collect();
        let first = rows.iter().map(String::len).chain([5]).max().unwrap_or(5);
        let widths: Vec<usize> = headers.iter().map(|h| h.len().max(9)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<first$}", "model");
        for (h, w) in headers.iter().zip(&widths) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        for r in &rows {
            let _ = write!(out, "{r:<first$}");
            for ((d, s), w) in cols.iter().zip(&widths) {
                match self.get(r, d, *s) {
                    Some(p) => {
                        let _ = write!(out, "  {:>w$.3}", p.perplexity);
                    }
                    None => {
                        let _ = write!(out, "  {:>w$}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// `step,train_loss,val_loss` rows for plotting.
pub fn curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("step,train_loss,val_loss\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.step, p.train_loss, p.val_loss);
    }
    out
}

/// Prefixes of `n` distinct corpus lines, each cut after a random number
/// of tokens in `min_tokens..=max_tokens` (always leaving at least one
/// token to complete).
pub fn held_out_prefixes<S: AsRef<str>>(
    corpus: &[S],
    n: usize,
    (min_tokens, max_tokens): (usize, usize),
    seed: u64,
) -> Result<Vec<String>, EvalError> {
    if min_tokens == 0 || min_tokens > max_tokens {
        return Err(EvalError::PrefixRange(min_tokens, max_tokens));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(n);
    for i in order {
        if out.len() == n {
            break;
        }
        let tokens = tokenize(corpus[i].as_ref()).map_err(|e| EvalError::Corpus { line: i + 1, message: e.to_string() })?;
        if tokens.len() <= min_tokens {
            continue;
        }
        let k = rng.random_range(min_tokens..=max_tokens.min(tokens.len() - 1));
        out.push(detokenize(&tokens[..k]));
    }
    if out.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    Ok(out)
}

/// How many completions of a set of prefixes parse as SFILES.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Validity {
    pub prefixes: usize,
    pub completions: usize,
    /// Completions that parse in strict mode.
    pub valid: usize,
    /// Parsed completions that also satisfy every graph rule.
    pub rule_clean: usize,
    pub items: Vec<CompletionItem>,
}

impl Validity {
    pub fn rate(&self) -> f64 {
        self.valid as f64 / self.completions.max(1) as f64
    }

    pub fn clean_rate(&self) -> f64 {
        self.rule_clean as f64 / self.completions.max(1) as f64
    }
}

/// Completes every prefix and counts the candidates that parse. Every
/// returned candidate counts, not only the best one.
pub fn completion_validity<S: AsRef<str> + Sync>(
    ckpt: &Checkpoint,
    prefixes: &[S],
    decode: &DecodeConfig,
) -> Result<Validity, EvalError> {
    let responses: Vec<Vec<CompletionItem>> = prefixes
        .par_iter()
        .map(|p| complete(ckpt, &CompletionRequest::new(p.as_ref(), decode.clone())).map(|r| r.completions))
        .collect::<Result<_, _>>()?;
    let items: Vec<CompletionItem> = responses.into_iter().flatten().collect();
    Ok(Validity {
        prefixes: prefixes.len(),
        completions: items.len(),
        valid: items.iter().filter(|c| c.valid).count(),
        rule_clean: items.iter().filter(|c| c.valid && c.violations.is_empty()).count(),
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{BOS_ID, EOS_ID};

    #[test]
    fn split_sizes() {
        let c: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        let s = split_dataset(&c, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let c: Vec<String> = (0..7953).map(|i| i.to_string()).collect();
        let s = split_dataset(&c, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6363, 795, 795));
        assert_eq!(s, split_dataset(&c, (0.8, 0.1, 0.1), 1).unwrap());
        let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 7953);
    }

    #[test]
    fn split_errors() {
        let empty: [&str; 0] = [];
        assert!(matches!(split_dataset(&empty, (0.8, 0.1, 0.1), 0), Err(EvalError::EmptyCorpus)));
        assert!(matches!(split_dataset(&["a"], (0.8, 0.3, 0.1), 0), Err(EvalError::InvalidFractions(_))));
    }

    #[test]
    fn analytic_perplexities() {
        let uniform = FnModel::new(53, |_: &[u32]| vec![1.0 / 53.0; 53]);
        let corpus = vec![vec![BOS_ID, 7, 9, EOS_ID], vec![BOS_ID, 4, EOS_ID, PAD_ID]];
        let pp = perplexity(&uniform, &corpus).unwrap();
        assert!((pp.perplexity - 53.0).abs() < 1e-6);
        assert_eq!(pp.tokens, 5);

        // P(7|BOS)=0.5, P(EOS|BOS 7)=0.25.
        let m = FnModel::new(8, |h: &[u32]| {
            let mut p = vec![0.0; 8];
            if h.len() == 1 {
                p[7] = 0.5;
                p[3] = 0.5;
            } else {
                p[2] = 0.25;
                p[5] = 0.75;
            }
            p
        });
        let pp = perplexity(&m, &[vec![BOS_ID, 7, EOS_ID]]).unwrap();
        assert!((pp.perplexity - 2f64.sqrt() * 2.0).abs() < 1e-12);

        let perfect = FnModel::new(4, |h: &[u32]| if h.len() < 3 { vec![0.0, 0.0, 0.0, 1.0] } else { vec![0.0, 0.0, 1.0, 0.0] });
        let pp = perplexity(&perfect, &[vec![BOS_ID, 3, 3, EOS_ID]]).unwrap();
        assert_eq!(pp.perplexity, 1.0);
    }

    #[test]
    fn over_length_is_skipped_and_counted() {
        let mut m = FnModel::new(4, |_: &[u32]| vec![0.25; 4]);
        m.context_length = 3;
        let pp = perplexity(&m, &[vec![1, 3, 2], vec![1, 3, 3, 3, 2]]).unwrap();
        assert_eq!((pp.sequences, pp.skipped, pp.tokens), (1, 1, 2));
        assert!(matches!(perplexity(&m, &[vec![1, 3, 3, 3, 2]]), Err(EvalError::NothingToScore { skipped: 1 })));
    }

    #[test]
    fn csv_layout() {
        let c = [LossPoint { step: 200, epoch: 0, train_loss: 1.5, val_loss: 1.25 }];
        assert_eq!(curve_csv(&c), "step,train_loss,val_loss\n200,1.5,1.25\n");
    }
}
