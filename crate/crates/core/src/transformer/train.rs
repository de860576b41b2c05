use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::checkpoint::{Checkpoint, TrainingMeta};
use super::config::{ModelConfig, Precision, TrainConfig};
use super::float::Float;
use super::params::Params;
use super::TransformerError;
use crate::evaluation::Splits;
use crate::tokenizer::{TokenSequence, Vocabulary, PAD_ID};

fn targets(seq: &[u32]) -> usize {
    let end = seq.iter().rposition(|&t| t != PAD_ID).map_or(0, |i| i + 1);
    seq[..end].iter().skip(1).filter(|&&t| t != PAD_ID).count()
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the three words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pooled gradient of a batch written to `out`. Each sequence is
/// differentiated into its own buffer and the buffers are summed in batch
/// order, so the result does not depend on scheduling.
fn batch_gradient<F: Float>(
    params: &Params<F>,
    batch: &[&[u32]],
    dropout: Option<(u64, u64)>,
    parallel: bool,
    out: &mut [F],
) -> Result<(f64, usize), TransformerError> {
    let total: usize = batch.iter().map(|s| targets(s)).sum();
    if total == 0 {
        return Err(TransformerError::EmptyBatch);
    }
    let scale = F::one() / F::of(total as f64);
    out.fill(F::zero());
    let n_params = out.len();
    let one = |(i, seq): (usize, &&[u32])| -> Result<(Vec<F>, f64), TransformerError> {
        let mut g = vec![F::zero(); n_params];
        let mut rng = dropout.map(|(seed, step)| ChaCha8Rng::seed_from_u64(mix(seed, step, i as u64)));
        let (nll, _) = params.sequence_grad(seq, scale, rng.as_mut(), &mut g)?;
        Ok((g, nll))
    };
    let mut nll_sum = 0.0;
    if parallel {
        let parts: Vec<_> = batch.par_iter().enumerate().map(one).collect::<Result<_, _>>()?;
        for (g, nll) in parts {
            nll_sum += nll;
            for (o, x) in out.iter_mut().zip(&g) {
                *o += *x;
            }
        }
    } else {
        for item in batch.iter().enumerate() {
            let (g, nll) = one(item)?;
            nll_sum += nll;
            for (o, x) in out.iter_mut().zip(&g) {
                *o += *x;
            }
        }
    }
    Ok((nll_sum, total))
}

/// Mean next-token cross-entropy over all non-PAD targets of the batch.
pub fn loss<F: Float>(params: &Params<F>, batch: &[TokenSequence]) -> Result<f64, TransformerError> {
    let (nll, n) = nll_sum(params, batch, false)?;
    if n == 0 {
        return Err(TransformerError::EmptyBatch);
    }
    Ok(nll / n as f64)
}

/// Summed NLL and target count over a corpus.
pub fn nll_sum<F: Float>(params: &Params<F>, batch: &[TokenSequence], parallel: bool) -> Result<(f64, usize), TransformerError> {
    let parts: Vec<(f64, usize)> = if parallel {
        batch.par_iter().map(|s| params.sequence_nll(s)).collect::<Result<_, _>>()?
    } else {
        batch.iter().map(|s| params.sequence_nll(s)).collect::<Result<_, _>>()?
    };
    Ok(parts.iter().fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y)))
}

/// Loss and its exact gradient (no dropout), shaped like the parameters.
pub fn gradients<F: Float>(params: &Params<F>, batch: &[TokenSequence]) -> Result<(f64, Vec<F>), TransformerError> {
    let refs: Vec<&[u32]> = batch.iter().map(Vec::as_slice).collect();
    let mut g = vec![F::zero(); params.data.len()];
    let (nll, n) = batch_gradient(params, &refs, None, false, &mut g)?;
    Ok((nll / n as f64, g))
}

pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Float> Adam<F> {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![F::zero(); n], v: vec![F::zero(); n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F]) {
        self.t += 1;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let c1 = F::of(1.0 - self.beta1.powi(self.t));
        let c2 = F::of(1.0 - self.beta2.powi(self.t));
        let (lr, eps) = (F::of(self.lr), F::of(self.eps));
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (F::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (F::one() - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossPoint {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct TrainReport {
    pub curve: Vec<LossPoint>,
    pub steps: usize,
    pub epochs: usize,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Sequences longer than the context window, left out of training.
    pub skipped: usize,
}

fn fits(seq: &[u32], ctx: usize) -> bool {
    seq.len() >= 2 && seq.len() - 1 <= ctx
}

/// Batches of one epoch: shuffle, sort windows of 50 batches by length,
/// cut into batches, shuffle the batch order.
fn epoch_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for window in order.chunks(batch_size * 50) {
        let mut w = window.to_vec();
        w.sort_by_key(|&i| lengths[i]);
        batches.extend(w.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Optimises `params` on `train`, evaluating on `val` every
/// `eval_interval_steps`; stops after `patience` consecutive evaluations
/// without improvement (at least one). Returns the best-validation weights.
pub fn train_params<F: Float>(
    mut params: Params<F>,
    train: &[TokenSequence],
    val: &[TokenSequence],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&LossPoint),
) -> Result<(Params<F>, TrainReport), TransformerError> {
    cfg.validate()?;
    let ctx = params.cfg.context_length;
    let train: Vec<&TokenSequence> = train.iter().filter(|s| fits(s, ctx)).collect();
    let val: Vec<TokenSequence> = val.iter().filter(|s| fits(s, ctx)).cloned().collect();
    if train.is_empty() || val.is_empty() {
        return Err(TransformerError::EmptyBatch);
    }
    let parallel = !cfg.deterministic;
    let lengths: Vec<usize> = train.iter().map(|s| s.len()).collect();

    let val_loss = |p: &Params<F>| -> Result<f64, TransformerError> {
        let (nll, n) = nll_sum(p, &val, parallel)?;
        Ok(nll / n as f64)
    };
    let mut best = params.clone();
    let mut report = TrainReport { best_val_loss: val_loss(&params)?, ..Default::default() };
    let mut adam = Adam::new(params.data.len(), cfg.learning_rate);
    let mut grad = vec![F::zero(); params.data.len()];
    let mut since_eval = (0.0, 0usize);
    let mut bad_evals = 0;
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let patience = cfg.patience.max(1);
    let mut last_eval_step = 0;

    'epochs: for epoch in 0..cfg.max_epochs {
        if report.steps >= max_steps {
            break;
        }
        report.epochs = epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0xE90C, epoch as u64));
        for batch in epoch_batches(&lengths, cfg.batch_size, &mut rng) {
            if report.steps >= max_steps {
                break 'epochs;
            }
            let seqs: Vec<&[u32]> = batch.iter().map(|&i| train[i].as_slice()).collect();
            let (nll, n) = batch_gradient(&params, &seqs, Some((cfg.seed, report.steps as u64)), parallel, &mut grad)?;
            let batch_loss = nll / n as f64;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TransformerError::NonFiniteLoss { step: report.steps, loss: batch_loss });
            }
            adam.step(&mut params.data, &grad);
            report.steps += 1;
            since_eval.0 += nll;
            since_eval.1 += n;

            if report.steps.is_multiple_of(cfg.eval_interval_steps) {
                last_eval_step = report.steps;
                if evaluate(&params, &mut best, &mut report, &mut since_eval, epoch, &val_loss, &mut bad_evals, &mut progress)?
                    && bad_evals >= patience {
                        report.stopped_early = true;
                        break 'epochs;
                    }
            }
        }
    }
    if report.steps > last_eval_step && !report.stopped_early {
        let epoch = report.epochs.saturating_sub(1);
        evaluate(&params, &mut best, &mut report, &mut since_eval, epoch, &val_loss, &mut bad_evals, &mut progress)?;
    }
    Ok((best, report))
}

/// Records one evaluation; returns true when it did not improve.
#[allow(clippy::too_many_arguments)]
fn evaluate<F: Float>(
    params: &Params<F>,
    best: &mut Params<F>,
    report: &mut TrainReport,
    since_eval: &mut (f64, usize),
    epoch: usize,
    val_loss: &impl Fn(&Params<F>) -> Result<f64, TransformerError>,
    bad_evals: &mut usize,
    progress: &mut impl FnMut(&LossPoint),
) -> Result<bool, TransformerError> {
    let vl = val_loss(params)?;
    if !vl.is_finite() {
        return Err(TransformerError::NonFiniteLoss { step: report.steps, loss: vl });
    }
    let point = LossPoint {
        step: report.steps,
        epoch,
        train_loss: since_eval.0 / since_eval.1.max(1) as f64,
        val_loss: vl,
    };
    *since_eval = (0.0, 0);
    progress(&point);
    report.curve.push(point);
    if vl < report.best_val_loss {
        report.best_val_loss = vl;
        report.best_step = report.steps;
        best.data.copy_from_slice(&params.data);
        *bad_evals = 0;
        Ok(false)
    } else {
        *bad_evals += 1;
        Ok(true)
    }
}

fn encode_all(vocab: &Vocabulary, corpus: &[String]) -> Result<Vec<TokenSequence>, TransformerError> {
    corpus
        .iter()
        .map(|s| vocab.encode(s, true, true).map_err(|e| TransformerError::Corpus(e.to_string())))
        .collect()
}

fn run_precision(
    params: Params<f32>,
    train: &[TokenSequence],
    val: &[TokenSequence],
    cfg: &TrainConfig,
    progress: impl FnMut(&LossPoint),
) -> Result<(Params<f32>, TrainReport), TransformerError> {
    match cfg.precision {
        Precision::F32 => train_params(params, train, val, cfg, progress),
        Precision::F64 => {
            let (p, r) = train_params(params.cast::<f64>(), train, val, cfg, progress)?;
            Ok((p.cast::<f32>(), r))
        }
    }
}

fn count_long(seqs: &[TokenSequence], ctx: usize) -> usize {
    seqs.iter().filter(|s| !fits(s, ctx)).count()
}

/// Builds the vocabulary from all splits, initialises a model and trains it.
pub fn train(
    splits: &Splits,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    progress: impl FnMut(&LossPoint),
) -> Result<(Checkpoint, TrainReport), TransformerError> {
    let all: Vec<&String> = splits.train.iter().chain(&splits.val).chain(&splits.test).collect();
    let vocab = Vocabulary::build(&all).map_err(|e| TransformerError::Corpus(e.to_string()))?;
    let mut mcfg = model_cfg.clone();
    mcfg.vocab_size = vocab.len();
    mcfg.validate()?;
    let train = encode_all(&vocab, &splits.train)?;
    let val = encode_all(&vocab, &splits.val)?;
    let params = Params::<f32>::init(&mcfg, cfg.seed);
    let (params, mut report) = run_precision(params, &train, &val, cfg, progress)?;
    report.skipped = count_long(&train, mcfg.context_length);
    let meta = TrainingMeta::from_report(&report, cfg, None);
    Ok((Checkpoint { vocab, params, meta }, report))
}

/// Continues training from a checkpoint on a new corpus.
pub fn finetune(
    ckpt: &Checkpoint,
    splits: &Splits,
    cfg: &TrainConfig,
    progress: impl FnMut(&LossPoint),
) -> Result<(Checkpoint, TrainReport), TransformerError> {
    let all: Vec<&String> = splits.train.iter().chain(&splits.val).chain(&splits.test).collect();
    let mut vocab = ckpt.vocab.clone();
    let mut probe = vocab.clone();
    let added = probe.extend(&all).map_err(|e| TransformerError::Corpus(e.to_string()))?;
    let mut params = ckpt.params.clone();
    if added > 0 {
        if !cfg.extend_vocab {
            let missing: Vec<String> = probe.tokens()[vocab.len()..].to_vec();
            return Err(TransformerError::VocabMismatch(missing));
        }
        params = params.extend_vocab(probe.len(), cfg.seed);
        vocab = probe;
    }
    let train = encode_all(&vocab, &splits.train)?;
    let val = encode_all(&vocab, &splits.val)?;
    let (params, mut report) = run_precision(params, &train, &val, cfg, progress)?;
    report.skipped = count_long(&train, params.cfg.context_length);
    let meta = TrainingMeta::from_report(&report, cfg, Some(ckpt.hash()));
    Ok((Checkpoint { vocab, params, meta }, report))
}
