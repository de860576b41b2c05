use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::Serialize;

use super::{can_feed, is_eos, log_softmax, softmax, Completion, DecodeConfig, DecodeError, LanguageModel};

/// Token ids by descending probability, ties by ascending id.
fn by_probability(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

/// The smallest most-probable prefix of the vocabulary whose mass reaches `p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NucleusSet {
    /// Members in descending probability.
    pub members: Vec<u32>,
    pub cumulative_mass: f64,
}

impl NucleusSet {
    /// Member probabilities rescaled to sum to one, aligned with `members`.
    pub fn renormalized(&self, probs: &[f64]) -> Vec<f64> {
        self.members.iter().map(|&t| probs[t as usize] / self.cumulative_mass).collect()
    }
}

pub fn nucleus(probs: &[f64], p: f64) -> NucleusSet {
    let mut members = Vec::new();
    let mut mass = 0.0;
    for t in by_probability(probs) {
        if probs[t] <= 0.0 {
            break;
        }
        members.push(t as u32);
        mass += probs[t];
        if mass >= p {
            break;
        }
    }
    NucleusSet { members, cumulative_mass: mass }
}

/// The `k` most probable tokens, ties by ascending id.
pub fn top_k_set(probs: &[f64], k: usize) -> Vec<u32> {
    by_probability(probs).into_iter().take(k).map(|t| t as u32).collect()
}

fn draw<R: Rng>(members: &[u32], probs: &[f64], rng: &mut R) -> u32 {
    let weights: Vec<f64> = members.iter().map(|&t| probs[t as usize]).collect();
    match WeightedIndex::new(&weights) {
        Ok(dist) => members[dist.sample(rng)],
        // All mass underflowed; fall back to the most probable member.
        Err(_) => members[0],
    }
}

fn sample_with<M, R, S>(model: &M, context: &[u32], cfg: &DecodeConfig, rng: &mut R, support: S) -> Result<Completion, DecodeError>
where
    M: LanguageModel,
    R: Rng,
    S: Fn(&[f64]) -> Vec<u32>,
{
    let (mut state, mut logits) = model.start(context)?;
    let mut ids = context.to_vec();
    let mut log_prob = 0.0;
    for n in 0..cfg.max_new_tokens {
        let probs = softmax(&logits, cfg.temperature);
        let t = draw(&support(&probs), &probs, rng);
        log_prob += log_softmax(&logits, 1.0)[t as usize];
        ids.push(t);
        if is_eos(t) {
            return Ok(Completion { ids, log_prob, finished: true });
        }
        if n + 1 == cfg.max_new_tokens || !can_feed(model, ids.len()) {
            break;
        }
        logits = model.advance(&mut state, t)?;
    }
    Ok(Completion { ids, log_prob, finished: false })
}

/// Samples each token from the renormalised `k` most probable tokens.
pub fn top_k_sample<M: LanguageModel, R: Rng>(
    model: &M,
    context: &[u32],
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<Completion, DecodeError> {
    cfg.validate()?;
    sample_with(model, context, cfg, rng, |probs| top_k_set(probs, cfg.k))
}

/// Samples each token from the renormalised nucleus of mass `p`.
pub fn top_p_sample<M: LanguageModel, R: Rng>(
    model: &M,
    context: &[u32],
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<Completion, DecodeError> {
    cfg.validate()?;
    sample_with(model, context, cfg, rng, |probs| nucleus(probs, cfg.p).members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::{greedy, FnModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nucleus_of_worked_example() {
        let probs = [0.5, 0.3, 0.15, 0.05];
        let n = nucleus(&probs, 0.9);
        assert_eq!(n.members, vec![0, 1, 2]);
        let r = n.renormalized(&probs);
        for (a, b) in r.iter().zip([10.0 / 19.0, 6.0 / 19.0, 3.0 / 19.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(nucleus(&probs, 1.0).members, vec![0, 1, 2, 3]);
        assert_eq!(nucleus(&[0.0, 1.0, 0.0], 0.3).members, vec![1]);
    }

    #[test]
    fn boundary_tie_includes_lowest_id() {
        let probs = [0.25, 0.5, 0.25];
        let n = nucleus(&probs, 0.75);
        assert_eq!(n.members, vec![1, 0]);
    }

    #[test]
    fn k_one_is_greedy_and_seeded() {
        let m = FnModel::new(5, |h: &[u32]| {
            let s = h.len() as f64;
            let raw: Vec<f64> = (0..5).map(|i| 1.0 + ((i as f64 + 0.5) * s).cos()).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|r| r / z).collect()
        });
        let cfg = DecodeConfig { k: 1, max_new_tokens: 8, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(top_k_sample(&m, &[1], &cfg, &mut rng).unwrap(), greedy(&m, &[1], &cfg).unwrap());
        let cfg = DecodeConfig { p: 0.8, ..cfg };
        let a = top_p_sample(&m, &[1], &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = top_p_sample(&m, &[1], &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }
}
