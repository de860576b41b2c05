use std::cmp::Ordering;

use super::{argmax, can_feed, is_eos, log_softmax, Completion, DecodeConfig, DecodeError, LanguageModel};

/// Picks the most probable token at every step (ties go to the lowest id).
pub fn greedy<M: LanguageModel>(model: &M, context: &[u32], cfg: &DecodeConfig) -> Result<Completion, DecodeError> {
    let (mut state, mut logits) = model.start(context)?;
    let mut ids = context.to_vec();
    let mut log_prob = 0.0;
    for n in 0..cfg.max_new_tokens {
        let lp = log_softmax(&logits, 1.0);
        let t = argmax(&lp) as u32;
        log_prob += lp[t as usize];
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

struct Hyp<S> {
    ids: Vec<u32>,
    log_prob: f64,
    state: S,
    logits: Vec<f64>,
}

fn score(c: &Completion, context_len: usize, normalize: bool) -> f64 {
    if normalize {
        c.log_prob / (c.ids.len() - context_len).max(1) as f64
    } else {
        c.log_prob
    }
}

/// Descending by score; equal scores keep insertion order.
fn rank(pool: &mut [Completion], context_len: usize, normalize: bool) {
    pool.sort_by(|a, b| score(b, context_len, normalize).total_cmp(&score(a, context_len, normalize)));
}

/// Beam search over summed log-probabilities. Hypotheses that emit EOS
/// leave the beam for a result pool, and the beam is refilled to
/// `beam_width` from the remaining candidates. The search stops early once
/// `num_return` finished hypotheses score at least as well as every live one.
pub fn beam_search<M: LanguageModel>(model: &M, context: &[u32], cfg: &DecodeConfig) -> Result<Vec<Completion>, DecodeError> {
    cfg.validate()?;
    let width = cfg.beam_width;
    let normalize = cfg.length_normalize;
    let (state, logits) = model.start(context)?;
    let mut beam = vec![Hyp { ids: context.to_vec(), log_prob: 0.0, state, logits }];
    let mut pool: Vec<Completion> = Vec::new();

    for n in 0..cfg.max_new_tokens {
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (h, hyp) in beam.iter().enumerate() {
            for (t, lp) in log_softmax(&hyp.logits, 1.0).into_iter().enumerate() {
                if lp > f64::NEG_INFINITY {
                    cands.push((hyp.log_prob + lp, h, t as u32));
                }
            }
        }
        cands.sort_by(|a, b| match b.0.total_cmp(&a.0) {
            Ordering::Equal => (a.1, a.2).cmp(&(b.1, b.2)),
            o => o,
        });
        let last_step = n + 1 == cfg.max_new_tokens;
        let mut next = Vec::with_capacity(width);
        let mut taken = 0;
        for (lp, h, t) in cands {
            if taken == width {
                break;
            }
            let parent = &beam[h];
            let mut ids = parent.ids.clone();
            ids.push(t);
            if is_eos(t) {
                pool.push(Completion { ids, log_prob: lp, finished: true });
                continue;
            }
            taken += 1;
            if last_step || !can_feed(model, ids.len()) {
                pool.push(Completion { ids, log_prob: lp, finished: false });
                continue;
            }
            let mut state = parent.state.clone();
            let logits = model.advance(&mut state, t)?;
            next.push(Hyp { ids, log_prob: lp, state, logits });
        }
        beam = next;
        if beam.is_empty() {
            break;
        }
        if !normalize && pool.len() >= cfg.num_return {
            rank(&mut pool, context.len(), false);
            let best_live = beam.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if pool[cfg.num_return - 1].log_prob >= best_live {
                break;
            }
        }
    }
    if cfg.max_new_tokens == 0 {
        pool.push(Completion { ids: context.to_vec(), log_prob: 0.0, finished: false });
    }
    // Live hypotheses only remain here after an early stop, where they
    // cannot outrank the pool; keep them as fallbacks when the pool is short.
    pool.extend(beam.into_iter().map(|h| Completion { ids: h.ids, log_prob: h.log_prob, finished: false }));
    rank(&mut pool, context.len(), normalize);
    pool.truncate(cfg.num_return);
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::{sequence_log_prob, FnModel, Strategy};

    // A=4, B=5, C=6, D=7 over a vocabulary of 8; token 0 is the context.
    fn two_step() -> FnModel<impl Fn(&[u32]) -> Vec<f64>> {
        FnModel::new(8, |h: &[u32]| {
            let mut p = vec![0.0; 8];
            match h.len() {
                1 => {
                    p[4] = 0.6;
                    p[5] = 0.4;
                }
                _ if h[1] == 4 => {
                    p[6] = 0.5;
                    p[7] = 0.5;
                }
                _ => {
                    p[6] = 0.9;
                    p[7] = 0.1;
                }
            }
            p
        })
    }

    fn cfg(width: usize, horizon: usize, num_return: usize) -> DecodeConfig {
        DecodeConfig { beam_width: width, max_new_tokens: horizon, num_return, ..Default::default() }
    }

    #[test]
    fn beam_beats_greedy_on_two_step_model() {
        let m = two_step();
        let g = greedy(&m, &[0], &cfg(1, 2, 1)).unwrap();
        assert_eq!(g.ids, vec![0, 4, 6]);
        assert!((g.log_prob.exp() - 0.30).abs() < 1e-12);
        let b = beam_search(&m, &[0], &cfg(2, 2, 1)).unwrap();
        assert_eq!(b[0].ids, vec![0, 5, 6]);
        assert!((b[0].log_prob.exp() - 0.36).abs() < 1e-12);
        assert!(!b[0].finished);
    }

    #[test]
    fn width_one_is_greedy() {
        let m = FnModel::new(5, |h: &[u32]| {
            let s = h.iter().map(|&t| t as f64 + 1.0).sum::<f64>();
            let raw: Vec<f64> = (0..5).map(|i| ((s * (i as f64 + 1.3)).sin() + 1.1).powi(2)).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|r| r / z).collect()
        });
        for c in 0..100u32 {
            let ctx = [c % 5, (c / 5) % 5, 3];
            let g = greedy(&m, &ctx, &cfg(1, 6, 1)).unwrap();
            let b = beam_search(&m, &ctx, &cfg(1, 6, 1)).unwrap();
            assert_eq!(g, b[0]);
        }
    }

    #[test]
    fn results_sorted_and_consistent_with_sequence_log_prob() {
        let m = two_step();
        let out = beam_search(&m, &[0], &cfg(4, 2, 4)).unwrap();
        assert_eq!(out.len(), 4);
        for w in out.windows(2) {
            assert!(w[0].log_prob >= w[1].log_prob);
        }
        for c in &out {
            assert!((sequence_log_prob(&m, &c.ids).unwrap() - c.log_prob).abs() < 1e-9);
        }
    }

    #[test]
    fn eos_retires_hypothesis() {
        // From the context, EOS has 0.5; otherwise token 3 then EOS.
        let m = FnModel::new(4, |h: &[u32]| match h.len() {
            1 => vec![0.0, 0.0, 0.5, 0.5],
            _ => vec![0.0, 0.0, 1.0, 0.0],
        });
        let out = beam_search(&m, &[1], &cfg(2, 5, 2)).unwrap();
        assert_eq!(out[0].ids, vec![1, 2]);
        assert!(out[0].finished);
        assert_eq!(out[1].ids, vec![1, 3, 2]);
        assert!((out[1].log_prob - 0.5f64.ln()).abs() < 1e-12);
        let d = DecodeConfig { strategy: Strategy::Greedy, ..cfg(1, 5, 1) };
        assert_eq!(greedy(&m, &[1], &d).unwrap().ids, vec![1, 2]);
    }

    #[test]
    fn one_hot_model_forces_sequence() {
        let m = FnModel::new(4, |h: &[u32]| {
            let mut p = vec![0.0; 4];
            p[if h.len() < 4 { 3 } else { 2 }] = 1.0;
            p
        });
        let g = greedy(&m, &[1], &cfg(1, 10, 1)).unwrap();
        assert_eq!(g.ids, vec![1, 3, 3, 3, 2]);
        assert_eq!(g.log_prob, 0.0);
        assert!(g.finished);
        assert_eq!(sequence_log_prob(&m, &g.ids).unwrap(), 0.0);
    }

    #[test]
    fn context_limit_stops_generation() {
        let mut m = FnModel::new(4, |_: &[u32]| vec![0.0, 0.0, 0.0, 1.0]);
        m.context_length = 4;
        let g = greedy(&m, &[1, 3], &cfg(1, 10, 1)).unwrap();
        assert_eq!(g.ids.len(), 5);
        assert!(!g.finished);
        let b = beam_search(&m, &[1, 3], &cfg(2, 10, 1)).unwrap();
        assert_eq!(b[0].ids.len(), 5);
    }
}
