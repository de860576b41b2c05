use rand::Rng;

use super::float::{gemm, Float, View, ViewMut};
use super::ops::{attend, gelu, gelu_grad, layer_norm, layer_norm_backward, sinusoid, LnCache};
use super::params::{LayerOffsets, Params};
use super::TransformerError;
use crate::tokenizer::PAD_ID;

struct LayerCache<F> {
    ln1: LnCache<F>,
    a: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    drop1: Option<Vec<F>>,
    ln2: LnCache<F>,
    m: Vec<F>,
    u: Vec<F>,
    gl: Vec<F>,
    drop2: Option<Vec<F>>,
}

struct Cache<F> {
    tokens: Vec<u32>,
    drop0: Option<Vec<F>>,
    layers: Vec<LayerCache<F>>,
    lnf: LnCache<F>,
    hf: Vec<F>,
    logits: Vec<F>,
}

fn slice<F>(data: &[F], off: usize, len: usize) -> &[F] {
    &data[off..off + len]
}

/// `y = x W + b` for `x: rows × n_in`, `W: n_in × n_out`.
fn linear<F: Float>(x: &[F], rows: usize, n_in: usize, w: &[F], b: &[F], n_out: usize) -> Vec<F> {
    let mut y = Vec::with_capacity(rows * n_out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(F::one(), View::rows(x, rows, n_in), View::rows(w, n_in, n_out), F::one(), ViewMut::rows(&mut y, rows, n_out));
    y
}

/// Accumulates `dW += xᵀ dy`, `db += Σ dy` and returns `dx = dy Wᵀ`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<F: Float>(
    x: &[F],
    dy: &[F],
    rows: usize,
    n_in: usize,
    n_out: usize,
    w: &[F],
    grad: &mut [F],
    w_off: usize,
    b_off: usize,
) -> Vec<F> {
    gemm(
        F::one(),
        View::rows(x, rows, n_in).t(),
        View::rows(dy, rows, n_out),
        F::one(),
        ViewMut::rows(&mut grad[w_off..w_off + n_in * n_out], n_in, n_out),
    );
    let db = &mut grad[b_off..b_off + n_out];
    for r in 0..rows {
        for (g, &d) in db.iter_mut().zip(&dy[r * n_out..(r + 1) * n_out]) {
            *g += d;
        }
    }
    let mut dx = vec![F::zero(); rows * n_in];
    gemm(F::one(), View::rows(dy, rows, n_out), View::rows(w, n_in, n_out).t(), F::zero(), ViewMut::rows(&mut dx, rows, n_in));
    dx
}

fn dropout_mask<F: Float, R: Rng>(len: usize, p: f64, rng: Option<&mut R>) -> Option<Vec<F>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = F::of(1.0 / (1.0 - p));
    Some((0..len).map(|_| if rng.random::<f64>() < p { F::zero() } else { keep }).collect())
}

fn apply_mask<F: Float>(x: &mut [F], mask: &Option<Vec<F>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

impl<F: Float> Params<F> {
    fn check_tokens(&self, tokens: &[u32]) -> Result<(), TransformerError> {
        if tokens.is_empty() {
            return Err(TransformerError::EmptyBatch);
        }
        if tokens.len() > self.cfg.context_length {
            return Err(TransformerError::SequenceTooLong { len: tokens.len(), max: self.cfg.context_length });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(TransformerError::TokenOutOfRange { token: t, vocab_size: self.cfg.vocab_size });
        }
        Ok(())
    }

    fn embed(&self, token: u32, pos: usize, out: &mut [F]) {
        let d = self.cfg.n_embd;
        let wte = slice(&self.data, self.layout.wte + token as usize * d, d);
        match self.layout.wpe {
            Some(off) => {
                let wpe = slice(&self.data, off + pos * d, d);
                for i in 0..d {
                    out[i] = wte[i] + wpe[i];
                }
            }
            None => {
                sinusoid(pos, d, out);
                for i in 0..d {
                    out[i] += wte[i];
                }
            }
        }
    }

    fn run<R: Rng>(&self, tokens: &[u32], mut rng: Option<&mut R>) -> Cache<F> {
        let cfg = &self.cfg;
        let (t, d, f, h, dk) = (tokens.len(), cfg.n_embd, cfg.d_ff, cfg.n_heads, cfg.head_dim());
        let p = cfg.dropout;
        let mut x = vec![F::zero(); t * d];
        for (i, &tok) in tokens.iter().enumerate() {
            self.embed(tok, i, &mut x[i * d..(i + 1) * d]);
        }
        let drop0 = dropout_mask(t * d, p, rng.as_deref_mut());
        apply_mask(&mut x, &drop0);

        let w = &self.data;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lo in &self.layout.layers {
            let mut ln1 = LnCache::default();
            let mut a = vec![F::zero(); t * d];
            layer_norm(&x, slice(w, lo.ln1_g, d), slice(w, lo.ln1_b, d), d, &mut a, Some(&mut ln1));
            let q = linear(&a, t, d, slice(w, lo.wq, d * d), slice(w, lo.bq, d), d);
            let k = linear(&a, t, d, slice(w, lo.wk, d * d), slice(w, lo.bk, d), d);
            let v = linear(&a, t, d, slice(w, lo.wv, d * d), slice(w, lo.bv, d), d);
            let mut probs = vec![F::zero(); h * t * t];
            let mut att = vec![F::zero(); t * d];
            for head in 0..h {
                attend(
                    View::block(&q, t, d, head * dk, dk),
                    View::block(&k, t, d, head * dk, dk),
                    View::block(&v, t, d, head * dk, dk),
                    true,
                    &mut probs[head * t * t..(head + 1) * t * t],
                    ViewMut::block(&mut att, t, d, head * dk, dk),
                );
            }
            let mut y = linear(&att, t, d, slice(w, lo.wo, d * d), slice(w, lo.bo, d), d);
            let drop1 = dropout_mask(t * d, p, rng.as_deref_mut());
            apply_mask(&mut y, &drop1);
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi += *yi;
            }

            let mut ln2 = LnCache::default();
            let mut m = vec![F::zero(); t * d];
            layer_norm(&x, slice(w, lo.ln2_g, d), slice(w, lo.ln2_b, d), d, &mut m, Some(&mut ln2));
            let u = linear(&m, t, d, slice(w, lo.w1, d * f), slice(w, lo.b1, f), f);
            let gl: Vec<F> = u.iter().map(|&z| gelu(z)).collect();
            let mut z = linear(&gl, t, f, slice(w, lo.w2, f * d), slice(w, lo.b2, d), d);
            let drop2 = dropout_mask(t * d, p, rng.as_deref_mut());
            apply_mask(&mut z, &drop2);
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += *zi;
            }
            layers.push(LayerCache { ln1, a, q, k, v, probs, att, drop1, ln2, m, u, gl, drop2 });
        }

        let mut lnf = LnCache::default();
        let mut hf = vec![F::zero(); t * d];
        layer_norm(&x, slice(w, self.layout.lnf_g, d), slice(w, self.layout.lnf_b, d), d, &mut hf, Some(&mut lnf));
        let vsz = cfg.vocab_size;
        let mut logits = vec![F::zero(); t * vsz];
        gemm(
            F::one(),
            View::rows(&hf, t, d),
            View::rows(slice(w, self.layout.wte, vsz * d), vsz, d).t(),
            F::zero(),
            ViewMut::rows(&mut logits, t, vsz),
        );
        Cache { tokens: tokens.to_vec(), drop0, layers, lnf, hf, logits }
    }

    /// Logits `len × vocab_size`, row i predicting the token after position i.
    pub fn forward(&self, tokens: &[u32]) -> Result<Vec<F>, TransformerError> {
        self.check_tokens(tokens)?;
        Ok(self.run::<rand_chacha::ChaCha8Rng>(tokens, None).logits)
    }

    fn backward(&self, cache: &Cache<F>, dlogits: &[F], grad: &mut [F]) {
        let cfg = &self.cfg;
        let (t, d, f, h, dk, vsz) =
            (cache.tokens.len(), cfg.n_embd, cfg.d_ff, cfg.n_heads, cfg.head_dim(), cfg.vocab_size);
        let w = &self.data;
        let lay = &self.layout;

        // Tied head: logits = hf · wteᵀ.
        gemm(
            F::one(),
            View::rows(dlogits, t, vsz).t(),
            View::rows(&cache.hf, t, d),
            F::one(),
            ViewMut::rows(&mut grad[lay.wte..lay.wte + vsz * d], vsz, d),
        );
        let mut dhf = vec![F::zero(); t * d];
        gemm(F::one(), View::rows(dlogits, t, vsz), View::rows(slice(w, lay.wte, vsz * d), vsz, d), F::zero(), ViewMut::rows(&mut dhf, t, d));
        let (dg, db) = grad_pair(grad, lay.lnf_g, lay.lnf_b, d);
        let mut dx = layer_norm_backward(&dhf, slice(w, lay.lnf_g, d), &cache.lnf, d, dg, db);

        for (lo, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // MLP branch.
            let mut dz = dx.clone();
            apply_mask(&mut dz, &lc.drop2);
            let mut dgl = linear_backward(&lc.gl, &dz, t, f, d, slice(w, lo.w2, f * d), grad, lo.w2, lo.b2);
            for (g, &u) in dgl.iter_mut().zip(&lc.u) {
                *g *= gelu_grad(u);
            }
            let dm = linear_backward(&lc.m, &dgl, t, d, f, slice(w, lo.w1, d * f), grad, lo.w1, lo.b1);
            let (dg, db) = grad_pair(grad, lo.ln2_g, lo.ln2_b, d);
            let dxm = layer_norm_backward(&dm, slice(w, lo.ln2_g, d), &lc.ln2, d, dg, db);
            for (a, b) in dx.iter_mut().zip(&dxm) {
                *a += *b;
            }

            // Attention branch.
            let mut dy = dx.clone();
            apply_mask(&mut dy, &lc.drop1);
            let datt = linear_backward(&lc.att, &dy, t, d, d, slice(w, lo.wo, d * d), grad, lo.wo, lo.bo);
            let (dq, dk_, dv) = attention_backward(lc, &datt, t, d, h, dk);
            let mut da = linear_backward(&lc.a, &dq, t, d, d, slice(w, lo.wq, d * d), grad, lo.wq, lo.bq);
            for (w_off, b_off, dpart) in [(lo.wk, lo.bk, &dk_), (lo.wv, lo.bv, &dv)] {
                let part = linear_backward(&lc.a, dpart, t, d, d, slice(w, w_off, d * d), grad, w_off, b_off);
                for (a, b) in da.iter_mut().zip(&part) {
                    *a += *b;
                }
            }
            let (dg, db) = grad_pair(grad, lo.ln1_g, lo.ln1_b, d);
            let dxa = layer_norm_backward(&da, slice(w, lo.ln1_g, d), &lc.ln1, d, dg, db);
            for (a, b) in dx.iter_mut().zip(&dxa) {
                *a += *b;
            }
        }

        apply_mask(&mut dx, &cache.drop0);
        for (i, &tok) in cache.tokens.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            let te = lay.wte + tok as usize * d;
            for j in 0..d {
                grad[te + j] += row[j];
            }
            if let Some(pe) = lay.wpe {
                for j in 0..d {
                    grad[pe + i * d + j] += row[j];
                }
            }
        }
    }

    /// Forward and backward for one sequence (BOS ... EOS). Adds
    /// `scale * d(sum of target NLL)` to `grad` and returns the summed NLL
    /// and the number of (non-PAD) targets.
    pub(crate) fn sequence_grad<R: Rng>(
        &self,
        seq: &[u32],
        scale: F,
        rng: Option<&mut R>,
        grad: &mut [F],
    ) -> Result<(f64, usize), TransformerError> {
        let seq = trim_pad(seq);
        if seq.len() < 2 {
            return Ok((0.0, 0));
        }
        let inputs = &seq[..seq.len() - 1];
        self.check_tokens(inputs)?;
        self.check_tokens(&seq[1..])?;
        let cache = self.run(inputs, rng);
        let vsz = self.cfg.vocab_size;
        let mut dlogits = vec![F::zero(); cache.logits.len()];
        let mut nll = 0.0;
        let mut count = 0;
        for (i, &target) in seq[1..].iter().enumerate() {
            if target == PAD_ID {
                continue;
            }
            let row = &cache.logits[i * vsz..(i + 1) * vsz];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let sum: F = row.iter().map(|&z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            nll += (lse - row[target as usize]).f64();
            count += 1;
            let drow = &mut dlogits[i * vsz..(i + 1) * vsz];
            for j in 0..vsz {
                drow[j] = (row[j] - lse).exp() * scale;
            }
            drow[target as usize] -= scale;
        }
        if count > 0 {
            self.backward(&cache, &dlogits, grad);
        }
        Ok((nll, count))
    }

    /// Summed target NLL and target count of one sequence, without dropout.
    pub fn sequence_nll(&self, seq: &[u32]) -> Result<(f64, usize), TransformerError> {
        let seq = trim_pad(seq);
        if seq.len() < 2 {
            return Ok((0.0, 0));
        }
        let logits = self.forward(&seq[..seq.len() - 1])?;
        let vsz = self.cfg.vocab_size;
        let mut nll = 0.0;
        let mut count = 0;
        for (i, &target) in seq[1..].iter().enumerate() {
            if target == PAD_ID {
                continue;
            }
            if target as usize >= vsz {
                return Err(TransformerError::TokenOutOfRange { token: target, vocab_size: vsz });
            }
            let row = &logits[i * vsz..(i + 1) * vsz];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let sum: F = row.iter().map(|&z| (z - max).exp()).sum();
            nll += (max + sum.ln() - row[target as usize]).f64();
            count += 1;
        }
        Ok((nll, count))
    }
}

fn trim_pad(seq: &[u32]) -> &[u32] {
    let end = seq.iter().rposition(|&t| t != PAD_ID).map_or(0, |i| i + 1);
    &seq[..end]
}

fn grad_pair<F>(grad: &mut [F], g_off: usize, b_off: usize, d: usize) -> (&mut [F], &mut [F]) {
    debug_assert_eq!(g_off + d, b_off);
    let (g, b) = grad[g_off..b_off + d].split_at_mut(d);
    (g, b)
}

fn attention_backward<F: Float>(lc: &LayerCache<F>, datt: &[F], t: usize, d: usize, h: usize, dk: usize) -> (Vec<F>, Vec<F>, Vec<F>) {
    let scale = F::one() / F::of(dk as f64).sqrt();
    let mut dq = vec![F::zero(); t * d];
    let mut dkm = vec![F::zero(); t * d];
    let mut dv = vec![F::zero(); t * d];
    let mut dp = vec![F::zero(); t * t];
    for head in 0..h {
        let p = &lc.probs[head * t * t..(head + 1) * t * t];
        let c0 = head * dk;
        // dP = dO vᵀ, dV = Pᵀ dO.
        gemm(F::one(), View::block(datt, t, d, c0, dk), View::block(&lc.v, t, d, c0, dk).t(), F::zero(), ViewMut::rows(&mut dp, t, t));
        gemm(F::one(), View::rows(p, t, t).t(), View::block(datt, t, d, c0, dk), F::zero(), ViewMut::block(&mut dv, t, d, c0, dk));
        // Softmax backward; masked entries have p = 0 and drop out.
        for i in 0..t {
            let pr = &p[i * t..(i + 1) * t];
            let dr = &mut dp[i * t..(i + 1) * t];
            let dot: F = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
            for j in 0..t {
                dr[j] = pr[j] * (dr[j] - dot);
            }
        }
        gemm(scale, View::rows(&dp, t, t), View::block(&lc.k, t, d, c0, dk), F::zero(), ViewMut::block(&mut dq, t, d, c0, dk));
        gemm(scale, View::rows(&dp, t, t).t(), View::block(&lc.q, t, d, c0, dk), F::zero(), ViewMut::block(&mut dkm, t, d, c0, dk));
    }
    (dq, dkm, dv)
}

/// Keys and values of every processed position, for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvCache<F> {
    keys: Vec<Vec<F>>,
    values: Vec<Vec<F>>,
    len: usize,
}

impl<F: Float> KvCache<F> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<F: Float> Params<F> {
    pub fn new_cache(&self) -> KvCache<F> {
        let n = self.cfg.n_layers;
        KvCache { keys: vec![Vec::new(); n], values: vec![Vec::new(); n], len: 0 }
    }

    /// Feeds one more token and returns the logits for the token after it.
    pub fn step(&self, cache: &mut KvCache<F>, token: u32) -> Result<Vec<F>, TransformerError> {
        let cfg = &self.cfg;
        if cache.len >= cfg.context_length {
            return Err(TransformerError::SequenceTooLong { len: cache.len + 1, max: cfg.context_length });
        }
        if token as usize >= cfg.vocab_size {
            return Err(TransformerError::TokenOutOfRange { token, vocab_size: cfg.vocab_size });
        }
        let (d, f, h, dk) = (cfg.n_embd, cfg.d_ff, cfg.n_heads, cfg.head_dim());
        let pos = cache.len;
        let n = pos + 1;
        let w = &self.data;
        let mut x = vec![F::zero(); d];
        self.embed(token, pos, &mut x);
        let mut a = vec![F::zero(); d];
        let mut probs = vec![F::zero(); n];
        for (l, lo) in self.layout.layers.iter().enumerate() {
            let LayerOffsets { ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2 } = *lo;
            layer_norm(&x, slice(w, ln1_g, d), slice(w, ln1_b, d), d, &mut a, None);
            let q = linear(&a, 1, d, slice(w, wq, d * d), slice(w, bq, d), d);
            cache.keys[l].extend(linear(&a, 1, d, slice(w, wk, d * d), slice(w, bk, d), d));
            cache.values[l].extend(linear(&a, 1, d, slice(w, wv, d * d), slice(w, bv, d), d));
            let mut att = vec![F::zero(); d];
            for head in 0..h {
                attend(
                    View::block(&q, 1, d, head * dk, dk),
                    View::block(&cache.keys[l], n, d, head * dk, dk),
                    View::block(&cache.values[l], n, d, head * dk, dk),
                    false,
                    &mut probs,
                    ViewMut::block(&mut att, 1, d, head * dk, dk),
                );
            }
            let y = linear(&att, 1, d, slice(w, wo, d * d), slice(w, bo, d), d);
            for i in 0..d {
                x[i] += y[i];
            }
            layer_norm(&x, slice(w, ln2_g, d), slice(w, ln2_b, d), d, &mut a, None);
            let u: Vec<F> = linear(&a, 1, d, slice(w, w1, d * f), slice(w, b1, f), f).into_iter().map(gelu).collect();
            let z = linear(&u, 1, f, slice(w, w2, f * d), slice(w, b2, d), d);
            for i in 0..d {
                x[i] += z[i];
            }
        }
        cache.len = n;
        let mut hf = vec![F::zero(); d];
        layer_norm(&x, slice(w, self.layout.lnf_g, d), slice(w, self.layout.lnf_b, d), d, &mut hf, None);
        let vsz = cfg.vocab_size;
        let mut logits = vec![F::zero(); vsz];
        gemm(
            F::one(),
            View::rows(&hf, 1, d),
            View::rows(slice(w, self.layout.wte, vsz * d), vsz, d).t(),
            F::zero(),
            ViewMut::rows(&mut logits, 1, vsz),
        );
        Ok(logits)
    }
}
