use super::float::{gemm, Float, View, ViewMut};
use super::TransformerError;

pub const LN_EPS: f64 = 1e-5;

/// Per-row statistics kept for the layer-norm backward pass.
#[derive(Debug, Clone, Default)]
pub struct LnCache<F> {
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
}

/// Row-wise layer norm of `x` (`rows × d`) into `y`.
pub fn layer_norm<F: Float>(x: &[F], g: &[F], b: &[F], d: usize, y: &mut [F], cache: Option<&mut LnCache<F>>) {
    let rows = x.len() / d;
    let eps = F::of(LN_EPS);
    let inv_d = F::one() / F::of(d as f64);
    let mut xhat_all = Vec::new();
    let mut rstd_all = Vec::new();
    let keep = cache.is_some();
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rstd = F::one() / (var + eps).sqrt();
        let out = &mut y[r * d..(r + 1) * d];
        for i in 0..d {
            let xh = (row[i] - mean) * rstd;
            out[i] = xh * g[i] + b[i];
            if keep {
                xhat_all.push(xh);
            }
        }
        if keep {
            rstd_all.push(rstd);
        }
    }
    if let Some(c) = cache {
        c.xhat = xhat_all;
        c.rstd = rstd_all;
    }
}

/// Accumulates gain/shift gradients and returns dx.
pub fn layer_norm_backward<F: Float>(dy: &[F], g: &[F], cache: &LnCache<F>, d: usize, dg: &mut [F], db: &mut [F]) -> Vec<F> {
    let rows = dy.len() / d;
    let inv_d = F::one() / F::of(d as f64);
    let mut dx = vec![F::zero(); dy.len()];
    let mut dxhat = vec![F::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let rstd = cache.rstd[r];
        for i in 0..d {
            dx[r * d + i] = rstd * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.044715;

fn sqrt_2_over_pi<F: Float>() -> F {
    F::of((2.0 / std::f64::consts::PI).sqrt())
}

/// GELU, tanh approximation.
pub fn gelu<F: Float>(x: F) -> F {
    let half = F::of(0.5);
    half * x * (F::one() + (sqrt_2_over_pi::<F>() * (x + F::of(GELU_C) * x * x * x)).tanh())
}

pub fn gelu_grad<F: Float>(x: F) -> F {
    let half = F::of(0.5);
    let k = sqrt_2_over_pi::<F>();
    let t = (k * (x + F::of(GELU_C) * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * k * (F::one() + F::of(3.0 * GELU_C) * x * x)
}

/// Softmax of row `i` of an `n × n` score matrix, restricted to columns
/// `0..=i` when causal; masked entries become exactly zero.
pub fn softmax_rows<F: Float>(s: &mut [F], n_rows: usize, n_cols: usize, causal: bool) {
    for i in 0..n_rows {
        let row = &mut s[i * n_cols..(i + 1) * n_cols];
        let limit = if causal { (i + 1).min(n_cols) } else { n_cols };
        let max = row[..limit].iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in &mut row[..limit] {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in &mut row[..limit] {
            *v /= sum;
        }
        for v in &mut row[limit..] {
            *v = F::zero();
        }
    }
}

/// One attention head: `out = softmax(q kᵀ · scale + mask) v`, with the
/// probabilities written to `probs` (`n × n`).
pub fn attend<F: Float>(q: View<F>, k: View<F>, v: View<F>, causal: bool, probs: &mut [F], out: ViewMut<F>) {
    let n = q.rows;
    let scale = F::one() / F::of(q.cols as f64).sqrt();
    gemm(scale, q, k.t(), F::zero(), ViewMut::rows(probs, n, k.rows));
    softmax_rows(probs, n, k.rows, causal);
    gemm(F::one(), View::rows(probs, n, k.rows), v, F::zero(), out);
}

/// Scaled dot-product attention on row-major `Q: n × d_k`, `K: n × d_k`,
/// `V: n × d_v`; the causal mask hides positions above the diagonal.
pub fn attention<F: Float>(
    q: &[F],
    k: &[F],
    v: &[F],
    n: usize,
    d_k: usize,
    d_v: usize,
    causal: bool,
) -> Result<Vec<F>, TransformerError> {
    if q.len() != n * d_k || k.len() != n * d_k || v.len() != n * d_v || d_k == 0 {
        return Err(TransformerError::ShapeMismatch(format!(
            "Q {} K {} V {} for n={n} d_k={d_k} d_v={d_v}",
            q.len(),
            k.len(),
            v.len()
        )));
    }
    let mut probs = vec![F::zero(); n * n];
    let mut out = vec![F::zero(); n * d_v];
    attend(
        View::rows(q, n, d_k),
        View::rows(k, n, d_k),
        View::rows(v, n, d_v),
        causal,
        &mut probs,
        ViewMut::rows(&mut out, n, d_v),
    );
    Ok(out)
}

/// Fixed sine/cosine position code for one position.
pub fn sinusoid<F: Float>(pos: usize, d: usize, out: &mut [F]) {
    for i in 0..d {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        out[i] = F::of(if i % 2 == 0 { angle.sin() } else { angle.cos() });
    }
}
