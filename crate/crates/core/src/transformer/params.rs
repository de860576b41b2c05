use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{param_count, ModelConfig, Positional};
use super::float::Float;

/// Name, offset and shape of one tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Where every tensor lives. Matrices are stored `[in, out]` row-major so
/// a linear layer is `y = x W + b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub wte: usize,
    pub wpe: Option<usize>,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, d, f) = (cfg.vocab_size, cfg.n_embd, cfg.d_ff);
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let offset = total;
            total += shape.iter().product::<usize>();
            tensors.push(TensorSpec { name, offset, shape });
            offset
        };
        let wte = add("wte".into(), vec![v, d]);
        let wpe = match cfg.positional {
            Positional::Learned => Some(add("wpe".into(), vec![cfg.context_length, d])),
            Positional::Sinusoidal => None,
        };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("h{l}.{s}");
            layers.push(LayerOffsets {
                ln1_g: add(p("ln1.g"), vec![d]),
                ln1_b: add(p("ln1.b"), vec![d]),
                wq: add(p("attn.wq"), vec![d, d]),
                bq: add(p("attn.bq"), vec![d]),
                wk: add(p("attn.wk"), vec![d, d]),
                bk: add(p("attn.bk"), vec![d]),
                wv: add(p("attn.wv"), vec![d, d]),
                bv: add(p("attn.bv"), vec![d]),
                wo: add(p("attn.wo"), vec![d, d]),
                bo: add(p("attn.bo"), vec![d]),
                ln2_g: add(p("ln2.g"), vec![d]),
                ln2_b: add(p("ln2.b"), vec![d]),
                w1: add(p("mlp.w1"), vec![d, f]),
                b1: add(p("mlp.b1"), vec![f]),
                w2: add(p("mlp.w2"), vec![f, d]),
                b2: add(p("mlp.b2"), vec![d]),
            });
        }
        let lnf_g = add("lnf.g".into(), vec![d]);
        let lnf_b = add("lnf.b".into(), vec![d]);
        debug_assert_eq!(total, param_count(cfg));
        Self { tensors, wte, wpe, layers, lnf_g, lnf_b, total }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Model weights in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub data: Vec<F>,
}

impl<F: Float> Params<F> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layout = Layout::new(cfg);
        let data = vec![F::zero(); layout.total];
        Self { cfg: cfg.clone(), layout, data }
    }

    /// GPT-2 style initialisation: weights and embeddings from N(0, 0.02),
    /// biases zero, layer-norm gains one.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        for t in p.layout.tensors.clone() {
            let slice = &mut p.data[t.offset..t.offset + t.len()];
            if t.name.ends_with(".g") {
                slice.fill(F::one());
            } else if t.shape.len() == 1 {
                slice.fill(F::zero());
            } else {
                for x in slice {
                    *x = F::of(normal.sample(&mut rng));
                }
            }
        }
        p
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        self.layout.get(name).map(|t| &self.data[t.offset..t.offset + t.len()])
    }

    pub fn cast<G: Float>(&self) -> Params<G> {
        Params {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| G::of(x.f64())).collect(),
        }
    }

    /// Grows the vocabulary to `new_vocab` rows; new token rows are drawn
    /// from N(0, 0.02), all other tensors are copied.
    pub fn extend_vocab(&self, new_vocab: usize, seed: u64) -> Self {
        assert!(new_vocab >= self.cfg.vocab_size);
        let mut cfg = self.cfg.clone();
        cfg.vocab_size = new_vocab;
        let mut out = Self::zeros(&cfg);
        let d = cfg.n_embd;
        let old_rows = self.cfg.vocab_size * d;
        out.data[..old_rows].copy_from_slice(&self.data[..old_rows]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        for x in &mut out.data[old_rows..new_vocab * d] {
            *x = F::of(normal.sample(&mut rng));
        }
        let shift = (new_vocab - self.cfg.vocab_size) * d;
        out.data[new_vocab * d..].copy_from_slice(&self.data[old_rows..]);
        debug_assert_eq!(out.data.len(), self.data.len() + shift);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let cfg = ModelConfig::tiny(7);
        let l = Layout::new(&cfg);
        let mut at = 0;
        for t in &l.tensors {
            assert_eq!(t.offset, at);
            at += t.len();
        }
        assert_eq!(at, param_count(&cfg));
        assert_eq!(l.get("h0.mlp.w1").unwrap().shape, vec![8, 32]);
    }

    #[test]
    fn init_conventions() {
        let p = Params::<f32>::init(&ModelConfig::tiny(7), 3);
        assert!(p.tensor("h0.ln1.g").unwrap().iter().all(|&x| x == 1.0));
        assert!(p.tensor("h0.attn.bq").unwrap().iter().all(|&x| x == 0.0));
        assert!(p.tensor("lnf.b").unwrap().iter().all(|&x| x == 0.0));
        let w = p.tensor("h0.attn.wq").unwrap();
        let std = (w.iter().map(|x| x * x).sum::<f32>() / w.len() as f32).sqrt();
        assert!((0.01..0.03).contains(&std), "{std}");
        assert_eq!(Params::<f32>::init(&ModelConfig::tiny(7), 3), p);
    }

    #[test]
    fn vocab_extension_keeps_old_weights() {
        let p = Params::<f32>::init(&ModelConfig::tiny(5), 1);
        let q = p.extend_vocab(7, 2);
        assert_eq!(q.cfg.vocab_size, 7);
        assert_eq!(&q.data[..40], &p.data[..40]);
        assert_eq!(q.tensor("h0.mlp.w2"), p.tensor("h0.mlp.w2"));
        assert_eq!(q.tensor("wpe"), p.tensor("wpe"));
    }
}
