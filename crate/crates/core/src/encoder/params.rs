use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Scalar};
use crate::label::RegionLabel;

/// Weights of one encoder block. Biases and layer-norm vectors are `1 x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub wq: Array2<F>,
    pub bq: Array2<F>,
    pub wk: Array2<F>,
    pub bk: Array2<F>,
    pub wv: Array2<F>,
    pub bv: Array2<F>,
    pub wo: Array2<F>,
    pub bo: Array2<F>,
    pub ln1_g: Array2<F>,
    pub ln1_b: Array2<F>,
    pub w1: Array2<F>,
    pub b1: Array2<F>,
    pub w2: Array2<F>,
    pub b2: Array2<F>,
    pub ln2_g: Array2<F>,
    pub ln2_b: Array2<F>,
}

/// Every trainable tensor. The same struct doubles as a gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<F> {
    /// `vocab x d`; also the masked-LM output projection.
    pub tok_emb: Array2<F>,
    /// `max_len x d`.
    pub pos_emb: Array2<F>,
    pub emb_ln_g: Array2<F>,
    pub emb_ln_b: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
    pub mlm_bias: Array2<F>,
    pub cls_w: Array2<F>,
    pub cls_b: Array2<F>,
    pub out_w: Array2<F>,
    pub out_b: Array2<F>,
}

const INIT_STD: f64 = 0.02;

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b)
    };
}

impl<F: Scalar> LayerParams<F> {
    fn filled(c: &ModelConfig, weight: &mut dyn FnMut(usize, usize) -> Array2<F>) -> Self {
        let (d, f) = (c.d_model, c.d_ffn);
        let zeros = |n| Array2::zeros((1, n));
        let ones = |n| Array2::from_elem((1, n), F::one());
        LayerParams {
            wq: weight(d, d),
            bq: zeros(d),
            wk: weight(d, d),
            bk: zeros(d),
            wv: weight(d, d),
            bv: zeros(d),
            wo: weight(d, d),
            bo: zeros(d),
            ln1_g: ones(d),
            ln1_b: zeros(d),
            w1: weight(d, f),
            b1: zeros(f),
            w2: weight(f, d),
            b2: zeros(d),
            ln2_g: ones(d),
            ln2_b: zeros(d),
        }
    }

    fn named(&self, i: usize) -> Vec<(String, &Array2<F>)> {
        macro_rules! list {
            ($($f:ident),*) => { vec![$((format!("layer{i}.{}", stringify!($f)), &self.$f)),*] };
        }
        layer_fields!(list)
    }

    fn named_mut(&mut self, i: usize) -> Vec<(String, &mut Array2<F>)> {
        macro_rules! list {
            ($($f:ident),*) => { vec![$((format!("layer{i}.{}", stringify!($f)), &mut self.$f)),*] };
        }
        layer_fields!(list)
    }
}

impl<F: Scalar> Params<F> {
    fn filled(c: &ModelConfig, weight: &mut dyn FnMut(usize, usize) -> Array2<F>) -> Self {
        let d = c.d_model;
        Params {
            tok_emb: weight(c.vocab_size, d),
            pos_emb: weight(c.max_len, d),
            emb_ln_g: Array2::from_elem((1, d), F::one()),
            emb_ln_b: Array2::zeros((1, d)),
            layers: (0..c.layers).map(|_| LayerParams::filled(c, weight)).collect(),
            mlm_bias: Array2::zeros((1, c.vocab_size)),
            cls_w: weight(d, d),
            cls_b: Array2::zeros((1, d)),
            out_w: weight(d, RegionLabel::COUNT),
            out_b: Array2::zeros((1, RegionLabel::COUNT)),
        }
    }

    /// Weights drawn from N(0, 0.02), biases zero, layer-norm gains one.
    pub fn init<R: Rng + ?Sized>(c: &ModelConfig, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        Params::filled(c, &mut |r, k| Array2::from_shape_simple_fn((r, k), || F::of(normal.sample(rng))))
    }

    /// Same shapes, all zero (layer-norm gains included): a gradient buffer.
    pub fn zeros(c: &ModelConfig) -> Self {
        let mut p = Params::filled(c, &mut |r, k| Array2::zeros((r, k)));
        p.for_each_mut(|_, t| t.fill(F::zero()));
        p
    }

    pub fn named(&self) -> Vec<(String, &Array2<F>)> {
        let mut out = vec![
            ("embed.token".to_string(), &self.tok_emb),
            ("embed.position".to_string(), &self.pos_emb),
            ("embed.ln_g".to_string(), &self.emb_ln_g),
            ("embed.ln_b".to_string(), &self.emb_ln_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.named(i));
        }
        out.extend([
            ("mlm.bias".to_string(), &self.mlm_bias),
            ("cls.dense_w".to_string(), &self.cls_w),
            ("cls.dense_b".to_string(), &self.cls_b),
            ("cls.out_w".to_string(), &self.out_w),
            ("cls.out_b".to_string(), &self.out_b),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Array2<F>)> {
        let mut out = vec![
            ("embed.token".to_string(), &mut self.tok_emb),
            ("embed.position".to_string(), &mut self.pos_emb),
            ("embed.ln_g".to_string(), &mut self.emb_ln_g),
            ("embed.ln_b".to_string(), &mut self.emb_ln_b),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(l.named_mut(i));
        }
        out.extend([
            ("mlm.bias".to_string(), &mut self.mlm_bias),
            ("cls.dense_w".to_string(), &mut self.cls_w),
            ("cls.dense_b".to_string(), &mut self.cls_b),
            ("cls.out_w".to_string(), &mut self.out_w),
            ("cls.out_b".to_string(), &mut self.out_b),
        ]);
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Array2<F>)) {
        for (name, t) in self.named_mut() {
            f(&name, t);
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Params<F>) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: F) {
        self.for_each_mut(|_, t| t.mapv_inplace(|v| v * s));
    }

    pub fn norm(&self) -> F {
        self.named().iter().map(|(_, t)| t.iter().map(|&v| v * v).sum::<F>()).sum::<F>().sqrt()
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Convert every tensor to another precision.
    pub fn cast<G: Scalar>(&self) -> Params<G> {
        let mut out = Params::<G>::filled_shapes(self);
        for ((_, dst), (_, src)) in out.named_mut().into_iter().zip(self.named()) {
            *dst = src.mapv(|v| G::of(v.to_f64()));
        }
        out
    }

    fn filled_shapes<G: Scalar>(src: &Params<G>) -> Self {
        let c = ModelConfig {
            layers: src.layers.len(),
            d_model: src.tok_emb.ncols(),
            d_ffn: src.layers.first().map_or(1, |l| l.w1.ncols()),
            vocab_size: src.tok_emb.nrows(),
            max_len: src.pos_emb.nrows(),
            heads: 1,
            dropout: 0.0,
        };
        Params::zeros(&c)
    }

    /// Whether the shapes match `c`.
    pub fn matches(&self, c: &ModelConfig) -> bool {
        let z = Params::<F>::zeros(c);
        self.named().len() == z.named().len()
            && self.named().iter().zip(z.named()).all(|((a, x), (b, y))| a == &b && x.dim() == y.dim())
    }
}
