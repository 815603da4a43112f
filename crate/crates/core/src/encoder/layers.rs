//! Forward and backward passes of the building blocks. Every forward returns
//! what its backward needs; every backward accumulates into gradient buffers
//! and returns the gradient with respect to its input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;

use super::params::LayerParams;
use super::Scalar;

const LN_EPS: f64 = 1e-5;

/// `x W + b`.
pub(super) fn linear<F: Scalar>(x: &Array2<F>, w: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates `dW += x^T dy`, `db += sum(dy)`; returns `dy W^T`.
pub(super) fn linear_backward<F: Scalar>(
    x: &Array2<F>,
    w: &Array2<F>,
    dy: &Array2<F>,
    dw: &mut Array2<F>,
    db: &mut Array2<F>,
) -> Array2<F> {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), dw);
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&w.t())
}

pub(super) struct LnCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

pub(super) fn layer_norm<F: Scalar>(x: &Array2<F>, g: &Array2<F>, b: &Array2<F>) -> (Array2<F>, LnCache<F>) {
    let d = F::of(x.ncols() as f64);
    let eps = F::of(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<F>() / d;
        *is = F::one() / (var + eps).sqrt();
        let s = *is;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = &xhat * g;
    y += b;
    (y, LnCache { xhat, inv_std })
}

pub(super) fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &LnCache<F>,
    g: &Array2<F>,
    dg: &mut Array2<F>,
    db: &mut Array2<F>,
) -> Array2<F> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d = F::of(dy.ncols() as f64);
    let dxhat = dy * g;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let sum_dh = dh.sum();
        let sum_dh_xh = dh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<F>();
        let k = cache.inv_std[i] / d;
        Zip::from(&mut out).and(&dh).and(&xh).for_each(|o, &a, &b| {
            *o = k * (d * a - sum_dh - b * sum_dh_xh);
        });
    }
    dx
}

/// Exact GeLU, `x * Phi(x)`.
pub(super) fn gelu<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    half * x * (F::one() + (x * F::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(super) fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let cdf = half * (F::one() + (x * F::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * F::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

/// Inverted dropout in place. Returns the scaled keep mask, or `None` when
/// nothing was dropped.
pub(super) fn dropout<F: Scalar, R: Rng + ?Sized>(x: &mut Array2<F>, p: f64, rng: Option<&mut R>) -> Option<Array2<F>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let scale = F::of(1.0 / (1.0 - p));
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.gen::<f64>() < p { F::zero() } else { scale });
    *x *= &mask;
    Some(mask)
}

pub(super) fn dropout_backward<F: Scalar>(dy: &mut Array2<F>, mask: &Option<Array2<F>>) {
    if let Some(m) = mask {
        *dy *= m;
    }
}

/// Row-wise softmax in place, ignoring columns where `keep` is false.
pub(super) fn softmax_rows<F: Scalar>(x: &mut Array2<F>, keep: Option<&[bool]>) {
    for mut row in x.rows_mut() {
        if let Some(keep) = keep {
            for (v, &k) in row.iter_mut().zip(keep) {
                if !k {
                    *v = F::neg_infinity();
                }
            }
        }
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut sum = F::zero();
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row.mapv_inplace(|v| v / sum);
    }
}

pub(super) struct AttnCache<F> {
    x: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
}

/// Multi-head self-attention. `keys` masks out padding as keys.
pub(super) fn attention<F: Scalar>(
    x: &Array2<F>,
    p: &LayerParams<F>,
    heads: usize,
    keys: Option<&[bool]>,
) -> (Array2<F>, AttnCache<F>) {
    let (n, d) = x.dim();
    let dh = d / heads;
    let scale = F::of(1.0 / (dh as f64).sqrt());
    let q = linear(x, &p.wq, &p.bq);
    let k = linear(x, &p.wk, &p.bk);
    let v = linear(x, &p.wv, &p.bv);
    let mut ctx = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores *= scale;
        softmax_rows(&mut scores, keys);
        ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let out = linear(&ctx, &p.wo, &p.bo);
    (out, AttnCache { x: x.clone(), q, k, v, probs, ctx })
}

pub(super) fn attention_backward<F: Scalar>(
    dout: &Array2<F>,
    c: &AttnCache<F>,
    p: &LayerParams<F>,
    g: &mut LayerParams<F>,
) -> Array2<F> {
    let (n, d) = c.x.dim();
    let heads = c.probs.len();
    let dh = d / heads;
    let scale = F::of(1.0 / (dh as f64).sqrt());
    let dctx = linear_backward(&c.ctx, &p.wo, dout, &mut g.wo, &mut g.bo);
    let mut dq = Array2::zeros((n, d));
    let mut dk = Array2::zeros((n, d));
    let mut dv = Array2::zeros((n, d));
    for (h, probs) in c.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx_h = dctx.slice(cols);
        // d probs = dctx V^T; dV = P^T dctx
        let dp = dctx_h.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&dctx_h));
        // softmax backward: dS = P * (dP - rowsum(dP * P))
        let mut ds = dp;
        for (mut row, prow) in ds.rows_mut().into_iter().zip(probs.rows()) {
            let dot = row.iter().zip(prow).map(|(&a, &b)| a * b).sum::<F>();
            Zip::from(&mut row).and(&prow).for_each(|r, &pv| *r = pv * (*r - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    let mut dx = linear_backward(&c.x, &p.wq, &dq, &mut g.wq, &mut g.bq);
    dx += &linear_backward(&c.x, &p.wk, &dk, &mut g.wk, &mut g.bk);
    dx += &linear_backward(&c.x, &p.wv, &dv, &mut g.wv, &mut g.bv);
    dx
}

pub(super) struct FfnCache<F> {
    x: Array2<F>,
    pre: Array2<F>,
    act: Array2<F>,
}

pub(super) fn ffn<F: Scalar>(x: &Array2<F>, p: &LayerParams<F>) -> (Array2<F>, FfnCache<F>) {
    let pre = linear(x, &p.w1, &p.b1);
    let act = pre.mapv(gelu);
    let out = linear(&act, &p.w2, &p.b2);
    (out, FfnCache { x: x.clone(), pre, act })
}

pub(super) fn ffn_backward<F: Scalar>(
    dout: &Array2<F>,
    c: &FfnCache<F>,
    p: &LayerParams<F>,
    g: &mut LayerParams<F>,
) -> Array2<F> {
    let mut dact = linear_backward(&c.act, &p.w2, dout, &mut g.w2, &mut g.b2);
    Zip::from(&mut dact).and(&c.pre).for_each(|d, &x| *d *= gelu_grad(x));
    linear_backward(&c.x, &p.w1, &dact, &mut g.w1, &mut g.b1)
}

pub(super) struct BlockCache<F> {
    attn: AttnCache<F>,
    drop1: Option<Array2<F>>,
    ln1: LnCache<F>,
    ffn: FfnCache<F>,
    drop2: Option<Array2<F>>,
    ln2: LnCache<F>,
}

/// One post-norm block: `x1 = LN(x + Attn(x))`, `y = LN(x1 + FFN(x1))`.
pub(super) fn block<F: Scalar, R: Rng + ?Sized>(
    x: &Array2<F>,
    p: &LayerParams<F>,
    heads: usize,
    keys: Option<&[bool]>,
    drop_p: f64,
    mut rng: Option<&mut R>,
) -> (Array2<F>, BlockCache<F>) {
    let (mut a, attn) = attention(x, p, heads, keys);
    let drop1 = dropout(&mut a, drop_p, rng.as_deref_mut());
    a += x;
    let (x1, ln1) = layer_norm(&a, &p.ln1_g, &p.ln1_b);
    let (mut f, ffn_c) = ffn(&x1, p);
    let drop2 = dropout(&mut f, drop_p, rng.as_deref_mut());
    f += &x1;
    let (y, ln2) = layer_norm(&f, &p.ln2_g, &p.ln2_b);
    (y, BlockCache { attn, drop1, ln1, ffn: ffn_c, drop2, ln2 })
}

pub(super) fn block_backward<F: Scalar>(
    dy: &Array2<F>,
    c: &BlockCache<F>,
    p: &LayerParams<F>,
    g: &mut LayerParams<F>,
) -> Array2<F> {
    let dsum2 = layer_norm_backward(dy, &c.ln2, &p.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
    let mut df = dsum2.clone();
    dropout_backward(&mut df, &c.drop2);
    let mut dx1 = ffn_backward(&df, &c.ffn, p, g);
    dx1 += &dsum2;
    let dsum1 = layer_norm_backward(&dx1, &c.ln1, &p.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    let mut da = dsum1.clone();
    dropout_backward(&mut da, &c.drop1);
    let mut dx = attention_backward(&da, &c.attn, p, g);
    dx += &dsum1;
    dx
}
