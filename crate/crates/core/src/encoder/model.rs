use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::layers::{
    block, block_backward, dropout, dropout_backward, layer_norm, layer_norm_backward, linear, linear_backward,
    BlockCache, LnCache,
};
use super::params::Params;
use super::{EncoderError, ModelConfig, Scalar};
use crate::label::RegionLabel;
use crate::normalizer::{Token, TokenWindow};
use crate::seed;

/// Output of the encoder stack for one sequence.
#[derive(Clone, Debug)]
pub struct Encoded<F> {
    /// `len x d_model`.
    pub hidden: Array2<F>,
    /// Mean of `hidden` over non-pad positions.
    pub pooled: Array1<F>,
}

/// Configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub params: Params<F>,
    /// Set once the region head has been trained.
    pub finetuned: bool,
}

pub(super) struct EncodeCache<F> {
    ids: Vec<usize>,
    emb_ln: LnCache<F>,
    drop0: Option<Array2<F>>,
    blocks: Vec<BlockCache<F>>,
}

/// Intermediate values of the region head.
struct HeadCache<F> {
    pooled: Array2<F>,
    z: Array2<F>,
    probs: Array1<F>,
}

type NoRng = rand_chacha::ChaCha8Rng;

impl<F: Scalar> Model<F> {
    /// Fresh weights drawn from the init stream of `root_seed`.
    pub fn new(config: ModelConfig, root_seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = seed::derived_rng(root_seed, &[seed::stream::INIT]);
        let params = Params::init(&config, &mut rng);
        Ok(Model { config, params, finetuned: false })
    }

    pub fn from_params(config: ModelConfig, params: Params<F>, finetuned: bool) -> Result<Self, EncoderError> {
        config.validate()?;
        if !params.matches(&config) {
            return Err(EncoderError::ShapeMismatch("parameters do not match the config".into()));
        }
        Ok(Model { config, params, finetuned })
    }

    fn check_ids(&self, ids: &[usize], mask: &[bool]) -> Result<(), EncoderError> {
        if ids.is_empty() || ids.len() > self.config.max_len {
            return Err(EncoderError::ShapeMismatch(format!(
                "sequence length {} outside 1..={}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(EncoderError::ShapeMismatch(format!("token id {bad} outside the vocabulary")));
        }
        if mask.len() != ids.len() {
            return Err(EncoderError::ShapeMismatch(format!("mask length {} != {}", mask.len(), ids.len())));
        }
        if !mask.iter().any(|&m| m) {
            return Err(EncoderError::ShapeMismatch("every position is padding".into()));
        }
        Ok(())
    }

    pub(super) fn encode_cached<R: Rng + ?Sized>(
        &self,
        ids: &[usize],
        valid: &[bool],
        mut rng: Option<&mut R>,
    ) -> (Array2<F>, EncodeCache<F>) {
        let p = &self.params;
        let d = self.config.d_model;
        let mut x = Array2::zeros((ids.len(), d));
        for (i, (mut row, &id)) in x.rows_mut().into_iter().zip(ids).enumerate() {
            row.assign(&p.tok_emb.row(id));
            row += &p.pos_emb.row(i);
        }
        let (mut x, emb_ln) = layer_norm(&x, &p.emb_ln_g, &p.emb_ln_b);
        let drop0 = dropout(&mut x, self.config.dropout, rng.as_deref_mut());
        let keys = (!valid.iter().all(|&v| v)).then_some(valid);
        let mut blocks = Vec::with_capacity(p.layers.len());
        for lp in &p.layers {
            let (y, c) = block(&x, lp, self.config.heads, keys, self.config.dropout, rng.as_deref_mut());
            blocks.push(c);
            x = y;
        }
        (x, EncodeCache { ids: ids.to_vec(), emb_ln, drop0, blocks })
    }

    pub(super) fn encode_backward(&self, dh: Array2<F>, cache: &EncodeCache<F>, g: &mut Params<F>) {
        let p = &self.params;
        let mut dx = dh;
        for ((lp, lg), c) in p.layers.iter().zip(g.layers.iter_mut()).zip(&cache.blocks).rev() {
            dx = block_backward(&dx, c, lp, lg);
        }
        dropout_backward(&mut dx, &cache.drop0);
        let demb = layer_norm_backward(&dx, &cache.emb_ln, &p.emb_ln_g, &mut g.emb_ln_g, &mut g.emb_ln_b);
        for (i, (row, &id)) in demb.rows().into_iter().zip(&cache.ids).enumerate() {
            let mut t = g.tok_emb.row_mut(id);
            t += &row;
            let mut q = g.pos_emb.row_mut(i);
            q += &row;
        }
    }

    /// Encode a sequence in which `[PAD]` ids are padding.
    pub fn forward(&self, ids: &[usize]) -> Result<Encoded<F>, EncoderError> {
        let mask: Vec<bool> = ids.iter().map(|&i| i != Token::PAD.id()).collect();
        self.forward_masked(ids, &mask)
    }

    /// Encode with an explicit padding mask (`true` = real token).
    pub fn forward_masked(&self, ids: &[usize], mask: &[bool]) -> Result<Encoded<F>, EncoderError> {
        self.check_ids(ids, mask)?;
        let (hidden, _) = self.encode_cached::<NoRng>(ids, mask, None);
        let pooled = mean_pool(&hidden, mask).remove_axis(Axis(0));
        Ok(Encoded { hidden, pooled })
    }

    /// Vocabulary scores per row of `hidden`, through the tied embeddings.
    pub fn mlm_logits(&self, hidden: &Array2<F>) -> Result<Array2<F>, EncoderError> {
        if hidden.ncols() != self.config.d_model {
            return Err(EncoderError::ShapeMismatch(format!(
                "hidden width {} != d_model {}",
                hidden.ncols(),
                self.config.d_model
            )));
        }
        let mut logits = hidden.dot(&self.params.tok_emb.t());
        logits += &self.params.mlm_bias;
        Ok(logits)
    }

    fn head(&self, pooled: Array2<F>) -> HeadCache<F> {
        let p = &self.params;
        let z = linear(&pooled, &p.cls_w, &p.cls_b).mapv(|v| v.tanh());
        let mut logits = linear(&z, &p.out_w, &p.out_b).remove_axis(Axis(0));
        let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        logits.mapv_inplace(|v| (v - max).exp());
        let sum = logits.sum();
        logits.mapv_inplace(|v| v / sum);
        HeadCache { pooled, z, probs: logits }
    }

    /// Class probabilities for one id sequence, ignoring fine-tuning state.
    pub fn class_probs(&self, ids: &[usize]) -> Result<[F; 3], EncoderError> {
        let enc = self.forward(ids)?;
        let h = self.head(enc.pooled.insert_axis(Axis(0)));
        Ok([h.probs[0], h.probs[1], h.probs[2]])
    }

    /// Region probabilities for a token window.
    pub fn classify_region(&self, window: &TokenWindow) -> Result<[f64; 3], EncoderError> {
        self.classify_windows(std::slice::from_ref(window))
    }

    /// Mean region probabilities over several windows of one region.
    pub fn classify_windows(&self, windows: &[TokenWindow]) -> Result<[f64; 3], EncoderError> {
        if !self.finetuned {
            return Err(EncoderError::UntrainedHead);
        }
        if windows.is_empty() {
            return Err(EncoderError::ShapeMismatch("no windows to classify".into()));
        }
        let mut acc = [0.0; 3];
        for w in windows {
            let p = self.class_probs(&w.ids())?;
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v.to_f64();
            }
        }
        let n = windows.len() as f64;
        Ok(acc.map(|a| a / n))
    }

    /// Masked-LM loss and gradients for one sequence.
    ///
    /// `targets` holds `(position, original id)`; the loss is their mean
    /// negative log-likelihood. Returns the number of targets predicted
    /// correctly as well.
    pub(super) fn mlm_step<R: Rng + ?Sized>(
        &self,
        ids: &[usize],
        targets: &[(usize, usize)],
        rng: Option<&mut R>,
    ) -> (F, Params<F>, usize) {
        let valid = vec![true; ids.len()];
        let (hidden, cache) = self.encode_cached(ids, &valid, rng);
        let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let hsel = hidden.select(Axis(0), &rows);
        let mut logits = hsel.dot(&self.params.tok_emb.t());
        logits += &self.params.mlm_bias;

        let k = F::of(targets.len() as f64);
        let mut loss = F::zero();
        let mut correct = 0;
        for (mut row, &(_, t)) in logits.rows_mut().into_iter().zip(targets) {
            let (argmax, max) = row
                .iter()
                .enumerate()
                .fold((0, F::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            correct += usize::from(argmax == t);
            let shifted_t = row[t] - max;
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            loss += sum.ln() - shifted_t;
            row.mapv_inplace(|v| v / sum);
            row[t] -= F::one();
            row.mapv_inplace(|v| v / k);
        }
        loss /= k;
        let dlogits = logits;

        let mut g = Params::zeros(&self.config);
        // logits = H_sel E^T + b  =>  dH_sel = dL E, dE = dL^T H_sel
        let dhsel = dlogits.dot(&self.params.tok_emb);
        ndarray::linalg::general_mat_mul(F::one(), &dlogits.t(), &hsel, F::one(), &mut g.tok_emb);
        g.mlm_bias += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dh = Array2::zeros(hidden.raw_dim());
        for (row, &r) in dhsel.rows().into_iter().zip(&rows) {
            let mut out = dh.row_mut(r);
            out += &row;
        }
        self.encode_backward(dh, &cache, &mut g);
        (loss, g, correct)
    }

    /// Cross-entropy of the region head and gradients for one sequence.
    /// Returns the predicted class as well.
    pub(super) fn cls_step<R: Rng + ?Sized>(
        &self,
        ids: &[usize],
        label: RegionLabel,
        rng: Option<&mut R>,
    ) -> (F, Params<F>, usize) {
        let valid: Vec<bool> = ids.iter().map(|&i| i != Token::PAD.id()).collect();
        let (hidden, cache) = self.encode_cached(ids, &valid, rng);
        let h = self.head(mean_pool(&hidden, &valid));
        let t = label.index();
        let loss = -h.probs[t].max(F::min_positive_value()).ln();
        let predicted = argmax(h.probs.iter().copied());

        let p = &self.params;
        let mut g = Params::zeros(&self.config);
        let mut dlogits = h.probs.clone().insert_axis(Axis(0));
        dlogits[[0, t]] -= F::one();
        let mut dz = linear_backward(&h.z, &p.out_w, &dlogits, &mut g.out_w, &mut g.out_b);
        ndarray::Zip::from(&mut dz).and(&h.z).for_each(|d, &z| *d *= F::one() - z * z);
        let dpooled = linear_backward(&h.pooled, &p.cls_w, &dz, &mut g.cls_w, &mut g.cls_b);
        let n = F::of(valid.iter().filter(|&&v| v).count() as f64);
        let mut dh = Array2::zeros(hidden.raw_dim());
        for (mut row, &v) in dh.rows_mut().into_iter().zip(&valid) {
            if v {
                row.assign(&dpooled.row(0).mapv(|x| x / n));
            }
        }
        self.encode_backward(dh, &cache, &mut g);
        (loss, g, predicted)
    }

    /// Masked-LM loss without dropout or gradients.
    pub fn mlm_loss_value(&self, ids: &[usize], targets: &[(usize, usize)]) -> F {
        self.mlm_step::<NoRng>(ids, targets, None).0
    }

    /// Region-head loss without dropout or gradients.
    pub fn cls_loss_value(&self, ids: &[usize], label: RegionLabel) -> F {
        self.cls_step::<NoRng>(ids, label, None).0
    }

    /// Gradients of [`Model::mlm_loss_value`].
    pub fn mlm_gradients(&self, ids: &[usize], targets: &[(usize, usize)]) -> Params<F> {
        self.mlm_step::<NoRng>(ids, targets, None).1
    }

    /// Gradients of [`Model::cls_loss_value`].
    pub fn cls_gradients(&self, ids: &[usize], label: RegionLabel) -> Params<F> {
        self.cls_step::<NoRng>(ids, label, None).1
    }
}

fn mean_pool<F: Scalar>(hidden: &Array2<F>, valid: &[bool]) -> Array2<F> {
    let mut sum = Array1::zeros(hidden.ncols());
    let mut n = 0usize;
    for (row, &v) in hidden.rows().into_iter().zip(valid) {
        if v {
            sum += &row;
            n += 1;
        }
    }
    sum.mapv_inplace(|x| x / F::of(n as f64));
    sum.insert_axis(Axis(0))
}

/// Index of the largest value; ties go to the smaller index.
pub(crate) fn argmax<F: PartialOrd>(values: impl IntoIterator<Item = F>) -> usize {
    let mut best: Option<(usize, F)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((i, v));
        }
    }
    best.map_or(0, |(i, _)| i)
}
