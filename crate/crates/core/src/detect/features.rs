use serde::{Deserialize, Serialize};

use super::{DetectError, RegionVerdict};
use crate::label::RegionLabel;

pub const FEATURE_DIM: usize = 32;
const TRIGRAMS: usize = 27;

/// Fixed-length program summary built from a verdict sequence.
///
/// Layout: 27 label-trigram fractions indexed `9a + 3b + c`, the three label
/// fractions, the longest PackedData run over the window count, and the
/// number of label changes over the number of adjacent pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramFeatures {
    pub values: Vec<f64>,
}

impl ProgramFeatures {
    pub fn trigram(&self, a: RegionLabel, b: RegionLabel, c: RegionLabel) -> f64 {
        self.values[9 * a.index() + 3 * b.index() + c.index()]
    }

    pub fn fraction(&self, l: RegionLabel) -> f64 {
        self.values[TRIGRAMS + l.index()]
    }

    pub fn longest_packed_run(&self) -> f64 {
        self.values[30]
    }

    pub fn transitions(&self) -> f64 {
        self.values[31]
    }
}

/// Features of the argmax-label sequence of `verdicts`.
///
/// Sequences shorter than three are padded with NativeData for the trigram
/// counts only; the statistics use the unpadded sequence.
pub fn extract_features(verdicts: &[RegionVerdict]) -> Result<ProgramFeatures, DetectError> {
    let labels: Vec<RegionLabel> = verdicts.iter().map(|v| v.label).collect();
    features_of_labels(&labels)
}

pub(crate) fn features_of_labels(labels: &[RegionLabel]) -> Result<ProgramFeatures, DetectError> {
    if labels.is_empty() {
        return Err(DetectError::EmptyVerdicts);
    }
    let n = labels.len();
    let mut v = vec![0.0; FEATURE_DIM];

    let mut padded = labels.to_vec();
    padded.resize(n.max(3), RegionLabel::NativeData);
    let grams = padded.len() - 2;
    for w in padded.windows(3) {
        v[9 * w[0].index() + 3 * w[1].index() + w[2].index()] += 1.0;
    }
    for x in &mut v[..TRIGRAMS] {
        *x /= grams as f64;
    }

    for l in labels {
        v[TRIGRAMS + l.index()] += 1.0 / n as f64;
    }
    let (mut run, mut longest) = (0usize, 0usize);
    for &l in labels {
        run = if l == RegionLabel::PackedData { run + 1 } else { 0 };
        longest = longest.max(run);
    }
    v[30] = longest as f64 / n as f64;
    if n > 1 {
        v[31] = labels.windows(2).filter(|w| w[0] != w[1]).count() as f64 / (n - 1) as f64;
    }
    Ok(ProgramFeatures { values: v })
}

/// Program-level class. The discriminants order tie-breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProgramClass {
    Packed = 0,
    NonPacked = 1,
}

impl ProgramClass {
    pub fn from_packed(packed: bool) -> Self {
        if packed {
            ProgramClass::Packed
        } else {
            ProgramClass::NonPacked
        }
    }

    pub fn is_packed(self) -> bool {
        self == ProgramClass::Packed
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub points: Vec<(Vec<f64>, ProgramClass)>,
}

pub fn knn_train(dataset: &[(ProgramFeatures, ProgramClass)], k: usize) -> Result<KnnModel, DetectError> {
    if k == 0 || k % 2 == 0 {
        return Err(DetectError::InvalidK(k));
    }
    let has = |c| dataset.iter().any(|(_, l)| *l == c);
    if !has(ProgramClass::Packed) || !has(ProgramClass::NonPacked) {
        return Err(DetectError::SingleClassDataset);
    }
    Ok(KnnModel { k, points: dataset.iter().map(|(f, c)| (f.values.clone(), *c)).collect() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramVerdict {
    pub decision: ProgramClass,
    /// Neighbor votes, indexed by class.
    pub votes: [usize; 2],
    /// PackedData extents `(byte_start, byte_end)`.
    pub evidence: Vec<(usize, usize)>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote of the `k` nearest training points by Euclidean distance.
///
/// Equal distances are ordered by class index, then by training order; a
/// vote tie goes to the smaller class index.
pub fn knn_classify(
    model: &KnnModel,
    features: &ProgramFeatures,
    verdicts: &[RegionVerdict],
) -> Result<ProgramVerdict, DetectError> {
    if model.points.is_empty() || model.k == 0 {
        return Err(DetectError::UntrainedModel);
    }
    let mut order: Vec<(f64, ProgramClass, usize)> = model
        .points
        .iter()
        .enumerate()
        .map(|(i, (p, c))| (squared_distance(p, &features.values), *c, i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut votes = [0usize; 2];
    for &(_, c, _) in order.iter().take(model.k) {
        votes[c as usize] += 1;
    }
    let decision = if votes[1] > votes[0] { ProgramClass::NonPacked } else { ProgramClass::Packed };
    let evidence = verdicts
        .iter()
        .filter(|v| v.label == RegionLabel::PackedData)
        .map(|v| (v.byte_start, v.byte_end))
        .collect();
    Ok(ProgramVerdict { decision, votes, evidence })
}
