use rand::seq::index::sample;
use serde::Serialize;

use super::Model;
use crate::label::RegionLabel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LossPath {
    MaskedLm,
    Classifier,
}

/// Input for a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckFixture {
    pub ids: Vec<usize>,
    /// `(position, original id)` pairs for the masked-LM path.
    pub targets: Vec<(usize, usize)>,
    pub label: RegionLabel,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst error per tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
}

/// Below this magnitude an error is measured in absolute terms, so
/// parameters with (near) zero gradient do not divide noise by noise.
const REL_FLOOR: f64 = 1e-6;

fn loss(model: &Model<f64>, fx: &GradCheckFixture, path: LossPath) -> f64 {
    match path {
        LossPath::MaskedLm => model.mlm_loss_value(&fx.ids, &fx.targets),
        LossPath::Classifier => model.cls_loss_value(&fx.ids, fx.label),
    }
}

/// Compare analytic gradients with central differences
/// `(L(θ+ε) - L(θ-ε)) / 2ε` at up to `per_tensor` sampled entries of every
/// tensor.
pub fn grad_check(
    model: &Model<f64>,
    fx: &GradCheckFixture,
    path: LossPath,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> GradCheckReport {
    let analytic = match path {
        LossPath::MaskedLm => model.mlm_gradients(&fx.ids, &fx.targets),
        LossPath::Classifier => model.cls_gradients(&fx.ids, fx.label),
    };
    let mut rng = crate::seed::rng(seed);
    let mut probe = model.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, per_tensor: Vec::new(), checked: 0 };
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    for (ti, (name, grad)) in names.iter().zip(analytic.named().into_iter().map(|(_, g)| g)).enumerate() {
        let len = grad.len();
        let picks = sample(&mut rng, len, per_tensor.min(len));
        let mut worst = 0.0f64;
        for flat in picks {
            let (r, c) = (flat / grad.ncols(), flat % grad.ncols());
            let orig = model.params.named()[ti].1[[r, c]];
            let mut set = |v: f64| probe.params.named_mut()[ti].1[[r, c]] = v;
            set(orig + eps);
            let plus = loss(&probe, fx, path);
            let mut set = |v: f64| probe.params.named_mut()[ti].1[[r, c]] = v;
            set(orig - eps);
            let minus = loss(&probe, fx, path);
            probe.params.named_mut()[ti].1[[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad[[r, c]];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_tensor.push((name.clone(), worst));
    }
    report
}
