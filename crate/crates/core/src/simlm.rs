//! Structured-instruction masked language modeling.
//!
//! A fifth of the maskable tokens in a window are selected for prediction.
//! Within one instruction the selection never covers both the opcode side
//! (prefixes and mnemonic) and the operand side, so the model always sees one
//! half when predicting the other. Selected tokens are replaced by `[MASK]`,
//! swapped for a random token of the same class, or kept.

use ndarray::ArrayView2;
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::normalizer::{Token, TokenWindow};

/// Target marker for positions that carry no loss.
pub const IGNORE_INDEX: i64 = -100;

/// Windows with fewer maskable tokens than this are skipped.
pub const MIN_MASKABLE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRates {
    pub select: f64,
    pub mask: f64,
    pub randomize: f64,
    pub keep: f64,
}

impl Default for MaskRates {
    fn default() -> Self {
        MaskRates { select: 0.20, mask: 0.40, randomize: 0.50, keep: 0.10 }
    }
}

impl MaskRates {
    fn validate(&self) -> Result<(), SimlmError> {
        let sum = self.mask + self.randomize + self.keep;
        let probs = [self.select, self.mask, self.randomize, self.keep];
        if (sum - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SimlmError::InvalidRates);
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SimlmError {
    #[error("window has {0} maskable tokens, below the floor of {MIN_MASKABLE}")]
    DegenerateWindow(usize),
    #[error("plan position {position} is outside a window of {len} tokens")]
    PlanMismatch { position: usize, len: usize },
    #[error("no positions selected")]
    NoTargets,
    #[error("mask, randomize and keep rates must be probabilities summing to 1")]
    InvalidRates,
    #[error("logits have shape {rows}x{cols}, expected {len} rows")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    Randomize(Token),
    Keep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub position: usize,
    pub action: MaskAction,
    pub original: Token,
}

/// The selected set and what happens to each member. Sorted by position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskPlan {
    pub selections: Vec<Selection>,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.selections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selections.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.selections.iter().map(|s| s.position)
    }
}

/// Positions that may be selected: everything but `[SOS]`, `[EOS]` and
/// `[PAD]`.
pub fn maskable_positions(window: &TokenWindow) -> Vec<usize> {
    window
        .tokens
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, t)| !matches!(**t, Token::EOS | Token::PAD | Token::SOS))
        .map(|(i, _)| i)
        .collect()
}

/// Number of tokens to select from `maskable` candidates.
pub fn selection_count(maskable: usize, rate: f64) -> usize {
    ((maskable as f64 * rate).round() as usize).max(1).min(maskable)
}

/// Which half of an instruction a token belongs to.
fn side(t: Token) -> u8 {
    if t.class().is_opcode_side() {
        1
    } else {
        2
    }
}

/// Draw a selection and per-token actions.
///
/// Candidates are visited in a random order; a candidate whose instruction
/// already has a selection on the other side is skipped. Selection stops at
/// the target count or when candidates run out.
pub fn plan_mask<R: Rng + ?Sized>(window: &TokenWindow, rng: &mut R, rates: &MaskRates) -> Result<MaskPlan, SimlmError> {
    rates.validate()?;
    let mut candidates = maskable_positions(window);
    if candidates.len() < MIN_MASKABLE {
        return Err(SimlmError::DegenerateWindow(candidates.len()));
    }
    let target = selection_count(candidates.len(), rates.select);

    let mut span_of = vec![usize::MAX; window.tokens.len()];
    for (i, &(s, e)) in window.spans.iter().enumerate() {
        span_of[s as usize..e as usize].fill(i);
    }
    // 0 = untouched, otherwise the side that owns the span's selection.
    let mut span_side = vec![0u8; window.spans.len() + 1];

    candidates.shuffle(rng);
    let mut chosen = Vec::with_capacity(target);
    for pos in candidates {
        if chosen.len() == target {
            break;
        }
        let span = span_of[pos].min(window.spans.len());
        let s = side(window.tokens[pos]);
        if span_side[span] != 0 && span_side[span] != s {
            continue;
        }
        span_side[span] = s;
        chosen.push(pos);
    }
    chosen.sort_unstable();

    let selections = chosen
        .into_iter()
        .map(|position| {
            let original = window.tokens[position];
            let u: f64 = rng.gen();
            let action = if u < rates.mask {
                MaskAction::Mask
            } else if u < rates.mask + rates.randomize {
                MaskAction::Randomize(random_same_class(original, rng))
            } else {
                MaskAction::Keep
            };
            Selection { position, action, original }
        })
        .collect();
    Ok(MaskPlan { selections })
}

/// A uniformly drawn token of the same class, never the original.
pub fn random_same_class<R: Rng + ?Sized>(original: Token, rng: &mut R) -> Token {
    let members = original.class().members();
    let n = members.len();
    debug_assert!(n >= 2);
    let mut id = members.start as usize + rng.gen_range(0..n - 1);
    if id >= original.id() {
        id += 1;
    }
    Token::from_id(id).expect("class member")
}

/// Model input and prediction targets for one window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedWindow {
    pub input: Vec<Token>,
    /// The original token at selected positions.
    pub targets: Vec<Option<Token>>,
}

impl MaskedWindow {
    pub fn input_ids(&self) -> Vec<usize> {
        self.input.iter().map(|t| t.id()).collect()
    }

    /// Targets with [`IGNORE_INDEX`] at unselected positions.
    pub fn target_ids(&self) -> Vec<i64> {
        self.targets.iter().map(|t| t.map_or(IGNORE_INDEX, |t| t.id() as i64)).collect()
    }

    /// `(position, target)` for every selected position.
    pub fn selected(&self) -> Vec<(usize, Token)> {
        self.targets.iter().enumerate().filter_map(|(i, t)| t.map(|t| (i, t))).collect()
    }
}

pub fn apply_mask(window: &TokenWindow, plan: &MaskPlan) -> Result<MaskedWindow, SimlmError> {
    let len = window.tokens.len();
    let mut input = window.tokens.clone();
    let mut targets = vec![None; len];
    for s in &plan.selections {
        if s.position >= len {
            return Err(SimlmError::PlanMismatch { position: s.position, len });
        }
        input[s.position] = match s.action {
            MaskAction::Mask => Token::MASK,
            MaskAction::Randomize(t) => t,
            MaskAction::Keep => window.tokens[s.position],
        };
        targets[s.position] = Some(window.tokens[s.position]);
    }
    Ok(MaskedWindow { input, targets })
}

/// Mean negative log-likelihood of the original tokens at the selected
/// positions. `logits` has one row per window position.
pub fn mlm_loss<F: Float>(logits: ArrayView2<'_, F>, masked: &MaskedWindow) -> Result<F, SimlmError> {
    let (rows, cols) = logits.dim();
    if rows != masked.targets.len() {
        return Err(SimlmError::ShapeMismatch { rows, cols, len: masked.targets.len() });
    }
    let mut total = F::zero();
    let mut count = 0usize;
    for (pos, target) in masked.selected() {
        let row = logits.row(pos);
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().fold(F::zero(), |s, &v| s + (v - max).exp()).ln() + max;
        total = total + lse - row[target.id()];
        count += 1;
    }
    if count == 0 {
        return Err(SimlmError::NoTargets);
    }
    Ok(total / F::from(count).unwrap())
}

/// Whether a plan respects the selection rules for `window`.
pub fn check_plan(window: &TokenWindow, plan: &MaskPlan) -> Result<(), String> {
    for s in &plan.selections {
        let t = *window.tokens.get(s.position).ok_or("position out of range")?;
        if s.position == 0 || matches!(t, Token::EOS | Token::SOS | Token::PAD) {
            return Err(format!("unmaskable position {} selected", s.position));
        }
        if s.original != t {
            return Err(format!("original at {} is wrong", s.position));
        }
        if let MaskAction::Randomize(r) = s.action {
            if r == t || r.class() != t.class() {
                return Err(format!("bad replacement {r} for {t}"));
            }
        }
    }
    for &(start, end) in &window.spans {
        let mut sides = plan
            .positions()
            .filter(|p| (start as usize..end as usize).contains(p))
            .map(|p| side(window.tokens[p]));
        if let Some(first) = sides.next() {
            if sides.any(|s| s != first) {
                return Err(format!("span ({start}, {end}) has both opcode and operand selected"));
            }
        }
    }
    Ok(())
}

/// Plan for window `ordinal` in `epoch`, seeded from the root seed. Each
/// epoch draws a fresh plan, so the model never sees the same masking twice.
pub fn plan_for_epoch(
    window: &TokenWindow,
    root_seed: u64,
    ordinal: u64,
    epoch: u64,
    rates: &MaskRates,
) -> Result<MaskPlan, SimlmError> {
    let mut rng = crate::seed::derived_rng(root_seed, &[crate::seed::stream::MASK, ordinal, epoch]);
    plan_mask(window, &mut rng, rates)
}
