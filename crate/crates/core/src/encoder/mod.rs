//! A small transformer encoder with two heads.
//!
//! The masked-LM head scores every vocabulary entry at selected positions
//! and shares its weight matrix with the token embeddings. The region head
//! averages the final hidden states over non-pad positions, applies a tanh
//! dense layer, and projects to the three region classes.
//!
//! Everything, including backpropagation, is written out by hand over
//! `ndarray`. The model is generic over [`Scalar`]: training runs in `f32`,
//! gradient checking in `f64`.

mod checkpoint;
mod gradcheck;
mod layers;
mod model;
mod params;
mod train;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckFixture, GradCheckReport, LossPath};
pub use model::{Encoded, Model};
pub use params::{LayerParams, Params};
pub use train::{
    train_finetune, train_pretrain, EpochMetrics, LabeledWindow, TrainConfig, TrainLog,
};

pub use crate::label::RegionLabel;
use crate::normalizer::VOCAB_SIZE;

/// Longest input the positional table covers.
pub const MAX_LEN: usize = 512;

/// Floating-point type the encoder runs in.
pub trait Scalar:
    LinalgScalar
    + num_traits::Float
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn erf(self) -> Self;

    fn of(v: f64) -> Self;

    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn of(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn of(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    /// Desk scale: 4 layers, 4 heads, width 128.
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            heads: 4,
            d_model: 128,
            d_ffn: 512,
            max_len: MAX_LEN,
            vocab_size: VOCAB_SIZE,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    /// Full size: 12 layers of width 768.
    pub fn full_scale() -> Self {
        ModelConfig { layers: 12, heads: 12, d_model: 768, d_ffn: 3072, ..ModelConfig::default() }
    }

    /// A tiny configuration for tests.
    pub fn tiny(layers: usize, d_model: usize) -> Self {
        ModelConfig { layers, heads: 2, d_model, d_ffn: 2 * d_model, dropout: 0.0, ..ModelConfig::default() }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.d_ffn == 0 {
            return bad("sizes must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.max_len != MAX_LEN {
            return bad(format!("max_len must be {MAX_LEN}"));
        }
        if self.vocab_size != VOCAB_SIZE {
            return bad(format!("vocab_size {} does not match the vocabulary ({VOCAB_SIZE})", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("classification head has not been fine-tuned")]
    UntrainedHead,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("window {0} has no label")]
    MissingLabels(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
