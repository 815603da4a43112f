//! Region scanning with the encoder and program-level aggregation.

mod experiment;
mod features;
mod metrics;
mod report;

pub use experiment::{
    evaluate_outcomes, finetune_stage, fit_knn, load_corpus, prepare_file, prepare_files, pretrain_stage, run_experiment,
    scan_files, stage_seed, EvalSummary, ExperimentConfig, ExperimentReport, FileOutcome, PreparedFile,
};
pub use features::{
    extract_features, knn_classify, knn_train, KnnModel, ProgramClass, ProgramFeatures, ProgramVerdict,
    FEATURE_DIM,
};
pub use metrics::{binary_metrics, evaluate, Metrics};
pub use report::{scan_report, ProgramSummary, ScanReport, WindowRecord, REPORT_SCHEMA, REPORT_SCHEMA_VERSION};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binimage::BinaryImage;
use crate::disasm::linear_sweep;
use crate::encoder::{EncoderError, Model};
use crate::label::RegionLabel;
use crate::normalizer::{
    windowize_instructions, windowize_tokens, Normalizer, TokenStream, TokenWindow, WindowPlan, MAX_WINDOW_TOKENS,
};

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("model has no trained classifier")]
    UntrainedModel,
    #[error("no verdicts to extract features from")]
    EmptyVerdicts,
    #[error("training set holds a single program class")]
    SingleClassDataset,
    #[error("k must be odd and positive, got {0}")]
    InvalidK(usize),
    #[error("{predictions} predictions for {truth} truth values")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Image(#[from] crate::binimage::ImageError),
}

/// One detection window: a run of consecutive units in one section, split
/// into as many encoder inputs as its tokens need.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionWindow {
    pub section: String,
    pub byte_start: usize,
    pub byte_end: usize,
    pub instructions: usize,
    pub inputs: Vec<TokenWindow>,
}

/// Sweep every section, normalize, and cut detection windows.
pub fn image_windows(image: &BinaryImage, plan: WindowPlan) -> Vec<RegionWindow> {
    let normalizer = Normalizer::default();
    let range = image.valid_memory_range();
    let mut out = Vec::new();
    for section in image.sections().iter().filter(|s| s.file_size > 0) {
        let units = linear_sweep(image, Some(section));
        let stream = normalizer.normalize_units(&units, &range);
        for w in windowize_instructions(&units, plan) {
            let sub = sub_stream(&stream, w.units.clone());
            out.push(RegionWindow {
                section: section.name.clone(),
                byte_start: w.byte_start,
                byte_end: w.byte_end,
                instructions: w.unit_count(),
                inputs: windowize_tokens(&sub, MAX_WINDOW_TOKENS),
            });
        }
    }
    out
}

/// Tokens and spans of units `units` of a stream, re-based to zero.
fn sub_stream(stream: &TokenStream, units: std::ops::Range<usize>) -> TokenStream {
    let spans = &stream.spans[units];
    let (Some(first), Some(last)) = (spans.first(), spans.last()) else {
        return TokenStream::default();
    };
    let base = first.start;
    TokenStream {
        tokens: stream.tokens[first.start as usize..last.end as usize].to_vec(),
        spans: spans
            .iter()
            .map(|s| {
                let mut s = *s;
                s.start -= base;
                s.end -= base;
                s
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionVerdict {
    pub section: String,
    pub byte_start: usize,
    pub byte_end: usize,
    pub instructions: usize,
    /// Indexed by [`RegionLabel::index`].
    pub probs: [f64; 3],
    pub label: RegionLabel,
}

pub(crate) fn argmax3(p: &[f64; 3]) -> RegionLabel {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    RegionLabel::from_index(best).unwrap()
}

/// Classify every detection window of `image`, in file order.
pub fn scan_regions(image: &BinaryImage, model: &Model<f32>, plan: WindowPlan) -> Result<Vec<RegionVerdict>, DetectError> {
    if !model.finetuned {
        return Err(DetectError::UntrainedModel);
    }
    classify_region_windows(&image_windows(image, plan), model)
}

pub fn classify_region_windows(windows: &[RegionWindow], model: &Model<f32>) -> Result<Vec<RegionVerdict>, DetectError> {
    if !model.finetuned {
        return Err(DetectError::UntrainedModel);
    }
    windows
        .par_iter()
        .map(|w| {
            let probs = model.classify_windows(&w.inputs)?;
            Ok(RegionVerdict {
                section: w.section.clone(),
                byte_start: w.byte_start,
                byte_end: w.byte_end,
                instructions: w.instructions,
                probs,
                label: argmax3(&probs),
            })
        })
        .collect()
}
