//! The full pipeline on a corpus: pre-train, fine-tune, scan the held-out
//! files, aggregate to program verdicts, and score everything. Each stage is
//! public on its own so the command line can run them separately.

use std::path::Path;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    binary_metrics, classify_region_windows, evaluate, extract_features, image_windows, knn_classify, knn_train,
    DetectError, KnnModel, Metrics, ProgramClass, RegionVerdict, RegionWindow,
};
use crate::binimage::load_image;
use crate::corpus::{
    generate_corpus, label_for_extent, sha256_hex, split_check, standard_recipes, CorpusError, CorpusManifest,
    GeneratedFile, ManifestEntry, Role, RoleCounts, SplitViolation, SyntheticRecipe,
};
use crate::encoder::{train_finetune, train_pretrain, write_checkpoint, Model, ModelConfig, TrainConfig, TrainLog};
use crate::label::RegionLabel;
use crate::lowentropy::{entropy_detect, entropy_profile, Granularity, DEFAULT_WINDOW, THRESHOLD_STANDARD};
use crate::normalizer::{TokenWindow, WindowPlan};
use crate::seed::{derive, derived_rng, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub counts: RoleCounts,
    pub recipes: Vec<SyntheticRecipe>,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub plan: WindowPlan,
    /// Caps on the number of encoder inputs drawn for each training stage;
    /// 0 means no cap.
    pub max_pretrain_inputs: usize,
    pub max_finetune_inputs: usize,
    /// Fraction of fine-tuning files held back for validation.
    pub val_fraction: f64,
    pub k: usize,
}

impl Default for ExperimentConfig {
    /// Desk scale, sized for a single CPU core: 500 training files (150
    /// pre-training, 350 fine-tuning) and 200 test files of 768 to 1536
    /// bytes, a 4-layer encoder of width 64, one pre-training epoch and
    /// three fine-tuning epochs over capped input sets. Fine-tuning uses
    /// batch 4; at batch 8 or a higher rate it can stall on one class.
    fn default() -> Self {
        let train = |epochs, batch| TrainConfig { lr: 1e-3, epochs, batch, ..TrainConfig::default() };
        ExperimentConfig {
            seed: 0,
            counts: RoleCounts { pretrain: 150, finetune: 350, test: 200 },
            recipes: standard_recipes().into_iter().map(|r| r.with_size(768, 1536)).collect(),
            model: ModelConfig { layers: 4, heads: 4, d_model: 64, d_ffn: 256, ..ModelConfig::default() },
            pretrain: train(1, 8),
            finetune: train(3, 4),
            plan: WindowPlan::default(),
            max_pretrain_inputs: 300,
            max_finetune_inputs: 1000,
            val_fraction: 0.1,
            k: 5,
        }
    }
}

/// A corpus file swept into detection windows, with ground truth.
#[derive(Clone, Debug)]
pub struct PreparedFile {
    pub entry: ManifestEntry,
    pub windows: Vec<RegionWindow>,
    /// Ground truth per window.
    pub truth: Vec<Option<RegionLabel>>,
    /// File-granularity entropy verdict at the standard threshold.
    pub entropy_packed: bool,
}

pub fn prepare_file(file: &GeneratedFile, plan: WindowPlan) -> Result<PreparedFile, DetectError> {
    let image = load_image(file.bytes.clone(), None)?;
    let windows = image_windows(&image, plan);
    let truth = windows.iter().map(|w| label_for_extent(&file.entry.regions, w.byte_start, w.byte_end)).collect();
    let profile = entropy_profile(&image, Granularity::File, DEFAULT_WINDOW);
    let entropy_packed = entropy_detect(&profile, THRESHOLD_STANDARD, None).packed;
    Ok(PreparedFile { entry: file.entry.clone(), windows, truth, entropy_packed })
}

pub fn prepare_files(files: &[GeneratedFile], plan: WindowPlan) -> Result<Vec<PreparedFile>, DetectError> {
    files.par_iter().map(|f| prepare_file(f, plan)).collect()
}

/// Read every file of a written corpus, checking content hashes.
pub fn load_corpus(root: &Path) -> Result<Vec<GeneratedFile>, CorpusError> {
    let manifest = CorpusManifest::load(root)?;
    manifest
        .entries
        .into_iter()
        .map(|entry| {
            let bytes = std::fs::read(root.join(&entry.path))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(CorpusError::InvalidRecipe(format!("{}: content does not match its sha256", entry.path)));
            }
            Ok(GeneratedFile { entry, bytes })
        })
        .collect()
}

fn of_role(files: &[PreparedFile], role: Role) -> Vec<&PreparedFile> {
    files.iter().filter(|f| f.entry.role == role).collect()
}

fn labeled_inputs(files: &[&PreparedFile]) -> Vec<TokenWindow> {
    let mut out = Vec::new();
    for f in files {
        for (w, t) in f.windows.iter().zip(&f.truth) {
            let Some(t) = *t else { continue };
            out.extend(w.inputs.iter().cloned().map(|mut i| {
                i.label = Some(t);
                i
            }));
        }
    }
    out
}

fn subsample(mut inputs: Vec<TokenWindow>, cap: usize, seed: u64, tag: u64) -> Vec<TokenWindow> {
    if cap > 0 && inputs.len() > cap {
        inputs.shuffle(&mut derived_rng(seed, &[stream::SUBSAMPLE, tag]));
        inputs.truncate(cap);
    }
    inputs
}

/// Masked-LM pre-training on the pretrain-role files. Returns the log and
/// the number of inputs used.
pub fn pretrain_stage(
    model: &mut Model<f32>,
    files: &[PreparedFile],
    cfg: &TrainConfig,
    max_inputs: usize,
) -> Result<(TrainLog, usize), DetectError> {
    let inputs: Vec<TokenWindow> = of_role(files, Role::Pretrain)
        .iter()
        .flat_map(|f| f.windows.iter().flat_map(|w| w.inputs.iter().cloned()))
        .collect();
    let inputs = subsample(inputs, max_inputs, cfg.seed, 0);
    let log = train_pretrain(model, &inputs, cfg)?;
    Ok((log, inputs.len()))
}

/// Region-classifier fine-tuning on the finetune-role files, holding the
/// last `val_fraction` of them back for validation.
pub fn finetune_stage(
    model: &mut Model<f32>,
    files: &[PreparedFile],
    cfg: &TrainConfig,
    max_inputs: usize,
    val_fraction: f64,
) -> Result<(TrainLog, usize), DetectError> {
    let ft = of_role(files, Role::Finetune);
    let n_val = ((ft.len() as f64) * val_fraction).round() as usize;
    let (train, val) = ft.split_at(ft.len() - n_val.min(ft.len()));
    let train = subsample(labeled_inputs(train), max_inputs, cfg.seed, 1);
    let val = labeled_inputs(val);
    let log = train_finetune(model, &train, &val, cfg)?;
    Ok((log, train.len()))
}

/// What happened to one scanned corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileOutcome {
    pub path: String,
    pub role: Role,
    pub recipe: String,
    pub packed: bool,
    /// Scheme of the packed payload: a transform name or `random_bytes`.
    pub scheme: Option<String>,
    pub verdicts: Vec<RegionVerdict>,
    pub truth: Vec<Option<RegionLabel>>,
    pub decision: Option<ProgramClass>,
    pub entropy_packed: bool,
}

impl FileOutcome {
    /// Packed by substitution or transposition, the schemes that keep byte
    /// entropy unchanged.
    pub fn is_lowentropy(&self) -> bool {
        matches!(self.scheme.as_deref(), Some("mono_sub" | "transposition"))
    }
}

fn scheme_of(entry: &ManifestEntry) -> Option<String> {
    match &entry.transform {
        Some(t) => Some(t.name().to_string()),
        None if entry.packed => Some("random_bytes".into()),
        None => None,
    }
}

/// Classify every window of `files`.
pub fn scan_files(model: &Model<f32>, files: &[&PreparedFile]) -> Result<Vec<FileOutcome>, DetectError> {
    files
        .iter()
        .map(|f| {
            Ok(FileOutcome {
                path: f.entry.path.clone(),
                role: f.entry.role,
                recipe: f.entry.recipe.clone(),
                packed: f.entry.packed,
                scheme: scheme_of(&f.entry),
                verdicts: classify_region_windows(&f.windows, model)?,
                truth: f.truth.clone(),
                decision: None,
                entropy_packed: f.entropy_packed,
            })
        })
        .collect()
}

/// Program-level KNN over the verdicts of scanned training files.
pub fn fit_knn(outcomes: &[FileOutcome], k: usize) -> Result<KnnModel, DetectError> {
    let dataset: Vec<_> = outcomes
        .iter()
        .filter(|o| !o.verdicts.is_empty())
        .map(|o| Ok((extract_features(&o.verdicts)?, ProgramClass::from_packed(o.packed))))
        .collect::<Result<_, DetectError>>()?;
    knn_train(&dataset, k)
}

/// Scores over a set of scanned, labeled files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub files: usize,
    pub windows: usize,
    /// Positive class is pseudo (anything not Instruction).
    pub instruction_vs_pseudo: Metrics,
    /// Windows whose truth is pseudo; positive class is PackedData.
    pub packed_vs_native: Metrics,
    /// Positive class is Packed. Files without windows get no verdict.
    pub program: Metrics,
    /// Files packed by substitution or transposition.
    pub lowentropy_files: usize,
    pub lowentropy_model_recall: f64,
    pub lowentropy_entropy_recall: f64,
}

/// Attach KNN decisions to `outcomes` and score them.
pub fn evaluate_outcomes(outcomes: &mut [FileOutcome], knn: &KnnModel) -> Result<EvalSummary, DetectError> {
    for o in outcomes.iter_mut().filter(|o| !o.verdicts.is_empty()) {
        o.decision = Some(knn_classify(knn, &extract_features(&o.verdicts)?, &o.verdicts)?.decision);
    }
    let (mut p1, mut t1, mut p2, mut t2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for o in outcomes.iter() {
        for (v, t) in o.verdicts.iter().zip(&o.truth) {
            let Some(t) = *t else { continue };
            p1.push(v.label.is_pseudo());
            t1.push(t.is_pseudo());
            if t.is_pseudo() {
                p2.push(v.label == RegionLabel::PackedData);
                t2.push(t == RegionLabel::PackedData);
            }
        }
    }
    let program = evaluate(
        &outcomes.iter().map(|o| o.decision.map(ProgramClass::is_packed)).collect::<Vec<_>>(),
        &outcomes.iter().map(|o| o.packed).collect::<Vec<_>>(),
    )?;
    let low: Vec<&FileOutcome> = outcomes.iter().filter(|o| o.is_lowentropy()).collect();
    let recall = |hit: &dyn Fn(&FileOutcome) -> bool| {
        if low.is_empty() {
            0.0
        } else {
            low.iter().filter(|o| hit(o)).count() as f64 / low.len() as f64
        }
    };
    Ok(EvalSummary {
        files: outcomes.len(),
        windows: p1.len(),
        instruction_vs_pseudo: binary_metrics(&p1, &t1)?,
        packed_vs_native: binary_metrics(&p2, &t2)?,
        program,
        lowentropy_files: low.len(),
        lowentropy_model_recall: recall(&|o| o.decision == Some(ProgramClass::Packed)),
        lowentropy_entropy_recall: recall(&|o| o.entropy_packed),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub split_violations: Vec<SplitViolation>,
    pub pretrain: TrainLog,
    pub finetune: TrainLog,
    pub pretrain_inputs: usize,
    pub finetune_inputs: usize,
    /// Scores on the test role.
    pub test: EvalSummary,
    pub checkpoint_sha256: String,
    /// Fine-tuning files, then test files.
    pub files: Vec<FileOutcome>,
}

/// Seeds of the two training stages, kept apart so their shuffles and masks
/// never coincide.
pub fn stage_seed(root: u64, stage: u64) -> u64 {
    derive(root, &[stage])
}

/// Run the pipeline end to end on a freshly generated corpus. Returns the
/// report, the fine-tuned model, and the program-level classifier.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Model<f32>, KnnModel), DetectError> {
    let t0 = Instant::now();
    let files = generate_corpus(&cfg.recipes, cfg.counts, cfg.seed)?;
    let manifest = CorpusManifest { entries: files.iter().map(|f| f.entry.clone()).collect() };
    let split_violations = split_check(&manifest);
    let prepared = prepare_files(&files, cfg.plan)?;
    info!(
        "corpus: {} files, {} windows, {:.1?}",
        files.len(),
        prepared.iter().map(|f| f.windows.len()).sum::<usize>(),
        t0.elapsed()
    );

    let mut model = Model::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let t = Instant::now();
    let pre_cfg = TrainConfig { seed: stage_seed(cfg.seed, 1), ..cfg.pretrain.clone() };
    let (pretrain, pretrain_inputs) = if of_role(&prepared, Role::Pretrain).is_empty() {
        (TrainLog::default(), 0)
    } else {
        pretrain_stage(&mut model, &prepared, &pre_cfg, cfg.max_pretrain_inputs)?
    };
    info!("pretrain: {pretrain_inputs} inputs, {:.1?}", t.elapsed());
    let t = Instant::now();
    let ft_cfg = TrainConfig { seed: stage_seed(cfg.seed, 2), ..cfg.finetune.clone() };
    let (finetune, finetune_inputs) =
        finetune_stage(&mut model, &prepared, &ft_cfg, cfg.max_finetune_inputs, cfg.val_fraction)?;
    info!("finetune: {finetune_inputs} inputs, {:.1?}", t.elapsed());

    let t = Instant::now();
    let train_out = scan_files(&model, &of_role(&prepared, Role::Finetune))?;
    let knn = fit_knn(&train_out, cfg.k)?;
    let mut test_out = scan_files(&model, &of_role(&prepared, Role::Test))?;
    let test = evaluate_outcomes(&mut test_out, &knn)?;
    info!("scan and evaluate: {:.1?}", t.elapsed());

    let mut ckpt = Vec::new();
    write_checkpoint(&mut ckpt, &model)?;
    let report = ExperimentReport {
        seed: cfg.seed,
        split_violations,
        pretrain,
        finetune,
        pretrain_inputs,
        finetune_inputs,
        test,
        checkpoint_sha256: sha256_hex(&ckpt),
        files: train_out.into_iter().chain(test_out).collect(),
    };
    info!("experiment done in {:.1?}", t0.elapsed());
    Ok((report, model, knn))
}
