//! The `packsense` command line.
//!
//! Exit codes: 0 on success, 1 when a command fails, 2 on usage errors.

mod config;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use packsense::binimage::load_path;
use packsense::corpus::{
    adversarial_recipes, generate_corpus, sha256_hex, split_check, standard_recipes, write_corpus, GeneratedFile, Role,
    RoleCounts,
};
use packsense::detect::{
    evaluate_outcomes, finetune_stage, fit_knn, load_corpus, prepare_files, pretrain_stage, scan_files, scan_regions,
    scan_report, stage_seed, ExperimentConfig, KnnModel, PreparedFile,
};
use packsense::encoder::{read_checkpoint, write_checkpoint, Model, ModelConfig, TrainConfig};
use packsense::lowentropy::{
    entropy_detect, entropy_profile, padding_for_entropy, shannon_entropy, transform, Alphabet, Granularity,
    PadPosition, TransformSpec,
};
use packsense::normalizer::{Vocabulary, WindowPlan};

pub use config::parse_config;
pub use output::{
    AdversarialMeta, EntropyReport, TrainSummary, ADVERSARIAL_SCHEMA, ENTROPY_SCHEMA, EVAL_SCHEMA, TRAIN_SCHEMA,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "PACKSENSE_THREADS";

#[derive(Parser, Debug, Serialize)]
#[command(name = "packsense", version, about = "Packing-aware executable analysis", args_override_self = true)]
pub struct Cli {
    /// Flat `key = value` file of flag defaults; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a labeled synthetic corpus and its manifest.
    GenCorpus(GenCorpusArgs),
    /// Masked-LM pre-training on the corpus's pretrain files.
    Pretrain(PretrainArgs),
    /// Fine-tune the region classifier and fit the program-level KNN.
    Finetune(FinetuneArgs),
    /// Classify the regions of one file.
    Scan(ScanArgs),
    /// Entropy profile and threshold verdict for one file.
    EntropyScan(EntropyScanArgs),
    /// Apply a low-entropy packing transform to a file.
    GenAdversarial(GenAdversarialArgs),
    /// Score a fine-tuned model on a corpus role.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RecipeSet {
    /// Unpacked files plus one recipe per packing scheme.
    Standard,
    /// Substitution and transposition packing only.
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
enum Scheme {
    MonoSub,
    Transposition,
    PolySub,
    Base64,
    Base32,
    CustomHex,
    Padding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RoleArg {
    Pretrain,
    Finetune,
    Test,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Role {
        match r {
            RoleArg::Pretrain => Role::Pretrain,
            RoleArg::Finetune => Role::Finetune,
            RoleArg::Test => Role::Test,
        }
    }
}

fn defaults() -> ExperimentConfig {
    ExperimentConfig::default()
}

#[derive(Args, Debug, Serialize)]
struct GenCorpusArgs {
    /// Corpus root; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = defaults().counts.pretrain)]
    pretrain: usize,
    #[arg(long, default_value_t = defaults().counts.finetune)]
    finetune: usize,
    #[arg(long, default_value_t = defaults().counts.test)]
    test: usize,
    /// Smallest file size in bytes.
    #[arg(long, default_value_t = defaults().recipes[0].size.0)]
    min_size: usize,
    /// Largest file size in bytes.
    #[arg(long, default_value_t = defaults().recipes[0].size.1)]
    max_size: usize,
    #[arg(long, value_enum, default_value_t = RecipeSet::Standard)]
    recipes: RecipeSet,
}

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    #[arg(long, default_value_t = defaults().model.layers)]
    layers: usize,
    #[arg(long, default_value_t = defaults().model.heads)]
    heads: usize,
    #[arg(long, default_value_t = defaults().model.d_model)]
    d_model: usize,
    #[arg(long, default_value_t = defaults().model.d_ffn)]
    d_ffn: usize,
    #[arg(long, default_value_t = defaults().model.dropout)]
    dropout: f64,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            d_ffn: self.d_ffn,
            dropout: self.dropout,
            ..ModelConfig::default()
        }
    }
}

/// Instruction windows fed to the encoder.
#[derive(Args, Debug, Serialize)]
struct PlanArgs {
    /// Instructions per window.
    #[arg(long, default_value_t = defaults().plan.size)]
    window_units: usize,
    /// Distance between window starts, in instructions.
    #[arg(long, default_value_t = defaults().plan.stride)]
    stride: usize,
    /// Shortest trailing window that is kept.
    #[arg(long, default_value_t = defaults().plan.floor)]
    floor: usize,
}

impl PlanArgs {
    fn plan(&self) -> anyhow::Result<WindowPlan> {
        if self.window_units == 0 || self.stride == 0 {
            bail!("window size and stride must be positive");
        }
        Ok(WindowPlan { size: self.window_units, stride: self.stride, floor: self.floor })
    }
}

#[derive(Args, Debug, Serialize)]
struct PretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = defaults().pretrain.epochs)]
    epochs: usize,
    #[arg(long, default_value_t = defaults().pretrain.lr)]
    lr: f64,
    #[arg(long, default_value_t = defaults().pretrain.batch)]
    batch: usize,
    /// Cap on the number of encoder inputs; 0 means all.
    #[arg(long, default_value_t = defaults().max_pretrain_inputs)]
    max_inputs: usize,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args, Debug, Serialize)]
struct FinetuneArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Pre-trained checkpoint to start from; without it a fresh model is
    /// built from the model flags.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Checkpoint to write; the KNN goes next to it as `<out>.knn.json`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = defaults().finetune.epochs)]
    epochs: usize,
    #[arg(long, default_value_t = defaults().finetune.lr)]
    lr: f64,
    #[arg(long, default_value_t = defaults().finetune.batch)]
    batch: usize,
    #[arg(long, default_value_t = defaults().max_finetune_inputs)]
    max_inputs: usize,
    /// Fraction of fine-tuning files held back for validation.
    #[arg(long, default_value_t = defaults().val_fraction)]
    val_fraction: f64,
    /// Neighbors in the program-level KNN; must be odd.
    #[arg(long, default_value_t = defaults().k)]
    k: usize,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args, Debug, Serialize)]
struct ScanArgs {
    /// Fine-tuned checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Program-level KNN; defaults to `<model>.knn.json` when that exists.
    #[arg(long)]
    knn: Option<PathBuf>,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args, Debug, Serialize)]
struct EntropyScanArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "file")]
    granularity: Granularity,
    #[arg(long, default_value_t = packsense::lowentropy::THRESHOLD_STANDARD)]
    threshold: f64,
    /// Window size in bytes for window granularity.
    #[arg(long, default_value_t = packsense::lowentropy::DEFAULT_WINDOW)]
    window: usize,
    /// At section granularity, call the file packed when more than this
    /// fraction of sections is at or above the threshold. Without it one
    /// section suffices.
    #[arg(long)]
    section_rule: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug, Serialize)]
struct GenAdversarialArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    scheme: Scheme,
    /// Output file; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
    /// Transposition block size in bytes.
    #[arg(long, default_value_t = 256)]
    block: usize,
    /// Polyalphabetic key length.
    #[arg(long, default_value_t = 16)]
    key_len: usize,
    /// Byte repeated by the padding scheme.
    #[arg(long, default_value_t = 0)]
    pad_byte: u8,
    /// Entropy the padding scheme pushes the file below.
    #[arg(long, default_value_t = packsense::lowentropy::THRESHOLD_STANDARD)]
    target: f64,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Fine-tuned checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Program-level KNN; defaults to `<model>.knn.json`.
    #[arg(long)]
    knn: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RoleArg::Test)]
    role: RoleArg,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(flatten)]
    plan: PlanArgs,
}

/// Parse `args` (program name first) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(&args) {
        Ok(cli) => cli,
        Err(Usage::Clap(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
        Err(Usage::Other(e)) => {
            eprintln!("error: {e:#}");
            eprintln!("{}", Cli::command().render_usage());
            return 2;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    if let Err(e) = set_threads() {
        eprintln!("error: {e:#}");
        return 2;
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

enum Usage {
    Clap(clap::Error),
    Other(anyhow::Error),
}

fn parse(args: &[OsString]) -> Result<Cli, Usage> {
    let mut args = args.to_vec();
    if let Some(path) = config::config_path(&args) {
        let entries = config::read_config(Path::new(&path)).map_err(Usage::Other)?;
        let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
        if let Some(i) = args.iter().skip(1).position(|a| a.to_str().is_some_and(|s| names.iter().any(|n| n == s))) {
            args = config::inject(&args, i + 1, &entries);
        }
    }
    let matches = Cli::command().try_get_matches_from(&args).map_err(Usage::Clap)?;
    Cli::from_arg_matches(&matches).map_err(Usage::Clap)
}

fn set_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| anyhow!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
    // A pool may already exist when embedded in tests; the cap then stays
    // whatever it was.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let config_hash = sha256_hex(&serde_json::to_vec(cli)?);
    info!("seed {} config {} vocabulary {}", cli.seed, config_hash, Vocabulary::standard().hash());
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(cli.seed, a),
        Command::Pretrain(a) => pretrain(cli.seed, a),
        Command::Finetune(a) => finetune(cli.seed, a),
        Command::Scan(a) => scan(a),
        Command::EntropyScan(a) => entropy_scan(a),
        Command::GenAdversarial(a) => gen_adversarial(cli.seed, a),
        Command::Eval(a) => eval(a),
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gen_corpus(seed: u64, a: &GenCorpusArgs) -> anyhow::Result<()> {
    let base = match a.recipes {
        RecipeSet::Standard => standard_recipes(),
        RecipeSet::Adversarial => adversarial_recipes(),
    };
    let recipes: Vec<_> = base.into_iter().map(|r| r.with_size(a.min_size, a.max_size)).collect();
    let counts = RoleCounts { pretrain: a.pretrain, finetune: a.finetune, test: a.test };
    let files = generate_corpus(&recipes, counts, seed)?;
    let manifest = write_corpus(&a.out, &files)?;
    let violations = split_check(&manifest);
    info!("wrote {} files to {}", files.len(), a.out.display());
    print_json(&serde_json::json!({
        "files": files.len(),
        "packed": files.iter().filter(|f| f.entry.packed).count(),
        "split_violations": violations,
    }))?;
    if !violations.is_empty() {
        bail!("{} split violations", violations.len());
    }
    Ok(())
}

fn load_prepared(corpus: &Path, role: Role, plan: WindowPlan) -> anyhow::Result<Vec<PreparedFile>> {
    let files: Vec<GeneratedFile> = load_corpus(corpus)
        .with_context(|| format!("loading corpus {}", corpus.display()))?
        .into_iter()
        .filter(|f| f.entry.role == role)
        .collect();
    if files.is_empty() {
        bail!("corpus {} has no {} files", corpus.display(), role.as_str());
    }
    Ok(prepare_files(&files, plan)?)
}

/// Write the checkpoint and return its hash.
fn save_model(path: &Path, model: &Model<f32>) -> anyhow::Result<String> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model)?;
    std::fs::write(path, &buf).with_context(|| format!("writing {}", path.display()))?;
    let hash = sha256_hex(&buf);
    info!("checkpoint {} sha256 {hash}", path.display());
    Ok(hash)
}

fn load_model(path: &Path) -> anyhow::Result<Model<f32>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    info!("checkpoint {} sha256 {}", path.display(), sha256_hex(&bytes));
    read_checkpoint(&mut bytes.as_slice()).with_context(|| format!("loading {}", path.display()))
}

fn knn_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".knn.json");
    s.into()
}

fn pretrain(seed: u64, a: &PretrainArgs) -> anyhow::Result<()> {
    let files = load_prepared(&a.corpus, Role::Pretrain, a.plan.plan()?)?;
    let mut model = Model::<f32>::new(a.model.config(), seed)?;
    let cfg = TrainConfig { lr: a.lr, epochs: a.epochs, batch: a.batch, seed: stage_seed(seed, 1), ..TrainConfig::default() };
    let (log, inputs) = pretrain_stage(&mut model, &files, &cfg, a.max_inputs)?;
    let checkpoint_sha256 = save_model(&a.out, &model)?;
    print_json(&TrainSummary { stage: "pretrain".into(), inputs, log, checkpoint_sha256 })
}

fn finetune(seed: u64, a: &FinetuneArgs) -> anyhow::Result<()> {
    if !(0.0..1.0).contains(&a.val_fraction) {
        bail!("--val-fraction must be in [0, 1)");
    }
    let files = load_prepared(&a.corpus, Role::Finetune, a.plan.plan()?)?;
    let mut model = match &a.init {
        Some(p) => load_model(p)?,
        None => Model::<f32>::new(a.model.config(), seed)?,
    };
    let cfg = TrainConfig { lr: a.lr, epochs: a.epochs, batch: a.batch, seed: stage_seed(seed, 2), ..TrainConfig::default() };
    let (log, inputs) = finetune_stage(&mut model, &files, &cfg, a.max_inputs, a.val_fraction)?;
    let refs: Vec<&PreparedFile> = files.iter().collect();
    let knn = fit_knn(&scan_files(&model, &refs)?, a.k)?;
    let checkpoint_sha256 = save_model(&a.out, &model)?;
    let kp = knn_path(&a.out);
    std::fs::write(&kp, serde_json::to_vec(&knn)?).with_context(|| format!("writing {}", kp.display()))?;
    print_json(&TrainSummary { stage: "finetune".into(), inputs, log, checkpoint_sha256 })
}

fn read_knn(path: &Path) -> anyhow::Result<KnnModel> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn scan(a: &ScanArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let knn = match &a.knn {
        Some(p) => Some(read_knn(p)?),
        None => {
            let p = knn_path(&a.model);
            p.exists().then(|| read_knn(&p)).transpose()?
        }
    };
    let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let sha = sha256_hex(&bytes);
    let image = packsense::binimage::load_image(bytes, None)?;
    let verdicts = scan_regions(&image, &model, a.plan.plan()?)?;
    let report = scan_report(&a.input.display().to_string(), &sha, &verdicts, knn.as_ref())?;
    match a.format {
        Format::Json => print_json(&report),
        Format::Table => {
            print!("{}", output::scan_table(&report));
            Ok(())
        }
    }
}

fn entropy_scan(a: &EntropyScanArgs) -> anyhow::Result<()> {
    if a.window == 0 {
        bail!("--window must be positive");
    }
    if let Some(f) = a.section_rule {
        if !(0.0..=1.0).contains(&f) {
            bail!("--section-rule must be in [0, 1]");
        }
    }
    let image = load_path(&a.input, None).with_context(|| format!("loading {}", a.input.display()))?;
    let profile = entropy_profile(&image, a.granularity, a.window);
    let verdict = entropy_detect(&profile, a.threshold, a.section_rule);
    let report = EntropyReport::new(&a.input.display().to_string(), &sha256_hex(image.data()), profile, verdict);
    match a.format {
        Format::Json => print_json(&report),
        Format::Table => {
            print!("{}", output::entropy_table(&report));
            Ok(())
        }
    }
}

fn gen_adversarial(seed: u64, a: &GenAdversarialArgs) -> anyhow::Result<()> {
    let input = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut rng = packsense::seed::rng(seed);
    let spec = match a.scheme {
        Scheme::MonoSub => TransformSpec::random_mono_sub(&mut rng),
        Scheme::Transposition => TransformSpec::random_transposition(a.block, &mut rng),
        Scheme::PolySub => TransformSpec::random_poly_sub(a.key_len, &mut rng),
        Scheme::Base64 => TransformSpec::Encoding { alphabet: Alphabet::Base64 },
        Scheme::Base32 => TransformSpec::Encoding { alphabet: Alphabet::Base32 },
        Scheme::CustomHex => TransformSpec::Encoding { alphabet: Alphabet::custom_hex() },
        Scheme::Padding => {
            let amount = padding_for_entropy(&input, a.pad_byte, a.target)
                .ok_or_else(|| anyhow!("no amount of padding brings the entropy below {}", a.target))?;
            TransformSpec::BytePadding { byte: a.pad_byte, amount, position: PadPosition::Append }
        }
    };
    let out = transform(&input, &spec)?;
    std::fs::write(&a.out, &out.bytes).with_context(|| format!("writing {}", a.out.display()))?;
    let meta = AdversarialMeta {
        schema_version: output::SCHEMA_VERSION,
        input_sha256: sha256_hex(&input),
        output_sha256: sha256_hex(&out.bytes),
        entropy_before: shannon_entropy(&input).unwrap_or(0.0),
        entropy_after: shannon_entropy(&out.bytes).unwrap_or(0.0),
        seed,
        inverse: out.meta,
    };
    let mut mp = a.out.as_os_str().to_owned();
    mp.push(".meta.json");
    std::fs::write(&mp, serde_json::to_vec_pretty(&meta)?)?;
    print_json(&meta)
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let knn = read_knn(&a.knn.clone().unwrap_or_else(|| knn_path(&a.model)))?;
    let files = load_prepared(&a.corpus, a.role.into(), a.plan.plan()?)?;
    let refs: Vec<&PreparedFile> = files.iter().collect();
    let mut outcomes = scan_files(&model, &refs)?;
    let summary = evaluate_outcomes(&mut outcomes, &knn)?;
    match a.format {
        Format::Json => print_json(&summary),
        Format::Table => {
            print!("{}", output::eval_table(&summary));
            Ok(())
        }
    }
}
