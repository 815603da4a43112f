//! Synthetic corpora with exact region labels.
//!
//! Every file is assembled from labeled segments (real code, native data,
//! packed payload), so ground truth is known by construction. Files carry a
//! role, and [`split_check`] verifies that nothing a model trains on leaks
//! into the test role.

mod fixture;
pub mod pe;
pub mod sampler;

pub use fixture::{TEST_PROGRAMS, TRAIN_PROGRAMS};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::label::RegionLabel;
use crate::lowentropy::{
    histogram, histogram_entropy, padding_for_entropy, transform, Alphabet, PadPosition, TransformSpec,
};
use crate::seed::{derive, rng, stream};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Pretrain,
    Finetune,
    Test,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Pretrain, Role::Finetune, Role::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Pretrain => "pretrain",
            Role::Finetune => "finetune",
            Role::Test => "test",
        }
    }

    pub fn is_train(self) -> bool {
        self != Role::Test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Container {
    Raw,
    Pe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeSource {
    CompiledFixture,
    DecodeSubsetSampler,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NativeSource {
    Strings,
    Tables,
    ZeroPad,
}

/// How a packed payload is made. The substitution and transposition schemes
/// encode real code; the others stand in for compressed data with uniform
/// random bytes, optionally re-encoded or diluted afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackedSource {
    RandomBytes,
    MonoSub,
    PolySub,
    Transposition,
    Encoding,
    Padding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", content = "source", rename_all = "snake_case")]
pub enum SegmentKind {
    Code(CodeSource),
    Native(NativeSource),
    Packed(PackedSource),
}

impl SegmentKind {
    pub fn label(self) -> RegionLabel {
        match self {
            SegmentKind::Code(_) => RegionLabel::Instruction,
            SegmentKind::Native(_) => RegionLabel::NativeData,
            SegmentKind::Packed(_) => RegionLabel::PackedData,
        }
    }
}

/// One entry of a recipe's layout; `share` is its fraction of the file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecipe {
    pub name: String,
    /// Segments in file order.
    pub layout: Vec<Segment>,
    /// Inclusive range of the planned file size in bytes.
    pub size: (usize, usize),
    pub container: Container,
    /// When set, zero padding is appended until whole-file entropy is below
    /// this value.
    pub entropy_cap: Option<f64>,
    /// Relative frequency among the recipes of a corpus.
    pub weight: u32,
}

const MIN_FILE: usize = 128;

impl SyntheticRecipe {
    pub fn new(name: &str, container: Container, layout: &[(SegmentKind, f64)]) -> Self {
        SyntheticRecipe {
            name: name.into(),
            layout: layout.iter().map(|&(kind, share)| Segment { kind, share }).collect(),
            size: (1536, 3072),
            container,
            entropy_cap: None,
            weight: 1,
        }
    }

    pub fn with_size(mut self, min: usize, max: usize) -> Self {
        self.size = (min, max);
        self
    }

    pub fn with_entropy_cap(mut self, cap: f64) -> Self {
        self.entropy_cap = Some(cap);
        self
    }

    pub fn with_weight(mut self, weight: u32) -> Self {
        self.weight = weight;
        self
    }

    /// A recipe is packed when any segment is a packed payload.
    pub fn is_packed(&self) -> bool {
        self.layout.iter().any(|s| matches!(s.kind, SegmentKind::Packed(_)))
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidRecipe(format!("{}: {m}", self.name)));
        if self.layout.is_empty() {
            return bad("empty layout".into());
        }
        if let Some(s) = self.layout.iter().find(|s| !(s.share.is_finite() && s.share > 0.0)) {
            return bad(format!("segment share {} is not positive", s.share));
        }
        if self.size.0 < MIN_FILE || self.size.0 > self.size.1 {
            return bad(format!("size range {:?} (minimum {MIN_FILE})", self.size));
        }
        if let Some(cap) = self.entropy_cap {
            if !(cap > 0.0 && cap <= 8.0) {
                return bad(format!("entropy cap {cap} outside (0, 8]"));
            }
        }
        if self.weight == 0 {
            return bad("zero weight".into());
        }
        Ok(())
    }

    /// Planned byte length of each segment for a file of `total` bytes; the
    /// lengths sum to `total`.
    pub fn plan_lengths(&self, total: usize) -> Vec<usize> {
        let sum: f64 = self.layout.iter().map(|s| s.share).sum();
        let mut lens: Vec<usize> =
            self.layout.iter().map(|s| ((s.share / sum) * total as f64).floor() as usize).collect();
        let used: usize = lens.iter().sum();
        *lens.last_mut().unwrap() += total - used;
        lens
    }
}

use CodeSource::*;
use NativeSource::*;
use PackedSource::*;
use SegmentKind::{Code, Native, Packed};

fn packed_recipe(name: &str, source: PackedSource, tail: NativeSource) -> SyntheticRecipe {
    SyntheticRecipe::new(
        name,
        Container::Pe,
        &[(Code(CompiledFixture), 0.2), (Packed(source), 0.65), (Native(tail), 0.15)],
    )
}

/// The mix used for training and evaluation: four in ten files are
/// unpacked programs, the rest carry one packed payload each.
pub fn standard_recipes() -> Vec<SyntheticRecipe> {
    vec![
        SyntheticRecipe::new(
            "native_pe",
            Container::Pe,
            &[
                (Code(CompiledFixture), 0.45),
                (Code(DecodeSubsetSampler), 0.1),
                (Native(Strings), 0.2),
                (Native(Tables), 0.15),
                (Native(ZeroPad), 0.1),
            ],
        )
        .with_weight(3),
        SyntheticRecipe::new(
            "native_raw",
            Container::Raw,
            &[(Code(CompiledFixture), 0.6), (Native(Strings), 0.2), (Native(ZeroPad), 0.2)],
        ),
        packed_recipe("packed_random", RandomBytes, Strings),
        packed_recipe("packed_mono_sub", MonoSub, ZeroPad).with_entropy_cap(7.0),
        packed_recipe("packed_transposition", Transposition, Tables).with_entropy_cap(7.0),
        packed_recipe("packed_poly_sub", PolySub, Strings),
        packed_recipe("packed_encoding", Encoding, Tables),
        packed_recipe("packed_padding", Padding, ZeroPad),
    ]
}

/// Low-entropy packed programs only: substitution and transposition of
/// real code, capped below the standard entropy threshold.
pub fn adversarial_recipes() -> Vec<SyntheticRecipe> {
    vec![
        packed_recipe("packed_mono_sub", MonoSub, ZeroPad).with_entropy_cap(7.0),
        packed_recipe("packed_transposition", Transposition, Tables).with_entropy_cap(7.0),
    ]
}

/// One labeled byte range, in file offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub start: usize,
    pub end: usize,
    pub label: RegionLabel,
    /// Generator provenance, e.g. `fixture:algo_O2`, `strings` or
    /// `random:<seed>`.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the corpus root.
    pub path: String,
    pub sha256: String,
    pub role: Role,
    pub packed: bool,
    pub format: Container,
    pub recipe: String,
    pub seed: u64,
    /// Sorted, non-overlapping, and tiling the file's section bytes.
    pub regions: Vec<RegionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformSpec>,
    /// Identifiers of everything the file was derived from: fixture
    /// programs and the sha256 of each transformed source buffer.
    #[serde(default)]
    pub lineage: Vec<String>,
}

impl ManifestEntry {
    /// Section extents as the ground truth sees them.
    pub fn label_at(&self, start: usize, end: usize) -> Option<RegionLabel> {
        label_for_extent(&self.regions, start, end)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line)
                .map_err(|e| CorpusError::Manifest { line: i + 1, message: e.to_string() })?;
            entries.push(e);
        }
        Ok(CorpusManifest { entries })
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let f = std::fs::File::open(root.as_ref().join(MANIFEST_FILE))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }

    pub fn by_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }
}

/// A generated file and its manifest record.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedFile {
    pub entry: ManifestEntry,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCounts {
    pub pretrain: usize,
    pub finetune: usize,
    pub test: usize,
}

impl RoleCounts {
    pub fn get(&self, role: Role) -> usize {
        match role {
            Role::Pretrain => self.pretrain,
            Role::Finetune => self.finetune,
            Role::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.pretrain + self.finetune + self.test
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Generate every file of a corpus in memory.
///
/// Files are numbered across roles in order pretrain, finetune, test, and
/// file `i` is built from the seed `derive(seed, [CORPUS, i])`. Recipes are
/// dealt round-robin in proportion to their weights; the pretrain role only
/// receives unpacked recipes. A role with a zero count is simply empty.
pub fn generate_corpus(
    recipes: &[SyntheticRecipe],
    counts: RoleCounts,
    seed: u64,
) -> Result<Vec<GeneratedFile>, CorpusError> {
    if recipes.is_empty() {
        return Err(CorpusError::InvalidRecipe("no recipes".into()));
    }
    for r in recipes {
        r.validate()?;
    }
    let deal = |pretrain: bool| -> Vec<usize> {
        recipes
            .iter()
            .enumerate()
            .filter(|(_, r)| !pretrain || !r.is_packed())
            .flat_map(|(i, r)| std::iter::repeat(i).take(r.weight as usize))
            .collect()
    };
    let deck_all = deal(false);
    let deck_pretrain = deal(true);
    if counts.pretrain > 0 && deck_pretrain.is_empty() {
        return Err(CorpusError::InvalidRecipe("pretraining needs an unpacked recipe".into()));
    }

    let mut jobs = Vec::with_capacity(counts.total());
    for role in Role::ALL {
        let deck = if role == Role::Pretrain { &deck_pretrain } else { &deck_all };
        for k in 0..counts.get(role) {
            jobs.push((role, k, deck[k % deck.len()]));
        }
    }
    Ok(jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(role, k, r))| {
            let file_seed = derive(seed, &[stream::CORPUS, i as u64]);
            let recipe = &recipes[r];
            let path = format!("{}/{:05}_{}.bin", role.as_str(), k, recipe.name);
            build_file(recipe, role, file_seed, path)
        })
        .collect())
}

/// Write files and `manifest.jsonl` under `root`.
pub fn write_corpus(root: impl AsRef<Path>, files: &[GeneratedFile]) -> Result<CorpusManifest, CorpusError> {
    let root = root.as_ref();
    for f in files {
        let path = root.join(&f.entry.path);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, &f.bytes)?;
    }
    let manifest = CorpusManifest { entries: files.iter().map(|f| f.entry.clone()).collect() };
    let mut w = std::io::BufWriter::new(std::fs::File::create(root.join(MANIFEST_FILE))?);
    manifest.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(manifest)
}

pub fn entry_path(root: impl AsRef<Path>, entry: &ManifestEntry) -> PathBuf {
    root.as_ref().join(&entry.path)
}

struct Piece {
    bytes: Vec<u8>,
    label: RegionLabel,
    source: String,
    transform: Option<TransformSpec>,
    section: &'static str,
    characteristics: u32,
}

const TRANSPOSITION_BLOCK: usize = 256;
const POLY_KEY_LEN: usize = 16;

fn build_file(recipe: &SyntheticRecipe, role: Role, file_seed: u64, path: String) -> GeneratedFile {
    let mut rng = rng(file_seed);
    let total = rng.gen_range(recipe.size.0..=recipe.size.1);
    let mut lineage: BTreeSet<String> = BTreeSet::new();
    let mut pieces = Vec::with_capacity(recipe.layout.len() + 1);

    for (seg, len) in recipe.layout.iter().zip(recipe.plan_lengths(total)) {
        let len = len.max(1);
        let piece = match seg.kind {
            Code(CompiledFixture) => {
                let (bytes, sources) = fixture::slice_code(&mut rng, role, len);
                for s in &sources {
                    lineage.insert(fixture::lineage_id(s.split('_').next().unwrap()));
                }
                code_piece(bytes, format!("fixture:{}", sources.join("+")))
            }
            Code(DecodeSubsetSampler) => code_piece(sampler::sample_code(&mut rng, len), "sampler".into()),
            Native(src) => native_piece(src, &mut rng, len),
            Packed(src) => packed_piece(src, role, &mut rng, len, &mut lineage),
        };
        pieces.push(piece);
    }

    if let Some(cap) = recipe.entropy_cap {
        let mut h = [0u64; 256];
        let mut n = 0u64;
        for p in &pieces {
            for (acc, c) in h.iter_mut().zip(histogram(&p.bytes)) {
                *acc += c;
            }
            n += p.bytes.len() as u64;
        }
        if histogram_entropy(&h, n) >= cap {
            let all: Vec<u8> = pieces.iter().flat_map(|p| p.bytes.iter().copied()).collect();
            let pad = padding_for_entropy(&all, 0x00, cap).expect("positive cap");
            pieces.push(Piece {
                bytes: vec![0; pad],
                label: RegionLabel::NativeData,
                source: "zero_pad".into(),
                transform: None,
                section: ".bss",
                characteristics: pe::DATA,
            });
        }
    }

    let (bytes, offsets) = match recipe.container {
        Container::Raw => {
            let mut out = Vec::with_capacity(pieces.iter().map(|p| p.bytes.len()).sum());
            let mut offsets = Vec::with_capacity(pieces.len());
            for p in &pieces {
                offsets.push(out.len());
                out.extend_from_slice(&p.bytes);
            }
            (out, offsets)
        }
        Container::Pe => {
            let specs: Vec<pe::SectionSpec> = pieces
                .iter()
                .map(|p| pe::SectionSpec::new(p.section, p.bytes.clone(), p.characteristics))
                .collect();
            let file = pe::write_pe32(&specs, pe::DEFAULT_IMAGE_BASE);
            let offsets = file.sections.iter().map(|s| s.file_offset as usize).collect();
            (file.bytes, offsets)
        }
    };

    let transform = pieces.iter().find_map(|p| p.transform.clone());
    let packed = pieces.iter().any(|p| p.label == RegionLabel::PackedData);
    let regions = pieces
        .into_iter()
        .zip(offsets)
        .map(|(p, start)| RegionRecord {
            start,
            end: start + p.bytes.len(),
            label: p.label,
            source: p.source,
            transform: p.transform,
        })
        .collect();
    let entry = ManifestEntry {
        path,
        sha256: sha256_hex(&bytes),
        role,
        packed,
        format: recipe.container,
        recipe: recipe.name.clone(),
        seed: file_seed,
        regions,
        transform,
        lineage: lineage.into_iter().collect(),
    };
    GeneratedFile { entry, bytes }
}

fn code_piece(bytes: Vec<u8>, source: String) -> Piece {
    Piece { bytes, label: RegionLabel::Instruction, source, transform: None, section: ".text", characteristics: pe::CODE }
}

fn native_piece<R: Rng + ?Sized>(src: NativeSource, rng: &mut R, len: usize) -> Piece {
    let (bytes, source, section) = match src {
        Strings => (sampler::sample_strings(rng, len), "strings", ".rdata"),
        Tables => (sampler::sample_tables(rng, len, pe::DEFAULT_IMAGE_BASE), "tables", ".data"),
        ZeroPad => (sampler::sample_zero_pad(rng, len), "zero_pad", ".bss"),
    };
    Piece {
        bytes,
        label: RegionLabel::NativeData,
        source: source.into(),
        transform: None,
        section,
        characteristics: pe::DATA,
    }
}

fn packed_piece<R: Rng + ?Sized>(
    src: PackedSource,
    role: Role,
    rng: &mut R,
    len: usize,
    lineage: &mut BTreeSet<String>,
) -> Piece {
    let random_source = |rng: &mut R, n: usize| {
        let s: u64 = rng.gen();
        (sampler::sample_random(&mut crate::seed::rng(s), n), format!("random:{s:016x}"))
    };
    let (input, mut source, spec) = match src {
        RandomBytes => {
            let (bytes, source) = random_source(rng, len);
            (bytes, source, None)
        }
        MonoSub | PolySub | Transposition => {
            let (bytes, sources) = fixture::slice_code(rng, role, len);
            for s in &sources {
                lineage.insert(fixture::lineage_id(s.split('_').next().unwrap()));
            }
            lineage.insert(sha256_hex(&bytes));
            let spec = match src {
                MonoSub => TransformSpec::random_mono_sub(rng),
                PolySub => TransformSpec::random_poly_sub(POLY_KEY_LEN, rng),
                _ => TransformSpec::random_transposition(TRANSPOSITION_BLOCK, rng),
            };
            (bytes, format!("fixture:{}", sources.join("+")), Some(spec))
        }
        Encoding => {
            // Base64 writes four symbols per three bytes, base32 eight per five.
            let (alphabet, n) =
                if rng.gen_bool(0.5) { (Alphabet::Base64, len * 3 / 4) } else { (Alphabet::Base32, len * 5 / 8) };
            let (bytes, source) = random_source(rng, n.max(1));
            (bytes, source, Some(TransformSpec::Encoding { alphabet }))
        }
        Padding => {
            let (bytes, source) = random_source(rng, (len / 3).max(1));
            let amount = padding_for_entropy(&bytes, 0xFF, 7.0).expect("positive target");
            let spec = TransformSpec::BytePadding { byte: 0xFF, amount, position: PadPosition::Append };
            (bytes, source, Some(spec))
        }
    };
    let bytes = match &spec {
        Some(spec) => {
            source = format!("{}({source})", spec.name());
            transform(&input, spec).expect("generated specs are valid").bytes
        }
        None => input,
    };
    Piece {
        bytes,
        label: RegionLabel::PackedData,
        source,
        transform: spec,
        section: ".data",
        characteristics: pe::DATA,
    }
}

/// The label covering most of `start..end`; ties go to the smaller class
/// index. `None` when no region overlaps the extent.
pub fn label_for_extent(regions: &[RegionRecord], start: usize, end: usize) -> Option<RegionLabel> {
    let mut overlap = [0usize; RegionLabel::COUNT];
    for r in regions {
        let lo = r.start.max(start);
        let hi = r.end.min(end);
        if hi > lo {
            overlap[r.label.index()] += hi - lo;
        }
    }
    let best = (0..RegionLabel::COUNT).rev().max_by_key(|&i| overlap[i])?;
    (overlap[best] > 0).then(|| RegionLabel::from_index(best).unwrap())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitViolation {
    /// The same file content appears under more than one role.
    DuplicateContent { sha256: String, paths: Vec<String> },
    /// A test file derives from something a training file contains or
    /// derives from.
    LineageLeak { test_path: String, train_path: String, lineage: String },
}

/// Check role-disjointness of a manifest. Returns every violation found;
/// an empty list means the split is clean.
pub fn split_check(manifest: &CorpusManifest) -> Vec<SplitViolation> {
    let mut violations = Vec::new();

    let mut by_hash: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        by_hash.entry(e.sha256.as_str()).or_default().push(e);
    }
    for (hash, entries) in &by_hash {
        let roles: BTreeSet<Role> = entries.iter().map(|e| e.role).collect();
        if roles.len() > 1 {
            violations.push(SplitViolation::DuplicateContent {
                sha256: hash.to_string(),
                paths: entries.iter().map(|e| e.path.clone()).collect(),
            });
        }
    }

    // Everything a training file is or derives from, first claimant wins.
    let mut train_ids: BTreeMap<&str, &str> = BTreeMap::new();
    for e in manifest.entries.iter().filter(|e| e.role.is_train()) {
        train_ids.entry(e.sha256.as_str()).or_insert(&e.path);
        for l in &e.lineage {
            train_ids.entry(l.as_str()).or_insert(&e.path);
        }
    }
    for e in manifest.by_role(Role::Test) {
        for l in &e.lineage {
            if let Some(train_path) = train_ids.get(l.as_str()) {
                violations.push(SplitViolation::LineageLeak {
                    test_path: e.path.clone(),
                    train_path: train_path.to_string(),
                    lineage: l.clone(),
                });
            }
        }
    }
    violations
}
