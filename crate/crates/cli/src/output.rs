//! JSON payloads printed by the commands, their schemas, and the plain-text
//! table renderings.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use packsense::detect::{EvalSummary, Metrics, ScanReport};
use packsense::encoder::TrainLog;
use packsense::lowentropy::{EntropyProfile, EntropyVerdict, InverseMeta};

pub const SCHEMA_VERSION: u32 = 1;

pub const ENTROPY_SCHEMA: &str = include_str!("../schemas/entropy_report.schema.json");
pub const EVAL_SCHEMA: &str = include_str!("../schemas/eval_report.schema.json");
pub const TRAIN_SCHEMA: &str = include_str!("../schemas/train_summary.schema.json");
pub const ADVERSARIAL_SCHEMA: &str = include_str!("../schemas/adversarial_meta.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub schema_version: u32,
    pub file: String,
    pub sha256: String,
    pub profile: EntropyProfile,
    pub verdict: EntropyVerdict,
}

impl EntropyReport {
    pub fn new(file: &str, sha256: &str, profile: EntropyProfile, verdict: EntropyVerdict) -> Self {
        EntropyReport { schema_version: SCHEMA_VERSION, file: file.into(), sha256: sha256.into(), profile, verdict }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub stage: String,
    /// Encoder inputs the stage trained on.
    pub inputs: usize,
    pub log: TrainLog,
    pub checkpoint_sha256: String,
}

/// Written next to a transformed file; enough to undo the transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialMeta {
    pub schema_version: u32,
    pub input_sha256: String,
    pub output_sha256: String,
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub seed: u64,
    pub inverse: InverseMeta,
}

pub fn scan_table(r: &ScanReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}  {}", r.file, r.sha256);
    let _ = writeln!(s, "{:<10} {:>8} {:>8}  {:<12} {:>6} {:>6} {:>6}", "section", "start", "end", "label", "p_ins", "p_nat", "p_pck");
    for w in &r.windows {
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>8}  {:<12} {:>6.3} {:>6.3} {:>6.3}",
            w.section,
            w.byte_start,
            w.byte_end,
            w.label.as_str(),
            w.probs[0],
            w.probs[1],
            w.probs[2]
        );
    }
    let decision = r.program.decision.map_or("-".to_string(), |d| format!("{d:?}"));
    let _ = writeln!(s, "program: {decision}  packed fraction {:.3}", r.program.packed_fraction);
    s
}

pub fn entropy_table(r: &EntropyReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}  {}", r.file, r.sha256);
    let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8}", "extent", "start", "end", "entropy");
    for v in &r.profile.values {
        let name = if v.section.is_empty() { "(file)" } else { v.section.as_str() };
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8.4}", name, v.start, v.end, v.entropy);
    }
    let verdict = if r.verdict.packed { "packed" } else { "not packed" };
    let _ = writeln!(s, "verdict: {verdict} at threshold {}", r.verdict.threshold);
    s
}

pub fn eval_table(e: &EvalSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} files, {} labeled windows", e.files, e.windows);
    let _ = writeln!(s, "{:<24} {:>9} {:>9} {:>9} {:>9}", "task", "precision", "recall", "f1", "accuracy");
    let row = |s: &mut String, name: &str, m: &Metrics| {
        let _ = writeln!(s, "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", name, m.precision, m.recall, m.f1, m.accuracy);
    };
    row(&mut s, "instruction vs pseudo", &e.instruction_vs_pseudo);
    row(&mut s, "packed vs native data", &e.packed_vs_native);
    row(&mut s, "program", &e.program);
    let _ = writeln!(
        s,
        "low-entropy packed files: {}  model recall {:.4}  entropy recall {:.4}",
        e.lowentropy_files, e.lowentropy_model_recall, e.lowentropy_entropy_recall
    );
    s
}
