use serde::{Deserialize, Serialize};

use super::{extract_features, knn_classify, DetectError, KnnModel, ProgramClass, RegionVerdict};
use crate::label::RegionLabel;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON Schema for [`ScanReport`].
pub const REPORT_SCHEMA: &str = include_str!("../../schemas/scan_report.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub section: String,
    pub byte_start: usize,
    pub byte_end: usize,
    pub probs: [f64; 3],
    pub label: RegionLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramSummary {
    /// Absent when no program-level classifier was supplied.
    pub decision: Option<ProgramClass>,
    pub packed_fraction: f64,
    pub evidence: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub schema_version: u32,
    pub file: String,
    pub sha256: String,
    pub windows: Vec<WindowRecord>,
    pub program: ProgramSummary,
}

pub fn scan_report(
    file: &str,
    sha256: &str,
    verdicts: &[RegionVerdict],
    knn: Option<&KnnModel>,
) -> Result<ScanReport, DetectError> {
    let windows = verdicts
        .iter()
        .map(|v| WindowRecord {
            section: v.section.clone(),
            byte_start: v.byte_start,
            byte_end: v.byte_end,
            probs: v.probs,
            label: v.label,
        })
        .collect();
    let packed: Vec<&RegionVerdict> = verdicts.iter().filter(|v| v.label == RegionLabel::PackedData).collect();
    let packed_fraction = if verdicts.is_empty() { 0.0 } else { packed.len() as f64 / verdicts.len() as f64 };
    let mut evidence: Vec<(usize, usize)> = packed.iter().map(|v| (v.byte_start, v.byte_end)).collect();
    let decision = match knn {
        Some(knn) if !verdicts.is_empty() => {
            let verdict = knn_classify(knn, &extract_features(verdicts)?, verdicts)?;
            evidence = verdict.evidence;
            Some(verdict.decision)
        }
        _ => None,
    };
    Ok(ScanReport {
        schema_version: REPORT_SCHEMA_VERSION,
        file: file.into(),
        sha256: sha256.into(),
        windows,
        program: ProgramSummary { decision, packed_fraction, evidence },
    })
}
