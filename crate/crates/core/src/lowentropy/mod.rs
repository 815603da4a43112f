//! Byte entropy, the threshold detectors built on it, and the transforms
//! that keep packed payloads under those thresholds.

mod transform;

pub use transform::{
    invert_transform, padding_for_entropy, transform, Alphabet, InverseMeta, PadPosition, TransformError,
    TransformSpec, Transformed,
};

use serde::{Deserialize, Serialize};

use crate::binimage::BinaryImage;

/// The conventional "packed" threshold.
pub const THRESHOLD_STANDARD: f64 = 7.0;
/// Lowered threshold that trades false positives for recall.
pub const THRESHOLD_LOW: f64 = 6.5;
/// Raised threshold for fewer false positives.
pub const THRESHOLD_HIGH: f64 = 7.4;
pub const DEFAULT_WINDOW: usize = 2048;
/// A trailing window shorter than this is not scored.
pub const TAIL_FLOOR: usize = 256;
/// Section rule: packed when more than this fraction of sections is hot.
pub const SECTION_FRACTION: f64 = 0.20;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EntropyError {
    #[error("entropy of an empty buffer is undefined")]
    EmptyInput,
}

/// Byte counts.
pub fn histogram(bytes: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &b in bytes {
        h[b as usize] += 1;
    }
    h
}

/// Shannon entropy in bits of a byte histogram with `total` samples.
pub fn histogram_entropy(h: &[u64; 256], total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    // Summing in count order makes the result depend only on the multiset
    // of counts, so byte relabelings give bit-identical entropy.
    let mut counts = *h;
    counts.sort_unstable();
    let mut e = 0.0;
    for c in counts {
        if c > 0 {
            let p = c as f64 / n;
            e -= p * p.log2();
        }
    }
    // Rounding can leave a hair below zero or above eight.
    e.clamp(0.0, 8.0)
}

/// Shannon entropy of `bytes` in bits per byte, in `[0, 8]`.
pub fn shannon_entropy(bytes: &[u8]) -> Result<f64, EntropyError> {
    if bytes.is_empty() {
        return Err(EntropyError::EmptyInput);
    }
    Ok(histogram_entropy(&histogram(bytes), bytes.len() as u64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    File,
    Section,
    Window,
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "file" => Ok(Granularity::File),
            "section" => Ok(Granularity::Section),
            "window" => Ok(Granularity::Window),
            _ => Err(format!("unknown granularity {s:?}")),
        }
    }
}

/// Entropy of one file extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtentEntropy {
    /// Section name; empty for the whole-file value.
    pub section: String,
    pub start: usize,
    pub end: usize,
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub granularity: Granularity,
    pub window_size: usize,
    pub values: Vec<ExtentEntropy>,
}

/// Entropy of the section bytes of `image` at one granularity.
///
/// `File` yields one value over all section bytes, `Section` one per
/// non-empty section, `Window` one per `window_size` chunk of each section
/// (a tail shorter than [`TAIL_FLOOR`] is dropped). Header bytes are not
/// scored.
pub fn entropy_profile(image: &BinaryImage, granularity: Granularity, window_size: usize) -> EntropyProfile {
    let window_size = window_size.max(1);
    let sections = image.sections().iter().filter(|s| s.file_size > 0);
    let mut values = Vec::new();
    match granularity {
        Granularity::File => {
            let mut h = [0u64; 256];
            let (mut total, mut start, mut end) = (0u64, usize::MAX, 0);
            for s in sections {
                for (acc, c) in h.iter_mut().zip(histogram(image.section_bytes(s))) {
                    *acc += c;
                }
                total += s.file_size as u64;
                start = start.min(s.file_offset);
                end = end.max(s.file_offset + s.file_size);
            }
            if total > 0 {
                values.push(ExtentEntropy { section: String::new(), start, end, entropy: histogram_entropy(&h, total) });
            }
        }
        Granularity::Section => {
            for s in sections {
                let entropy = shannon_entropy(image.section_bytes(s)).unwrap_or(0.0);
                values.push(ExtentEntropy {
                    section: s.name.clone(),
                    start: s.file_offset,
                    end: s.file_offset + s.file_size,
                    entropy,
                });
            }
        }
        Granularity::Window => {
            for s in sections {
                let bytes = image.section_bytes(s);
                for (i, chunk) in bytes.chunks(window_size).enumerate() {
                    if chunk.len() < window_size && chunk.len() < TAIL_FLOOR {
                        continue;
                    }
                    let start = s.file_offset + i * window_size;
                    values.push(ExtentEntropy {
                        section: s.name.clone(),
                        start,
                        end: start + chunk.len(),
                        entropy: shannon_entropy(chunk).unwrap_or(0.0),
                    });
                }
            }
        }
    }
    EntropyProfile { granularity, window_size, values }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyVerdict {
    pub packed: bool,
    pub threshold: f64,
    /// Extents at or above the threshold.
    pub evidence: Vec<ExtentEntropy>,
}

/// Threshold detector over a profile.
///
/// File and Window granularities flag a value at or above `threshold`. At
/// Section granularity, with `section_fraction` set the image is packed when
/// more than that fraction of sections is hot; without it, one hot section
/// suffices.
pub fn entropy_detect(profile: &EntropyProfile, threshold: f64, section_fraction: Option<f64>) -> EntropyVerdict {
    let evidence: Vec<ExtentEntropy> = profile.values.iter().filter(|v| v.entropy >= threshold).cloned().collect();
    let packed = match (profile.granularity, section_fraction) {
        (Granularity::Section, Some(f)) if !profile.values.is_empty() => {
            evidence.len() as f64 / profile.values.len() as f64 > f
        }
        _ => !evidence.is_empty(),
    };
    EntropyVerdict { packed, threshold, evidence }
}
