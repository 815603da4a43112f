use serde::{Deserialize, Serialize};

use super::Token;
use crate::disasm::DecodedUnit;
use crate::label::RegionLabel;

/// Encoder input limit, `[SOS]` included.
pub const MAX_WINDOW_TOKENS: usize = 512;

/// Token range of one source unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: u32,
    /// Exclusive; `tokens[end - 1]` is `[EOS]`.
    pub end: u32,
    /// File offset of the unit.
    pub offset: usize,
    /// Byte length of the unit.
    pub len: u8,
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start as usize..self.end as usize
    }

    pub fn token_len(&self) -> usize {
        (self.end - self.start) as usize
    }
}

/// Normalized tokens of a unit sequence, without `[SOS]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub spans: Vec<Span>,
}

impl TokenStream {
    pub fn with_capacity(units: usize) -> Self {
        TokenStream { tokens: Vec::with_capacity(units * 4), spans: Vec::with_capacity(units) }
    }
}

/// One encoder input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenWindow {
    /// Starts with `[SOS]`; at most [`MAX_WINDOW_TOKENS`] long.
    pub tokens: Vec<Token>,
    /// Per instruction, tiling `1..tokens.len()`.
    pub spans: Vec<(u32, u32)>,
    /// File byte extent of the source units.
    pub byte_start: usize,
    pub byte_end: usize,
    pub label: Option<RegionLabel>,
}

impl TokenWindow {
    pub fn ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.id()).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Check the structural invariants, returning a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.first() != Some(&Token::SOS) {
            return Err("window does not start with [SOS]".into());
        }
        if self.tokens.len() > MAX_WINDOW_TOKENS {
            return Err(format!("window has {} tokens", self.tokens.len()));
        }
        let mut next = 1u32;
        for &(s, e) in &self.spans {
            if s != next || e <= s {
                return Err(format!("span ({s}, {e}) does not continue at {next}"));
            }
            if self.tokens[e as usize - 1] != Token::EOS {
                return Err(format!("span ({s}, {e}) does not end in [EOS]"));
            }
            if self.tokens[s as usize..e as usize - 1].contains(&Token::EOS) {
                return Err(format!("span ({s}, {e}) contains an inner [EOS]"));
            }
            next = e;
        }
        if next as usize != self.tokens.len() {
            return Err("spans do not cover the window".into());
        }
        Ok(())
    }
}

/// Greedy packing of whole instructions into windows of at most `max_len`
/// tokens. An instruction never straddles two windows; one that alone
/// exceeds `max_len - 1` tokens is cut short with a forced `[EOS]`.
pub fn windowize_tokens(stream: &TokenStream, max_len: usize) -> Vec<TokenWindow> {
    assert!(max_len >= 2, "a window needs room for [SOS] and one token");
    let mut windows = Vec::new();
    let mut current: Option<TokenWindow> = None;
    for span in &stream.spans {
        let mut toks = &stream.tokens[span.range()];
        if toks.len() > max_len - 1 {
            log::warn!("instruction at {:#x} has {} tokens; truncated", span.offset, toks.len());
            toks = &toks[..max_len - 1];
        }
        if current.as_ref().is_some_and(|w| w.tokens.len() + toks.len() > max_len) {
            windows.extend(current.take());
        }
        let w = current.get_or_insert_with(|| TokenWindow {
            tokens: vec![Token::SOS],
            spans: Vec::new(),
            byte_start: span.offset,
            byte_end: span.offset,
            label: None,
        });
        let start = w.tokens.len() as u32;
        w.tokens.extend_from_slice(toks);
        if let Some(last) = w.tokens.last_mut() {
            *last = Token::EOS;
        }
        w.spans.push((start, w.tokens.len() as u32));
        w.byte_end = span.offset + usize::from(span.len);
    }
    windows.extend(current);
    windows
}

/// How a sweep is cut into detection windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    /// Units per window.
    pub size: usize,
    /// Shortest tail window that is kept.
    pub floor: usize,
    /// Distance between window starts; `size` means no overlap.
    pub stride: usize,
}

impl Default for WindowPlan {
    fn default() -> Self {
        WindowPlan { size: 100, floor: 10, stride: 100 }
    }
}

/// A run of consecutive units to be classified together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstructionWindow {
    /// Indices into the unit slice.
    pub units: std::ops::Range<usize>,
    pub byte_start: usize,
    pub byte_end: usize,
}

impl InstructionWindow {
    pub fn unit_count(&self) -> usize {
        self.units.len()
    }
}

/// Cut units into groups of `plan.size`, dropping a final group shorter
/// than `plan.floor`.
pub fn windowize_instructions(units: &[DecodedUnit<'_>], plan: WindowPlan) -> Vec<InstructionWindow> {
    assert!(plan.size > 0 && plan.stride > 0, "window size and stride must be positive");
    let mut out = Vec::with_capacity(units.len() / plan.stride + 1);
    let mut start = 0;
    while start < units.len() {
        let end = (start + plan.size).min(units.len());
        if end - start < plan.floor.min(plan.size) {
            break;
        }
        let last = &units[end - 1];
        out.push(InstructionWindow {
            units: start..end,
            byte_start: units[start].offset,
            byte_end: last.offset + last.len(),
        });
        if end == units.len() {
            break;
        }
        start += plan.stride;
    }
    out
}
