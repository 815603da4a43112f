//! Executable containers: PE, ELF, or a headerless RAW dump.
//!
//! Only what the rest of the pipeline needs is parsed: section extents, the
//! image base and the bitness. Import tables, relocations and resources are
//! ignored on purpose; the classifier never looks at metadata.

mod elf;
mod pe;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::disasm::Mode;

/// Base assigned to headerless inputs.
pub const RAW_IMAGE_BASE: u64 = 0x40_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Format {
    Pe,
    Elf,
    Raw,
}

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("empty buffer")]
    EmptyBuffer,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A contiguous run of file bytes mapped at a virtual address.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub file_offset: usize,
    pub file_size: usize,
    /// Absolute virtual address (image base already applied).
    pub virtual_address: u64,
    pub virtual_size: u64,
}

impl Section {
    pub fn file_range(&self) -> std::ops::Range<usize> {
        self.file_offset..self.file_offset + self.file_size
    }

    pub fn virtual_end(&self) -> u64 {
        self.virtual_address
            .saturating_add(self.virtual_size.max(self.file_size as u64))
    }
}

/// Sorted, disjoint half-open virtual address intervals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressRange {
    intervals: Vec<(u64, u64)>,
}

impl AddressRange {
    /// Builds a range from arbitrary intervals, merging overlaps and dropping
    /// empty ones.
    pub fn from_intervals(mut raw: Vec<(u64, u64)>) -> Self {
        raw.retain(|&(lo, hi)| lo < hi);
        raw.sort_unstable();
        let mut intervals: Vec<(u64, u64)> = Vec::with_capacity(raw.len());
        for (lo, hi) in raw {
            match intervals.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => intervals.push((lo, hi)),
            }
        }
        AddressRange { intervals }
    }

    pub fn intervals(&self) -> &[(u64, u64)] {
        &self.intervals
    }

    pub fn contains(&self, addr: u64) -> bool {
        let i = self.intervals.partition_point(|&(lo, _)| lo <= addr);
        i > 0 && addr < self.intervals[i - 1].1
    }

    /// Distance from the lowest to the highest valid address.
    pub fn span(&self) -> u64 {
        match (self.intervals.first(), self.intervals.last()) {
            (Some(first), Some(last)) => last.1 - first.0,
            _ => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// A parsed executable. Immutable after loading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    format: Format,
    image_base: u64,
    mode: Mode,
    sections: Vec<Section>,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn format(&self) -> Format {
        self.format
    }

    pub fn image_base(&self) -> u64 {
        self.image_base
    }

    /// Decoding mode implied by the header: 64-bit headers decode as x86-64,
    /// everything else (including RAW) as x86-32.
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn total_size(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Sections in header order. File ranges never overlap.
    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section_bytes(&self, section: &Section) -> &[u8] {
        &self.data[section.file_range()]
    }

    /// The addresses operands may legitimately point at.
    ///
    /// One interval from the image base to the furthest section end, or the
    /// whole buffer for RAW images.
    pub fn valid_memory_range(&self) -> AddressRange {
        if self.format == Format::Raw {
            return AddressRange::from_intervals(vec![(
                self.image_base,
                self.image_base + self.data.len() as u64,
            )]);
        }
        let Some(end) = self.sections.iter().map(Section::virtual_end).max() else {
            return AddressRange::default();
        };
        let lo = self
            .sections
            .iter()
            .map(|s| s.virtual_address)
            .min()
            .unwrap_or(self.image_base)
            .min(self.image_base);
        AddressRange::from_intervals(vec![(lo, end)])
    }

    /// Wrap a buffer as a single-section RAW image at [`RAW_IMAGE_BASE`].
    pub fn raw(data: Vec<u8>) -> Self {
        let section = Section {
            name: ".raw".into(),
            file_offset: 0,
            file_size: data.len(),
            virtual_address: RAW_IMAGE_BASE,
            virtual_size: data.len() as u64,
        };
        BinaryImage {
            format: Format::Raw,
            image_base: RAW_IMAGE_BASE,
            mode: Mode::X86_32,
            sections: vec![section],
            data,
        }
    }

    pub(crate) fn from_parts(
        format: Format,
        image_base: u64,
        mode: Mode,
        sections: Vec<Section>,
        data: Vec<u8>,
    ) -> Self {
        let sections = clamp_sections(sections, data.len());
        BinaryImage { format, image_base, mode, sections, data }
    }
}

/// Parse `buffer`, detecting the container unless `hint` forces one.
///
/// Inputs without a recognizable header load as RAW. A recognized header
/// whose section table runs off the end of the buffer is an error.
pub fn load_image(buffer: Vec<u8>, hint: Option<Format>) -> Result<BinaryImage, ImageError> {
    if buffer.is_empty() {
        return Err(ImageError::EmptyBuffer);
    }
    match hint {
        Some(Format::Raw) => Ok(BinaryImage::raw(buffer)),
        Some(Format::Pe) => match pe::parse(&buffer)? {
            Some(h) => Ok(h.into_image(buffer)),
            None => Err(ImageError::MalformedHeader("no PE signature".into())),
        },
        Some(Format::Elf) => match elf::parse(&buffer)? {
            Some(h) => Ok(h.into_image(buffer)),
            None => Err(ImageError::MalformedHeader("no ELF header".into())),
        },
        None => {
            if let Some(h) = pe::parse(&buffer)? {
                return Ok(h.into_image(buffer));
            }
            if let Some(h) = elf::parse(&buffer)? {
                return Ok(h.into_image(buffer));
            }
            Ok(BinaryImage::raw(buffer))
        }
    }
}

pub fn load_path(path: impl AsRef<Path>, hint: Option<Format>) -> Result<BinaryImage, ImageError> {
    load_image(std::fs::read(path)?, hint)
}

/// Header fields common to both parsers.
struct Parsed {
    format: Format,
    image_base: u64,
    mode: Mode,
    sections: Vec<Section>,
}

impl Parsed {
    fn into_image(self, data: Vec<u8>) -> BinaryImage {
        BinaryImage::from_parts(self.format, self.image_base, self.mode, self.sections, data)
    }
}

/// Clamp file ranges to the buffer and trim overlaps so that every byte
/// belongs to at most one section. Earlier file offsets win.
fn clamp_sections(mut sections: Vec<Section>, len: usize) -> Vec<Section> {
    for s in &mut sections {
        s.file_offset = s.file_offset.min(len);
        s.file_size = s.file_size.min(len - s.file_offset);
    }
    let mut order: Vec<usize> = (0..sections.len()).collect();
    order.sort_by_key(|&i| (sections[i].file_offset, i));
    let mut covered = 0usize;
    for i in order {
        let s = &mut sections[i];
        if s.file_size == 0 {
            continue;
        }
        let end = s.file_offset + s.file_size;
        if s.file_offset < covered {
            let start = covered.min(end);
            s.file_size = end - start;
            s.file_offset = start;
        }
        covered = covered.max(end);
    }
    sections
}

/// Little-endian field reads that report truncation instead of panicking.
struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> Option<[u8; N]> {
        self.0.get(at..at.checked_add(N)?)?.try_into().ok()
    }

    fn u8(&self, at: usize) -> Option<u8> {
        self.0.get(at).copied()
    }

    fn u16(&self, at: usize) -> Option<u16> {
        self.bytes(at).map(u16::from_le_bytes)
    }

    fn u32(&self, at: usize) -> Option<u32> {
        self.bytes(at).map(u32::from_le_bytes)
    }

    fn u64(&self, at: usize) -> Option<u64> {
        self.bytes(at).map(u64::from_le_bytes)
    }
}

fn malformed(what: &str) -> ImageError {
    ImageError::MalformedHeader(what.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_fallback() {
        let img = load_image(vec![0x41; 16], None).unwrap();
        assert_eq!(img.format(), Format::Raw);
        assert_eq!(img.image_base(), 0x400000);
        assert_eq!(img.sections().len(), 1);
        assert_eq!(img.section_bytes(&img.sections()[0]).len(), 16);
        assert_eq!(img.mode(), Mode::X86_32);
    }

    #[test]
    fn raw_range() {
        let img = BinaryImage::raw(vec![0; 0x1000]);
        let r = img.valid_memory_range();
        assert_eq!(r.intervals(), &[(0x400000, 0x401000)]);
        assert!(r.contains(0x400000));
        assert!(!r.contains(0x401000));
        assert!(!r.contains(0x400000u64.wrapping_sub(0x6281719)));
    }

    #[test]
    fn empty_buffer() {
        assert!(matches!(load_image(Vec::new(), None), Err(ImageError::EmptyBuffer)));
    }

    #[test]
    fn range_merges() {
        let r = AddressRange::from_intervals(vec![(10, 20), (5, 12), (30, 40), (40, 41), (7, 7)]);
        assert_eq!(r.intervals(), &[(5, 20), (30, 41)]);
        assert!(r.contains(19) && !r.contains(20) && r.contains(40));
        assert_eq!(r.span(), 36);
    }

    #[test]
    fn overlap_trimming() {
        let mk = |off, size| Section {
            name: String::new(),
            file_offset: off,
            file_size: size,
            virtual_address: 0,
            virtual_size: 0,
        };
        let out = clamp_sections(vec![mk(0x200, 0x200), mk(0x100, 0x200), mk(0x380, 0x1000)], 0x500);
        assert_eq!(out[1].file_range(), 0x100..0x300);
        assert_eq!(out[0].file_range(), 0x300..0x400);
        assert_eq!(out[2].file_range(), 0x400..0x500);
    }
}
