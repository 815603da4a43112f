//! A minimal PE32 writer.
//!
//! Produces images that load in the parser (and in real tools such as
//! `objdump`), with no imports, relocations or entry point semantics beyond
//! pointing at the first executable section.

pub const FILE_ALIGNMENT: u32 = 0x200;
pub const SECTION_ALIGNMENT: u32 = 0x1000;
pub const DEFAULT_IMAGE_BASE: u32 = 0x40_0000;

pub const IMAGE_SCN_CNT_CODE: u32 = 0x0000_0020;
pub const IMAGE_SCN_CNT_INITIALIZED_DATA: u32 = 0x0000_0040;
pub const IMAGE_SCN_CNT_UNINITIALIZED_DATA: u32 = 0x0000_0080;
pub const IMAGE_SCN_MEM_EXECUTE: u32 = 0x2000_0000;
pub const IMAGE_SCN_MEM_READ: u32 = 0x4000_0000;
pub const IMAGE_SCN_MEM_WRITE: u32 = 0x8000_0000;

pub const CODE: u32 = IMAGE_SCN_CNT_CODE | IMAGE_SCN_MEM_EXECUTE | IMAGE_SCN_MEM_READ;
pub const DATA: u32 = IMAGE_SCN_CNT_INITIALIZED_DATA | IMAGE_SCN_MEM_READ | IMAGE_SCN_MEM_WRITE;
pub const BSS: u32 = IMAGE_SCN_CNT_UNINITIALIZED_DATA | IMAGE_SCN_MEM_READ | IMAGE_SCN_MEM_WRITE;

const DOS_HEADER_LEN: u32 = 0x40;
const COFF_LEN: u32 = 20;
const OPTIONAL_HEADER_LEN: u32 = 0xE0;
const SECTION_HEADER_LEN: u32 = 40;

#[derive(Clone, Debug)]
pub struct SectionSpec {
    pub name: String,
    pub data: Vec<u8>,
    /// Defaults to the data length when zero-size data has no explicit size.
    pub virtual_size: u32,
    pub characteristics: u32,
}

impl SectionSpec {
    pub fn new(name: &str, data: Vec<u8>, characteristics: u32) -> Self {
        let virtual_size = data.len() as u32;
        SectionSpec { name: name.into(), data, virtual_size, characteristics }
    }
}

/// Where the writer placed each section.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlacedSection {
    pub name: String,
    pub file_offset: u32,
    pub file_size: u32,
    pub rva: u32,
    pub virtual_size: u32,
}

#[derive(Clone, Debug)]
pub struct PeFile {
    pub bytes: Vec<u8>,
    pub image_base: u32,
    pub sections: Vec<PlacedSection>,
}

fn align(v: u32, a: u32) -> u32 {
    v.div_ceil(a) * a
}

/// Lay out and serialize a PE32 image. Section data is stored unpadded in
/// the section table (`SizeOfRawData` equals the data length) so that every
/// file byte between sections is alignment filler, never section content.
pub fn write_pe32(sections: &[SectionSpec], image_base: u32) -> PeFile {
    let n = sections.len() as u32;
    let headers_len = DOS_HEADER_LEN + 4 + COFF_LEN + OPTIONAL_HEADER_LEN + n * SECTION_HEADER_LEN;
    let size_of_headers = align(headers_len, FILE_ALIGNMENT);

    let mut placed = Vec::with_capacity(sections.len());
    let mut file_pos = size_of_headers;
    let mut rva = SECTION_ALIGNMENT;
    for s in sections {
        let file_size = s.data.len() as u32;
        let file_offset = if file_size == 0 { 0 } else { file_pos };
        let virtual_size = s.virtual_size.max(file_size);
        placed.push(PlacedSection { name: s.name.clone(), file_offset, file_size, rva, virtual_size });
        file_pos += align(file_size, FILE_ALIGNMENT);
        rva += align(virtual_size.max(1), SECTION_ALIGNMENT);
    }
    let size_of_image = rva;

    let mut out = vec![0u8; file_pos as usize];
    let put16 = |out: &mut Vec<u8>, at: u32, v: u16| out[at as usize..at as usize + 2].copy_from_slice(&v.to_le_bytes());
    let put32 = |out: &mut Vec<u8>, at: u32, v: u32| out[at as usize..at as usize + 4].copy_from_slice(&v.to_le_bytes());

    out[0..2].copy_from_slice(b"MZ");
    put32(&mut out, 0x3c, DOS_HEADER_LEN);
    out[DOS_HEADER_LEN as usize..DOS_HEADER_LEN as usize + 4].copy_from_slice(b"PE\0\0");

    let coff = DOS_HEADER_LEN + 4;
    put16(&mut out, coff, 0x14c); // i386
    put16(&mut out, coff + 2, n as u16);
    put16(&mut out, coff + 16, OPTIONAL_HEADER_LEN as u16);
    put16(&mut out, coff + 18, 0x0102); // executable, 32-bit machine

    let opt = coff + COFF_LEN;
    let code_bytes: u32 = placed
        .iter()
        .zip(sections)
        .filter(|(_, s)| s.characteristics & IMAGE_SCN_CNT_CODE != 0)
        .map(|(p, _)| align(p.file_size, FILE_ALIGNMENT))
        .sum();
    let entry = placed
        .iter()
        .zip(sections)
        .find(|(_, s)| s.characteristics & IMAGE_SCN_MEM_EXECUTE != 0)
        .map_or(0, |(p, _)| p.rva);
    put16(&mut out, opt, 0x10b);
    out[opt as usize + 2] = 14; // linker version
    put32(&mut out, opt + 4, code_bytes);
    put32(&mut out, opt + 16, entry);
    put32(&mut out, opt + 28, image_base);
    put32(&mut out, opt + 32, SECTION_ALIGNMENT);
    put32(&mut out, opt + 36, FILE_ALIGNMENT);
    put16(&mut out, opt + 40, 6); // OS version
    put16(&mut out, opt + 48, 6); // subsystem version
    put32(&mut out, opt + 56, size_of_image);
    put32(&mut out, opt + 60, size_of_headers);
    put16(&mut out, opt + 68, 3); // console
    put32(&mut out, opt + 72, 0x10_0000);
    put32(&mut out, opt + 76, 0x1000);
    put32(&mut out, opt + 80, 0x10_0000);
    put32(&mut out, opt + 84, 0x1000);
    put32(&mut out, opt + 92, 16); // data directories

    let table = opt + OPTIONAL_HEADER_LEN;
    for (i, (p, s)) in placed.iter().zip(sections).enumerate() {
        let h = table + i as u32 * SECTION_HEADER_LEN;
        let name = s.name.as_bytes();
        let len = name.len().min(8);
        out[h as usize..h as usize + len].copy_from_slice(&name[..len]);
        put32(&mut out, h + 8, p.virtual_size);
        put32(&mut out, h + 12, p.rva);
        put32(&mut out, h + 16, p.file_size);
        put32(&mut out, h + 20, p.file_offset);
        put32(&mut out, h + 36, s.characteristics);
        let at = p.file_offset as usize;
        out[at..at + s.data.len()].copy_from_slice(&s.data);
    }

    PeFile { bytes: out, image_base, sections: placed }
}
