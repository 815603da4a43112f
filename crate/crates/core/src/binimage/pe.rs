use super::{malformed, Format, ImageError, Parsed, Reader, Section};
use crate::disasm::Mode;

const IMAGE_FILE_MACHINE_AMD64: u16 = 0x8664;
const PE32_MAGIC: u16 = 0x10b;
const PE32_PLUS_MAGIC: u16 = 0x20b;
const SECTION_HEADER_LEN: usize = 40;

/// `Ok(None)` when there is no PE signature at all.
pub(super) fn parse(buf: &[u8]) -> Result<Option<Parsed>, ImageError> {
    let r = Reader(buf);
    if buf.get(..2) != Some(b"MZ") {
        return Ok(None);
    }
    // A bare DOS executable has no PE header; treat it as headerless.
    let Some(pe) = r.u32(0x3c).map(|v| v as usize) else {
        return Ok(None);
    };
    if pe.checked_add(4).and_then(|end| buf.get(pe..end)) != Some(b"PE\0\0") {
        return Ok(None);
    }

    let coff = pe + 4;
    let machine = r.u16(coff).ok_or_else(|| malformed("truncated COFF header"))?;
    let nsections = r.u16(coff + 2).ok_or_else(|| malformed("truncated COFF header"))?;
    let opt_size = r.u16(coff + 16).ok_or_else(|| malformed("truncated COFF header"))?;
    let opt = coff + 20;
    let magic = r.u16(opt).ok_or_else(|| malformed("truncated optional header"))?;
    let (image_base, wide) = match magic {
        PE32_MAGIC => (r.u32(opt + 28).map(u64::from), false),
        PE32_PLUS_MAGIC => (r.u64(opt + 24), true),
        other => return Err(malformed(&format!("optional header magic {other:#x}"))),
    };
    let image_base = image_base.ok_or_else(|| malformed("truncated optional header"))?;

    let table = opt + usize::from(opt_size);
    let table_end = table + usize::from(nsections) * SECTION_HEADER_LEN;
    if table_end > buf.len() {
        return Err(malformed("section table extends past end of file"));
    }

    let sections = (0..usize::from(nsections))
        .map(|i| {
            let h = table + i * SECTION_HEADER_LEN;
            let raw_name: [u8; 8] = r.bytes(h).unwrap_or_default();
            let name_len = raw_name.iter().position(|&b| b == 0).unwrap_or(8);
            let virtual_size = r.u32(h + 8).unwrap_or(0);
            let rva = r.u32(h + 12).unwrap_or(0);
            let raw_size = r.u32(h + 16).unwrap_or(0);
            let raw_ptr = r.u32(h + 20).unwrap_or(0);
            Section {
                name: String::from_utf8_lossy(&raw_name[..name_len]).into_owned(),
                file_offset: raw_ptr as usize,
                file_size: raw_size as usize,
                virtual_address: image_base.wrapping_add(u64::from(rva)),
                virtual_size: u64::from(virtual_size),
            }
        })
        .collect();

    let mode = if wide || machine == IMAGE_FILE_MACHINE_AMD64 {
        Mode::X86_64
    } else {
        Mode::X86_32
    };
    Ok(Some(Parsed { format: Format::Pe, image_base, mode, sections }))
}
