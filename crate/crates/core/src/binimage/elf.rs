use super::{malformed, Format, ImageError, Parsed, Reader, Section};
use crate::disasm::Mode;

const ELFCLASS64: u8 = 2;
const ELFDATA2LSB: u8 = 1;
const SHT_NOBITS: u32 = 8;
const SHF_ALLOC: u64 = 0x2;
const PT_LOAD: u32 = 1;

/// Offsets that differ between ELF32 and ELF64.
struct Layout {
    phoff: usize,
    shoff: usize,
    phentsize: usize,
    phnum: usize,
    shentsize: usize,
    shnum: usize,
    shstrndx: usize,
}

const ELF32: Layout = Layout { phoff: 28, shoff: 32, phentsize: 42, phnum: 44, shentsize: 46, shnum: 48, shstrndx: 50 };
const ELF64: Layout = Layout { phoff: 32, shoff: 40, phentsize: 54, phnum: 56, shentsize: 58, shnum: 60, shstrndx: 62 };

struct RawSection {
    name: u32,
    kind: u32,
    flags: u64,
    addr: u64,
    offset: u64,
    size: u64,
}

pub(super) fn parse(buf: &[u8]) -> Result<Option<Parsed>, ImageError> {
    if buf.get(..4) != Some(b"\x7fELF") {
        return Ok(None);
    }
    let r = Reader(buf);
    let wide = r.u8(4).ok_or_else(|| malformed("truncated ident"))? == ELFCLASS64;
    if r.u8(5) != Some(ELFDATA2LSB) {
        // Big-endian ELF is never x86.
        return Ok(None);
    }
    let l = if wide { &ELF64 } else { &ELF32 };
    let word = |at: usize| if wide { r.u64(at) } else { r.u32(at).map(u64::from) };
    let trunc = || malformed("truncated ELF header");

    let phoff = word(l.phoff).ok_or_else(trunc)? as usize;
    let shoff = word(l.shoff).ok_or_else(trunc)? as usize;
    let phentsize = usize::from(r.u16(l.phentsize).ok_or_else(trunc)?);
    let phnum = usize::from(r.u16(l.phnum).ok_or_else(trunc)?);
    let shentsize = usize::from(r.u16(l.shentsize).ok_or_else(trunc)?);
    let shnum = usize::from(r.u16(l.shnum).ok_or_else(trunc)?);
    let shstrndx = usize::from(r.u16(l.shstrndx).ok_or_else(trunc)?);

    let mut loads = Vec::new();
    if phnum > 0 {
        if phoff.saturating_add(phnum.saturating_mul(phentsize)) > buf.len() {
            return Err(malformed("program header table extends past end of file"));
        }
        for i in 0..phnum {
            let h = phoff + i * phentsize;
            if r.u32(h) != Some(PT_LOAD) {
                continue;
            }
            let seg = if wide {
                (r.u64(h + 8), r.u64(h + 16), r.u64(h + 32), r.u64(h + 40))
            } else {
                let f = |at| r.u32(at).map(u64::from);
                (f(h + 4), f(h + 8), f(h + 16), f(h + 20))
            };
            let (Some(offset), Some(vaddr), Some(filesz), Some(memsz)) = seg else {
                return Err(malformed("truncated program header"));
            };
            loads.push((offset, vaddr, filesz, memsz));
        }
    }

    let mut raw = Vec::new();
    if shnum > 0 {
        if shoff.saturating_add(shnum.saturating_mul(shentsize)) > buf.len() {
            return Err(malformed("section table extends past end of file"));
        }
        for i in 0..shnum {
            let h = shoff + i * shentsize;
            let s = if wide {
                (r.u32(h), r.u32(h + 4), r.u64(h + 8), r.u64(h + 16), r.u64(h + 24), r.u64(h + 32))
            } else {
                let f = |at| r.u32(at).map(u64::from);
                (r.u32(h), r.u32(h + 4), f(h + 8), f(h + 12), f(h + 16), f(h + 20))
            };
            let (Some(name), Some(kind), Some(flags), Some(addr), Some(offset), Some(size)) = s else {
                return Err(malformed("truncated section header"));
            };
            raw.push(RawSection { name, kind, flags, addr, offset, size });
        }
    }

    let strtab = raw.get(shstrndx).map(|s| (s.offset as usize, s.size as usize));
    let name_of = |idx: u32| -> String {
        let Some((off, size)) = strtab else { return String::new() };
        let start = off.saturating_add(idx as usize);
        let end = off.saturating_add(size).min(buf.len());
        let bytes = buf.get(start..end).unwrap_or_default();
        let len = bytes.iter().position(|&b| b == 0).unwrap_or(bytes.len());
        String::from_utf8_lossy(&bytes[..len]).into_owned()
    };

    let mut sections: Vec<Section> = raw
        .iter()
        .filter(|s| s.flags & SHF_ALLOC != 0)
        .map(|s| {
            let nobits = s.kind == SHT_NOBITS;
            Section {
                name: name_of(s.name),
                file_offset: s.offset as usize,
                file_size: if nobits { 0 } else { s.size as usize },
                virtual_address: s.addr,
                virtual_size: s.size,
            }
        })
        .collect();

    // Section headers are optional in executables; fall back to segments.
    if sections.is_empty() {
        sections = loads
            .iter()
            .enumerate()
            .map(|(i, &(offset, vaddr, filesz, memsz))| Section {
                name: format!("load{i}"),
                file_offset: offset as usize,
                file_size: filesz as usize,
                virtual_address: vaddr,
                virtual_size: memsz,
            })
            .collect();
    }

    let image_base = loads
        .iter()
        .map(|l| l.1)
        .min()
        .or_else(|| sections.iter().map(|s| s.virtual_address).min())
        .unwrap_or(0);
    let mode = if wide { Mode::X86_64 } else { Mode::X86_32 };
    Ok(Some(Parsed { format: Format::Elf, image_base, mode, sections }))
}
