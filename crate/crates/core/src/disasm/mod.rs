//! Linear-sweep disassembly.
//!
//! Every byte of every section is decoded front to back. Bytes that do not
//! start a supported instruction become one-byte [`UnitKind::RawByte`] units,
//! so a sweep always tiles its input exactly. Packed data comes out of the
//! sweep as a stream of syntactically plausible but meaningless "pseudo
//! instructions", which is exactly what the downstream classifier looks at.

mod decoder;
pub mod mnemonic;
pub mod register;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::binimage::{BinaryImage, Section};

pub use decoder::{decode_at, MAX_INSTRUCTION_LEN};
pub use mnemonic::Mnemonic;
pub use register::Register;

/// Decoding bitness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    X86_32,
    X86_64,
}

/// Legacy instruction prefixes that surface as tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Prefix {
    Lock,
    Repne,
    Rep,
    Es,
    Cs,
    Ss,
    Ds,
    Fs,
    Gs,
    OperandSize,
    AddressSize,
}

impl Prefix {
    pub const ALL: [Prefix; 11] = [
        Prefix::Lock,
        Prefix::Repne,
        Prefix::Rep,
        Prefix::Es,
        Prefix::Cs,
        Prefix::Ss,
        Prefix::Ds,
        Prefix::Fs,
        Prefix::Gs,
        Prefix::OperandSize,
        Prefix::AddressSize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Prefix::Lock => "lock",
            Prefix::Repne => "repne",
            Prefix::Rep => "rep",
            Prefix::Es => "es:",
            Prefix::Cs => "cs:",
            Prefix::Ss => "ss:",
            Prefix::Ds => "ds:",
            Prefix::Fs => "fs:",
            Prefix::Gs => "gs:",
            Prefix::OperandSize => "data16",
            Prefix::AddressSize => "addr_size",
        }
    }
}

/// `[base + index*scale + displacement]`.
///
/// `displacement` is `None` when the encoding carries no displacement bytes.
/// A base of [`Register::Rip`]/[`Register::Eip`] marks a RIP-relative operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryRef {
    pub base: Option<Register>,
    pub index: Option<Register>,
    pub scale: u8,
    pub displacement: Option<i64>,
}

impl MemoryRef {
    /// True when the effective address is a constant (no base or index).
    pub fn is_absolute(&self) -> bool {
        self.base.is_none() && self.index.is_none()
    }

    pub fn is_ip_relative(&self) -> bool {
        matches!(self.base, Some(Register::Rip | Register::Eip))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchTarget {
    /// Displacement from the end of the instruction.
    Relative(i64),
    /// Far pointer offset.
    Absolute(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operand {
    Register(Register),
    Immediate(i64),
    Memory(MemoryRef),
    Branch(BranchTarget),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnitKind {
    Instruction,
    RawByte,
}

/// One linear-sweep result: an instruction or a single undecodable byte.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedUnit<'a> {
    /// File offset of the first byte.
    pub offset: usize,
    pub address: u64,
    pub mode: Mode,
    pub kind: UnitKind,
    pub prefixes: ArrayVec<Prefix, MAX_INSTRUCTION_LEN>,
    /// `None` exactly for raw bytes.
    pub mnemonic: Option<Mnemonic>,
    pub operands: ArrayVec<Operand, 4>,
    pub raw: &'a [u8],
}

impl<'a> DecodedUnit<'a> {
    pub(crate) fn raw_byte(bytes: &'a [u8], offset: usize, address: u64, mode: Mode) -> Self {
        DecodedUnit {
            offset,
            address,
            mode,
            kind: UnitKind::RawByte,
            prefixes: ArrayVec::new(),
            mnemonic: None,
            operands: ArrayVec::new(),
            raw: &bytes[offset..offset + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Address of the following instruction.
    pub fn next_address(&self) -> u64 {
        self.address.wrapping_add(self.raw.len() as u64)
    }

    /// Truncate an address to the width of the decoding mode.
    pub fn wrap_address(&self, addr: u64) -> u64 {
        match self.mode {
            Mode::X86_32 => addr & 0xFFFF_FFFF,
            Mode::X86_64 => addr,
        }
    }

    /// Resolved absolute target of a branch operand.
    pub fn branch_target(&self, target: BranchTarget) -> u64 {
        match target {
            BranchTarget::Relative(rel) => self.wrap_address(self.next_address().wrapping_add(rel as u64)),
            BranchTarget::Absolute(addr) => addr,
        }
    }

    /// Effective address of a memory operand that does not depend on a
    /// general-purpose register: absolute or instruction-pointer relative.
    pub fn static_address(&self, m: &MemoryRef) -> Option<u64> {
        let disp = m.displacement.unwrap_or(0) as u64;
        if m.is_absolute() {
            Some(self.wrap_address(disp))
        } else if m.is_ip_relative() && m.index.is_none() {
            Some(self.wrap_address(self.next_address().wrapping_add(disp)))
        } else {
            None
        }
    }
}

impl std::fmt::Display for DecodedUnit<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let Some(mnemonic) = self.mnemonic else {
            return write!(f, "db 0x{:02x}", self.raw[0]);
        };
        for p in &self.prefixes {
            write!(f, "{} ", p.as_str())?;
        }
        write!(f, "{mnemonic}")?;
        for (i, op) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            match *op {
                Operand::Register(r) => write!(f, "{r}")?,
                Operand::Immediate(v) => write!(f, "{v:#x}")?,
                Operand::Branch(t) => write!(f, "{:#x}", self.branch_target(t))?,
                Operand::Memory(m) => {
                    f.write_str("[")?;
                    let mut first = true;
                    if let Some(b) = m.base {
                        write!(f, "{b}")?;
                        first = false;
                    }
                    if let Some(i) = m.index {
                        write!(f, "{}{i}*{}", if first { "" } else { "+" }, m.scale)?;
                        first = false;
                    }
                    match m.displacement {
                        Some(d) if first => write!(f, "{d:#x}")?,
                        Some(d) if d < 0 => write!(f, "-{:#x}", d.unsigned_abs())?,
                        Some(d) => write!(f, "+{d:#x}")?,
                        None => {}
                    }
                    f.write_str("]")?;
                }
            }
        }
        Ok(())
    }
}

/// Decode one unit at `offset` in `bytes`; the virtual address equals the offset.
///
/// Never fails: anything the subset cannot decode consumes exactly one byte
/// as a raw unit.
pub fn decode_one(bytes: &[u8], offset: usize, mode: Mode) -> DecodedUnit<'_> {
    decode_at(bytes, offset, offset as u64, mode)
}

/// Sweep a byte buffer front to back.
///
/// `file_offset` and `address` locate `bytes[0]`; units report positions in
/// those coordinates.
pub fn sweep_bytes(bytes: &[u8], file_offset: usize, address: u64, mode: Mode) -> Vec<DecodedUnit<'_>> {
    let mut units = Vec::with_capacity(bytes.len() / 3 + 1);
    let mut pos = 0;
    while pos < bytes.len() {
        let mut unit = decode_at(bytes, pos, address.wrapping_add(pos as u64), mode);
        pos += unit.len();
        unit.offset += file_offset;
        units.push(unit);
    }
    units
}

/// Sweep one section, or every section of the image in file order.
///
/// Decoding restarts at each section start, so no unit crosses a section
/// boundary. Header bytes are never part of a section and are never swept.
pub fn linear_sweep<'a>(image: &'a BinaryImage, region: Option<&Section>) -> Vec<DecodedUnit<'a>> {
    match region {
        Some(section) => sweep_section(image, section),
        None => image
            .sections()
            .iter()
            .flat_map(|s| sweep_section(image, s))
            .collect(),
    }
}

pub(crate) fn sweep_section<'a>(image: &'a BinaryImage, section: &Section) -> Vec<DecodedUnit<'a>> {
    sweep_bytes(
        image.section_bytes(section),
        section.file_offset,
        section.virtual_address,
        image.mode(),
    )
}
