//! Table-free x86 decoder for the supported subset.
//!
//! Every decode path returns `None` on an unsupported or truncated encoding;
//! the caller turns that into a one-byte [`UnitKind::RawByte`].

use arrayvec::ArrayVec;

use super::mnemonic::{self as mn, Mnemonic};
use super::register::Register;
use super::{BranchTarget, DecodedUnit, MemoryRef, Mode, Operand, Prefix, UnitKind};

/// Architectural limit on instruction length.
pub const MAX_INSTRUCTION_LEN: usize = 15;

#[derive(Clone, Copy)]
struct ModRm {
    md: u8,
    reg: u8,
    rm: u8,
}

#[derive(Clone, Copy)]
enum RegKind {
    Gpr(u16),
    Segment,
    Control,
    Debug,
    Mmx,
    Xmm,
    Ymm,
    Zmm,
}

struct Decoder<'a> {
    bytes: &'a [u8],
    start: usize,
    pos: usize,
    mode: Mode,
    prefixes: ArrayVec<Prefix, MAX_INSTRUCTION_LEN>,
    rex: u8,
    opsize16: bool,
    addr_override: bool,
    lock: bool,
    /// Last of F2/F3, which selects the mandatory-prefix form.
    rep: Option<Prefix>,
    mnemonic: Mnemonic,
    operands: ArrayVec<Operand, 4>,
}

/// Decode a single unit at `offset`, giving it virtual address `address`.
pub fn decode_at(bytes: &[u8], offset: usize, address: u64, mode: Mode) -> DecodedUnit<'_> {
    assert!(offset < bytes.len(), "decode offset past end of buffer");
    let mut d = Decoder {
        bytes,
        start: offset,
        pos: offset,
        mode,
        prefixes: ArrayVec::new(),
        rex: 0,
        opsize16: false,
        addr_override: false,
        lock: false,
        rep: None,
        mnemonic: Mnemonic::Nop,
        operands: ArrayVec::new(),
    };
    match d.decode() {
        Some(()) => DecodedUnit {
            offset,
            address,
            mode,
            kind: UnitKind::Instruction,
            prefixes: d.prefixes,
            mnemonic: Some(d.mnemonic),
            operands: d.operands,
            raw: &bytes[offset..d.pos],
        },
        None => DecodedUnit::raw_byte(bytes, offset, address, mode),
    }
}

impl<'a> Decoder<'a> {
    fn is64(&self) -> bool {
        self.mode == Mode::X86_64
    }

    fn byte(&mut self) -> Option<u8> {
        if self.pos >= self.bytes.len() || self.pos - self.start >= MAX_INSTRUCTION_LEN {
            return None;
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        if self.pos - self.start >= MAX_INSTRUCTION_LEN {
            return None;
        }
        self.bytes.get(self.pos).copied()
    }

    fn le(&mut self, n: usize) -> Option<u64> {
        let mut v = 0u64;
        for i in 0..n {
            v |= u64::from(self.byte()?) << (8 * i);
        }
        Some(v)
    }

    fn signed(&mut self, n: usize) -> Option<i64> {
        let v = self.le(n)?;
        let shift = 64 - 8 * n as u32;
        Some(((v << shift) as i64) >> shift)
    }

    fn rex_w(&self) -> bool {
        self.rex & 8 != 0
    }
    fn rex_r(&self) -> u8 {
        (self.rex >> 2) & 1
    }
    fn rex_x(&self) -> u8 {
        (self.rex >> 1) & 1
    }
    fn rex_b(&self) -> u8 {
        self.rex & 1
    }

    fn osize(&self) -> u16 {
        if self.rex_w() {
            64
        } else if self.opsize16 {
            16
        } else {
            32
        }
    }

    /// Operand size for instructions that default to 64 bits in long mode.
    fn osize_d64(&self) -> u16 {
        if self.is64() {
            if self.opsize16 && !self.rex_w() {
                16
            } else {
                64
            }
        } else {
            self.osize()
        }
    }

    fn asize(&self) -> u16 {
        match (self.is64(), self.addr_override) {
            (true, false) => 64,
            (true, true) | (false, false) => 32,
            (false, true) => 16,
        }
    }

    fn reg(&self, kind: RegKind, num: u8) -> Option<Register> {
        Some(match kind {
            RegKind::Gpr(w) => Register::gpr(w, num, self.rex != 0),
            RegKind::Segment if num < 6 => Register::Segment(num),
            RegKind::Segment => return None,
            RegKind::Control => Register::Control(num),
            RegKind::Debug => Register::Debug(num),
            RegKind::Mmx => Register::Mmx(num & 7),
            RegKind::Xmm => Register::Xmm(num),
            RegKind::Ymm => Register::Ymm(num),
            RegKind::Zmm => Register::Zmm(num),
        })
    }

    fn push(&mut self, op: Operand) {
        // at most four operands by construction of the opcode tables
        self.operands.push(op);
    }

    fn set(&mut self, m: Mnemonic) -> Option<()> {
        self.mnemonic = m;
        Some(())
    }

    fn modrm(&mut self) -> Option<ModRm> {
        let b = self.byte()?;
        Some(ModRm {
            md: b >> 6,
            reg: (b >> 3) & 7,
            rm: b & 7,
        })
    }

    fn reg_num(&self, m: ModRm) -> u8 {
        m.reg | (self.rex_r() << 3)
    }

    fn op_g(&mut self, m: ModRm, kind: RegKind) -> Option<()> {
        let r = self.reg(kind, self.reg_num(m))?;
        self.push(Operand::Register(r));
        Some(())
    }

    fn op_e(&mut self, m: ModRm, kind: RegKind) -> Option<()> {
        let op = if m.md == 3 {
            Operand::Register(self.reg(kind, m.rm | (self.rex_b() << 3))?)
        } else {
            Operand::Memory(self.memory(m)?)
        };
        self.push(op);
        Some(())
    }

    /// Memory-only operand (`M` in the opcode maps).
    fn op_m(&mut self, m: ModRm) -> Option<()> {
        if m.md == 3 {
            return None;
        }
        let mem = self.memory(m)?;
        self.push(Operand::Memory(mem));
        Some(())
    }

    fn op_fixed(&mut self, r: Register) -> Option<()> {
        self.push(Operand::Register(r));
        Some(())
    }

    fn op_imm(&mut self, n: usize) -> Option<()> {
        let v = self.signed(n)?;
        self.push(Operand::Immediate(v));
        Some(())
    }

    /// `Iz`: 16 or 32 bits, sign-extended for 64-bit operands.
    fn op_iz(&mut self, size: u16) -> Option<()> {
        self.op_imm(if size == 16 { 2 } else { 4 })
    }

    fn op_rel(&mut self, n: usize) -> Option<()> {
        let v = self.signed(n)?;
        self.push(Operand::Branch(BranchTarget::Relative(v)));
        Some(())
    }

    /// `Jz`: rel16 only with an operand-size prefix outside long mode.
    fn op_jz(&mut self) -> Option<()> {
        let n = if !self.is64() && self.opsize16 { 2 } else { 4 };
        self.op_rel(n)
    }

    /// Far pointer `Ap`: offset followed by a 16-bit selector.
    fn op_far(&mut self) -> Option<()> {
        let off = self.le(if self.opsize16 { 2 } else { 4 })?;
        self.le(2)?;
        self.push(Operand::Branch(BranchTarget::Absolute(off)));
        Some(())
    }

    fn memory(&mut self, m: ModRm) -> Option<MemoryRef> {
        if self.asize() == 16 {
            return self.memory16(m);
        }
        let w = self.asize();
        let gpr = |n: u8| Register::gpr(w, n, true);
        let mut mem = MemoryRef {
            base: None,
            index: None,
            scale: 1,
            displacement: None,
        };
        let mut disp_len = match m.md {
            1 => 1,
            2 => 4,
            _ => 0,
        };
        if m.rm == 4 {
            let sib = self.byte()?;
            let index = ((sib >> 3) & 7) | (self.rex_x() << 3);
            let base = sib & 7;
            mem.scale = 1 << (sib >> 6);
            if index != 4 {
                mem.index = Some(gpr(index));
            }
            if base == 5 && m.md == 0 {
                disp_len = 4;
            } else {
                mem.base = Some(gpr(base | (self.rex_b() << 3)));
            }
        } else if m.rm == 5 && m.md == 0 {
            disp_len = 4;
            if self.is64() {
                mem.base = Some(if w == 64 { Register::Rip } else { Register::Eip });
            }
        } else {
            mem.base = Some(gpr(m.rm | (self.rex_b() << 3)));
        }
        if disp_len > 0 {
            mem.displacement = Some(self.signed(disp_len)?);
        }
        Some(mem)
    }

    fn memory16(&mut self, m: ModRm) -> Option<MemoryRef> {
        const BX: u8 = 3;
        const BP: u8 = 5;
        const SI: u8 = 6;
        const DI: u8 = 7;
        let (base, index) = match m.rm {
            0 => (Some(BX), Some(SI)),
            1 => (Some(BX), Some(DI)),
            2 => (Some(BP), Some(SI)),
            3 => (Some(BP), Some(DI)),
            4 => (Some(SI), None),
            5 => (Some(DI), None),
            6 if m.md == 0 => (None, None),
            6 => (Some(BP), None),
            _ => (Some(BX), None),
        };
        let disp_len = match (m.md, m.rm) {
            (0, 6) => 2,
            (1, _) => 1,
            (2, _) => 2,
            _ => 0,
        };
        let displacement = if disp_len > 0 {
            Some(self.signed(disp_len)?)
        } else {
            None
        };
        Some(MemoryRef {
            base: base.map(Register::Gpr16),
            index: index.map(Register::Gpr16),
            scale: 1,
            displacement,
        })
    }

    fn decode(&mut self) -> Option<()> {
        loop {
            let b = self.peek()?;
            let legacy = match b {
                0xF0 => Some(Prefix::Lock),
                0xF2 => Some(Prefix::Repne),
                0xF3 => Some(Prefix::Rep),
                0x26 => Some(Prefix::Es),
                0x2E => Some(Prefix::Cs),
                0x36 => Some(Prefix::Ss),
                0x3E => Some(Prefix::Ds),
                0x64 => Some(Prefix::Fs),
                0x65 => Some(Prefix::Gs),
                0x66 => Some(Prefix::OperandSize),
                0x67 => Some(Prefix::AddressSize),
                0x40..=0x4F if self.is64() => {
                    self.pos += 1;
                    self.rex = b;
                    continue;
                }
                _ => None,
            };
            let Some(p) = legacy else { break };
            self.pos += 1;
            // a REX prefix only counts when it immediately precedes the opcode
            self.rex = 0;
            match p {
                Prefix::Lock => self.lock = true,
                Prefix::Repne | Prefix::Rep => self.rep = Some(p),
                Prefix::OperandSize => self.opsize16 = true,
                Prefix::AddressSize => self.addr_override = true,
                _ => {}
            }
            self.prefixes.push(p);
        }
        let op = self.byte()?;
        self.one_byte(op)
    }

    fn one_byte(&mut self, op: u8) -> Option<()> {
        let x64 = self.is64();
        match op {
            0x00..=0x3F if op & 7 < 6 => {
                self.mnemonic = mn::alu(op >> 3);
                self.alu_form(op & 7)
            }
            0x06 | 0x0E | 0x16 | 0x1E if !x64 => {
                self.op_fixed(Register::Segment(op >> 3))?;
                self.set(Mnemonic::Push)
            }
            0x07 | 0x17 | 0x1F if !x64 => {
                self.op_fixed(Register::Segment(op >> 3))?;
                self.set(Mnemonic::Pop)
            }
            0x0F => {
                let op2 = self.byte()?;
                self.two_byte(op2)
            }
            0x27 if !x64 => self.set(Mnemonic::Daa),
            0x2F if !x64 => self.set(Mnemonic::Das),
            0x37 if !x64 => self.set(Mnemonic::Aaa),
            0x3F if !x64 => self.set(Mnemonic::Aas),
            0x40..=0x4F => {
                // only reachable outside long mode, where these are not REX
                let r = Register::gpr(self.osize(), op & 7, false);
                self.op_fixed(r)?;
                self.set(if op < 0x48 { Mnemonic::Inc } else { Mnemonic::Dec })
            }
            0x50..=0x5F => {
                let r = Register::gpr(self.osize_d64(), (op & 7) | (self.rex_b() << 3), true);
                self.op_fixed(r)?;
                self.set(if op < 0x58 { Mnemonic::Push } else { Mnemonic::Pop })
            }
            0x60 if !x64 => self.set(Mnemonic::Pusha),
            0x61 if !x64 => self.set(Mnemonic::Popa),
            0x62 => {
                if x64 || self.peek()? >> 6 == 3 {
                    self.evex()
                } else {
                    let m = self.modrm()?;
                    self.op_g(m, RegKind::Gpr(self.osize()))?;
                    self.op_m(m)?;
                    self.set(Mnemonic::Bound)
                }
            }
            0x63 => {
                let m = self.modrm()?;
                if x64 {
                    self.op_g(m, RegKind::Gpr(self.osize()))?;
                    self.op_e(m, RegKind::Gpr(32))?;
                    self.set(Mnemonic::Movsxd)
                } else {
                    self.op_e(m, RegKind::Gpr(16))?;
                    self.op_g(m, RegKind::Gpr(16))?;
                    self.set(Mnemonic::Arpl)
                }
            }
            0x68 => {
                let s = self.osize_d64();
                self.op_iz(s)?;
                self.set(Mnemonic::Push)
            }
            0x6A => {
                self.op_imm(1)?;
                self.set(Mnemonic::Push)
            }
            0x69 | 0x6B => {
                let m = self.modrm()?;
                let s = self.osize();
                self.op_g(m, RegKind::Gpr(s))?;
                self.op_e(m, RegKind::Gpr(s))?;
                if op == 0x69 {
                    self.op_iz(s)?;
                } else {
                    self.op_imm(1)?;
                }
                self.set(Mnemonic::Imul)
            }
            0x6C => self.set(Mnemonic::Insb),
            0x6D => self.set(if self.opsize16 { Mnemonic::Insw } else { Mnemonic::Insd }),
            0x6E => self.set(Mnemonic::Outsb),
            0x6F => self.set(if self.opsize16 { Mnemonic::Outsw } else { Mnemonic::Outsd }),
            0x70..=0x7F => {
                self.op_rel(1)?;
                self.set(mn::jcc(op))
            }
            0x80 | 0x81 | 0x83 | 0x82 if !(x64 && op == 0x82) => {
                let m = self.modrm()?;
                let s = if op & 1 == 0 { 8 } else { self.osize() };
                self.op_e(m, RegKind::Gpr(s))?;
                if op == 0x81 {
                    self.op_iz(s)?;
                } else {
                    self.op_imm(1)?;
                }
                self.set(mn::alu(m.reg))
            }
            0x84..=0x8B => {
                let m = self.modrm()?;
                let s = if op & 1 == 0 { 8 } else { self.osize() };
                let k = RegKind::Gpr(s);
                if op >= 0x8A {
                    self.op_g(m, k)?;
                    self.op_e(m, k)?;
                } else {
                    self.op_e(m, k)?;
                    self.op_g(m, k)?;
                }
                self.set(match op {
                    0x84 | 0x85 => Mnemonic::Test,
                    0x86 | 0x87 => Mnemonic::Xchg,
                    _ => Mnemonic::Mov,
                })
            }
            0x8C => {
                let m = self.modrm()?;
                self.op_e(m, RegKind::Gpr(self.osize()))?;
                self.op_seg(m)?;
                self.set(Mnemonic::Mov)
            }
            0x8D => {
                let m = self.modrm()?;
                self.op_g(m, RegKind::Gpr(self.osize()))?;
                self.op_m(m)?;
                self.set(Mnemonic::Lea)
            }
            0x8E => {
                let m = self.modrm()?;
                if m.reg == 1 {
                    return None;
                }
                self.op_seg(m)?;
                self.op_e(m, RegKind::Gpr(16))?;
                self.set(Mnemonic::Mov)
            }
            0x8F => {
                let m = self.modrm()?;
                if m.reg != 0 {
                    return None;
                }
                self.op_e(m, RegKind::Gpr(self.osize_d64()))?;
                self.set(Mnemonic::Pop)
            }
            0x90 if self.rex_b() == 0 => {
                self.set(if self.rep == Some(Prefix::Rep) { Mnemonic::Pause } else { Mnemonic::Nop })
            }
            0x90..=0x97 => {
                let s = self.osize();
                self.op_fixed(Register::gpr(s, (op & 7) | (self.rex_b() << 3), true))?;
                self.op_fixed(Register::gpr(s, 0, true))?;
                self.set(Mnemonic::Xchg)
            }
            0x98 => self.set(match self.osize() {
                16 => Mnemonic::Cbw,
                32 => Mnemonic::Cwde,
                _ => Mnemonic::Cdqe,
            }),
            0x99 => self.set(match self.osize() {
                16 => Mnemonic::Cwd,
                32 => Mnemonic::Cdq,
                _ => Mnemonic::Cqo,
            }),
            0x9A if !x64 => {
                self.op_far()?;
                self.set(Mnemonic::CallFar)
            }
            0x9B => self.set(Mnemonic::Wait),
            0x9C => self.set(Mnemonic::Pushf),
            0x9D => self.set(Mnemonic::Popf),
            0x9E => self.set(Mnemonic::Sahf),
            0x9F => self.set(Mnemonic::Lahf),
            0xA0..=0xA3 => {
                let n = usize::from(self.asize() / 8);
                let addr = self.le(n)?;
                let mem = Operand::Memory(MemoryRef {
                    base: None,
                    index: None,
                    scale: 1,
                    displacement: Some(addr as i64),
                });
                let acc = Register::gpr(if op & 1 == 0 { 8 } else { self.osize() }, 0, true);
                if op < 0xA2 {
                    self.op_fixed(acc)?;
                    self.push(mem);
                } else {
                    self.push(mem);
                    self.op_fixed(acc)?;
                }
                self.set(Mnemonic::Mov)
            }
            0xA8 | 0xA9 => {
                let s = if op == 0xA8 { 8 } else { self.osize() };
                self.op_fixed(Register::gpr(s, 0, true))?;
                if op == 0xA8 {
                    self.op_imm(1)?;
                } else {
                    self.op_iz(s)?;
                }
                self.set(Mnemonic::Test)
            }
            0xA4..=0xAF => {
                let sized = |b: Mnemonic, w: Mnemonic, d: Mnemonic, q: Mnemonic, s: u16| match s {
                    16 => w,
                    32 => d,
                    64 => q,
                    _ => b,
                };
                let s = if op & 1 == 0 { 8 } else { self.osize() };
                self.set(match op & !1 {
                    0xA4 => sized(Mnemonic::Movsb, Mnemonic::Movsw, Mnemonic::Movsd, Mnemonic::Movsq, s),
                    0xA6 => sized(Mnemonic::Cmpsb, Mnemonic::Cmpsw, Mnemonic::Cmpsd, Mnemonic::Cmpsq, s),
                    0xAA => sized(Mnemonic::Stosb, Mnemonic::Stosw, Mnemonic::Stosd, Mnemonic::Stosq, s),
                    0xAC => sized(Mnemonic::Lodsb, Mnemonic::Lodsw, Mnemonic::Lodsd, Mnemonic::Lodsq, s),
                    _ => sized(Mnemonic::Scasb, Mnemonic::Scasw, Mnemonic::Scasd, Mnemonic::Scasq, s),
                })
            }
            0xB0..=0xB7 => {
                self.op_fixed(Register::gpr(8, (op & 7) | (self.rex_b() << 3), self.rex != 0))?;
                self.op_imm(1)?;
                self.set(Mnemonic::Mov)
            }
            0xB8..=0xBF => {
                let s = self.osize();
                self.op_fixed(Register::gpr(s, (op & 7) | (self.rex_b() << 3), true))?;
                self.op_imm(usize::from(s / 8))?;
                self.set(Mnemonic::Mov)
            }
            0xC0 | 0xC1 | 0xD0..=0xD3 => {
                let m = self.modrm()?;
                let s = if op & 1 == 0 { 8 } else { self.osize() };
                self.op_e(m, RegKind::Gpr(s))?;
                match op {
                    0xC0 | 0xC1 => self.op_imm(1)?,
                    0xD0 | 0xD1 => self.push(Operand::Immediate(1)),
                    _ => self.op_fixed(Register::Gpr8(1))?,
                }
                self.set(mn::shift(m.reg))
            }
            0xC2 => {
                self.op_imm(2)?;
                self.set(Mnemonic::Ret)
            }
            0xC3 => self.set(Mnemonic::Ret),
            0xC4 | 0xC5 => {
                if x64 || self.peek()? >> 6 == 3 {
                    self.vex(op == 0xC4)
                } else {
                    let m = self.modrm()?;
                    self.op_g(m, RegKind::Gpr(self.osize()))?;
                    self.op_m(m)?;
                    self.set(if op == 0xC4 { Mnemonic::Les } else { Mnemonic::Lds })
                }
            }
            0xC6 | 0xC7 => {
                let m = self.modrm()?;
                let s = if op == 0xC6 { 8 } else { self.osize() };
                match (m.reg, m.md, m.rm) {
                    (0, _, _) => {
                        self.op_e(m, RegKind::Gpr(s))?;
                        if op == 0xC6 {
                            self.op_imm(1)?;
                        } else {
                            self.op_iz(s)?;
                        }
                        self.set(Mnemonic::Mov)
                    }
                    (7, 3, 0) if op == 0xC6 => {
                        self.op_imm(1)?;
                        self.set(Mnemonic::Xabort)
                    }
                    (7, 3, 0) => {
                        self.op_rel(if self.opsize16 { 2 } else { 4 })?;
                        self.set(Mnemonic::Xbegin)
                    }
                    _ => None,
                }
            }
            0xC8 => {
                self.op_imm(2)?;
                self.op_imm(1)?;
                self.set(Mnemonic::Enter)
            }
            0xC9 => self.set(Mnemonic::Leave),
            0xCA => {
                self.op_imm(2)?;
                self.set(Mnemonic::Retf)
            }
            0xCB => self.set(Mnemonic::Retf),
            0xCC => self.set(Mnemonic::Int3),
            0xCD => {
                self.op_imm(1)?;
                self.set(Mnemonic::Int)
            }
            0xCE if !x64 => self.set(Mnemonic::Into),
            0xCF => self.set(Mnemonic::Iret),
            0xD4 | 0xD5 if !x64 => {
                self.op_imm(1)?;
                self.set(if op == 0xD4 { Mnemonic::Aam } else { Mnemonic::Aad })
            }
            0xD6 if !x64 => self.set(Mnemonic::Salc),
            0xD7 => self.set(Mnemonic::Xlat),
            0xD8..=0xDF => {
                let m = self.modrm()?;
                if m.md == 3 {
                    self.op_fixed(Register::St(m.rm))?;
                } else {
                    self.op_m(m)?;
                }
                self.set(Mnemonic::Fpu)
            }
            0xE0..=0xE2 => {
                self.op_rel(1)?;
                self.set([Mnemonic::Loopne, Mnemonic::Loope, Mnemonic::Loop][usize::from(op - 0xE0)])
            }
            0xE3 => {
                self.op_rel(1)?;
                self.set(match self.asize() {
                    16 => Mnemonic::Jcxz,
                    32 => Mnemonic::Jecxz,
                    _ => Mnemonic::Jrcxz,
                })
            }
            0xE4..=0xE7 | 0xEC..=0xEF => {
                let acc = Register::gpr(if op & 1 == 0 { 8 } else if self.opsize16 { 16 } else { 32 }, 0, true);
                let port_imm = op < 0xE8;
                let is_in = op & 2 == 0;
                if is_in {
                    self.op_fixed(acc)?;
                }
                if port_imm {
                    self.op_imm(1)?;
                } else {
                    self.op_fixed(Register::Gpr16(2))?;
                }
                if !is_in {
                    self.op_fixed(acc)?;
                }
                self.set(if is_in { Mnemonic::In } else { Mnemonic::Out })
            }
            0xE8 => {
                self.op_jz()?;
                self.set(Mnemonic::Call)
            }
            0xE9 => {
                self.op_jz()?;
                self.set(Mnemonic::Jmp)
            }
            0xEA if !x64 => {
                self.op_far()?;
                self.set(Mnemonic::JmpFar)
            }
            0xEB => {
                self.op_rel(1)?;
                self.set(Mnemonic::Jmp)
            }
            0xF1 => self.set(Mnemonic::Int1),
            0xF4 => self.set(Mnemonic::Hlt),
            0xF5 => self.set(Mnemonic::Cmc),
            0xF6 | 0xF7 => {
                let m = self.modrm()?;
                let s = if op == 0xF6 { 8 } else { self.osize() };
                self.op_e(m, RegKind::Gpr(s))?;
                if m.reg < 2 {
                    if op == 0xF6 {
                        self.op_imm(1)?;
                    } else {
                        self.op_iz(s)?;
                    }
                }
                self.set(match m.reg {
                    0 | 1 => Mnemonic::Test,
                    2 => Mnemonic::Not,
                    3 => Mnemonic::Neg,
                    4 => Mnemonic::Mul,
                    5 => Mnemonic::Imul,
                    6 => Mnemonic::Div,
                    _ => Mnemonic::Idiv,
                })
            }
            0xF8 => self.set(Mnemonic::Clc),
            0xF9 => self.set(Mnemonic::Stc),
            0xFA => self.set(Mnemonic::Cli),
            0xFB => self.set(Mnemonic::Sti),
            0xFC => self.set(Mnemonic::Cld),
            0xFD => self.set(Mnemonic::Std),
            0xFE => {
                let m = self.modrm()?;
                if m.reg > 1 {
                    return None;
                }
                self.op_e(m, RegKind::Gpr(8))?;
                self.set(if m.reg == 0 { Mnemonic::Inc } else { Mnemonic::Dec })
            }
            0xFF => {
                let m = self.modrm()?;
                match m.reg {
                    0 | 1 => {
                        self.op_e(m, RegKind::Gpr(self.osize()))?;
                        self.set(if m.reg == 0 { Mnemonic::Inc } else { Mnemonic::Dec })
                    }
                    2 | 4 | 6 => {
                        let s = if x64 { self.osize_d64() } else { self.osize() };
                        self.op_e(m, RegKind::Gpr(s))?;
                        self.set(match m.reg {
                            2 => Mnemonic::Call,
                            4 => Mnemonic::Jmp,
                            _ => Mnemonic::Push,
                        })
                    }
                    3 | 5 => {
                        self.op_m(m)?;
                        self.set(if m.reg == 3 { Mnemonic::CallFar } else { Mnemonic::JmpFar })
                    }
                    _ => None,
                }
            }
            _ => None,
        }
    }

    fn alu_form(&mut self, form: u8) -> Option<()> {
        let s = self.osize();
        match form {
            0 | 1 | 2 | 3 => {
                let m = self.modrm()?;
                let k = RegKind::Gpr(if form & 1 == 0 { 8 } else { s });
                if form < 2 {
                    self.op_e(m, k)?;
                    self.op_g(m, k)
                } else {
                    self.op_g(m, k)?;
                    self.op_e(m, k)
                }
            }
            4 => {
                self.op_fixed(Register::Gpr8(0))?;
                self.op_imm(1)
            }
            _ => {
                self.op_fixed(Register::gpr(s, 0, true))?;
                self.op_iz(s)
            }
        }
    }

    fn op_seg(&mut self, m: ModRm) -> Option<()> {
        let r = self.reg(RegKind::Segment, m.reg)?;
        self.op_fixed(r)
    }

    /// Vector instruction with a ModRM byte and `imm` trailing immediate bytes.
    fn sse(&mut self, imm: usize) -> Option<()> {
        let m = self.modrm()?;
        self.op_g(m, RegKind::Xmm)?;
        self.op_e(m, RegKind::Xmm)?;
        if imm > 0 {
            self.op_imm(imm)?;
        }
        self.set(Mnemonic::Sse)
    }

    fn two_byte(&mut self, op: u8) -> Option<()> {
        let x64 = self.is64();
        match op {
            0x00 => {
                let m = self.modrm()?;
                let mnem = match m.reg {
                    0 => Mnemonic::Sldt,
                    1 => Mnemonic::Str,
                    2 => Mnemonic::Lldt,
                    3 => Mnemonic::Ltr,
                    4 => Mnemonic::Verr,
                    5 => Mnemonic::Verw,
                    _ => return None,
                };
                self.op_e(m, RegKind::Gpr(16))?;
                self.set(mnem)
            }
            0x01 => {
                let m = self.modrm()?;
                if m.md != 3 {
                    let mnem = match m.reg {
                        0 => Mnemonic::Sgdt,
                        1 => Mnemonic::Sidt,
                        2 => Mnemonic::Lgdt,
                        3 => Mnemonic::Lidt,
                        4 => Mnemonic::Smsw,
                        6 => Mnemonic::Lmsw,
                        7 => Mnemonic::Invlpg,
                        _ => Mnemonic::System,
                    };
                    self.op_m(m)?;
                    return self.set(mnem);
                }
                let mnem = match (m.reg, m.rm) {
                    (0, 1) => Mnemonic::Vmcall,
                    (0, 2) => Mnemonic::Vmlaunch,
                    (0, 3) => Mnemonic::Vmresume,
                    (0, 4) => Mnemonic::Vmxoff,
                    (1, 0) => Mnemonic::Monitor,
                    (1, 1) => Mnemonic::Mwait,
                    (1, 2) => Mnemonic::Clac,
                    (1, 3) => Mnemonic::Stac,
                    (2, 0) => Mnemonic::Xgetbv,
                    (2, 1) => Mnemonic::Xsetbv,
                    (2, 5) => Mnemonic::Xend,
                    (2, 6) => Mnemonic::Xtest,
                    (4, _) => Mnemonic::Smsw,
                    (6, _) => Mnemonic::Lmsw,
                    (7, 0) if x64 => Mnemonic::Swapgs,
                    (7, 1) => Mnemonic::Rdtscp,
                    _ => Mnemonic::System,
                };
                if matches!(mnem, Mnemonic::Smsw | Mnemonic::Lmsw) {
                    self.op_e(m, RegKind::Gpr(16))?;
                }
                self.set(mnem)
            }
            0x02 | 0x03 => {
                let m = self.modrm()?;
                self.op_g(m, RegKind::Gpr(self.osize()))?;
                self.op_e(m, RegKind::Gpr(16))?;
                self.set(if op == 0x02 { Mnemonic::Lar } else { Mnemonic::Lsl })
            }
            0x05 => self.set(Mnemonic::Syscall),
            0x06 => self.set(Mnemonic::Clts),
            0x07 => self.set(Mnemonic::Sysret),
            0x08 => self.set(Mnemonic::Invd),
            0x09 => self.set(Mnemonic::Wbinvd),
            0x0B => self.set(Mnemonic::Ud2),
            0x0D => {
                let m = self.modrm()?;
                self.op_e(m, RegKind::Gpr(self.osize()))?;
                self.set(Mnemonic::Prefetch)
            }
            0x0E => self.set(Mnemonic::Sse),
            0x0F => {
                let m = self.modrm()?;
                self.op_g(m, RegKind::Mmx)?;
                self.op_e(m, RegKind::Mmx)?;
                // the trailing byte selects the 3DNow! operation
                self.byte()?;
                self.set(Mnemonic::Sse)
            }
            0x10..=0x17 | 0x28..=0x2F | 0x50..=0x6F | 0x74..=0x76 | 0x7C..=0x7F => self.sse(0),
            0x18 => {
                let m = self.modrm()?;
                self.op_e(m, RegKind::Gpr(self.osize()))?;
                self.set(if m.md == 3 || m.reg > 3 { Mnemonic::Nop } else { Mnemonic::Prefetch })
            }
            0x19..=0x1F => {
                let m = self.modrm()?;
                self.op_e(m, RegKind::Gpr(self.osize()))?;
                self.set(Mnemonic::Nop)
            }
            0x20..=0x23 => {
                // mov to/from control and debug registers ignores ModRM.mod
                let m = self.modrm()?;
                let gpr = Register::gpr(if x64 { 64 } else { 32 }, m.rm | (self.rex_b() << 3), true);
                let kind = if op & 1 == 0 { RegKind::Control } else { RegKind::Debug };
                let special = self.reg(kind, self.reg_num(m))?;
                if op < 0x22 {
                    self.op_fixed(gpr)?;
                    self.op_fixed(special)?;
                } else {
                    self.op_fixed(special)?;
                    self.op_fixed(gpr)?;
                }
                self.set(Mnemonic::Mov)
            }
            0x30 => self.set(Mnemonic::Wrmsr),
            0x31 => self.set(Mnemonic::Rdtsc),
            0x32 => self.set(Mnemonic::Rdmsr),
            0x33 => self.set(Mnemonic::Rdpmc),
            0x34 => self.set(Mnemonic::Sysenter),
            0x35 => self.set(Mnemonic::Sysexit),
            0x37 => self.set(Mnemonic::Getsec),
            0x38 => {
                let op3 = self.byte()?;
                match op3 {
                    0xF0 | 0xF1 if self.rep == Some(Prefix::Repne) => {
                        let m = self.modrm()?;
                        self.op_g(m, RegKind::Gpr(if self.rex_w() { 64 } else { 32 }))?;
                        self.op_e(m, RegKind::Gpr(if op3 == 0xF0 { 8 } else { self.osize() }))?;
                        self.set(Mnemonic::Crc32)
                    }
                    0xF0 | 0xF1 if self.rep.is_none() => {
                        let m = self.modrm()?;
                        let k = RegKind::Gpr(self.osize());
                        if op3 == 0xF0 {
                            self.op_g(m, k)?;
                            self.op_m(m)?;
                        } else {
                            self.op_m(m)?;
                            self.op_g(m, k)?;
                        }
                        self.set(Mnemonic::Movbe)
                    }
                    _ => self.sse(0),
                }
            }
            0x3A => {
                self.byte()?;
                self.sse(1)
            }
            0x40..=0x4F => {
                let m = self.modrm()?;
                let k = RegKind::Gpr(self.osize());
                self.op_g(m, k)?;
                self.op_e(m, k)?;
                self.set(mn::cmov(op))
            }
            0x70..=0x73 => self.sse(1),
            0x77 => self.set(Mnemonic::Sse),
            0x78 | 0x79 => {
                if self.rep == Some(Prefix::Repne) || self.opsize16 {
                    // SSE4a extrq/insertq; the immediate forms carry two bytes
                    let imm = if op == 0x78 { 2 } else { 0 };
                    let m = self.modrm()?;
                    if m.md != 3 {
                        return None;
                    }
                    self.op_g(m, RegKind::Xmm)?;
                    self.op_e(m, RegKind::Xmm)?;
                    for _ in 0..imm {
                        self.op_imm(1)?;
                    }
                    return self.set(Mnemonic::Sse);
                }
                let m = self.modrm()?;
                let k = RegKind::Gpr(if x64 { 64 } else { 32 });
                if op == 0x78 {
                    self.op_e(m, k)?;
                    self.op_g(m, k)?;
                    self.set(Mnemonic::Vmread)
                } else {
                    self.op_g(m, k)?;
                    self.op_e(m, k)?;
                    self.set(Mnemonic::Vmwrite)
                }
            }
            0x80..=0x8F => {
                self.op_jz()?;
                self.set(mn::jcc(op))
            }
            0x90..=0x9F => {
                let m = self.modrm()?;
                self.op_e(m, RegKind::Gpr(8))?;
                self.set(mn::setcc(op))
            }
            0xA0 | 0xA8 => {
                self.op_fixed(Register::Segment(if op == 0xA0 { 4 } else { 5 }))?;
                self.set(Mnemonic::Push)
            }
            0xA1 | 0xA9 => {
                self.op_fixed(Register::Segment(if op == 0xA1 { 4 } else { 5 }))?;
                self.set(Mnemonic::Pop)
            }
            0xA2 => self.set(Mnemonic::Cpuid),
            0xAA => self.set(Mnemonic::Rsm),
            0xA3 | 0xAB | 0xB3 | 0xBB => {
                let m = self.modrm()?;
                let k = RegKind::Gpr(self.osize());
                self.op_e(m, k)?;
                self.op_g(m, k)?;
                self.set(match op {
                    0xA3 => Mnemonic::Bt,
                    0xAB => Mnemonic::Bts,
                    0xB3 => Mnemonic::Btr,
                    _ => Mnemonic::Btc,
                })
            }
            0xA4 | 0xA5 | 0xAC | 0xAD => {
                let m = self.modrm()?;
                let k = RegKind::Gpr(self.osize());
                self.op_e(m, k)?;
                self.op_g(m, k)?;
                if op & 1 == 0 {
                    self.op_imm(1)?;
                } else {
                    self.op_fixed(Register::Gpr8(1))?;
                }
                self.set(if op < 0xA8 { Mnemonic::Shld } else { Mnemonic::Shrd })
            }
            0xAE => {
                let m = self.modrm()?;
                if m.md == 3 {
                    return self.set(match m.reg {
                        5 => Mnemonic::Lfence,
                        6 => Mnemonic::Mfence,
                        7 => Mnemonic::Sfence,
                        _ => Mnemonic::System,
                    });
                }
                self.op_m(m)?;
                self.set(match m.reg {
                    0 => Mnemonic::Fxsave,
                    1 => Mnemonic::Fxrstor,
                    2 => Mnemonic::Ldmxcsr,
                    3 => Mnemonic::Stmxcsr,
                    4 => Mnemonic::Xsave,
                    5 => Mnemonic::Xrstor,
                    6 => Mnemonic::Xsaveopt,
                    _ => Mnemonic::Clflush,
                })
            }
            0xAF => {
                let m = self.modrm()?;
                let k = RegKind::Gpr(self.osize());
                self.op_g(m, k)?;
                self.op_e(m, k)?;
                self.set(Mnemonic::Imul)
            }
            0xB0 | 0xB1 | 0xC0 | 0xC1 => {
                let m = self.modrm()?;
                let k = RegKind::Gpr(if op & 1 == 0 { 8 } else { self.osize() });
                self.op_e(m, k)?;
                self.op_g(m, k)?;
                self.set(if op < 0xC0 { Mnemonic::Cmpxchg } else { Mnemonic::Xadd })
            }
            0xB2 | 0xB4 | 0xB5 => {
                let m = self.modrm()?;
                self.op_g(m, RegKind::Gpr(self.osize()))?;
                self.op_m(m)?;
                self.set(match op {
                    0xB2 => Mnemonic::Lss,
                    0xB4 => Mnemonic::Lfs,
                    _ => Mnemonic::Lgs,
                })
            }
            0xB6 | 0xB7 | 0xBE | 0xBF => {
                let m = self.modrm()?;
                self.op_g(m, RegKind::Gpr(self.osize()))?;
                self.op_e(m, RegKind::Gpr(if op & 1 == 0 { 8 } else { 16 }))?;
                self.set(if op < 0xBE { Mnemonic::Movzx } else { Mnemonic::Movsx })
            }
            0xB8 if self.rep == Some(Prefix::Rep) => {
                let m = self.modrm()?;
                let k = RegKind::Gpr(self.osize());
                self.op_g(m, k)?;
                self.op_e(m, k)?;
                self.set(Mnemonic::Popcnt)
            }
            0xB9 | 0xFF | 0xBC | 0xBD => {
                let m = self.modrm()?;
                let k = RegKind::Gpr(self.osize());
                self.op_g(m, k)?;
                self.op_e(m, k)?;
                let tz = self.rep == Some(Prefix::Rep);
                self.set(match op {
                    0xB9 => Mnemonic::Ud1,
                    0xFF => Mnemonic::Ud0,
                    0xBC if tz => Mnemonic::Tzcnt,
                    0xBC => Mnemonic::Bsf,
                    _ if tz => Mnemonic::Lzcnt,
                    _ => Mnemonic::Bsr,
                })
            }
            0xBA => {
                let m = self.modrm()?;
                if m.reg < 4 {
                    return None;
                }
                self.op_e(m, RegKind::Gpr(self.osize()))?;
                self.op_imm(1)?;
                self.set([Mnemonic::Bt, Mnemonic::Bts, Mnemonic::Btr, Mnemonic::Btc][usize::from(m.reg - 4)])
            }
            0xC2 | 0xC4 | 0xC5 | 0xC6 => self.sse(1),
            0xC3 => {
                let m = self.modrm()?;
                self.op_m(m)?;
                self.op_g(m, RegKind::Gpr(self.osize()))?;
                self.set(Mnemonic::Movnti)
            }
            0xC7 => {
                let m = self.modrm()?;
                if m.md == 3 {
                    return match m.reg {
                        6 | 7 => {
                            self.op_e(m, RegKind::Gpr(self.osize()))?;
                            self.set(if m.reg == 6 { Mnemonic::Rdrand } else { Mnemonic::Rdseed })
                        }
                        _ => self.set(Mnemonic::System),
                    };
                }
                self.op_m(m)?;
                self.set(match m.reg {
                    1 if self.rex_w() => Mnemonic::Cmpxchg16b,
                    1 => Mnemonic::Cmpxchg8b,
                    _ => Mnemonic::System,
                })
            }
            0xC8..=0xCF => {
                let s = if self.rex_w() { 64 } else { 32 };
                self.op_fixed(Register::gpr(s, (op & 7) | (self.rex_b() << 3), true))?;
                self.set(Mnemonic::Bswap)
            }
            0xD0..=0xFE => self.sse(0),
            _ => None,
        }
    }

    fn vex_prefix_ok(&self) -> bool {
        self.rex == 0 && !self.opsize16 && !self.lock && self.rep.is_none()
    }

    fn vex(&mut self, three_byte: bool) -> Option<()> {
        if !self.vex_prefix_ok() {
            return None;
        }
        let x64 = self.is64();
        let b1 = self.byte()?;
        let (r, map, l) = if three_byte {
            let b2 = self.byte()?;
            if x64 {
                self.rex = 0x40 | ((b2 >> 7) << 3) | ((!b1 >> 6 & 1) << 1) | (!b1 >> 5 & 1);
            }
            (!b1 >> 7 & 1, b1 & 0x1F, (b2 >> 2) & 1)
        } else {
            (!b1 >> 7 & 1, 1, (b1 >> 2) & 1)
        };
        if !matches!(map, 1..=3) {
            return None;
        }
        let op = self.byte()?;
        self.mnemonic = Mnemonic::Avx;
        if map == 1 && op == 0x77 {
            return Some(());
        }
        let m = self.modrm()?;
        let kind = if l == 1 { RegKind::Ymm } else { RegKind::Xmm };
        let reg = m.reg | if x64 { r << 3 } else { 0 };
        let rm = if m.md == 3 {
            Operand::Register(self.reg(kind, m.rm | (self.rex_b() << 3))?)
        } else {
            Operand::Memory(self.memory(m)?)
        };
        self.push(Operand::Register(self.reg(kind, reg)?));
        self.push(rm);
        if map == 3 || (map == 1 && matches!(op, 0x70..=0x73 | 0xC2 | 0xC4..=0xC6)) {
            self.op_imm(1)?;
        }
        Some(())
    }

    fn evex(&mut self) -> Option<()> {
        if !self.vex_prefix_ok() {
            return None;
        }
        let x64 = self.is64();
        let p0 = self.byte()?;
        let p1 = self.byte()?;
        let p2 = self.byte()?;
        if p0 & 0x08 != 0 || p1 & 0x04 == 0 {
            return None;
        }
        let map = p0 & 0x07;
        if !matches!(map, 1 | 2 | 3 | 5 | 6) {
            return None;
        }
        if x64 {
            self.rex = 0x40 | ((p1 >> 7) << 3) | ((!p0 >> 6 & 1) << 1) | (!p0 >> 5 & 1);
        }
        let op = self.byte()?;
        let m = self.modrm()?;
        let ll = (p2 >> 5) & 3;
        let broadcast = p2 & 0x10 != 0;
        let kind = match ll {
            0 => RegKind::Xmm,
            1 => RegKind::Ymm,
            2 => RegKind::Zmm,
            _ if m.md == 3 && broadcast => RegKind::Zmm,
            _ => return None,
        };
        let (r, r2) = if x64 { (!p0 >> 7 & 1, !p0 >> 4 & 1) } else { (0, 0) };
        let reg = m.reg | (r << 3) | (r2 << 4);
        let rm = if m.md == 3 {
            let x = if x64 { !p0 >> 6 & 1 } else { 0 };
            Operand::Register(self.reg(kind, m.rm | (self.rex_b() << 3) | (x << 4))?)
        } else {
            Operand::Memory(self.memory(m)?)
        };
        self.push(Operand::Register(self.reg(kind, reg)?));
        self.push(rm);
        if map == 3 || (map == 1 && matches!(op, 0x70..=0x73 | 0xC2 | 0xC4..=0xC6)) {
            self.op_imm(1)?;
        }
        self.set(Mnemonic::Avx512)
    }
}
