//! Decoded units to tokens.
//!
//! Prefixes, mnemonics and registers are tokens as-is. Numbers never are:
//! immediates become `[const]`, displacements `[const_normal]` or
//! `[const_abnormal]`, branch targets `[mem_normal]` or `[mem_abnormal]`,
//! depending on whether they land inside the image. Undecodable bytes become
//! `[pad_normal]` for typical filler and `[pad_abnormal]` otherwise. Every
//! instruction ends in `[EOS]`. Implicit flag operands are never emitted.

mod vocab;
mod window;

pub use vocab::{build_vocabulary, Token, TokenClass, VocabError, Vocabulary, VOCAB_SIZE};
pub use window::{
    windowize_instructions, windowize_tokens, InstructionWindow, Span, TokenStream, TokenWindow, WindowPlan,
    MAX_WINDOW_TOKENS,
};

use crate::binimage::AddressRange;
use crate::disasm::{DecodedUnit, Operand, UnitKind};

/// Raw bytes treated as ordinary filler: zero, `int3` and `nop`.
pub const DEFAULT_PAD_NORMAL: [u8; 3] = [0x00, 0xCC, 0x90];

#[derive(Clone, Debug)]
pub struct Normalizer {
    pad_normal: [bool; 256],
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::with_pad_bytes(&DEFAULT_PAD_NORMAL)
    }
}

impl Normalizer {
    pub fn with_pad_bytes(bytes: &[u8]) -> Self {
        let mut pad_normal = [false; 256];
        for &b in bytes {
            pad_normal[usize::from(b)] = true;
        }
        Normalizer { pad_normal }
    }

    pub fn normalize_unit(&self, unit: &DecodedUnit<'_>, range: &AddressRange) -> Vec<Token> {
        let mut out = Vec::with_capacity(8);
        self.normalize_into(unit, range, &mut out);
        out
    }

    /// Append the tokens of one unit, `[EOS]` included.
    pub fn normalize_into(&self, unit: &DecodedUnit<'_>, range: &AddressRange, out: &mut Vec<Token>) {
        let Some(mnemonic) = unit.mnemonic.filter(|_| unit.kind == UnitKind::Instruction) else {
            out.push(if self.pad_normal[usize::from(unit.raw[0])] {
                Token::PAD_NORMAL
            } else {
                Token::PAD_ABNORMAL
            });
            out.push(Token::EOS);
            return;
        };
        out.extend(unit.prefixes.iter().map(|&p| Token::prefix(p)));
        out.push(Token::mnemonic(mnemonic));
        for op in &unit.operands {
            match *op {
                Operand::Register(r) => out.push(Token::register(r)),
                Operand::Immediate(_) => out.push(Token::CONST),
                Operand::Branch(target) => out.push(if range.contains(unit.branch_target(target)) {
                    Token::MEM_NORMAL
                } else {
                    Token::MEM_ABNORMAL
                }),
                Operand::Memory(m) => {
                    if let Some(base) = m.base {
                        out.push(Token::register(base));
                    }
                    if let Some(index) = m.index {
                        out.push(Token::register(index));
                        out.push(Token::scale(m.scale));
                    }
                    if let Some(disp) = m.displacement {
                        let normal = match unit.static_address(&m) {
                            Some(addr) => range.contains(addr),
                            None => relative_displacement_is_normal(disp, range),
                        };
                        out.push(if normal { Token::CONST_NORMAL } else { Token::CONST_ABNORMAL });
                    }
                }
            }
        }
        out.push(Token::EOS);
    }

    /// Normalize a whole sweep, recording one span per unit.
    pub fn normalize_units(&self, units: &[DecodedUnit<'_>], range: &AddressRange) -> TokenStream {
        let mut stream = TokenStream::with_capacity(units.len());
        for u in units {
            let start = stream.tokens.len();
            self.normalize_into(u, range, &mut stream.tokens);
            stream.spans.push(Span {
                start: start as u32,
                end: stream.tokens.len() as u32,
                offset: u.offset,
                len: u.len() as u8,
            });
        }
        stream
    }
}

/// Label for a displacement added to a general-purpose register.
///
/// The register value is unknown statically, so the only evidence is the
/// magnitude: an offset larger than the whole image cannot be a field or
/// array offset within it.
pub fn relative_displacement_is_normal(disp: i64, range: &AddressRange) -> bool {
    disp.unsigned_abs() <= range.span()
}

/// [`Normalizer::normalize_unit`] with the default padding set.
pub fn normalize_unit(unit: &DecodedUnit<'_>, range: &AddressRange) -> Vec<Token> {
    Normalizer::default().normalize_unit(unit, range)
}
