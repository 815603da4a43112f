//! The closed token vocabulary.
//!
//! Ids are assigned by enumerating the decoder's tables, so every token the
//! normalizer can produce has an id and nothing else does. The order is
//! fixed: specials, prefixes, mnemonics, registers, scales.

use std::collections::HashMap;

use once_cell::sync::Lazy;
use sha2::{Digest, Sha256};

use crate::disasm::{Mnemonic, Prefix, Register};

const SPECIALS: [&str; 11] = [
    "[SOS]",
    "[EOS]",
    "[MASK]",
    "[PAD]",
    "[const]",
    "[const_normal]",
    "[const_abnormal]",
    "[mem_normal]",
    "[mem_abnormal]",
    "[pad_normal]",
    "[pad_abnormal]",
];
const SCALES: [&str; 4] = ["*1", "*2", "*4", "*8"];
const REGISTER_COUNT: usize = 220;

const PREFIX_BASE: usize = SPECIALS.len();
const MNEMONIC_BASE: usize = PREFIX_BASE + Prefix::ALL.len();
const REGISTER_BASE: usize = MNEMONIC_BASE + Mnemonic::ALL.len();
const SCALE_BASE: usize = REGISTER_BASE + REGISTER_COUNT;

/// Number of tokens in the vocabulary.
pub const VOCAB_SIZE: usize = SCALE_BASE + SCALES.len();

const HEADER: &str = "# packsense vocabulary v1";

/// A vocabulary id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(u16);

/// Groups of interchangeable tokens; randomized masking stays inside one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenClass {
    /// `[SOS]`, `[EOS]`, `[MASK]`, `[PAD]`.
    Control,
    /// Operand labels standing in for immediates, displacements and targets.
    OperandLabel,
    /// The two labels for undecodable bytes. They sit in the opcode slot.
    PadLabel,
    Prefix,
    Mnemonic,
    Register,
    Scale,
}

impl TokenClass {
    /// Tokens in the opcode half of an instruction; everything else that is
    /// not control is an operand.
    pub fn is_opcode_side(self) -> bool {
        matches!(self, TokenClass::Prefix | TokenClass::Mnemonic | TokenClass::PadLabel)
    }

    /// All tokens of this class, in id order.
    pub fn members(self) -> std::ops::Range<u16> {
        let r = match self {
            TokenClass::Control => 0..4,
            TokenClass::OperandLabel => 4..9,
            TokenClass::PadLabel => 9..PREFIX_BASE,
            TokenClass::Prefix => PREFIX_BASE..MNEMONIC_BASE,
            TokenClass::Mnemonic => MNEMONIC_BASE..REGISTER_BASE,
            TokenClass::Register => REGISTER_BASE..SCALE_BASE,
            TokenClass::Scale => SCALE_BASE..VOCAB_SIZE,
        };
        r.start as u16..r.end as u16
    }
}

impl Token {
    pub const SOS: Token = Token(0);
    pub const EOS: Token = Token(1);
    pub const MASK: Token = Token(2);
    pub const PAD: Token = Token(3);
    pub const CONST: Token = Token(4);
    pub const CONST_NORMAL: Token = Token(5);
    pub const CONST_ABNORMAL: Token = Token(6);
    pub const MEM_NORMAL: Token = Token(7);
    pub const MEM_ABNORMAL: Token = Token(8);
    pub const PAD_NORMAL: Token = Token(9);
    pub const PAD_ABNORMAL: Token = Token(10);

    pub fn from_id(id: usize) -> Option<Token> {
        (id < VOCAB_SIZE).then_some(Token(id as u16))
    }

    pub fn id(self) -> usize {
        usize::from(self.0)
    }

    pub fn prefix(p: Prefix) -> Token {
        Token((PREFIX_BASE + p as usize) as u16)
    }

    pub fn mnemonic(m: Mnemonic) -> Token {
        Token((MNEMONIC_BASE + m as usize) as u16)
    }

    pub fn register(r: Register) -> Token {
        Token((REGISTER_BASE + r.index()) as u16)
    }

    /// Scale token for a SIB scale of 1, 2, 4 or 8.
    pub fn scale(scale: u8) -> Token {
        Token((SCALE_BASE + scale.trailing_zeros().min(3) as usize) as u16)
    }

    pub fn class(self) -> TokenClass {
        let id = self.id();
        if id < 4 {
            TokenClass::Control
        } else if id < 9 {
            TokenClass::OperandLabel
        } else if id < PREFIX_BASE {
            TokenClass::PadLabel
        } else if id < MNEMONIC_BASE {
            TokenClass::Prefix
        } else if id < REGISTER_BASE {
            TokenClass::Mnemonic
        } else if id < SCALE_BASE {
            TokenClass::Register
        } else {
            TokenClass::Scale
        }
    }

    pub fn text(self) -> &'static str {
        VOCAB.text(self)
    }
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.text())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("missing or unknown vocabulary header")]
    BadHeader,
    #[error("vocabulary differs from this build at line {line}: expected `{expected}`, found `{found}`")]
    Mismatch { line: usize, expected: String, found: String },
    #[error("vocabulary has {found} tokens, this build has {expected}")]
    Length { expected: usize, found: usize },
}

/// Bijective token text <-> id table.
#[derive(Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, Token>,
}

static VOCAB: Lazy<Vocabulary> = Lazy::new(build_vocabulary);

/// Enumerate the closed vocabulary.
pub fn build_vocabulary() -> Vocabulary {
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(Prefix::ALL.iter().map(|p| p.as_str().to_string()));
    tokens.extend(Mnemonic::ALL.iter().map(|m| m.as_str().to_string()));
    tokens.extend(Register::all().map(|r| r.as_str().to_string()));
    tokens.extend(SCALES.iter().map(|s| s.to_string()));
    assert_eq!(tokens.len(), VOCAB_SIZE);
    let lookup = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), Token(i as u16)))
        .collect::<HashMap<_, _>>();
    assert_eq!(lookup.len(), tokens.len(), "duplicate token text");
    Vocabulary { tokens, lookup }
}

impl Vocabulary {
    /// The shared instance.
    pub fn standard() -> &'static Vocabulary {
        &VOCAB
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<Token> {
        self.lookup.get(text).copied()
    }

    pub fn text(&self, token: Token) -> &str {
        &self.tokens[token.id()]
    }

    pub fn tokens(&self) -> impl Iterator<Item = (Token, &str)> {
        self.tokens.iter().enumerate().map(|(i, t)| (Token(i as u16), t.as_str()))
    }

    /// Header line, then one token per line; line `n + 2` holds id `n`.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.tokens.len() * 8);
        out.push_str(HEADER);
        out.push('\n');
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    /// Check a serialized vocabulary against this one.
    pub fn verify_text(&self, text: &str) -> Result<(), VocabError> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(VocabError::BadHeader);
        }
        let found: Vec<&str> = lines.collect();
        for (i, (&f, e)) in found.iter().zip(&self.tokens).enumerate() {
            if f != e {
                return Err(VocabError::Mismatch { line: i + 2, expected: e.clone(), found: f.to_string() });
            }
        }
        if found.len() != self.tokens.len() {
            return Err(VocabError::Length { expected: self.tokens.len(), found: found.len() });
        }
        Ok(())
    }

    /// SHA-256 of [`Vocabulary::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
