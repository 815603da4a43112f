use data_encoding::{BASE32_NOPAD, BASE64_NOPAD};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{histogram, histogram_entropy};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TransformError {
    #[error("invalid transform spec: {0}")]
    InvalidSpec(String),
    #[error("corrupt inverse metadata: {0}")]
    CorruptMetadata(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadPosition {
    Append,
    Prepend,
    /// Insert the run before this byte offset.
    At(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alphabet {
    Base64,
    Base32,
    /// Each byte becomes a fixed number of digits in base `symbols.len()`,
    /// written with these symbols.
    Custom { symbols: Vec<u8> },
}

impl Alphabet {
    pub fn size(&self) -> usize {
        match self {
            Alphabet::Base64 => 64,
            Alphabet::Base32 => 32,
            Alphabet::Custom { symbols } => symbols.len(),
        }
    }

    /// Sixteen printable symbols, two per input byte.
    pub fn custom_hex() -> Self {
        Alphabet::Custom { symbols: b"KMNPQRSTVWXYZ%&@".to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum TransformSpec {
    BytePadding { byte: u8, amount: usize, position: PadPosition },
    Encoding { alphabet: Alphabet },
    /// `table[b]` replaces `b`.
    MonoSub { table: Vec<u8> },
    /// Within each full block, output position `i` takes input position
    /// `perm[i]`. A trailing partial block is left in place.
    Transposition { block: usize, perm: Vec<u32> },
    /// Byte `i` is shifted by `keys[i % keys.len()]`, modulo 256.
    PolySub { keys: Vec<u8> },
}

impl TransformSpec {
    pub fn random_mono_sub<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut table: Vec<u8> = (0..=255).collect();
        table.shuffle(rng);
        TransformSpec::MonoSub { table }
    }

    pub fn random_transposition<R: Rng + ?Sized>(block: usize, rng: &mut R) -> Self {
        let mut perm: Vec<u32> = (0..block as u32).collect();
        perm.shuffle(rng);
        TransformSpec::Transposition { block, perm }
    }

    pub fn random_poly_sub<R: Rng + ?Sized>(key_len: usize, rng: &mut R) -> Self {
        TransformSpec::PolySub { keys: (0..key_len).map(|_| rng.gen()).collect() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransformSpec::BytePadding { .. } => "byte_padding",
            TransformSpec::Encoding { .. } => "encoding",
            TransformSpec::MonoSub { .. } => "mono_sub",
            TransformSpec::Transposition { .. } => "transposition",
            TransformSpec::PolySub { .. } => "poly_sub",
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let bad = |m: &str| Err(TransformError::InvalidSpec(m.into()));
        match self {
            TransformSpec::MonoSub { table } => {
                if table.len() != 256 || !is_permutation(table.iter().map(|&b| b as usize), 256) {
                    return bad("substitution table is not a permutation of 0..=255");
                }
            }
            TransformSpec::Transposition { block, perm } => {
                if *block == 0 || perm.len() != *block || !is_permutation(perm.iter().map(|&p| p as usize), *block) {
                    return bad("transposition is not a permutation of the block");
                }
            }
            TransformSpec::PolySub { keys } if keys.is_empty() => return bad("empty key list"),
            TransformSpec::Encoding { alphabet: Alphabet::Custom { symbols } } => {
                if symbols.len() < 2 || !is_permutation_subset(symbols) {
                    return bad("custom alphabet needs at least two distinct symbols");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn is_permutation(items: impl Iterator<Item = usize>, n: usize) -> bool {
    let mut seen = vec![false; n];
    let mut count = 0;
    for i in items {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return false;
        }
        count += 1;
    }
    count == n
}

fn is_permutation_subset(symbols: &[u8]) -> bool {
    let mut seen = [false; 256];
    symbols.iter().all(|&s| !std::mem::replace(&mut seen[s as usize], true))
}

/// What [`invert_transform`] needs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InverseMeta {
    pub spec: TransformSpec,
    pub original_len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transformed {
    pub bytes: Vec<u8>,
    pub meta: InverseMeta,
}

/// Digits per byte for a base-`a` custom encoding.
fn digits_per_byte(a: usize) -> usize {
    let mut k = 1;
    let mut cap = a;
    while cap < 256 {
        cap *= a;
        k += 1;
    }
    k
}

pub fn transform(bytes: &[u8], spec: &TransformSpec) -> Result<Transformed, TransformError> {
    spec.validate()?;
    let out = match spec {
        TransformSpec::BytePadding { byte, amount, position } => {
            let at = match *position {
                PadPosition::Append => bytes.len(),
                PadPosition::Prepend => 0,
                PadPosition::At(i) if i <= bytes.len() => i,
                PadPosition::At(i) => {
                    return Err(TransformError::InvalidSpec(format!("pad offset {i} past {} bytes", bytes.len())))
                }
            };
            let mut out = Vec::with_capacity(bytes.len() + amount);
            out.extend_from_slice(&bytes[..at]);
            out.resize(at + amount, *byte);
            out.extend_from_slice(&bytes[at..]);
            out
        }
        TransformSpec::Encoding { alphabet } => match alphabet {
            Alphabet::Base64 => BASE64_NOPAD.encode(bytes).into_bytes(),
            Alphabet::Base32 => BASE32_NOPAD.encode(bytes).into_bytes(),
            Alphabet::Custom { symbols } => {
                let a = symbols.len();
                let k = digits_per_byte(a);
                let mut out = vec![0; bytes.len() * k];
                for (chunk, &b) in out.chunks_exact_mut(k).zip(bytes) {
                    let mut v = b as usize;
                    for slot in chunk.iter_mut().rev() {
                        *slot = symbols[v % a];
                        v /= a;
                    }
                }
                out
            }
        },
        TransformSpec::MonoSub { table } => bytes.iter().map(|&b| table[b as usize]).collect(),
        TransformSpec::Transposition { block, perm } => {
            let mut out = bytes.to_vec();
            for (dst, src) in out.chunks_exact_mut(*block).zip(bytes.chunks_exact(*block)) {
                for (d, &p) in dst.iter_mut().zip(perm) {
                    *d = src[p as usize];
                }
            }
            out
        }
        TransformSpec::PolySub { keys } => {
            bytes.iter().zip(keys.iter().cycle()).map(|(&b, &k)| b.wrapping_add(k)).collect()
        }
    };
    Ok(Transformed { bytes: out, meta: InverseMeta { spec: spec.clone(), original_len: bytes.len() } })
}

pub fn invert_transform(bytes: &[u8], meta: &InverseMeta) -> Result<Vec<u8>, TransformError> {
    let corrupt = |m: String| TransformError::CorruptMetadata(m);
    meta.spec.validate().map_err(|e| corrupt(e.to_string()))?;
    let n = meta.original_len;
    let out = match &meta.spec {
        TransformSpec::BytePadding { byte, amount, position } => {
            if bytes.len() != n + amount {
                return Err(corrupt(format!("{} bytes, expected {}", bytes.len(), n + amount)));
            }
            let at = match *position {
                PadPosition::Append => n,
                PadPosition::Prepend => 0,
                PadPosition::At(i) if i <= n => i,
                PadPosition::At(i) => return Err(corrupt(format!("pad offset {i} past {n} bytes"))),
            };
            if bytes[at..at + amount].iter().any(|b| b != byte) {
                return Err(corrupt("pad run does not match".into()));
            }
            [&bytes[..at], &bytes[at + amount..]].concat()
        }
        TransformSpec::Encoding { alphabet } => match alphabet {
            Alphabet::Base64 => BASE64_NOPAD.decode(bytes).map_err(|e| corrupt(e.to_string()))?,
            Alphabet::Base32 => BASE32_NOPAD.decode(bytes).map_err(|e| corrupt(e.to_string()))?,
            Alphabet::Custom { symbols } => {
                let a = symbols.len();
                let k = digits_per_byte(a);
                let mut digit = [u16::MAX; 256];
                for (i, &s) in symbols.iter().enumerate() {
                    digit[s as usize] = i as u16;
                }
                if bytes.len() % k != 0 {
                    return Err(corrupt(format!("length {} is not a multiple of {k}", bytes.len())));
                }
                let mut out = Vec::with_capacity(bytes.len() / k);
                for chunk in bytes.chunks_exact(k) {
                    let mut v = 0usize;
                    for &s in chunk {
                        let d = digit[s as usize];
                        if d == u16::MAX {
                            return Err(corrupt(format!("symbol {s:#04x} outside the alphabet")));
                        }
                        v = v * a + d as usize;
                    }
                    out.push(u8::try_from(v).map_err(|_| corrupt(format!("digit group decodes to {v}")))?);
                }
                out
            }
        },
        TransformSpec::MonoSub { table } => {
            let mut inverse = [0u8; 256];
            for (i, &t) in table.iter().enumerate() {
                inverse[t as usize] = i as u8;
            }
            bytes.iter().map(|&b| inverse[b as usize]).collect()
        }
        TransformSpec::Transposition { block, perm } => {
            let mut out = bytes.to_vec();
            for (dst, src) in out.chunks_exact_mut(*block).zip(bytes.chunks_exact(*block)) {
                for (&s, &p) in src.iter().zip(perm) {
                    dst[p as usize] = s;
                }
            }
            out
        }
        TransformSpec::PolySub { keys } => {
            bytes.iter().zip(keys.iter().cycle()).map(|(&b, &k)| b.wrapping_sub(k)).collect()
        }
    };
    if out.len() != n {
        return Err(corrupt(format!("decoded {} bytes, expected {n}", out.len())));
    }
    Ok(out)
}

/// Smallest number of `pad` bytes whose addition brings the entropy of
/// `bytes` below `target`.
///
/// As pad bytes are added the entropy rises (while `pad` is still rare) and
/// then falls toward zero, so once a doubling search finds a count below
/// target, the first such count lies in the last doubling interval and a
/// binary search finds it. `None` when `target` is not positive.
pub fn padding_for_entropy(bytes: &[u8], pad: u8, target: f64) -> Option<usize> {
    if target <= 0.0 {
        return None;
    }
    let base = histogram(bytes);
    let len = bytes.len() as u64;
    let below = |n: u64| {
        let mut h = base;
        h[pad as usize] += n;
        histogram_entropy(&h, len + n) < target
    };
    if below(0) {
        return Some(0);
    }
    let mut hi = 1u64;
    while !below(hi) {
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if below(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi as usize)
}
