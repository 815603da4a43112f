//! Compiled real-code pool, embedded at build time.
//!
//! Five small C programs, each built at five optimization levels for 32-bit
//! x86. Training roles draw from three of them and the test role from the
//! other two, so no program's code is on both sides of the split.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::disasm::{sweep_bytes, Mode};

use super::Role;

macro_rules! blobs {
    ($($prog:literal => [$($lvl:literal),*]),* $(,)?) => {
        &[$($(($prog, $lvl, include_bytes!(concat!("../../fixtures/corpus/", $prog, "_", $lvl, ".bin")) as &[u8]),)*)*]
    };
}

const BLOBS: &[(&str, &str, &[u8])] = blobs! {
    "algo" => ["O0", "O1", "O2", "Os", "Oz"],
    "text" => ["O0", "O1", "O2", "Os", "Oz"],
    "mathx" => ["O0", "O1", "O2", "Os", "Oz"],
    "ds" => ["O0", "O1", "O2", "Os", "Oz"],
    "codec" => ["O0", "O1", "O2", "Os", "Oz"],
};

pub const TRAIN_PROGRAMS: [&str; 3] = ["algo", "text", "mathx"];
pub const TEST_PROGRAMS: [&str; 2] = ["ds", "codec"];

pub(crate) struct Blob {
    pub program: &'static str,
    pub level: &'static str,
    pub bytes: &'static [u8],
    /// Instruction start offsets under a linear sweep, plus the end.
    pub boundaries: Vec<usize>,
}

fn pool() -> &'static [Blob] {
    static POOL: OnceLock<Vec<Blob>> = OnceLock::new();
    POOL.get_or_init(|| {
        BLOBS
            .iter()
            .map(|&(program, level, bytes)| {
                let mut boundaries: Vec<usize> =
                    sweep_bytes(bytes, 0, 0, Mode::X86_32).iter().map(|u| u.offset).collect();
                boundaries.push(bytes.len());
                Blob { program, level, bytes, boundaries }
            })
            .collect()
    })
}

pub(crate) fn programs_for(role: Role) -> &'static [&'static str] {
    match role {
        Role::Test => &TEST_PROGRAMS,
        Role::Pretrain | Role::Finetune => &TRAIN_PROGRAMS,
    }
}

/// Lineage id of a fixture program.
pub(crate) fn lineage_id(program: &str) -> String {
    format!("fixture:{program}")
}

/// About `len` bytes of real code for `role`, cut at instruction
/// boundaries. Returns the bytes and the blobs they came from.
pub(crate) fn slice_code<R: Rng + ?Sized>(rng: &mut R, role: Role, len: usize) -> (Vec<u8>, Vec<String>) {
    let allowed = programs_for(role);
    let blobs: Vec<&Blob> = pool().iter().filter(|b| allowed.contains(&b.program)).collect();
    let mut out = Vec::with_capacity(len + 16);
    let mut sources = Vec::new();
    while out.len() < len {
        let blob = *blobs.choose(rng).unwrap();
        let starts = &blob.boundaries[..blob.boundaries.len() - 1];
        let start = starts[rng.gen_range(0..starts.len())];
        let want = start + (len - out.len());
        let end = blob.boundaries.iter().copied().find(|&b| b >= want).unwrap_or(blob.bytes.len());
        out.extend_from_slice(&blob.bytes[start..end]);
        let id = format!("{}_{}", blob.program, blob.level);
        if !sources.contains(&id) {
            sources.push(id);
        }
    }
    (out, sources)
}
