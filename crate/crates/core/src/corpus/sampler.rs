//! Byte generators for the synthetic segments.

use rand::seq::SliceRandom;
use rand::Rng;

// Registers usable as a plain modrm base with disp8 (no SIB): not esp.
const BASES: [u8; 7] = [0, 1, 2, 3, 5, 6, 7];
// General registers for arithmetic; esp and ebp stay the frame.
const GPRS: [u8; 6] = [0, 1, 2, 3, 6, 7];

fn modrm(md: u8, reg: u8, rm: u8) -> u8 {
    (md << 6) | (reg << 3) | rm
}

/// One straight-line instruction of the 32-bit subset.
fn body_instruction<R: Rng + ?Sized>(rng: &mut R, out: &mut Vec<u8>) {
    let r = *GPRS.choose(rng).unwrap();
    let s = *GPRS.choose(rng).unwrap();
    let base = *BASES.choose(rng).unwrap();
    match rng.gen_range(0..17) {
        // mov r, r / alu r, r
        0 => out.extend([0x89, modrm(3, s, r)]),
        1 => out.extend([[0x01, 0x29, 0x21, 0x09, 0x31, 0x39, 0x85][rng.gen_range(0..7)], modrm(3, s, r)]),
        // mov r, [base+disp8] and back
        2 => out.extend([0x8b, modrm(1, r, base), rng.gen_range(0..32u8) * 4]),
        3 => out.extend([0x89, modrm(1, r, 5), 0u8.wrapping_sub(rng.gen_range(1..32u8) * 4)]),
        // mov r, imm32 with a small value
        4 => {
            out.push(0xb8 + r);
            out.extend((rng.gen_range(0..4096u32)).to_le_bytes());
        }
        // alu r, imm8
        5 => out.extend([0x83, modrm(3, [0, 5, 7, 4, 1][rng.gen_range(0..5)], r), rng.gen_range(0..64u8)]),
        6 => out.push(0x50 + r),
        7 => out.push(0x58 + r),
        // lea r, [base+disp8]
        8 => out.extend([0x8d, modrm(1, r, base), rng.gen_range(1..64u8)]),
        9 => out.extend([0x0f, 0xb6, modrm(0, r, [0, 1, 2, 3, 6, 7][rng.gen_range(0..6)])]),
        10 => out.push([0x40, 0x48][rng.gen_range(0..2)] + r),
        11 => out.extend([0xc1, modrm(3, [4, 5, 7][rng.gen_range(0..3)], r), rng.gen_range(1..31u8)]),
        12 => out.extend([0x0f, 0xaf, modrm(3, r, s)]),
        // cmp r, imm8 / test r, r before a short branch over one instruction
        13 => {
            out.extend([0x83, modrm(3, 7, r), rng.gen_range(0..16u8)]);
            out.extend([0x70 + rng.gen_range(0..16u8), 2]);
            out.extend([0x89, modrm(3, s, r)]);
        }
        // mov [base+disp8], imm32
        14 => {
            out.extend([0xc7, modrm(1, 0, 5), 0u8.wrapping_sub(rng.gen_range(1..16u8) * 4)]);
            out.extend(rng.gen_range(0..256u32).to_le_bytes());
        }
        15 => out.extend([0x8b, modrm(3, r, s)]),
        // call rel32 to a nearby target
        _ => {
            out.push(0xe8);
            out.extend((-(rng.gen_range(16..512i32))).to_le_bytes());
        }
    }
}

/// A sequence of function-shaped snippets totalling at least `len` bytes:
/// frame setup, straight-line body, epilogue, alignment padding.
pub fn sample_code<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 64);
    while out.len() < len {
        out.extend([0x55, 0x89, 0xe5]);
        if rng.gen_bool(0.6) {
            out.extend([0x83, 0xec, rng.gen_range(1..16u8) * 4]);
        }
        for _ in 0..rng.gen_range(4..24) {
            body_instruction(rng, &mut out);
        }
        if rng.gen_bool(0.5) {
            out.extend([0x89, 0xec, 0x5d, 0xc3]);
        } else {
            out.extend([0xc9, 0xc3]);
        }
        let fill = if rng.gen_bool(0.5) { 0xcc } else { 0x90 };
        while out.len() % 16 != 0 {
            out.push(fill);
        }
    }
    out
}

const WORDS: &[&str] = &[
    "error", "file", "open", "read", "write", "failed", "invalid", "argument", "memory", "buffer", "size", "value",
    "user", "config", "path", "name", "version", "unknown", "option", "input", "output", "format", "string", "data",
    "server", "client", "connect", "timeout", "request", "response", "header", "length", "table", "index", "entry",
    "missing", "cannot", "allocate", "load", "module", "library", "symbol", "section", "address", "return", "code",
    "warning", "debug", "info", "trace", "start", "stop", "thread", "process", "window", "message", "default", "true",
    "false", "null", "usage", "help", "list", "print", "exit", "status", "success", "Copyright", "Microsoft", "Windows",
];

/// NUL-terminated text the way string tables look in a binary.
pub fn sample_strings<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 64);
    while out.len() < len {
        let n = rng.gen_range(1..8);
        for i in 0..n {
            if i > 0 {
                out.push(b' ');
            }
            out.extend_from_slice(WORDS.choose(rng).unwrap().as_bytes());
        }
        match rng.gen_range(0..6) {
            0 => out.extend_from_slice(b": %s"),
            1 => out.extend_from_slice(b" %d\n"),
            2 => out.push(b'.'),
            _ => {}
        }
        out.push(0);
        if rng.gen_bool(0.3) {
            while out.len() % 4 != 0 {
                out.push(0);
            }
        }
    }
    out.truncate(len);
    out
}

/// Little-endian dword tables: pointers into the image, small integers,
/// offsets.
pub fn sample_tables<R: Rng + ?Sized>(rng: &mut R, len: usize, image_base: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 64);
    while out.len() < len {
        let kind = rng.gen_range(0..3);
        let mut v = match kind {
            0 => image_base + 0x1000 + rng.gen_range(0..0x800u32),
            1 => rng.gen_range(0..64u32),
            _ => rng.gen_range(0..0x400u32),
        };
        let step = rng.gen_range(1..16u32) * 4;
        for _ in 0..rng.gen_range(4..32) {
            out.extend(v.to_le_bytes());
            v = v.wrapping_add(if kind == 1 { rng.gen_range(0..3) } else { step });
        }
    }
    out.truncate(len);
    out
}

/// Mostly zero, with the occasional alignment run of int3 or nop.
pub fn sample_zero_pad<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    let mut i = 0;
    while i < len {
        let run = rng.gen_range(16..256).min(len - i);
        if rng.gen_bool(0.2) {
            let b = if rng.gen_bool(0.5) { 0xcc } else { 0x90 };
            out[i..i + run].fill(b);
        }
        i += run;
    }
    out
}

pub fn sample_random<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    rng.fill(out.as_mut_slice());
    out
}
