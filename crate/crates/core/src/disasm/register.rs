use once_cell::sync::Lazy;

/// An architectural register named by a decoded operand.
///
/// The flags register is deliberately absent: implicit flag operands are
/// never materialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Register {
    /// `al cl dl bl spl bpl sil dil r8b..r15b`
    Gpr8(u8),
    /// `ah ch dh bh` (legacy high-byte registers, only reachable without REX)
    Gpr8High(u8),
    Gpr16(u8),
    Gpr32(u8),
    Gpr64(u8),
    Eip,
    Rip,
    Segment(u8),
    Control(u8),
    Debug(u8),
    Mmx(u8),
    Xmm(u8),
    Ymm(u8),
    Zmm(u8),
    St(u8),
}

const GPR8: [&str; 16] = [
    "al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil", "r8b", "r9b", "r10b", "r11b", "r12b",
    "r13b", "r14b", "r15b",
];
const GPR8_HIGH: [&str; 4] = ["ah", "ch", "dh", "bh"];
const GPR16: [&str; 16] = [
    "ax", "cx", "dx", "bx", "sp", "bp", "si", "di", "r8w", "r9w", "r10w", "r11w", "r12w", "r13w",
    "r14w", "r15w",
];
const GPR32: [&str; 16] = [
    "eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi", "r8d", "r9d", "r10d", "r11d", "r12d",
    "r13d", "r14d", "r15d",
];
const GPR64: [&str; 16] = [
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi", "r8", "r9", "r10", "r11", "r12", "r13",
    "r14", "r15",
];
const SEGMENT: [&str; 6] = ["es", "cs", "ss", "ds", "fs", "gs"];

static ALL: Lazy<Vec<(Register, String)>> = Lazy::new(|| {
    let mut all = Vec::new();
    for i in 0..16u8 {
        all.push((Register::Gpr8(i), GPR8[usize::from(i)].to_string()));
    }
    for i in 0..4u8 {
        all.push((Register::Gpr8High(i), GPR8_HIGH[usize::from(i)].to_string()));
    }
    for i in 0..16u8 {
        all.push((Register::Gpr16(i), GPR16[usize::from(i)].to_string()));
    }
    for i in 0..16u8 {
        all.push((Register::Gpr32(i), GPR32[usize::from(i)].to_string()));
    }
    for i in 0..16u8 {
        all.push((Register::Gpr64(i), GPR64[usize::from(i)].to_string()));
    }
    all.push((Register::Eip, "eip".to_string()));
    all.push((Register::Rip, "rip".to_string()));
    for i in 0..6u8 {
        all.push((Register::Segment(i), SEGMENT[usize::from(i)].to_string()));
    }
    for i in 0..16u8 {
        all.push((Register::Control(i), format!("cr{i}")));
    }
    for i in 0..16u8 {
        all.push((Register::Debug(i), format!("dr{i}")));
    }
    for i in 0..8u8 {
        all.push((Register::Mmx(i), format!("mm{i}")));
    }
    for i in 0..32u8 {
        all.push((Register::Xmm(i), format!("xmm{i}")));
    }
    for i in 0..32u8 {
        all.push((Register::Ymm(i), format!("ymm{i}")));
    }
    for i in 0..32u8 {
        all.push((Register::Zmm(i), format!("zmm{i}")));
    }
    for i in 0..8u8 {
        all.push((Register::St(i), format!("st{i}")));
    }
    all
});

impl Register {
    /// Every register the decoder can emit, in a fixed order.
    pub fn all() -> impl Iterator<Item = Register> {
        ALL.iter().map(|(r, _)| *r)
    }

    /// Position of this register in [`Register::all`].
    pub fn index(self) -> usize {
        let (base, n) = match self {
            Register::Gpr8(n) => (0, n),
            Register::Gpr8High(n) => (16, n),
            Register::Gpr16(n) => (20, n),
            Register::Gpr32(n) => (36, n),
            Register::Gpr64(n) => (52, n),
            Register::Eip => (68, 0),
            Register::Rip => (69, 0),
            Register::Segment(n) => (70, n),
            Register::Control(n) => (76, n),
            Register::Debug(n) => (92, n),
            Register::Mmx(n) => (108, n),
            Register::Xmm(n) => (116, n),
            Register::Ymm(n) => (148, n),
            Register::Zmm(n) => (180, n),
            Register::St(n) => (212, n),
        };
        base + usize::from(n)
    }

    pub fn as_str(self) -> &'static str {
        ALL[self.index()].1.as_str()
    }

    /// General-purpose register of the given operand width in bits.
    pub(crate) fn gpr(width: u16, num: u8, rex: bool) -> Register {
        match width {
            8 if !rex && (4..8).contains(&num) => Register::Gpr8High(num - 4),
            8 => Register::Gpr8(num),
            16 => Register::Gpr16(num),
            32 => Register::Gpr32(num),
            _ => Register::Gpr64(num),
        }
    }
}

impl std::fmt::Display for Register {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn high_byte_registers_need_no_rex() {
        assert_eq!(Register::gpr(8, 4, false).as_str(), "ah");
        assert_eq!(Register::gpr(8, 4, true).as_str(), "spl");
        assert_eq!(Register::gpr(32, 9, true).as_str(), "r9d");
    }

    #[test]
    fn index_matches_enumeration_order() {
        for (i, r) in Register::all().enumerate() {
            assert_eq!(r.index(), i, "{r:?}");
        }
        assert_eq!(Register::all().count(), 220);
    }

    #[test]
    fn no_flags_register() {
        assert!(Register::all().all(|r| !r.as_str().contains("flags")));
    }
}
