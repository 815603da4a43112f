//! The closed mnemonic set produced by the decoder.
//!
//! Vector extensions (MMX, SSE, 3DNow!, VEX, EVEX) and x87 collapse into the
//! class tokens `sse`, `avx`, `avx512` and `fpu`. Privileged forms that have
//! no dedicated entry collapse into `system`.

macro_rules! mnemonics {
    ($($variant:ident => $text:literal),* $(,)?) => {
        /// A decoded instruction mnemonic.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Mnemonic {
            $($variant),*
        }

        impl Mnemonic {
            /// Every mnemonic in declaration order.
            pub const ALL: &'static [Mnemonic] = &[$(Mnemonic::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(Mnemonic::$variant => $text),*
                }
            }
        }
    };
}

mnemonics! {
    // ALU group, in opcode order (00..3F, 80..83 /r)
    Add => "add", Or => "or", Adc => "adc", Sbb => "sbb",
    And => "and", Sub => "sub", Xor => "xor", Cmp => "cmp",
    Push => "push", Pop => "pop",
    Daa => "daa", Das => "das", Aaa => "aaa", Aas => "aas",
    Inc => "inc", Dec => "dec",
    Pusha => "pusha", Popa => "popa", Bound => "bound", Arpl => "arpl", Movsxd => "movsxd",
    Imul => "imul",
    Insb => "insb", Insw => "insw", Insd => "insd",
    Outsb => "outsb", Outsw => "outsw", Outsd => "outsd",
    // Jcc, in condition-code order
    Jo => "jo", Jno => "jno", Jb => "jb", Jae => "jae", Je => "je", Jne => "jne", Jbe => "jbe", Ja => "ja",
    Js => "js", Jns => "jns", Jp => "jp", Jnp => "jnp", Jl => "jl", Jge => "jge", Jle => "jle", Jg => "jg",
    Test => "test", Xchg => "xchg", Mov => "mov", Lea => "lea", Nop => "nop", Pause => "pause",
    Cbw => "cbw", Cwde => "cwde", Cdqe => "cdqe", Cwd => "cwd", Cdq => "cdq", Cqo => "cqo",
    Call => "call", CallFar => "lcall", Jmp => "jmp", JmpFar => "ljmp",
    Wait => "wait", Pushf => "pushf", Popf => "popf", Sahf => "sahf", Lahf => "lahf",
    Movsb => "movsb", Movsw => "movsw", Movsd => "movsd", Movsq => "movsq",
    Cmpsb => "cmpsb", Cmpsw => "cmpsw", Cmpsd => "cmpsd", Cmpsq => "cmpsq",
    Stosb => "stosb", Stosw => "stosw", Stosd => "stosd", Stosq => "stosq",
    Lodsb => "lodsb", Lodsw => "lodsw", Lodsd => "lodsd", Lodsq => "lodsq",
    Scasb => "scasb", Scasw => "scasw", Scasd => "scasd", Scasq => "scasq",
    Ret => "ret", Retf => "retf", Les => "les", Lds => "lds", Enter => "enter", Leave => "leave",
    Int3 => "int3", Int => "int", Into => "into", Int1 => "int1", Iret => "iret",
    // Shift group, in /r order
    Rol => "rol", Ror => "ror", Rcl => "rcl", Rcr => "rcr", Shl => "shl", Shr => "shr", Sal => "sal", Sar => "sar",
    Aam => "aam", Aad => "aad", Salc => "salc", Xlat => "xlat",
    Loopne => "loopne", Loope => "loope", Loop => "loop", Jcxz => "jcxz", Jecxz => "jecxz", Jrcxz => "jrcxz",
    In => "in", Out => "out", Hlt => "hlt", Cmc => "cmc",
    Not => "not", Neg => "neg", Mul => "mul", Div => "div", Idiv => "idiv",
    Clc => "clc", Stc => "stc", Cli => "cli", Sti => "sti", Cld => "cld", Std => "std",
    Xabort => "xabort", Xbegin => "xbegin",
    // two-byte map
    Sldt => "sldt", Str => "str", Lldt => "lldt", Ltr => "ltr", Verr => "verr", Verw => "verw",
    Sgdt => "sgdt", Sidt => "sidt", Lgdt => "lgdt", Lidt => "lidt", Smsw => "smsw", Lmsw => "lmsw", Invlpg => "invlpg",
    Monitor => "monitor", Mwait => "mwait", Clac => "clac", Stac => "stac", Xgetbv => "xgetbv", Xsetbv => "xsetbv",
    Vmcall => "vmcall", Vmlaunch => "vmlaunch", Vmresume => "vmresume", Vmxoff => "vmxoff",
    Swapgs => "swapgs", Rdtscp => "rdtscp", Xend => "xend", Xtest => "xtest",
    Lar => "lar", Lsl => "lsl", Syscall => "syscall", Clts => "clts", Sysret => "sysret",
    Invd => "invd", Wbinvd => "wbinvd", Ud2 => "ud2", Ud1 => "ud1", Ud0 => "ud0", Prefetch => "prefetch",
    Wrmsr => "wrmsr", Rdtsc => "rdtsc", Rdmsr => "rdmsr", Rdpmc => "rdpmc",
    Sysenter => "sysenter", Sysexit => "sysexit", Getsec => "getsec",
    // CMOVcc and SETcc, in condition-code order
    Cmovo => "cmovo", Cmovno => "cmovno", Cmovb => "cmovb", Cmovae => "cmovae",
    Cmove => "cmove", Cmovne => "cmovne", Cmovbe => "cmovbe", Cmova => "cmova",
    Cmovs => "cmovs", Cmovns => "cmovns", Cmovp => "cmovp", Cmovnp => "cmovnp",
    Cmovl => "cmovl", Cmovge => "cmovge", Cmovle => "cmovle", Cmovg => "cmovg",
    Seto => "seto", Setno => "setno", Setb => "setb", Setae => "setae",
    Sete => "sete", Setne => "setne", Setbe => "setbe", Seta => "seta",
    Sets => "sets", Setns => "setns", Setp => "setp", Setnp => "setnp",
    Setl => "setl", Setge => "setge", Setle => "setle", Setg => "setg",
    Vmread => "vmread", Vmwrite => "vmwrite",
    Cpuid => "cpuid", Bt => "bt", Bts => "bts", Btr => "btr", Btc => "btc",
    Shld => "shld", Shrd => "shrd", Rsm => "rsm", Cmpxchg => "cmpxchg",
    Lss => "lss", Lfs => "lfs", Lgs => "lgs", Movzx => "movzx", Movsx => "movsx",
    Popcnt => "popcnt", Bsf => "bsf", Bsr => "bsr", Tzcnt => "tzcnt", Lzcnt => "lzcnt",
    Xadd => "xadd", Movnti => "movnti", Bswap => "bswap",
    Cmpxchg8b => "cmpxchg8b", Cmpxchg16b => "cmpxchg16b", Rdrand => "rdrand", Rdseed => "rdseed",
    Fxsave => "fxsave", Fxrstor => "fxrstor", Ldmxcsr => "ldmxcsr", Stmxcsr => "stmxcsr",
    Xsave => "xsave", Xrstor => "xrstor", Xsaveopt => "xsaveopt", Clflush => "clflush",
    Lfence => "lfence", Mfence => "mfence", Sfence => "sfence",
    Movbe => "movbe", Crc32 => "crc32",
    // class tokens
    Sse => "sse", Avx => "avx", Avx512 => "avx512", Fpu => "fpu", System => "system",
}

impl std::fmt::Display for Mnemonic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const ALU: [Mnemonic; 8] = [
    Mnemonic::Add,
    Mnemonic::Or,
    Mnemonic::Adc,
    Mnemonic::Sbb,
    Mnemonic::And,
    Mnemonic::Sub,
    Mnemonic::Xor,
    Mnemonic::Cmp,
];

const SHIFT: [Mnemonic; 8] = [
    Mnemonic::Rol,
    Mnemonic::Ror,
    Mnemonic::Rcl,
    Mnemonic::Rcr,
    Mnemonic::Shl,
    Mnemonic::Shr,
    Mnemonic::Sal,
    Mnemonic::Sar,
];

const JCC: [Mnemonic; 16] = [
    Mnemonic::Jo,
    Mnemonic::Jno,
    Mnemonic::Jb,
    Mnemonic::Jae,
    Mnemonic::Je,
    Mnemonic::Jne,
    Mnemonic::Jbe,
    Mnemonic::Ja,
    Mnemonic::Js,
    Mnemonic::Jns,
    Mnemonic::Jp,
    Mnemonic::Jnp,
    Mnemonic::Jl,
    Mnemonic::Jge,
    Mnemonic::Jle,
    Mnemonic::Jg,
];

const CMOV: [Mnemonic; 16] = [
    Mnemonic::Cmovo,
    Mnemonic::Cmovno,
    Mnemonic::Cmovb,
    Mnemonic::Cmovae,
    Mnemonic::Cmove,
    Mnemonic::Cmovne,
    Mnemonic::Cmovbe,
    Mnemonic::Cmova,
    Mnemonic::Cmovs,
    Mnemonic::Cmovns,
    Mnemonic::Cmovp,
    Mnemonic::Cmovnp,
    Mnemonic::Cmovl,
    Mnemonic::Cmovge,
    Mnemonic::Cmovle,
    Mnemonic::Cmovg,
];

const SETCC: [Mnemonic; 16] = [
    Mnemonic::Seto,
    Mnemonic::Setno,
    Mnemonic::Setb,
    Mnemonic::Setae,
    Mnemonic::Sete,
    Mnemonic::Setne,
    Mnemonic::Setbe,
    Mnemonic::Seta,
    Mnemonic::Sets,
    Mnemonic::Setns,
    Mnemonic::Setp,
    Mnemonic::Setnp,
    Mnemonic::Setl,
    Mnemonic::Setge,
    Mnemonic::Setle,
    Mnemonic::Setg,
];

pub(crate) fn alu(index: u8) -> Mnemonic {
    ALU[usize::from(index & 7)]
}

pub(crate) fn shift(index: u8) -> Mnemonic {
    SHIFT[usize::from(index & 7)]
}

pub(crate) fn jcc(cc: u8) -> Mnemonic {
    JCC[usize::from(cc & 15)]
}

pub(crate) fn cmov(cc: u8) -> Mnemonic {
    CMOV[usize::from(cc & 15)]
}

pub(crate) fn setcc(cc: u8) -> Mnemonic {
    SETCC[usize::from(cc & 15)]
}
