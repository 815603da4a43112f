use serde::{Deserialize, Serialize};

/// What a region of bytes is, as far as the classifier is concerned.
///
/// The discriminants are the class indices used by the model head and by
/// every tie-break that prefers the smaller class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionLabel {
    /// Real, compiled code.
    Instruction = 0,
    /// Ordinary data of an unpacked program: strings, tables, padding.
    NativeData = 1,
    /// Compressed, encrypted or otherwise encoded payload.
    PackedData = 2,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 3] = [RegionLabel::Instruction, RegionLabel::NativeData, RegionLabel::PackedData];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<RegionLabel> {
        Self::ALL.get(i).copied()
    }

    /// Data bytes decode into pseudo instructions.
    pub fn is_pseudo(self) -> bool {
        self != RegionLabel::Instruction
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::Instruction => "Instruction",
            RegionLabel::NativeData => "NativeData",
            RegionLabel::PackedData => "PackedData",
        }
    }

    pub fn short(self) -> char {
        match self {
            RegionLabel::Instruction => 'I',
            RegionLabel::NativeData => 'N',
            RegionLabel::PackedData => 'P',
        }
    }
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RegionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RegionLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s) || s.len() == 1 && l.short() == s.chars().next().unwrap())
            .ok_or_else(|| format!("unknown region label `{s}`"))
    }
}
