use serde::{Deserialize, Serialize};

/// Four-level quality grade; the integer value is the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLabel {
    EasyNegative,
    MediumNegative,
    HardNegative,
    Positive,
}

impl QualityLabel {
    pub const ALL: [QualityLabel; 4] = [
        QualityLabel::EasyNegative,
        QualityLabel::MediumNegative,
        QualityLabel::HardNegative,
        QualityLabel::Positive,
    ];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn from_value(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            QualityLabel::EasyNegative => "easy_negative",
            QualityLabel::MediumNegative => "medium_negative",
            QualityLabel::HardNegative => "hard_negative",
            QualityLabel::Positive => "positive",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }

    pub fn as_f64(self) -> f64 {
        self.value() as f64
    }
}

impl std::fmt::Display for QualityLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
