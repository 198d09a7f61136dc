//! The five image classes and their stable integer codes.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Image class. The integer codes are fixed and used by every file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    Normal = 0,
    Lung = 1,
    HeadNeck = 2,
    Oesophagus = 3,
    Lymphoma = 4,
}

pub const NUM_CLASSES: usize = 5;

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Normal,
        ClassLabel::Lung,
        ClassLabel::HeadNeck,
        ClassLabel::Oesophagus,
        ClassLabel::Lymphoma,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: i64) -> Result<Self, Error> {
        usize::try_from(code)
            .ok()
            .and_then(|c| Self::ALL.get(c).copied())
            .ok_or(Error::UnknownClassCode(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Normal => "normal",
            ClassLabel::Lung => "lung",
            ClassLabel::HeadNeck => "head_neck",
            ClassLabel::Oesophagus => "oesophagus",
            ClassLabel::Lymphoma => "lymphoma",
        }
    }

    /// Canonical ordering string recorded in checkpoint metadata.
    pub fn ordering() -> String {
        Self::ALL.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

/// Convex weights over the five classes. A plain label is a one-hot mix;
/// cross-class latent walks use fractional mixes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMix(pub [f64; NUM_CLASSES]);

impl ClassMix {
    pub fn one_hot(label: ClassLabel) -> Self {
        let mut w = [0.0; NUM_CLASSES];
        w[label.code()] = 1.0;
        ClassMix(w)
    }

    /// `(1 - t) * from + t * to`.
    pub fn blend(from: ClassLabel, to: ClassLabel, t: f64) -> Self {
        let mut w = [0.0; NUM_CLASSES];
        w[from.code()] += 1.0 - t;
        w[to.code()] += t;
        ClassMix(w)
    }
}

impl From<ClassLabel> for ClassMix {
    fn from(label: ClassLabel) -> Self {
        ClassMix::one_hot(label)
    }
}
