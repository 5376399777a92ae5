use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::Corruption;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean,
    Noisy,
}

impl Label {
    /// Training target: clean = 1, noisy = 0.
    pub fn target(self) -> f64 {
        match self {
            Label::Clean => 1.0,
            Label::Noisy => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Noisy => "noisy",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cause of a noisy correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    None,
    MismatchedModificationText,
    MismatchedReferenceImage,
    MismatchedTargetImage,
}

impl Diagnosis {
    pub const CAUSES: [Diagnosis; 3] = [
        Diagnosis::MismatchedModificationText,
        Diagnosis::MismatchedReferenceImage,
        Diagnosis::MismatchedTargetImage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::None => "none",
            Diagnosis::MismatchedModificationText => "mismatched_modification_text",
            Diagnosis::MismatchedReferenceImage => "mismatched_reference_image",
            Diagnosis::MismatchedTargetImage => "mismatched_target_image",
        }
    }

    /// Human-readable name used in prompts and responses.
    pub fn title(self) -> &'static str {
        match self {
            Diagnosis::None => "None",
            Diagnosis::MismatchedModificationText => "Mismatched Modification Text",
            Diagnosis::MismatchedReferenceImage => "Mismatched Reference Image",
            Diagnosis::MismatchedTargetImage => "Mismatched Target Image",
        }
    }

    /// The diagnosis a perfect arbiter gives for a corruption kind.
    pub fn of_corruption(c: Corruption) -> Diagnosis {
        match c {
            Corruption::None => Diagnosis::None,
            Corruption::RefShuffle => Diagnosis::MismatchedReferenceImage,
            Corruption::ModShuffle => Diagnosis::MismatchedModificationText,
            Corruption::TarShuffle => Diagnosis::MismatchedTargetImage,
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Diagnosis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Diagnosis::None]
            .into_iter()
            .chain(Diagnosis::CAUSES)
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown diagnosis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub diagnosis: Diagnosis,
    pub rationale: String,
}

impl Verdict {
    /// Checks that a diagnosis is given exactly when the label is noisy.
    pub fn new(label: Label, diagnosis: Diagnosis, rationale: impl Into<String>) -> Result<Self> {
        if (label == Label::Clean) != (diagnosis == Diagnosis::None) {
            return Err(Error::input(format!(
                "label {label} is inconsistent with diagnosis {diagnosis}"
            )));
        }
        Ok(Self {
            label,
            diagnosis,
            rationale: rationale.into(),
        })
    }

    pub fn clean(rationale: impl Into<String>) -> Self {
        Self {
            label: Label::Clean,
            diagnosis: Diagnosis::None,
            rationale: rationale.into(),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.label == Label::Clean
    }
}
