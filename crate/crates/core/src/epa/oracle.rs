use rand::Rng;
use serde::{Deserialize, Serialize};

use super::verdict::{Diagnosis, Label, Verdict};
use crate::error::{Error, Result};
use crate::numkit::RngState;
use crate::world::Triplet;

/// Reported accuracy of the strongest multimodal arbiter on the open-domain
/// benchmark at 20% noise.
pub const GPT4O_ACCURACY: f64 = 0.8516;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArbiterKind {
    Oracle,
    Remote,
}

/// Error profile of an arbiter: the probability of judging a clean triplet
/// clean and a noisy triplet noisy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbiterModel {
    pub kind: ArbiterKind,
    pub p_clean_correct: f64,
    pub p_noisy_correct: f64,
}

impl ArbiterModel {
    pub fn oracle(p_clean_correct: f64, p_noisy_correct: f64) -> Result<Self> {
        let m = Self {
            kind: ArbiterKind::Oracle,
            p_clean_correct,
            p_noisy_correct,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn perfect() -> Self {
        Self {
            kind: ArbiterKind::Oracle,
            p_clean_correct: 1.0,
            p_noisy_correct: 1.0,
        }
    }

    /// Oracle with both class accuracies equal to `accuracy`.
    pub fn calibrated(accuracy: f64) -> Result<Self> {
        Self::oracle(accuracy, accuracy)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_clean_correct", self.p_clean_correct),
            ("p_noisy_correct", self.p_noisy_correct),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Simulated expert verdict for one triplet.
///
/// Only the corruption tag is consulted, never the embeddings. One uniform
/// draw decides whether the verdict is correct; a second picks the cause when
/// a clean triplet is wrongly called noisy.
pub fn oracle_arbitrate(triplet: &Triplet, model: &ArbiterModel, rng: RngState) -> Result<Verdict> {
    if model.kind != ArbiterKind::Oracle {
        return Err(Error::config(
            "oracle arbitration needs an oracle arbiter model",
        ));
    }
    let truth = triplet.oracle_corruption();
    let mut g = rng.generator();
    let u: f64 = g.random();
    let verdict = if truth.is_clean() {
        if u < model.p_clean_correct {
            Verdict::clean("simulated arbiter: components agree")
        } else {
            let cause = Diagnosis::CAUSES[g.random_range(0..3)];
            Verdict {
                label: Label::Noisy,
                diagnosis: cause,
                rationale: format!("simulated arbiter (error): {}", cause.title()),
            }
        }
    } else if u < model.p_noisy_correct {
        let cause = Diagnosis::of_corruption(truth);
        Verdict {
            label: Label::Noisy,
            diagnosis: cause,
            rationale: format!("simulated arbiter: {}", cause.title()),
        }
    } else {
        Verdict::clean("simulated arbiter (error): components agree")
    };
    Ok(verdict)
}

/// Anything that can judge a triplet.
pub trait Arbiter {
    fn arbitrate(&self, triplet: &Triplet, rng: RngState) -> Result<Verdict>;

    /// Short identifier written into anchor-file headers.
    fn describe(&self) -> String;
}

impl Arbiter for ArbiterModel {
    fn arbitrate(&self, triplet: &Triplet, rng: RngState) -> Result<Verdict> {
        oracle_arbitrate(triplet, self, rng)
    }

    fn describe(&self) -> String {
        format!(
            "oracle(clean={}, noisy={})",
            self.p_clean_correct, self.p_noisy_correct
        )
    }
}
