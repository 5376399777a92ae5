//! Expert-knowledge internalization: a Monte Carlo dropout proxy that learns
//! the arbiter's clean/noisy judgements from geometric matching evidence.

pub mod checkpoint;
pub mod elbo;
pub mod gdv;
pub mod infer;
pub mod loss;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{DenseMatrix, OptimizerKind};
use crate::world::Triplet;

pub use checkpoint::{read_checkpoint, write_checkpoint, CKPT_SCHEMA};
pub use elbo::{elbo_identity_check, elbo_terms, ElboTerms, ToyPosterior};
pub use gdv::{compose_gdv, gdv_matrix, GdvVariant, GdvVector};
pub use infer::{infer_confidence, infer_confidence_batch, Confidence};
pub use loss::{eki_loss, PROB_CLAMP};
pub use train::{anchor_examples, build_proxy, dataset_gdvs, train_eki, EkiTraining};

/// Source of query/target embeddings for the proxy input.
pub trait Embedder {
    fn embed_dim(&self) -> usize;

    /// Row `i` of each matrix embeds `triplets[i]`: `(z_q, z_t)`.
    fn embed(&self, triplets: &[&Triplet]) -> Result<(DenseMatrix, DenseMatrix)>;
}

/// How the clean-class weight ω is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OmegaRepr", into = "OmegaRepr")]
pub enum OmegaPolicy {
    /// Noisy/clean count ratio over the anchor set, clamped to `[0.1, 10]`.
    Ratio,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OmegaRepr {
    Number(f64),
    Name(String),
}

impl TryFrom<OmegaRepr> for OmegaPolicy {
    type Error = String;

    fn try_from(r: OmegaRepr) -> std::result::Result<Self, String> {
        match r {
            OmegaRepr::Number(w) => Ok(OmegaPolicy::Fixed(w)),
            OmegaRepr::Name(s) if s == "ratio" => Ok(OmegaPolicy::Ratio),
            OmegaRepr::Name(s) => Err(format!("expected \"ratio\" or a number, got {s:?}")),
        }
    }
}

impl From<OmegaPolicy> for OmegaRepr {
    fn from(p: OmegaPolicy) -> Self {
        match p {
            OmegaPolicy::Ratio => OmegaRepr::Name("ratio".into()),
            OmegaPolicy::Fixed(w) => OmegaRepr::Number(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkiHyper {
    pub dropout: f64,
    pub lambda_l2: f64,
    pub omega: OmegaPolicy,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mc_passes: usize,
    pub threshold: f64,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    pub gdv: GdvVariant,
    /// Train on per-feature standardized inputs, folding the scaling into the
    /// first layer afterwards so the proxy still reads raw GDVs.
    pub standardize: bool,
}

impl Default for EkiHyper {
    fn default() -> Self {
        Self {
            dropout: 0.1,
            lambda_l2: 1e-4,
            omega: OmegaPolicy::Ratio,
            lr: 5e-4,
            epochs: 2,
            batch_size: 256,
            mc_passes: 16,
            threshold: 0.5,
            optimizer: OptimizerKind::Adam,
            hidden: vec![512, 256],
            gdv: GdvVariant::Full,
            standardize: true,
        }
    }
}

impl EkiHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("eki.dropout = {} outside [0, 1)", self.dropout));
        }
        if !(self.lambda_l2 >= 0.0 && self.lambda_l2.is_finite()) {
            return bad(format!(
                "eki.lambda_l2 = {} must be nonnegative",
                self.lambda_l2
            ));
        }
        if let OmegaPolicy::Fixed(w) = self.omega {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("eki.omega = {w} must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("eki.lr = {} must be positive", self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("eki.epochs and eki.batch_size must be at least 1".into());
        }
        if self.mc_passes == 0 {
            return bad("eki.mc_passes must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("eki.threshold = {} outside [0, 1]", self.threshold));
        }
        if self.hidden.contains(&0) {
            return bad("eki.hidden widths must be positive".into());
        }
        Ok(())
    }
}
