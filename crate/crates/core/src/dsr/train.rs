use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::heads::HeadParams;
use super::loss::{total_objective, LossMode, ObjectiveSpec, SoloRouting};
use crate::eki::{dataset_gdvs, gdv_matrix, infer_confidence_batch, EkiHyper};
use crate::error::{Error, Result};
use crate::numkit::{streams, MlpParams, Optimizer, OptimizerKind, RngState};
use crate::world::{Dataset, Triplet};

pub const HISTOGRAM_BINS: usize = 10;

/// When the frozen proxy scores the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSchedule {
    /// Once, on the embeddings the proxy was trained on, before the first step.
    Once,
    /// For every batch, on the current embeddings.
    PerBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsrHyper {
    pub tau: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub align: bool,
    pub recon: bool,
    pub mode: LossMode,
    pub exclusive_denominator: bool,
    pub solo_routing: SoloRouting,
    pub optimizer: OptimizerKind,
    pub confidence: ConfidenceSchedule,
}

impl Default for DsrHyper {
    fn default() -> Self {
        Self {
            tau: 0.07,
            alpha: 0.7,
            lambda: 0.5,
            lr: 1e-3,
            epochs: 30,
            batch_size: 256,
            align: true,
            recon: true,
            mode: LossMode::Airknow,
            exclusive_denominator: false,
            solo_routing: SoloRouting::All,
            optimizer: OptimizerKind::Adam,
            confidence: ConfidenceSchedule::Once,
        }
    }
}

impl DsrHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("dsr.tau = {} must be positive", self.tau));
        }
        if !(self.alpha > -1.0 && self.alpha < 1.0) {
            return bad(format!("dsr.alpha = {} outside (-1, 1)", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("dsr.lambda = {} must be nonnegative", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("dsr.lr = {} must be positive", self.lr));
        }
        if self.epochs == 0 {
            return bad("dsr.epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!(
                "dsr.batch_size = {} must be at least 2",
                self.batch_size
            ));
        }
        if self.mode == LossMode::Airknow && !self.align && !self.recon {
            return bad("dsr.align and dsr.recon are both disabled".into());
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveSpec {
        ObjectiveSpec {
            mode: self.mode,
            align: self.align,
            recon: self.recon,
            tau: self.tau,
            alpha: self.alpha,
            lambda: self.lambda,
            exclusive_denominator: self.exclusive_denominator,
            solo_routing: self.solo_routing,
        }
    }

    /// Whether training consults the proxy at all.
    pub fn uses_proxy(&self) -> bool {
        self.mode == LossMode::Airknow
            && !(self.align != self.recon && self.solo_routing == SoloRouting::All)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_align: f64,
    pub l_recon: f64,
    pub l_total: f64,
    /// Filled in by the evaluation layer, which may read corruption tags.
    pub mean_c_hat_clean: Option<f64>,
    pub mean_c_hat_noisy: Option<f64>,
    /// Counts of ĉ over `[0, 0.1), …, [0.9, 1]`.
    pub c_hat_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Per epoch, the confidence of every training triplet by dataset
    /// position (empty when the proxy is not used; NaN for triplets that
    /// were not visited).
    pub c_hat: Vec<Vec<f64>>,
}

impl TrainReport {
    /// CSV with one row per epoch. Missing class means are left empty.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("epoch,l_align,l_recon,l_total,mean_c_hat_clean,mean_c_hat_noisy\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch,
                e.l_align,
                e.l_recon,
                e.l_total,
                opt(e.mean_c_hat_clean),
                opt(e.mean_c_hat_noisy)
            ));
        }
        s
    }
}

fn histogram(values: &[f64]) -> Vec<usize> {
    let mut h = vec![0; HISTOGRAM_BINS];
    for &v in values.iter().filter(|v| !v.is_nan()) {
        let bin = ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        h[bin] += 1;
    }
    h
}

/// Confidence of each triplet in a batch from the frozen proxy, judged on
/// the current (detached) embeddings.
pub fn batch_confidence(
    proxy: &MlpParams,
    eki: &EkiHyper,
    triplets: &[&Triplet],
    zq: &crate::numkit::DenseMatrix,
    zt: &crate::numkit::DenseMatrix,
    rng: RngState,
) -> Result<Vec<f64>> {
    let gdv = gdv_matrix(triplets, zq, zt, eki.gdv)?;
    infer_confidence_batch(proxy, &gdv, eki.mc_passes, eki.dropout, rng)
}

/// Trains both heads on the full dataset with the proxy frozen.
///
/// Batches come from a per-epoch shuffle; a trailing batch of one sample is
/// skipped because it has no negatives.
pub fn train_stage2(
    dataset: &Dataset,
    proxy: Option<&MlpParams>,
    eki: &EkiHyper,
    heads: HeadParams,
    hyper: &DsrHyper,
    seed: u64,
) -> Result<(HeadParams, TrainReport)> {
    hyper.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let proxy = if hyper.uses_proxy() {
        let p = proxy.ok_or_else(|| Error::config("robust training needs a trained proxy"))?;
        let want = eki.gdv.dim(heads.dim());
        if p.in_dim() != want {
            return Err(Error::config(format!(
                "proxy takes {} inputs but the {} GDV has {want}",
                p.in_dim(),
                eki.gdv
            )));
        }
        Some(p)
    } else {
        None
    };
    let spec = hyper.objective();
    let mut heads = heads;
    let mut opt_q = Optimizer::new(hyper.optimizer, hyper.lr);
    let mut opt_t = Optimizer::new(hyper.optimizer, hyper.lr);
    let shuffle = RngState::new(seed, streams::DSR_SHUFFLE);
    let conf_rng = RngState::new(seed, streams::DSR_CONFIDENCE);
    let n = dataset.len();
    let fixed_c = match (proxy, hyper.confidence) {
        (Some(p), ConfidenceSchedule::Once) => {
            let all: Vec<&Triplet> = dataset.triplets.iter().collect();
            let gdv = dataset_gdvs(&all, &heads, eki.gdv)?;
            Some(infer_confidence_batch(
                p,
                &gdv,
                eki.mc_passes,
                eki.dropout,
                conf_rng,
            )?)
        }
        _ => None,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport {
        epochs: Vec::with_capacity(hyper.epochs),
        c_hat: Vec::new(),
    };
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut shuffle.derive(epoch as u64).generator());
        let mut sums = [0.0; 3];
        let mut seen = 0usize;
        let mut c_epoch = vec![f64::NAN; if proxy.is_some() { n } else { 0 }];
        for (b, rows) in order.chunks(hyper.batch_size).enumerate() {
            if rows.len() < 2 {
                continue;
            }
            let batch: Vec<&Triplet> = rows.iter().map(|&i| &dataset.triplets[i]).collect();
            let fwd = heads.forward(&batch)?;
            let c_hat = match (proxy, &fixed_c) {
                (Some(_), Some(all)) => {
                    let c: Vec<f64> = rows.iter().map(|&i| all[i]).collect();
                    for (&i, &v) in rows.iter().zip(&c) {
                        c_epoch[i] = v;
                    }
                    c
                }
                (Some(p), None) => {
                    let rng = conf_rng.derive(epoch as u64).derive(b as u64);
                    let c = batch_confidence(p, eki, &batch, &fwd.zq, &fwd.zt, rng)?;
                    for (&i, &v) in rows.iter().zip(&c) {
                        c_epoch[i] = v;
                    }
                    c
                }
                (None, _) => vec![1.0; rows.len()],
            };
            let (parts, g) = total_objective(&fwd.zq, &fwd.zt, &c_hat, &spec)?;
            let grads = heads.backward(&fwd, &g.d_zq, &g.d_zt)?;
            opt_q.step(&mut heads.compose, &grads.compose);
            opt_t.step(&mut heads.project, &grads.project);
            let w = rows.len() as f64;
            sums[0] += parts.align * w;
            sums[1] += parts.recon * w;
            sums[2] += parts.total * w;
            seen += rows.len();
        }
        let inv = 1.0 / seen.max(1) as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            l_align: sums[0] * inv,
            l_recon: sums[1] * inv,
            l_total: sums[2] * inv,
            mean_c_hat_clean: None,
            mean_c_hat_noisy: None,
            c_hat_histogram: histogram(&c_epoch),
        };
        info!(
            "stage 2 epoch {}: align {:.5} recon {:.5} total {:.5}",
            stats.epoch, stats.l_align, stats.l_recon, stats.l_total
        );
        report.epochs.push(stats);
        if proxy.is_some() {
            report.c_hat.push(c_epoch);
        }
    }
    Ok((heads, report))
}
