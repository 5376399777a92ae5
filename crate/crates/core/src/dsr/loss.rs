use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::DenseMatrix;

pub const LOG_CLAMP: f64 = 1e-7;

/// Gradients of a batch loss with respect to the query and target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrads {
    pub d_zq: DenseMatrix,
    pub d_zt: DenseMatrix,
}

impl PairGrads {
    fn zeros(b: usize, d: usize) -> Self {
        Self {
            d_zq: DenseMatrix::zeros(b, d),
            d_zt: DenseMatrix::zeros(b, d),
        }
    }

    fn add_scaled(&mut self, other: &PairGrads, s: f64) -> Result<()> {
        self.d_zq.add_scaled(&other.d_zq, s)?;
        self.d_zt.add_scaled(&other.d_zt, s)
    }
}

fn check_pair(zq: &DenseMatrix, zt: &DenseMatrix) -> Result<()> {
    if zq.rows() != zt.rows() || zq.cols() != zt.cols() {
        return Err(Error::shape(format!(
            "queries {}x{} and targets {}x{}",
            zq.rows(),
            zq.cols(),
            zt.rows(),
            zt.cols()
        )));
    }
    Ok(())
}

fn check_conf(c_hat: &[f64], b: usize) -> Result<()> {
    if c_hat.len() != b {
        return Err(Error::shape(format!(
            "{} confidences for batch {b}",
            c_hat.len()
        )));
    }
    if c_hat.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::input("confidences must lie in [0, 1]"));
    }
    Ok(())
}

fn need_negatives(b: usize) -> Result<()> {
    if b < 2 {
        return Err(Error::input(format!("batch of {b} has no negatives")));
    }
    Ok(())
}

/// `S = Zq·Ztᵀ`. Rows are expected to be L2-normalized, so entries are
/// cosine similarities.
pub fn similarity(zq: &DenseMatrix, zt: &DenseMatrix) -> Result<DenseMatrix> {
    check_pair(zq, zt)?;
    zq.matmul(&zt.transpose())
}

/// Row-wise softmax of `S/τ`. With `exclusive` the diagonal is left out of
/// each row's normalizer and gets probability 0.
fn softmax_rows(s: &DenseMatrix, tau: f64, exclusive: bool) -> DenseMatrix {
    let b = s.rows();
    let mut p = DenseMatrix::zeros(b, b);
    for i in 0..b {
        let row = s.row(i);
        let keep = |j: usize| !(exclusive && j == i);
        let peak = (0..b)
            .filter(|&j| keep(j))
            .map(|j| row[j] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in (0..b).filter(|&j| keep(j)) {
            let e = (row[j] / tau - peak).exp();
            p.set(i, j, e);
            total += e;
        }
        p.row_mut(i).iter_mut().for_each(|v| *v /= total);
    }
    p
}

/// Maps `dL/dS` to gradients on the rows: `dZq = dS·Zt`, `dZt = dSᵀ·Zq`.
fn pair_grads(ds: &DenseMatrix, zq: &DenseMatrix, zt: &DenseMatrix) -> Result<PairGrads> {
    Ok(PairGrads {
        d_zq: ds.matmul(zt)?,
        d_zt: ds.transpose().matmul(zq)?,
    })
}

fn validate_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("temperature {tau} must be positive")));
    }
    Ok(())
}

/// Confidence-gated robust contrastive loss:
/// `−(1/B) Σ_i ĉ_i Σ_{j≠i} ln(1 − p_ij)` with `p_ij` the softmax of `s_ij/τ`
/// over `j` (over `j ≠ i` when `exclusive`). `1 − p_ij` is clamped at 1e-7.
pub fn align_loss(
    zq: &DenseMatrix,
    zt: &DenseMatrix,
    c_hat: &[f64],
    tau: f64,
    exclusive: bool,
) -> Result<(f64, PairGrads)> {
    check_pair(zq, zt)?;
    let b = zq.rows();
    need_negatives(b)?;
    check_conf(c_hat, b)?;
    validate_tau(tau)?;
    if c_hat.iter().all(|&c| c == 0.0) {
        return Ok((0.0, PairGrads::zeros(b, zq.cols())));
    }
    let s = similarity(zq, zt)?;
    let p = softmax_rows(&s, tau, exclusive);
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut ds = DenseMatrix::zeros(b, b);
    let mut g = vec![0.0; b];
    for i in 0..b {
        let c = c_hat[i];
        let pr = p.row(i);
        let mut row_loss = 0.0;
        for j in (0..b).filter(|&j| j != i) {
            let keep = 1.0 - pr[j];
            if keep > LOG_CLAMP {
                row_loss -= keep.ln();
                g[j] = c * inv_b / keep;
            } else {
                row_loss -= LOG_CLAMP.ln();
                g[j] = 0.0;
            }
        }
        g[i] = 0.0;
        loss += c * row_loss;
        if c == 0.0 {
            continue;
        }
        // softmax backward: dl_ik = p_ik (g_ik − Σ_j g_ij p_ij)
        let inner: f64 = g.iter().zip(pr).map(|(a, b)| a * b).sum();
        for k in 0..b {
            ds.set(i, k, pr[k] * (g[k] - inner) / tau);
        }
    }
    Ok((loss * inv_b, pair_grads(&ds, zq, zt)?))
}

/// Reconciliation hinge:
/// `(1/C) Σ_i (1 − ĉ_i)·max((s_ii − α)/τ, 0)` with `C = Σ_i (1 − ĉ_i)`;
/// zero when `C = 0`.
pub fn recon_loss(
    zq: &DenseMatrix,
    zt: &DenseMatrix,
    c_hat: &[f64],
    alpha: f64,
    tau: f64,
) -> Result<(f64, PairGrads)> {
    check_pair(zq, zt)?;
    let b = zq.rows();
    check_conf(c_hat, b)?;
    validate_tau(tau)?;
    let mut grads = PairGrads::zeros(b, zq.cols());
    let c_total: f64 = c_hat.iter().map(|c| 1.0 - c).sum();
    if c_total == 0.0 {
        return Ok((0.0, grads));
    }
    let mut loss = 0.0;
    for i in 0..b {
        let w = 1.0 - c_hat[i];
        let (q, t) = (zq.row(i), zt.row(i));
        let s: f64 = q.iter().zip(t).map(|(a, b)| a * b).sum();
        if s > alpha && w > 0.0 {
            loss += w * (s - alpha) / tau;
            let coef = w / (c_total * tau);
            for (d, &tv) in grads.d_zq.row_mut(i).iter_mut().zip(t) {
                *d = coef * tv;
            }
            for (d, &qv) in grads.d_zt.row_mut(i).iter_mut().zip(q) {
                *d = coef * qv;
            }
        }
    }
    Ok((loss / c_total, grads))
}

/// Standard InfoNCE: `−(1/B) Σ_i ln p_ii` with `p_ii` clamped at 1e-7.
pub fn infonce_loss(zq: &DenseMatrix, zt: &DenseMatrix, tau: f64) -> Result<(f64, PairGrads)> {
    check_pair(zq, zt)?;
    let b = zq.rows();
    need_negatives(b)?;
    validate_tau(tau)?;
    let s = similarity(zq, zt)?;
    let p = softmax_rows(&s, tau, false);
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut ds = DenseMatrix::zeros(b, b);
    for i in 0..b {
        let pii = p.get(i, i);
        if pii > LOG_CLAMP {
            loss -= pii.ln();
            for k in 0..b {
                let delta = if k == i { 1.0 } else { 0.0 };
                ds.set(i, k, (p.get(i, k) - delta) * inv_b / tau);
            }
        } else {
            loss -= LOG_CLAMP.ln();
        }
    }
    Ok((loss * inv_b, pair_grads(&ds, zq, zt)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Airknow,
    Infonce,
}

/// Where samples go when only one stream is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoloRouting {
    /// Every sample enters the remaining stream at full weight
    /// (ĉ ≡ 1 for alignment alone, ĉ ≡ 0 for reconciliation alone).
    All,
    /// The remaining stream keeps its confidence gating.
    Gated,
}

/// Settings of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub mode: LossMode,
    pub align: bool,
    pub recon: bool,
    pub tau: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub exclusive_denominator: bool,
    pub solo_routing: SoloRouting,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveParts {
    pub align: f64,
    pub recon: f64,
    pub total: f64,
}

/// `L_align + λ·L_recon` with streams toggled by the spec, or InfoNCE.
pub fn total_objective(
    zq: &DenseMatrix,
    zt: &DenseMatrix,
    c_hat: &[f64],
    spec: &ObjectiveSpec,
) -> Result<(ObjectiveParts, PairGrads)> {
    check_pair(zq, zt)?;
    let b = zq.rows();
    if spec.mode == LossMode::Infonce {
        let (l, g) = infonce_loss(zq, zt, spec.tau)?;
        return Ok((
            ObjectiveParts {
                align: l,
                recon: 0.0,
                total: l,
            },
            g,
        ));
    }
    if !spec.align && !spec.recon {
        return Err(Error::config("both streams are disabled"));
    }
    let solo = spec.align != spec.recon && spec.solo_routing == SoloRouting::All;
    let mut parts = ObjectiveParts::default();
    let mut grads = PairGrads::zeros(b, zq.cols());
    if spec.align {
        let ones;
        let c = if solo {
            ones = vec![1.0; b];
            &ones
        } else {
            c_hat
        };
        let (l, g) = align_loss(zq, zt, c, spec.tau, spec.exclusive_denominator)?;
        parts.align = l;
        grads = g;
    }
    if spec.recon {
        let zeros;
        let c = if solo {
            zeros = vec![0.0; b];
            &zeros
        } else {
            c_hat
        };
        let (l, g) = recon_loss(zq, zt, c, spec.alpha, spec.tau)?;
        parts.recon = l;
        let scale = if spec.align { spec.lambda } else { 1.0 };
        grads.add_scaled(&g, scale)?;
        parts.total = parts.align + scale * l;
    } else {
        parts.total = parts.align;
    }
    Ok((parts, grads))
}
