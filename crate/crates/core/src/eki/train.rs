use log::{info, warn};
use rand::seq::SliceRandom;

use super::loss::{eki_loss, PROB_CLAMP};
use super::{EkiHyper, Embedder, GdvVariant, OmegaPolicy};
use crate::epa::AnchorRecord;
use crate::error::{Error, Result};
use crate::numkit::{
    forward_batch, streams, Activation, DenseMatrix, MlpParams, Optimizer, RngState,
};
use crate::world::{Dataset, Triplet};

const EMBED_CHUNK: usize = 1024;

#[derive(Debug, Clone)]
pub struct EkiTraining {
    pub params: MlpParams,
    pub omega: f64,
    /// Mean stochastic training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Deterministic full-anchor loss before the first and after the last
    /// step, measured on the inputs the proxy was trained on.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Untrained proxy: `gdv_dim → hidden… → 1`, rectifier layers followed by
/// dropout, sigmoid output.
pub fn build_proxy(gdv_dim: usize, hyper: &EkiHyper, rng: RngState) -> Result<MlpParams> {
    let mut dims = vec![gdv_dim];
    dims.extend(&hyper.hidden);
    dims.push(1);
    let n = dims.len() - 1;
    let mut acts = vec![Activation::Relu; n];
    acts[n - 1] = Activation::Sigmoid;
    let mut dropout = vec![hyper.dropout; n];
    dropout[n - 1] = 0.0;
    MlpParams::init(&dims, &acts, &dropout, rng)
}

/// Resolves anchor ids against the dataset and returns the triplets with
/// their 0/1 targets.
pub fn anchor_examples<'a>(
    anchor: &[AnchorRecord],
    dataset: &'a Dataset,
) -> Result<(Vec<&'a Triplet>, Vec<f64>)> {
    let index = dataset.index();
    let mut triplets = Vec::with_capacity(anchor.len());
    let mut labels = Vec::with_capacity(anchor.len());
    for r in anchor {
        let &i = index
            .get(r.id.as_str())
            .ok_or_else(|| Error::input(format!("anchor id {:?} not in dataset", r.id)))?;
        triplets.push(&dataset.triplets[i]);
        labels.push(r.verdict.label.target());
    }
    Ok((triplets, labels))
}

/// Proxy inputs for a list of triplets, embedded in chunks.
pub fn dataset_gdvs(
    triplets: &[&Triplet],
    embedder: &dyn Embedder,
    variant: GdvVariant,
) -> Result<DenseMatrix> {
    let d = variant.dim(embedder.embed_dim());
    let mut out = DenseMatrix::zeros(triplets.len(), d);
    for (c, chunk) in triplets.chunks(EMBED_CHUNK).enumerate() {
        let (zq, zt) = embedder.embed(chunk)?;
        let g = super::gdv_matrix(chunk, &zq, &zt, variant)?;
        let start = c * EMBED_CHUNK * d;
        out.values_mut()[start..start + g.values().len()].copy_from_slice(g.values());
    }
    Ok(out)
}

fn resolve_omega(policy: OmegaPolicy, labels: &[f64]) -> f64 {
    match policy {
        OmegaPolicy::Fixed(w) => w,
        OmegaPolicy::Ratio => {
            let clean = labels.iter().filter(|&&y| y == 1.0).count();
            let noisy = labels.len() - clean;
            if clean == 0 || noisy == 0 {
                warn!("anchor set holds a single class; using class weight 1");
                1.0
            } else {
                (noisy as f64 / clean as f64).clamp(0.1, 10.0)
            }
        }
    }
}

fn select_rows(x: &DenseMatrix, rows: &[usize]) -> DenseMatrix {
    let c = x.cols();
    let mut out = DenseMatrix::zeros(rows.len(), c);
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(x.row(r));
    }
    out
}

/// Column means and standard deviations; constant columns get scale 1.
fn column_stats(x: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (x.rows() as f64, x.cols());
    let mut mean = vec![0.0; c];
    for row in x.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for row in x.row_iter() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn standardize(x: &mut DenseMatrix, mean: &[f64], std: &[f64]) {
    let c = x.cols();
    for (k, v) in x.values_mut().iter_mut().enumerate() {
        let j = k % c;
        *v = (*v - mean[j]) / std[j];
    }
}

/// Rewrites the first layer so that it acts on raw inputs exactly as it did
/// on standardized ones.
fn fold_standardization(params: &mut MlpParams, mean: &[f64], std: &[f64]) {
    let first = &mut params.layers_mut()[0];
    for r in 0..first.weight.rows() {
        let row = first.weight.row_mut(r);
        let mut shift = 0.0;
        for ((w, m), s) in row.iter_mut().zip(mean).zip(std) {
            *w /= s;
            shift += *w * m;
        }
        first.bias[r] -= shift;
    }
}

/// Deterministic (dropout off) weighted BCE over all rows plus the L2 term.
pub(crate) fn full_loss(
    params: &MlpParams,
    x: &DenseMatrix,
    y: &[f64],
    omega: f64,
    lambda_l2: f64,
) -> Result<f64> {
    let n = x.rows();
    let mut total = 0.0;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EMBED_CHUNK) {
        let (out, _) = forward_batch(params, &select_rows(x, chunk), false, RngState::new(0, 0))?;
        for (k, &i) in chunk.iter().enumerate() {
            let yh = out.get(k, 0).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total += -(omega * y[i] * yh.ln() + (1.0 - y[i]) * (1.0 - yh).ln());
        }
    }
    Ok(total / n as f64 + lambda_l2 * params.weight_sq_norm())
}

/// Fits the proxy on the anchor set with the embeddings held fixed.
pub fn train_eki(
    anchor: &[AnchorRecord],
    dataset: &Dataset,
    embedder: &dyn Embedder,
    hyper: &EkiHyper,
    seed: u64,
) -> Result<EkiTraining> {
    hyper.validate()?;
    if anchor.is_empty() {
        return Err(Error::config("anchor set is empty"));
    }
    let (triplets, labels) = anchor_examples(anchor, dataset)?;
    let mut x = dataset_gdvs(&triplets, embedder, hyper.gdv)?;
    let stats = hyper.standardize.then(|| column_stats(&x));
    if let Some((mean, std)) = &stats {
        standardize(&mut x, mean, std);
    }
    let omega = resolve_omega(hyper.omega, &labels);
    let mut params = build_proxy(x.cols(), hyper, RngState::new(seed, streams::EKI_INIT))?;
    let initial_loss = full_loss(&params, &x, &labels, omega, hyper.lambda_l2)?;
    let mut opt = Optimizer::new(hyper.optimizer, hyper.lr);
    let shuffle = RngState::new(seed, streams::EKI_SHUFFLE);
    let dropout = RngState::new(seed, streams::EKI_DROPOUT);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut shuffle.derive(epoch as u64).generator());
        let mut sum = 0.0;
        for (b, rows) in order.chunks(hyper.batch_size).enumerate() {
            let xb = select_rows(&x, rows);
            let yb: Vec<f64> = rows.iter().map(|&i| labels[i]).collect();
            let rng = dropout.derive(epoch as u64).derive(b as u64);
            let (loss, grads) = eki_loss(&params, &xb, &yb, omega, hyper.lambda_l2, true, rng)?;
            sum += loss * rows.len() as f64;
            opt.step(&mut params, &grads);
        }
        let mean = sum / x.rows() as f64;
        info!("eki epoch {}: loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    let final_loss = full_loss(&params, &x, &labels, omega, hyper.lambda_l2)?;
    if let Some((mean, std)) = &stats {
        fold_standardization(&mut params, mean, std);
    }
    Ok(EkiTraining {
        params,
        omega,
        epoch_losses,
        initial_loss,
        final_loss,
    })
}
