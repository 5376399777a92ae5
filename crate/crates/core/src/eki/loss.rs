use crate::error::{Error, Result};
use crate::numkit::{backward_batch, forward_batch, DenseMatrix, MlpGrads, MlpParams, RngState};

pub const PROB_CLAMP: f64 = 1e-7;

/// Class-weighted binary cross-entropy of one stochastic pass plus an L2
/// penalty on the weight matrices.
///
/// Per sample `ℓ = −[ω·y·ln ŷ + (1−y)·ln(1−ŷ)]` with `ŷ` the network's
/// sigmoid output clamped to `[1e-7, 1−1e-7]`; the loss is the batch mean plus
/// `λ·‖W‖²`. Gradients are exact for the sampled dropout path and vanish
/// where the clamp is active.
pub fn eki_loss(
    params: &MlpParams,
    inputs: &DenseMatrix,
    labels: &[f64],
    omega: f64,
    lambda_l2: f64,
    dropout_enabled: bool,
    rng: RngState,
) -> Result<(f64, MlpGrads)> {
    let n = inputs.rows();
    if n == 0 {
        return Err(Error::input("empty batch"));
    }
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {n} samples",
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::input("labels must be 0 or 1"));
    }
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::input(format!(
            "class weight {omega} must be positive"
        )));
    }
    if params.out_dim() != 1 {
        return Err(Error::shape("proxy must have a single output"));
    }
    let (out, cache) = forward_batch(params, inputs, dropout_enabled, rng)?;
    let inv_n = 1.0 / n as f64;
    let mut data_loss = 0.0;
    let mut upstream = DenseMatrix::zeros(n, 1);
    for (i, &y) in labels.iter().enumerate() {
        let raw = out.get(i, 0);
        let yh = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let clamped = yh != raw;
        let l = -(omega * y * yh.ln() + (1.0 - y) * (1.0 - yh).ln());
        data_loss += l;
        if !clamped {
            let d = -(omega * y / yh) + (1.0 - y) / (1.0 - yh);
            upstream.set(i, 0, d * inv_n);
        }
    }
    let (mut grads, _) = backward_batch(params, &cache, &upstream)?;
    grads.add_l2(params, lambda_l2);
    Ok((
        data_loss * inv_n + lambda_l2 * params.weight_sq_norm(),
        grads,
    ))
}
