use crate::error::{Error, Result};
use crate::numkit::{mc_forward, DenseMatrix, MlpParams, RngState};

const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Confidence {
    pub value: f64,
    pub passes: usize,
    pub per_pass: Option<Vec<f64>>,
}

/// Mean written as an offset from the first pass, so identical passes give
/// back exactly that value; clamped to the observed range.
fn pass_mean(v: &[f64]) -> f64 {
    let x0 = v[0];
    let dev: f64 = v.iter().map(|x| x - x0).sum();
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    (x0 + dev / v.len() as f64).clamp(lo, hi)
}

fn check(passes: usize) -> Result<()> {
    if passes == 0 {
        return Err(Error::input("need at least one Monte Carlo pass"));
    }
    Ok(())
}

/// Average of `passes` stochastic forward passes with every dropout site of
/// the proxy at rate `p`. Pass `t` draws its masks from `rng.derive(t)`.
pub fn infer_confidence(
    params: &MlpParams,
    gdv: &[f64],
    passes: usize,
    p: f64,
    rng: RngState,
) -> Result<Confidence> {
    check(passes)?;
    let net = params.with_dropout_rate(p)?;
    let x = DenseMatrix::from_vec(1, gdv.len(), gdv.to_vec())?;
    let out = mc_forward(&net, &x, passes, |_, t| rng.derive(t as u64))?;
    let per_pass = out.row(0).to_vec();
    Ok(Confidence {
        value: pass_mean(&per_pass),
        passes,
        per_pass: Some(per_pass),
    })
}

/// Confidence for every row of `gdvs`. Row `i` equals
/// `infer_confidence(params, gdvs.row(i), passes, p, rng.derive(i))`.
pub fn infer_confidence_batch(
    params: &MlpParams,
    gdvs: &DenseMatrix,
    passes: usize,
    p: f64,
    rng: RngState,
) -> Result<Vec<f64>> {
    check(passes)?;
    let net = params.with_dropout_rate(p)?;
    let mut conf = Vec::with_capacity(gdvs.rows());
    let cols = gdvs.cols();
    for (c, chunk) in gdvs.values().chunks(CHUNK_ROWS * cols.max(1)).enumerate() {
        let x = DenseMatrix::from_vec(chunk.len() / cols.max(1), cols, chunk.to_vec())?;
        let base = c * CHUNK_ROWS;
        let out = mc_forward(&net, &x, passes, |i, t| {
            rng.derive((base + i) as u64).derive(t as u64)
        })?;
        conf.extend(out.row_iter().map(pass_mean));
    }
    Ok(conf)
}
