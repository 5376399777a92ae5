use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::eki::Embedder;
use crate::error::{Error, Result};
use crate::numkit::{
    backward_batch, forward_batch, Activation, DenseMatrix, ForwardCache, Layer, MlpGrads,
    MlpParams, RngState,
};
use crate::world::{Triplet, World};

/// Composition head `[z_r ‖ z_m] → z_q` and target projection `z_t → z_t'`,
/// both followed by L2 normalization. Together they stand in for a
/// pretrained vision-language backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub compose: MlpParams,
    pub project: MlpParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInitKind {
    Random,
    Pretrained,
}

/// Starting point of the heads.
///
/// `Pretrained` mimics a backbone that already aligns the two modalities but
/// fuses them naively: the composition starts at
/// `ref_weight·z_r + mod_weight·Mᵀz_m`, the projection at the identity, every
/// weight matrix is perturbed by Gaussian noise of scale
/// `perturbation/√fan_in`, and both outputs share a common offset of norm
/// `offset` so that unrelated pairs already have positive similarity.
/// `denoise` in `[0, 1]` shrinks both inputs toward the span of the world's
/// concepts, the way a backbone trained on the same vocabulary would
/// suppress directions it never saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadInit {
    pub kind: HeadInitKind,
    pub ref_weight: f64,
    pub mod_weight: f64,
    pub perturbation: f64,
    pub offset: f64,
    pub denoise: f64,
}

impl Default for HeadInit {
    fn default() -> Self {
        Self {
            kind: HeadInitKind::Pretrained,
            ref_weight: 1.0,
            mod_weight: 1.26,
            perturbation: 1.25,
            offset: 1.6,
            denoise: 1.0,
        }
    }
}

impl HeadInit {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ref_weight", self.ref_weight),
            ("mod_weight", self.mod_weight),
            ("perturbation", self.perturbation),
            ("offset", self.offset),
            ("denoise", self.denoise),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("heads.{name} must be finite")));
            }
        }
        if self.perturbation < 0.0 || self.offset < 0.0 {
            return Err(Error::config(
                "heads.perturbation and heads.offset must be nonnegative",
            ));
        }
        if !(0.0..=1.0).contains(&self.denoise) {
            return Err(Error::config("heads.denoise must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn perturb(w: &mut DenseMatrix, scale: f64, g: &mut impl Rng) {
    if scale == 0.0 {
        return;
    }
    let s = scale / (w.cols() as f64).sqrt();
    for v in w.values_mut() {
        let e: f64 = g.sample(StandardNormal);
        *v += s * e;
    }
}

impl HeadParams {
    pub fn random(dim: usize, rng: RngState) -> Result<Self> {
        let compose = MlpParams::init(
            &[2 * dim, 2 * dim, dim],
            &[Activation::Relu, Activation::Identity],
            &[0.0, 0.0],
            rng.derive(0),
        )?;
        let project = MlpParams::init(&[dim, dim], &[Activation::Identity], &[0.0], rng.derive(1))?;
        Ok(Self { compose, project })
    }

    pub fn pretrained(world: &World, init: &HeadInit, rng: RngState) -> Result<Self> {
        init.validate()?;
        let d = world.dim();
        let m = &world.modality_map;
        let mut g = rng.generator();
        let mut offset: Vec<f64> = (0..d).map(|_| g.sample(StandardNormal)).collect();
        let n = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
        offset.iter_mut().for_each(|v| *v *= init.offset / n);

        // F = I − denoise·(I − P)
        let p = world.concept_projector()?;
        let mut filter = DenseMatrix::identity(d);
        for (f, pv) in filter.values_mut().iter_mut().zip(p.values()) {
            *f = (1.0 - init.denoise) * *f + init.denoise * pv;
        }
        // F·Mᵀ
        let mut fm = DenseMatrix::zeros(d, d);
        for k in 0..d {
            for j in 0..d {
                let fkj = filter.get(k, j);
                if fkj == 0.0 {
                    continue;
                }
                let row = fm.row_mut(k);
                for (r, v) in row.iter_mut().enumerate() {
                    *v += fkj * m.get(r, j);
                }
            }
        }
        // x = relu(x) − relu(−x) keeps the fused map linear through the
        // rectifier: hidden rows are [A; −A], the output layer is [I, −I].
        let mut w1 = DenseMatrix::zeros(2 * d, 2 * d);
        for k in 0..d {
            for j in 0..d {
                let a = init.ref_weight * filter.get(k, j);
                let b = init.mod_weight * fm.get(k, j);
                w1.set(k, j, a);
                w1.set(k, d + j, b);
                w1.set(d + k, j, -a);
                w1.set(d + k, d + j, -b);
            }
        }
        let mut w2 = DenseMatrix::zeros(d, 2 * d);
        for k in 0..d {
            w2.set(k, k, 1.0);
            w2.set(k, d + k, -1.0);
        }
        let mut wp = filter;
        perturb(&mut w1, init.perturbation, &mut g);
        perturb(&mut w2, init.perturbation, &mut g);
        perturb(&mut wp, init.perturbation, &mut g);
        let compose = MlpParams::new(
            vec![
                Layer {
                    weight: w1,
                    bias: vec![0.0; 2 * d],
                    activation: Activation::Relu,
                    dropout: 0.0,
                },
                Layer {
                    weight: w2,
                    bias: offset.clone(),
                    activation: Activation::Identity,
                    dropout: 0.0,
                },
            ],
            0.0,
        )?;
        let project = MlpParams::new(
            vec![Layer {
                weight: wp,
                bias: offset,
                activation: Activation::Identity,
                dropout: 0.0,
            }],
            0.0,
        )?;
        Ok(Self { compose, project })
    }

    pub fn init(world: &World, init: &HeadInit, rng: RngState) -> Result<Self> {
        match init.kind {
            HeadInitKind::Random => Self::random(world.dim(), rng),
            HeadInitKind::Pretrained => Self::pretrained(world, init, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.project.out_dim()
    }

    /// Normalized embeddings for a batch plus what the backward pass needs.
    pub fn forward(&self, triplets: &[&Triplet]) -> Result<HeadForward> {
        let d = self.dim();
        let n = triplets.len();
        let mut xq = DenseMatrix::zeros(n, 2 * d);
        let mut xt = DenseMatrix::zeros(n, d);
        for (i, t) in triplets.iter().enumerate() {
            if t.z_r.len() != d || t.z_m.len() != d || t.z_t.len() != d {
                return Err(Error::shape(format!(
                    "triplet {} does not have dimension {d}",
                    t.id
                )));
            }
            let row = xq.row_mut(i);
            row[..d].copy_from_slice(&t.z_r);
            row[d..].copy_from_slice(&t.z_m);
            xt.row_mut(i).copy_from_slice(&t.z_t);
        }
        self.forward_raw(&xq, &xt)
    }

    /// Forward pass from explicit `[z_r ‖ z_m]` rows and `z_t` rows.
    pub fn forward_raw(&self, xq: &DenseMatrix, xt: &DenseMatrix) -> Result<HeadForward> {
        let dummy = RngState::new(0, 0);
        let (yq, cq) = forward_batch(&self.compose, xq, false, dummy)?;
        let (yt, ct) = forward_batch(&self.project, xt, false, dummy)?;
        let (zq, nq) = normalize_rows(yq)?;
        let (zt, nt) = normalize_rows(yt)?;
        Ok(HeadForward {
            zq,
            zt,
            norms_q: nq,
            norms_t: nt,
            cache_q: cq,
            cache_t: ct,
        })
    }

    /// Parameter gradients given gradients with respect to the normalized
    /// embeddings.
    pub fn backward(
        &self,
        fwd: &HeadForward,
        d_zq: &DenseMatrix,
        d_zt: &DenseMatrix,
    ) -> Result<HeadGrads> {
        let dyq = normalize_backward(&fwd.zq, &fwd.norms_q, d_zq)?;
        let dyt = normalize_backward(&fwd.zt, &fwd.norms_t, d_zt)?;
        let (compose, _) = backward_batch(&self.compose, &fwd.cache_q, &dyq)?;
        let (project, _) = backward_batch(&self.project, &fwd.cache_t, &dyt)?;
        Ok(HeadGrads { compose, project })
    }
}

#[derive(Debug, Clone)]
pub struct HeadForward {
    pub zq: DenseMatrix,
    pub zt: DenseMatrix,
    norms_q: Vec<f64>,
    norms_t: Vec<f64>,
    cache_q: ForwardCache,
    cache_t: ForwardCache,
}

#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub compose: MlpGrads,
    pub project: MlpGrads,
}

fn normalize_rows(mut y: DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let mut norms = Vec::with_capacity(y.rows());
    for i in 0..y.rows() {
        let row = y.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::domain(format!("head output {i} has zero norm")));
        }
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((y, norms))
}

/// For `z = y/‖y‖`: `dy = (dz − z·(z·dz)) / ‖y‖`.
fn normalize_backward(z: &DenseMatrix, norms: &[f64], dz: &DenseMatrix) -> Result<DenseMatrix> {
    if dz.rows() != z.rows() || dz.cols() != z.cols() {
        return Err(Error::shape(format!(
            "gradient {}x{} for embeddings {}x{}",
            dz.rows(),
            dz.cols(),
            z.rows(),
            z.cols()
        )));
    }
    let mut dy = dz.clone();
    for (i, &n) in norms.iter().enumerate() {
        let zr = z.row(i);
        let proj: f64 = zr.iter().zip(dz.row(i)).map(|(a, b)| a * b).sum();
        for (d, &zv) in dy.row_mut(i).iter_mut().zip(zr) {
            *d = (*d - zv * proj) / n;
        }
    }
    Ok(dy)
}

/// Single-query composition: forward through the compose head, then L2
/// normalization.
pub fn compose_query(head: &HeadParams, z_r: &[f64], z_m: &[f64]) -> Result<Vec<f64>> {
    let d = head.dim();
    if z_r.len() != d || z_m.len() != d {
        return Err(Error::shape(format!(
            "z_r/z_m of length {}/{} for D = {d}",
            z_r.len(),
            z_m.len()
        )));
    }
    let mut x = z_r.to_vec();
    x.extend_from_slice(z_m);
    let x = DenseMatrix::from_vec(1, 2 * d, x)?;
    let (y, _) = forward_batch(&head.compose, &x, false, RngState::new(0, 0))?;
    let (z, _) = normalize_rows(y)?;
    Ok(z.into_values())
}

impl Embedder for HeadParams {
    fn embed_dim(&self) -> usize {
        self.dim()
    }

    fn embed(&self, triplets: &[&Triplet]) -> Result<(DenseMatrix, DenseMatrix)> {
        let f = self.forward(triplets)?;
        Ok((f.zq, f.zt))
    }
}
