use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::DenseMatrix;
use crate::world::Triplet;

/// Which blocks make up the proxy input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdvVariant {
    /// `[z_q ‖ z_t ‖ z_q − z_t ‖ z_q ⊙ z_t]`
    Full,
    /// `[z_r ‖ z_m ‖ z_t]`
    TripletRaw,
    /// `[z_q ‖ z_t]`
    BasicOnly,
    /// `[z_q ‖ z_t ‖ z_q − z_t]`
    NoHadamard,
    /// `[z_q ‖ z_t ‖ z_q ⊙ z_t]`
    NoDiff,
    /// `[z_q − z_t ‖ z_q ⊙ z_t]`
    NoBasic,
}

impl GdvVariant {
    pub const ALL: [GdvVariant; 6] = [
        GdvVariant::Full,
        GdvVariant::TripletRaw,
        GdvVariant::BasicOnly,
        GdvVariant::NoHadamard,
        GdvVariant::NoDiff,
        GdvVariant::NoBasic,
    ];

    /// Number of `D`-sized blocks.
    pub fn blocks(self) -> usize {
        match self {
            GdvVariant::Full => 4,
            GdvVariant::TripletRaw | GdvVariant::NoHadamard | GdvVariant::NoDiff => 3,
            GdvVariant::BasicOnly | GdvVariant::NoBasic => 2,
        }
    }

    pub fn dim(self, embed_dim: usize) -> usize {
        self.blocks() * embed_dim
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GdvVariant::Full => "full",
            GdvVariant::TripletRaw => "triplet_raw",
            GdvVariant::BasicOnly => "basic_only",
            GdvVariant::NoHadamard => "no_hadamard",
            GdvVariant::NoDiff => "no_diff",
            GdvVariant::NoBasic => "no_basic",
        }
    }
}

impl fmt::Display for GdvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GdvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GdvVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown GDV variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdvVector {
    pub values: Vec<f64>,
    pub variant: GdvVariant,
}

fn write_blocks(
    out: &mut [f64],
    z_q: &[f64],
    z_t: &[f64],
    variant: GdvVariant,
    z_r: Option<&[f64]>,
    z_m: Option<&[f64]>,
) -> Result<()> {
    let d = z_q.len();
    let mut blocks = out.chunks_exact_mut(d);
    let mut put = |f: &dyn Fn(usize) -> f64| {
        let b = blocks.next().expect("block count matches variant");
        for (k, v) in b.iter_mut().enumerate() {
            *v = f(k);
        }
    };
    let basic = |put: &mut dyn FnMut(&dyn Fn(usize) -> f64)| {
        put(&|k| z_q[k]);
        put(&|k| z_t[k]);
    };
    match variant {
        GdvVariant::Full => {
            basic(&mut put);
            put(&|k| z_q[k] - z_t[k]);
            put(&|k| z_q[k] * z_t[k]);
        }
        GdvVariant::BasicOnly => basic(&mut put),
        GdvVariant::NoHadamard => {
            basic(&mut put);
            put(&|k| z_q[k] - z_t[k]);
        }
        GdvVariant::NoDiff => {
            basic(&mut put);
            put(&|k| z_q[k] * z_t[k]);
        }
        GdvVariant::NoBasic => {
            put(&|k| z_q[k] - z_t[k]);
            put(&|k| z_q[k] * z_t[k]);
        }
        GdvVariant::TripletRaw => {
            let (Some(r), Some(m)) = (z_r, z_m) else {
                return Err(Error::input("triplet_raw GDV needs z_r and z_m"));
            };
            if r.len() != d || m.len() != d {
                return Err(Error::shape(format!(
                    "z_r/z_m of length {}/{} for D = {d}",
                    r.len(),
                    m.len()
                )));
            }
            put(&|k| r[k]);
            put(&|k| m[k]);
            put(&|k| z_t[k]);
        }
    }
    Ok(())
}

/// Builds the proxy input for one query/target pair.
pub fn compose_gdv(
    z_q: &[f64],
    z_t: &[f64],
    variant: GdvVariant,
    z_r: Option<&[f64]>,
    z_m: Option<&[f64]>,
) -> Result<GdvVector> {
    if z_q.len() != z_t.len() {
        return Err(Error::shape(format!(
            "z_q has {} entries, z_t has {}",
            z_q.len(),
            z_t.len()
        )));
    }
    let mut values = vec![0.0; variant.dim(z_q.len())];
    write_blocks(&mut values, z_q, z_t, variant, z_r, z_m)?;
    Ok(GdvVector { values, variant })
}

/// GDV rows for a batch of triplets whose query/target embeddings are the
/// rows of `zq` and `zt`.
pub fn gdv_matrix(
    triplets: &[&Triplet],
    zq: &DenseMatrix,
    zt: &DenseMatrix,
    variant: GdvVariant,
) -> Result<DenseMatrix> {
    let n = triplets.len();
    if zq.rows() != n || zt.rows() != n || zq.cols() != zt.cols() {
        return Err(Error::shape(format!(
            "{n} triplets with {}x{} queries and {}x{} targets",
            zq.rows(),
            zq.cols(),
            zt.rows(),
            zt.cols()
        )));
    }
    let d = zq.cols();
    let mut out = DenseMatrix::zeros(n, variant.dim(d));
    for (i, t) in triplets.iter().enumerate() {
        write_blocks(
            out.row_mut(i),
            zq.row(i),
            zt.row(i),
            variant,
            Some(&t.z_r),
            Some(&t.z_m),
        )?;
    }
    Ok(out)
}
