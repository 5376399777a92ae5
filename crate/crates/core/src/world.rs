//! Synthetic composed-retrieval world.
//!
//! Concepts are unit vectors on the sphere. A clean triplet pairs a reference
//! near concept `c_i`, a target near concept `c_j`, and a modification that
//! encodes `c_j − c_i` through a fixed orthonormal "modality" rotation.
//! Noisy triplets are made by swapping one element with the same element of
//! another triplet.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dot, normalize, streams, DenseMatrix, RngState};

pub const DATA_SCHEMA: &str = "airknow-data-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub embed_dim: usize,
    pub concept_count: usize,
    pub intra_noise: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            concept_count: 32,
            intra_noise: 0.05,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::config(format!("embed_dim {} < 2", self.embed_dim)));
        }
        if self.concept_count < 2 {
            return Err(Error::config(format!(
                "concept_count {} < 2",
                self.concept_count
            )));
        }
        if !(self.intra_noise >= 0.0 && self.intra_noise.is_finite()) {
            return Err(Error::config(format!(
                "intra_noise {} must be >= 0",
                self.intra_noise
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub concepts: Vec<Vec<f64>>,
    /// `D × D` orthonormal map applied to modification offsets.
    pub modality_map: DenseMatrix,
}

impl World {
    pub fn dim(&self) -> usize {
        self.spec.embed_dim
    }

    /// Orthogonal projector onto the span of the concept vectors; the
    /// identity once the concepts span the whole space.
    pub fn concept_projector(&self) -> Result<DenseMatrix> {
        let d = self.dim();
        if self.concepts.len() >= d {
            return Ok(DenseMatrix::identity(d));
        }
        let basis = orthonormal_columns(self.concepts.clone())?;
        let mut p = DenseMatrix::zeros(d, d);
        for q in &basis {
            for r in 0..d {
                let row = p.row_mut(r);
                for (c, v) in row.iter_mut().enumerate() {
                    *v += q[r] * q[c];
                }
            }
        }
        Ok(p)
    }
}

fn gaussian_vec(g: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(g)).collect()
}

/// Modified Gram–Schmidt over the columns, run twice for orthogonality at
/// the level of rounding error.
fn orthonormal_columns(mut cols: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    for _pass in 0..2 {
        for k in 0..cols.len() {
            let (done, rest) = cols.split_at_mut(k);
            let v = &mut rest[0];
            for q in done.iter() {
                let proj = dot(q, v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= proj * qi;
                }
            }
            *v = normalize(v)?;
        }
    }
    Ok(cols)
}

pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let d = spec.embed_dim;
    let base = RngState::new(spec.seed, streams::WORLD);
    let mut g = base.derive(0).generator();
    let concepts = (0..spec.concept_count)
        .map(|_| normalize(&gaussian_vec(&mut g, d)))
        .collect::<Result<Vec<_>>>()?;
    let mut g = base.derive(1).generator();
    let cols = orthonormal_columns((0..d).map(|_| gaussian_vec(&mut g, d)).collect())?;
    let mut modality_map = DenseMatrix::zeros(d, d);
    for (c, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            modality_map.set(r, c, v);
        }
    }
    Ok(World {
        spec: spec.clone(),
        concepts,
        modality_map,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Corruption {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "ref")]
    RefShuffle,
    #[serde(rename = "mod")]
    ModShuffle,
    #[serde(rename = "tar")]
    TarShuffle,
}

impl Corruption {
    pub const NOISY: [Corruption; 3] = [
        Corruption::RefShuffle,
        Corruption::ModShuffle,
        Corruption::TarShuffle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Corruption::None => "none",
            Corruption::RefShuffle => "ref",
            Corruption::ModShuffle => "mod",
            Corruption::TarShuffle => "tar",
        }
    }

    pub fn is_clean(self) -> bool {
        self == Corruption::None
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Corruption::None),
            "ref" => Ok(Corruption::RefShuffle),
            "mod" => Ok(Corruption::ModShuffle),
            "tar" => Ok(Corruption::TarShuffle),
            other => Err(Error::input(format!("unknown corruption kind {other:?}"))),
        }
    }
}

/// One training unit. The corruption tag is ground truth known only to the
/// data generator; it is readable solely inside this crate (the simulated
/// arbiter and the evaluation code).
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub id: String,
    pub z_r: Vec<f64>,
    pub z_m: Vec<f64>,
    pub z_t: Vec<f64>,
    oracle_corruption: Corruption,
}

impl Triplet {
    pub fn new(id: impl Into<String>, z_r: Vec<f64>, z_m: Vec<f64>, z_t: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            z_r,
            z_m,
            z_t,
            oracle_corruption: Corruption::None,
        }
    }

    pub(crate) fn with_corruption(mut self, c: Corruption) -> Self {
        self.oracle_corruption = c;
        self
    }

    pub(crate) fn oracle_corruption(&self) -> Corruption {
        self.oracle_corruption
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub sigma: f64,
    pub seed: u64,
    pub split: Split,
    pub triplets: Vec<Triplet>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.triplets.iter().position(|t| t.id == id)
    }

    /// Id → index lookup for the whole dataset.
    pub fn index(&self) -> std::collections::HashMap<&str, usize> {
        self.triplets
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.as_str(), i))
            .collect()
    }
}

/// Draws `n` clean triplets. Triplet `k` uses `rng.derive(k)`; ids are
/// `"{id_prefix}{k}"`.
pub fn sample_clean_triplets(
    world: &World,
    n: usize,
    rng: RngState,
    id_prefix: &str,
) -> Result<Vec<Triplet>> {
    if n == 0 {
        return Err(Error::config("triplet count must be at least 1"));
    }
    let c = world.concepts.len();
    if c < 2 {
        return Err(Error::config(format!("world has {c} concepts, need 2")));
    }
    let d = world.dim();
    let eta = world.spec.intra_noise;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut g = rng.derive(k as u64).generator();
        let i = g.random_range(0..c);
        let j = {
            let j = g.random_range(0..c - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        };
        let (ci, cj) = (&world.concepts[i], &world.concepts[j]);
        let noisy = |base: &[f64], g: &mut rand_chacha::ChaCha8Rng| -> Result<Vec<f64>> {
            if eta == 0.0 {
                return normalize(base);
            }
            let xi = gaussian_vec(g, d);
            let v: Vec<f64> = base.iter().zip(&xi).map(|(b, x)| b + eta * x).collect();
            normalize(&v)
        };
        // concepts are already unit norm; renormalizing could move the last bit
        let z_r = if eta == 0.0 {
            ci.clone()
        } else {
            noisy(ci, &mut g)?
        };
        let z_t = if eta == 0.0 {
            cj.clone()
        } else {
            noisy(cj, &mut g)?
        };
        let delta: Vec<f64> = cj.iter().zip(ci).map(|(a, b)| a - b).collect();
        let mut shifted = vec![0.0; d];
        for (r, s) in shifted.iter_mut().enumerate() {
            *s = dot(world.modality_map.row(r), &delta);
        }
        let z_m = noisy(&shifted, &mut g)?;
        out.push(Triplet::new(format!("{id_prefix}{k}"), z_r, z_m, z_t));
    }
    Ok(out)
}

/// Relative weights of the three shuffle kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindMix {
    #[serde(rename = "ref")]
    pub ref_shuffle: f64,
    #[serde(rename = "mod")]
    pub mod_shuffle: f64,
    #[serde(rename = "tar")]
    pub tar_shuffle: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        Self {
            ref_shuffle: 1.0,
            mod_shuffle: 1.0,
            tar_shuffle: 1.0,
        }
    }
}

impl KindMix {
    pub fn only(kind: Corruption) -> Self {
        let mut m = Self {
            ref_shuffle: 0.0,
            mod_shuffle: 0.0,
            tar_shuffle: 0.0,
        };
        match kind {
            Corruption::RefShuffle => m.ref_shuffle = 1.0,
            Corruption::ModShuffle => m.mod_shuffle = 1.0,
            Corruption::TarShuffle => m.tar_shuffle = 1.0,
            Corruption::None => {}
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.ref_shuffle, self.mod_shuffle, self.tar_shuffle];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::config(format!(
                "kind_mix weights must be nonnegative and not all zero, got {w:?}"
            )));
        }
        Ok(())
    }
}

/// `⌊σ·N⌋`, tolerant of σ·N landing a rounding error below an integer.
pub fn corrupted_count(sigma: f64, n: usize) -> usize {
    ((sigma * n as f64) + 1e-9).floor() as usize
}

/// Corrupts exactly `⌊σ·N⌋` triplets chosen by a seeded shuffle. Each chosen
/// triplet takes one element from a different, uniformly drawn partner; the
/// partner's element is always its original (pre-corruption) value.
pub fn inject_noise(
    triplets: Vec<Triplet>,
    sigma: f64,
    kind_mix: &KindMix,
    rng: RngState,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::config(format!("sigma {sigma} outside [0, 1]")));
    }
    kind_mix.validate()?;
    let n = triplets.len();
    let dim = triplets.first().map(|t| t.z_r.len()).unwrap_or(0);
    let count = corrupted_count(sigma, n);
    if count > 0 && n < 2 {
        return Err(Error::config("noise injection needs at least 2 triplets"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut g = rng.generator();
    order.shuffle(&mut g);
    let kinds = WeightedIndex::new([
        kind_mix.ref_shuffle,
        kind_mix.mod_shuffle,
        kind_mix.tar_shuffle,
    ])
    .map_err(|e| Error::config(format!("kind_mix: {e}")))?;
    let original = triplets.clone();
    let mut out = triplets;
    for &idx in &order[..count] {
        let kind = Corruption::NOISY[kinds.sample(&mut g)];
        let partner = {
            let p = g.random_range(0..n - 1);
            if p >= idx {
                p + 1
            } else {
                p
            }
        };
        let src = &original[partner];
        let t = &mut out[idx];
        match kind {
            Corruption::RefShuffle => t.z_r = src.z_r.clone(),
            Corruption::ModShuffle => t.z_m = src.z_m.clone(),
            Corruption::TarShuffle => t.z_t = src.z_t.clone(),
            Corruption::None => unreachable!(),
        }
        t.oracle_corruption = kind;
    }
    Ok(Dataset {
        dim,
        sigma,
        seed: rng.seed,
        split: Split::Train,
        triplets: out,
    })
}

/// Generates a train split with noise at `sigma` and an always-clean
/// validation split from the same world.
pub fn generate_splits(
    world: &World,
    n_train: usize,
    n_val: usize,
    sigma: f64,
    kind_mix: &KindMix,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let clean =
        sample_clean_triplets(world, n_train, RngState::new(seed, streams::TRIPLETS), "tr")?;
    let train = inject_noise(clean, sigma, kind_mix, RngState::new(seed, streams::NOISE))?;
    let val_triplets = sample_clean_triplets(
        world,
        n_val,
        RngState::new(seed, streams::VAL_TRIPLETS),
        "va",
    )?;
    let val = Dataset {
        dim: world.dim(),
        sigma: 0.0,
        seed,
        split: Split::Val,
        triplets: val_triplets,
    };
    Ok((train, val))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    dim: usize,
    sigma: f64,
    seed: u64,
    split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    z_r: Vec<f64>,
    z_m: Vec<f64>,
    z_t: Vec<f64>,
    oracle_corruption: Corruption,
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        schema: DATA_SCHEMA.to_string(),
        dim: dataset.dim,
        sigma: dataset.sigma,
        seed: dataset.seed,
        split: dataset.split,
    };
    let io = |e: std::io::Error| Error::io(path, e);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    for t in &dataset.triplets {
        let rec = Record {
            id: t.id.clone(),
            z_r: t.z_r.clone(),
            z_m: t.z_m.clone(),
            z_t: t.z_t.clone(),
            oracle_corruption: t.oracle_corruption,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header: Option<Header> = None;
    let mut triplets = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            let h: Header = serde_json::from_str(&line)
                .map_err(|e| parse_err(lineno, format!("bad header: {e}")))?;
            if h.schema != DATA_SCHEMA {
                return Err(parse_err(
                    lineno,
                    format!("unsupported schema {:?}", h.schema),
                ));
            }
            header = Some(h);
            continue;
        };
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        for (name, v) in [("z_r", &rec.z_r), ("z_m", &rec.z_m), ("z_t", &rec.z_t)] {
            if v.len() != h.dim {
                return Err(Error::shape(format!(
                    "{}:{lineno}: {name} has {} entries, expected {}",
                    path.display(),
                    v.len(),
                    h.dim
                )));
            }
        }
        if !seen.insert(rec.id.clone()) {
            return Err(parse_err(lineno, format!("duplicate id {:?}", rec.id)));
        }
        triplets.push(
            Triplet::new(rec.id, rec.z_r, rec.z_m, rec.z_t).with_corruption(rec.oracle_corruption),
        );
    }
    let h = header.ok_or_else(|| parse_err(1, "missing header line".into()))?;
    Ok(Dataset {
        dim: h.dim,
        sigma: h.sigma,
        seed: h.seed,
        split: h.split,
        triplets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::norm;

    fn small_world(d: usize, c: usize, eta: f64) -> World {
        generate_world(&WorldSpec {
            embed_dim: d,
            concept_count: c,
            intra_noise: eta,
            seed: 7,
        })
        .unwrap()
    }

    #[test]
    fn world_is_deterministic_and_normalized() {
        let a = small_world(4, 8, 0.05);
        let b = small_world(4, 8, 0.05);
        assert_eq!(a, b);
        assert_eq!(a.concepts.len(), 8);
        for c in &a.concepts {
            assert!((norm(c) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn modality_map_is_orthonormal() {
        let w = small_world(64, 4, 0.05);
        let m = &w.modality_map;
        let cols: Vec<Vec<f64>> = (0..64)
            .map(|c| (0..64).map(|r| m.get(r, c)).collect())
            .collect();
        let mut worst: f64 = 0.0;
        for a in 0..64 {
            assert!((norm(&cols[a]) - 1.0).abs() < 1e-10);
            for b in 0..a {
                worst = worst.max(dot(&cols[a], &cols[b]).abs());
            }
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn too_few_concepts_is_config_error() {
        let spec = WorldSpec {
            concept_count: 1,
            ..WorldSpec::default()
        };
        assert!(matches!(generate_world(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn zero_noise_triplets_hit_concepts_exactly() {
        let w = small_world(8, 5, 0.0);
        let ts = sample_clean_triplets(&w, 20, RngState::new(1, 2), "t").unwrap();
        for t in &ts {
            let i = w
                .concepts
                .iter()
                .position(|c| c == &t.z_r)
                .expect("z_r is a concept");
            let j = w
                .concepts
                .iter()
                .position(|c| c == &t.z_t)
                .expect("z_t is a concept");
            assert_ne!(i, j);
            let delta: Vec<f64> = w.concepts[j]
                .iter()
                .zip(&w.concepts[i])
                .map(|(a, b)| a - b)
                .collect();
            let mapped: Vec<f64> = (0..8).map(|r| dot(w.modality_map.row(r), &delta)).collect();
            assert_eq!(t.z_m, normalize(&mapped).unwrap());
        }
    }

    #[test]
    fn corruption_count_is_exact() {
        let w = small_world(4, 6, 0.05);
        for &n in &[10usize, 100, 1000] {
            let clean = sample_clean_triplets(&w, n, RngState::new(3, 0), "t").unwrap();
            for &sigma in &[0.0, 0.2, 0.5, 0.8, 1.0] {
                let ds = inject_noise(
                    clean.clone(),
                    sigma,
                    &KindMix::default(),
                    RngState::new(4, 0),
                )
                .unwrap();
                let noisy = ds
                    .triplets
                    .iter()
                    .filter(|t| !t.oracle_corruption.is_clean())
                    .count();
                assert_eq!(
                    noisy,
                    (sigma * n as f64).floor() as usize,
                    "sigma {sigma} n {n}"
                );
            }
        }
    }

    #[test]
    fn saturated_target_shuffle() {
        let w = small_world(4, 6, 0.05);
        let clean = sample_clean_triplets(&w, 50, RngState::new(3, 0), "t").unwrap();
        let ds = inject_noise(
            clean.clone(),
            1.0,
            &KindMix::only(Corruption::TarShuffle),
            RngState::new(4, 0),
        )
        .unwrap();
        for (t, c) in ds.triplets.iter().zip(&clean) {
            assert_eq!(t.oracle_corruption, Corruption::TarShuffle);
            assert_eq!(t.z_r, c.z_r);
            assert_eq!(t.z_m, c.z_m);
            assert_ne!(t.z_t, c.z_t);
        }
    }

    #[test]
    fn single_triplet_cannot_be_shuffled() {
        let w = small_world(4, 6, 0.05);
        let clean = sample_clean_triplets(&w, 1, RngState::new(3, 0), "t").unwrap();
        assert!(matches!(
            inject_noise(clean.clone(), 1.0, &KindMix::default(), RngState::new(0, 0)),
            Err(Error::Config(_))
        ));
        assert!(inject_noise(clean, 0.0, &KindMix::default(), RngState::new(0, 0)).is_ok());
    }

    #[test]
    fn kind_mix_must_have_mass() {
        let zero = KindMix {
            ref_shuffle: 0.0,
            mod_shuffle: 0.0,
            tar_shuffle: 0.0,
        };
        assert!(zero.validate().is_err());
        assert!(KindMix::default().validate().is_ok());
    }
}
