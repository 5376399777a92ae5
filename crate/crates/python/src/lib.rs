//! Python bindings: configuration, synthetic data, the loss functions, the
//! simulated arbiter, and whole-pipeline runs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use airknow::config::{config_from_str, RunConfig};
use airknow::dsr::{align_loss, infonce_loss, recon_loss, PairGrads};
use airknow::eki::{infer_confidence, read_checkpoint};
use airknow::epa::{oracle_arbitrate, ArbiterModel};
use airknow::eval::experiment::{run_experiment, write_outcome, Outcome};
use airknow::eval::Variant;
use airknow::numkit::{DenseMatrix, RngState};
use airknow::world::{
    generate_splits, generate_world, read_dataset, write_dataset, Dataset, KindMix, World,
    WorldSpec,
};
use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;

fn to_py(e: airknow::Error) -> PyErr {
    use airknow::Error::*;
    match e {
        Io { .. } | Remote(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &Rows) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(rows).map_err(to_py)
}

fn rows(m: &DenseMatrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn unpack(r: airknow::Result<(f64, PairGrads)>) -> PyResult<(f64, Rows, Rows)> {
    let (l, g) = r.map_err(to_py)?;
    Ok((l, rows(&g.d_zq), rows(&g.d_zt)))
}

/// Run configuration built from TOML text plus `section.key=value` overrides.
#[pyclass(name = "RunConfig", module = "airknow_py", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (toml = "", overrides = Vec::new()))]
    fn new(toml: &str, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: config_from_str(toml, &overrides).map_err(to_py)?,
        })
    }

    /// A copy with further overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Self::new(&self.inner.to_toml(), overrides)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.noise.sigma
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(seed={}, sigma={})",
            self.inner.seed, self.inner.noise.sigma
        )
    }
}

#[pyclass(name = "World", module = "airknow_py", frozen)]
struct PyWorld {
    inner: World,
}

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (dim = 256, concepts = 32, eta = 0.05, seed = 0))]
    fn new(dim: usize, concepts: usize, eta: f64, seed: u64) -> PyResult<Self> {
        let spec = WorldSpec {
            embed_dim: dim,
            concept_count: concepts,
            intra_noise: eta,
            seed,
        };
        Ok(Self {
            inner: generate_world(&spec).map_err(to_py)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn concepts(&self) -> Rows {
        self.inner.concepts.clone()
    }

    /// Train and validation splits with a fraction `sigma` of corrupted
    /// training triplets.
    #[pyo3(signature = (n_train, n_val, sigma, seed))]
    fn splits(
        &self,
        n_train: usize,
        n_val: usize,
        sigma: f64,
        seed: u64,
    ) -> PyResult<(PyDataset, PyDataset)> {
        let (t, v) = generate_splits(
            &self.inner,
            n_train,
            n_val,
            sigma,
            &KindMix::default(),
            seed,
        )
        .map_err(to_py)?;
        Ok((PyDataset { inner: t }, PyDataset { inner: v }))
    }
}

#[pyclass(name = "Dataset", module = "airknow_py", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_dataset(&path).map_err(to_py)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_dataset(&self.inner, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.triplets.iter().map(|t| t.id.clone()).collect()
    }

    /// `(z_r, z_m, z_t)` of triplet `i`.
    fn vectors(&self, i: usize) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let t = self
            .inner
            .triplets
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("triplet {i} out of range")))?;
        Ok((t.z_r.clone(), t.z_m.clone(), t.z_t.clone()))
    }

    /// Clean/noisy verdicts of a simulated arbiter with the given accuracy.
    #[pyo3(signature = (accuracy, seed = 0))]
    fn arbitrate(&self, accuracy: f64, seed: u64) -> PyResult<Vec<bool>> {
        let model = ArbiterModel::calibrated(accuracy).map_err(to_py)?;
        let rng = RngState::new(seed, 0);
        self.inner
            .triplets
            .iter()
            .enumerate()
            .map(|(k, t)| {
                Ok(oracle_arbitrate(t, &model, rng.derive(k as u64))
                    .map_err(to_py)?
                    .is_clean())
            })
            .collect()
    }
}

/// Result of one pipeline run.
#[pyclass(name = "Outcome", module = "airknow_py", frozen)]
struct PyOutcome {
    inner: Outcome,
}

#[pymethods]
impl PyOutcome {
    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant.name()
    }

    /// Recall@K on the validation gallery, keyed by K.
    #[getter]
    fn recall(&self) -> BTreeMap<usize, f64> {
        self.inner.retrieval.recall.clone()
    }

    #[getter]
    fn subset_recall(&self) -> BTreeMap<usize, f64> {
        self.inner.retrieval.subset_recall.clone()
    }

    /// Held-out detection metrics of the proxy, when one was trained.
    #[getter]
    fn detection(&self) -> Option<BTreeMap<&'static str, f64>> {
        self.inner.detection.map(|d| {
            let mut m = BTreeMap::from([
                ("accuracy", d.accuracy),
                ("precision", d.precision),
                ("recall", d.recall),
            ]);
            if let Some(a) = d.auc {
                m.insert("auc", a);
            }
            m
        })
    }

    #[getter]
    fn anchor_accuracy(&self) -> Option<f64> {
        self.inner.anchor_accuracy
    }

    /// Per-epoch `(align, recon, total)` losses.
    #[getter]
    fn losses(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .report
            .epochs
            .iter()
            .map(|e| (e.l_align, e.l_recon, e.l_total))
            .collect()
    }

    /// Writes datasets, anchor set, checkpoint, heads and metrics to `dir`.
    fn write(&self, dir: PathBuf) -> PyResult<()> {
        write_outcome(&self.inner, &dir).map_err(to_py)
    }
}

/// Runs the whole pipeline for one variant (`"full"`, `"D3"` … `"D13"`).
#[pyfunction]
#[pyo3(signature = (config, variant = "full"))]
fn run(py: Python<'_>, config: PyRunConfig, variant: &str) -> PyResult<PyOutcome> {
    let v: Variant = variant.parse().map_err(to_py)?;
    let out = py
        .detach(|| run_experiment(&config.inner, v))
        .map_err(to_py)?;
    Ok(PyOutcome { inner: out })
}

#[pyfunction(name = "align_loss")]
#[pyo3(signature = (zq, zt, c_hat, tau = 0.07, exclusive = false))]
fn py_align_loss(
    zq: Rows,
    zt: Rows,
    c_hat: Vec<f64>,
    tau: f64,
    exclusive: bool,
) -> PyResult<(f64, Rows, Rows)> {
    unpack(align_loss(
        &matrix(&zq)?,
        &matrix(&zt)?,
        &c_hat,
        tau,
        exclusive,
    ))
}

#[pyfunction(name = "recon_loss")]
#[pyo3(signature = (zq, zt, c_hat, alpha = 0.7, tau = 0.07))]
fn py_recon_loss(
    zq: Rows,
    zt: Rows,
    c_hat: Vec<f64>,
    alpha: f64,
    tau: f64,
) -> PyResult<(f64, Rows, Rows)> {
    unpack(recon_loss(&matrix(&zq)?, &matrix(&zt)?, &c_hat, alpha, tau))
}

#[pyfunction(name = "infonce_loss")]
#[pyo3(signature = (zq, zt, tau = 0.07))]
fn py_infonce_loss(zq: Rows, zt: Rows, tau: f64) -> PyResult<(f64, Rows, Rows)> {
    unpack(infonce_loss(&matrix(&zq)?, &matrix(&zt)?, tau))
}

/// Monte Carlo dropout confidence of a saved proxy on one GDV.
#[pyfunction]
#[pyo3(signature = (checkpoint, gdv, passes = 16, p = 0.1, seed = 0))]
fn confidence(
    checkpoint: PathBuf,
    gdv: Vec<f64>,
    passes: usize,
    p: f64,
    seed: u64,
) -> PyResult<f64> {
    let (params, _) = read_checkpoint(&checkpoint).map_err(to_py)?;
    let c = infer_confidence(&params, &gdv, passes, p, RngState::new(seed, 0)).map_err(to_py)?;
    Ok(c.value)
}

#[pymodule]
pub fn airknow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyOutcome>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(py_align_loss, m)?)?;
    m.add_function(wrap_pyfunction!(py_recon_loss, m)?)?;
    m.add_function(wrap_pyfunction!(py_infonce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add(
        "VARIANTS",
        Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
