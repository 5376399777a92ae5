use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use log::info;
use serde_json::{json, Value};

use super::metrics::{
    detection_metrics, recall_at_k, subset_recall, DetectionMetrics, DetectionResult,
};
use crate::config::RunConfig;
use crate::dsr::{train_stage2, HeadParams, LossMode, TrainReport};
use crate::eki::{
    dataset_gdvs, infer_confidence_batch, read_checkpoint, train_eki, write_checkpoint,
    EkiTraining, GdvVariant,
};
use crate::epa::{
    build_anchor_set, read_anchor_set, write_anchor_set, AnchorRecord, Arbiter, ArbiterKind,
    HttpTransport, PromptVariant, RemoteArbiter, ReplayTransport,
};
use crate::error::{Error, Result};
use crate::numkit::{streams, MlpParams, RngState};
use crate::world::{
    generate_splits, generate_world, read_dataset, write_dataset, Dataset, Triplet, World,
};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const ANCHOR_FILE: &str = "anchor.jsonl";
pub const PROXY_FILE: &str = "proxy.json";
pub const HEADS_FILE: &str = "heads.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "train_report.csv";

/// Named ablation settings. `D3`–`D7` swap the proxy input, `D8`–`D10`
/// switch off dropout, `D11`/`D12` keep a single loss stream and `D13`
/// trains with plain InfoNCE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Full,
    D3,
    D4,
    D5,
    D6,
    D7,
    D8,
    D9,
    D10,
    D11,
    D12,
    D13,
}

impl Variant {
    pub const ALL: [Variant; 12] = [
        Variant::Full,
        Variant::D3,
        Variant::D4,
        Variant::D5,
        Variant::D6,
        Variant::D7,
        Variant::D8,
        Variant::D9,
        Variant::D10,
        Variant::D11,
        Variant::D12,
        Variant::D13,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::D3 => "D3",
            Variant::D4 => "D4",
            Variant::D5 => "D5",
            Variant::D6 => "D6",
            Variant::D7 => "D7",
            Variant::D8 => "D8",
            Variant::D9 => "D9",
            Variant::D10 => "D10",
            Variant::D11 => "D11",
            Variant::D12 => "D12",
            Variant::D13 => "D13",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Variant::Full => "full pipeline",
            Variant::D3 => "proxy reads the raw triplet",
            Variant::D4 => "proxy reads query and target only",
            Variant::D5 => "no product block",
            Variant::D6 => "no difference block",
            Variant::D7 => "no query/target blocks",
            Variant::D8 => "no dropout",
            Variant::D9 => "no product block, no dropout",
            Variant::D10 => "no difference block, no dropout",
            Variant::D11 => "reconciliation stream only",
            Variant::D12 => "alignment stream only",
            Variant::D13 => "plain InfoNCE",
        }
    }

    /// Whether the proxy is trained at all.
    pub fn uses_eki(self) -> bool {
        self != Variant::D13
    }

    /// Rewrites the configuration for this variant.
    pub fn apply(self, cfg: &mut RunConfig) {
        let gdv = match self {
            Variant::D3 => Some(GdvVariant::TripletRaw),
            Variant::D4 => Some(GdvVariant::BasicOnly),
            Variant::D5 | Variant::D9 => Some(GdvVariant::NoHadamard),
            Variant::D6 | Variant::D10 => Some(GdvVariant::NoDiff),
            Variant::D7 => Some(GdvVariant::NoBasic),
            _ => None,
        };
        if let Some(g) = gdv {
            cfg.eki.gdv = g;
        }
        if matches!(self, Variant::D8 | Variant::D9 | Variant::D10) {
            cfg.eki.dropout = 0.0;
        }
        match self {
            Variant::D11 => {
                cfg.dsr.align = false;
                cfg.dsr.recon = true;
            }
            Variant::D12 => {
                cfg.dsr.align = true;
                cfg.dsr.recon = false;
            }
            Variant::D13 => cfg.dsr.mode = LossMode::Infonce,
            _ => {}
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase();
        let key = key
            .strip_prefix("D#")
            .map(|r| format!("D{r}"))
            .unwrap_or(key);
        if key == "D1" || key == "D2" {
            return Err(Error::config(format!(
                "variant {s} is not supported: it changes the expert prompt or removes the expert, which the simulated arbiter does not model"
            )));
        }
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(&key))
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::config(format!(
                    "unknown variant {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Which hyperparameter a sensitivity sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Dropout rate of the proxy.
    P,
    /// Weight of the reconciliation loss.
    Lambda,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::P => "p",
            SweepParam::Lambda => "lambda",
        }
    }

    pub fn values(self, cfg: &RunConfig) -> Vec<f64> {
        match self {
            SweepParam::P => cfg.eval.sweep_p.clone(),
            SweepParam::Lambda => cfg.eval.sweep_lambda.clone(),
        }
    }

    pub fn apply(self, cfg: &mut RunConfig, value: f64) {
        match self {
            SweepParam::P => cfg.eki.dropout = value,
            SweepParam::Lambda => cfg.dsr.lambda = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p" | "dropout" => Ok(SweepParam::P),
            "lambda" => Ok(SweepParam::Lambda),
            _ => Err(Error::config(format!(
                "unknown sweep parameter {s:?}; expected p or lambda"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub world: World,
    pub train: Dataset,
    pub val: Dataset,
}

/// The world from the config, with either generated splits or the
/// precomputed files named in `world.train_path` / `world.val_path`.
pub fn prepare_data(cfg: &RunConfig) -> Result<Splits> {
    let world = generate_world(&cfg.world_spec())?;
    let (train, val) = match (&cfg.world.train_path, &cfg.world.val_path) {
        (Some(t), Some(v)) => (read_dataset(t)?, read_dataset(v)?),
        (None, None) => generate_splits(
            &world,
            cfg.world.train_size,
            cfg.world.val_size,
            cfg.noise.sigma,
            &cfg.noise.kind_mix,
            cfg.seed,
        )?,
        _ => {
            return Err(Error::config(
                "world.train_path and world.val_path must be given together",
            ))
        }
    };
    for (name, d) in [("train", &train), ("val", &val)] {
        if d.dim != world.dim() {
            return Err(Error::config(format!(
                "{name} split has dimension {} but world.dim = {}",
                d.dim,
                world.dim()
            )));
        }
    }
    Ok(Splits { world, train, val })
}

pub fn make_arbiter(cfg: &RunConfig, world: &World) -> Result<Box<dyn Arbiter>> {
    let epa = &cfg.epa;
    match epa.arbiter {
        ArbiterKind::Oracle => Ok(Box::new(epa.oracle_model()?)),
        ArbiterKind::Remote => match (&epa.replay_path, &epa.endpoint) {
            (Some(path), _) => Ok(Box::new(RemoteArbiter::new(
                world.clone(),
                ReplayTransport::from_file(path)?,
                PromptVariant::Full,
            ))),
            (None, Some(url)) if epa.allow_network => Ok(Box::new(RemoteArbiter::new(
                world.clone(),
                HttpTransport::new(url, Duration::from_secs(epa.timeout_secs))?,
                PromptVariant::Full,
            ))),
            _ => Err(Error::config(
                "remote arbiter needs epa.replay_path or an allowed endpoint",
            )),
        },
    }
}

pub fn arbitrate(
    cfg: &RunConfig,
    data: &Splits,
    arbiter: &dyn Arbiter,
) -> Result<Vec<AnchorRecord>> {
    build_anchor_set(
        &data.train,
        arbiter,
        cfg.epa.anchor_size,
        RngState::new(cfg.seed, streams::ANCHOR),
    )
}

pub fn initial_heads(cfg: &RunConfig, world: &World) -> Result<HeadParams> {
    HeadParams::init(
        world,
        &cfg.heads,
        RngState::new(cfg.seed, streams::HEAD_INIT),
    )
}

/// Share of anchor verdicts that agree with the generator's tags.
pub fn anchor_accuracy(anchor: &[AnchorRecord], train: &Dataset) -> Result<f64> {
    if anchor.is_empty() {
        return Err(Error::input("anchor set is empty"));
    }
    let index = train.index();
    let mut hits = 0usize;
    for r in anchor {
        let &i = index
            .get(r.id.as_str())
            .ok_or_else(|| Error::input(format!("anchor id {:?} not in dataset", r.id)))?;
        if r.verdict.is_clean() == train.triplets[i].oracle_corruption().is_clean() {
            hits += 1;
        }
    }
    Ok(hits as f64 / anchor.len() as f64)
}

/// Proxy verdicts on the training triplets outside the anchor set, scored
/// against the generator's tags.
pub fn held_out_detection(
    cfg: &RunConfig,
    proxy: &MlpParams,
    heads: &HeadParams,
    train: &Dataset,
    anchor: &[AnchorRecord],
) -> Result<Option<DetectionMetrics>> {
    let used: HashSet<&str> = anchor.iter().map(|r| r.id.as_str()).collect();
    let held: Vec<&Triplet> = train
        .triplets
        .iter()
        .filter(|t| !used.contains(t.id.as_str()))
        .collect();
    if held.is_empty() {
        return Ok(None);
    }
    let gdv = dataset_gdvs(&held, heads, cfg.eki.gdv)?;
    let rng = RngState::new(cfg.seed, streams::EKI_HOLDOUT);
    let c_hat = infer_confidence_batch(proxy, &gdv, cfg.eki.mc_passes, cfg.eki.dropout, rng)?;
    let det = DetectionResult {
        c_hat,
        clean: held
            .iter()
            .map(|t| t.oracle_corruption().is_clean())
            .collect(),
        threshold: cfg.eki.threshold,
    };
    detection_metrics(&det).map(Some)
}

/// Fills in per-class mean confidences from the generator's tags.
pub fn annotate_report(report: &mut TrainReport, train: &Dataset) {
    let clean: Vec<bool> = train
        .triplets
        .iter()
        .map(|t| t.oracle_corruption().is_clean())
        .collect();
    for (stats, c) in report.epochs.iter_mut().zip(&report.c_hat) {
        let mean = |want: bool| {
            let v: Vec<f64> = c
                .iter()
                .zip(&clean)
                .filter(|(x, &y)| y == want && !x.is_nan())
                .map(|(x, _)| *x)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        stats.mean_c_hat_clean = mean(true);
        stats.mean_c_hat_noisy = mean(false);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    pub recall: BTreeMap<usize, f64>,
    pub subset_recall: BTreeMap<usize, f64>,
}

/// Composed queries of the validation split against its projected targets;
/// query `i` belongs with target `i`.
pub fn evaluate_retrieval(
    cfg: &RunConfig,
    heads: &HeadParams,
    val: &Dataset,
) -> Result<RetrievalMetrics> {
    let all: Vec<&Triplet> = val.triplets.iter().collect();
    let fwd = heads.forward(&all)?;
    let gt: Vec<usize> = (0..all.len()).collect();
    let recall = recall_at_k(&fwd.zq, &fwd.zt, &gt, &cfg.eval.ks)?;
    let subset = subset_recall(
        &fwd.zq,
        &fwd.zt,
        &gt,
        cfg.eval.m_distractors,
        &cfg.eval.subset_ks,
        RngState::new(cfg.seed, streams::EVAL_SUBSET),
    )?;
    Ok(RetrievalMetrics {
        recall,
        subset_recall: subset,
    })
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub variant: Variant,
    /// The configuration after the variant was applied.
    pub config: RunConfig,
    pub data: Splits,
    pub anchor: Vec<AnchorRecord>,
    pub arbiter: String,
    pub proxy: Option<EkiTraining>,
    pub heads: HeadParams,
    pub report: TrainReport,
    pub retrieval: RetrievalMetrics,
    pub detection: Option<DetectionMetrics>,
    pub anchor_accuracy: Option<f64>,
}

/// Runs generation, arbitration, proxy training, head training and
/// evaluation for one variant. Everything is a function of the config.
pub fn run_experiment(cfg: &RunConfig, variant: Variant) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    variant.apply(&mut cfg);
    cfg.validate()?;
    info!("variant {variant}: {}", variant.description());
    let data = prepare_data(&cfg)?;
    let heads = initial_heads(&cfg, &data.world)?;
    let (anchor, arbiter, proxy, detection, anchor_acc) = if variant.uses_eki() {
        let arbiter = make_arbiter(&cfg, &data.world)?;
        let anchor = arbitrate(&cfg, &data, arbiter.as_ref())?;
        let acc = anchor_accuracy(&anchor, &data.train)?;
        info!("anchor set: {} verdicts, accuracy {acc:.4}", anchor.len());
        let proxy = train_eki(&anchor, &data.train, &heads, &cfg.eki, cfg.seed)?;
        let det = held_out_detection(&cfg, &proxy.params, &heads, &data.train, &anchor)?;
        if let Some(d) = &det {
            info!(
                "held-out detection: accuracy {:.4}, auc {:?}",
                d.accuracy, d.auc
            );
        }
        (anchor, arbiter.describe(), Some(proxy), det, Some(acc))
    } else {
        (Vec::new(), String::new(), None, None, None)
    };
    let (trained, mut report) = train_stage2(
        &data.train,
        proxy.as_ref().map(|p| &p.params),
        &cfg.eki,
        heads,
        &cfg.dsr,
        cfg.seed,
    )?;
    annotate_report(&mut report, &data.train);
    let retrieval = evaluate_retrieval(&cfg, &trained, &data.val)?;
    info!("recall {:?}", retrieval.recall);
    Ok(Outcome {
        variant,
        config: cfg,
        data,
        anchor,
        arbiter,
        proxy,
        heads: trained,
        report,
        retrieval,
        detection,
        anchor_accuracy: anchor_acc,
    })
}

/// Rows `metric,k,value`; `k` is empty for metrics without a cutoff.
pub fn metrics_csv(
    retrieval: &RetrievalMetrics,
    detection: Option<&DetectionMetrics>,
    anchor_accuracy: Option<f64>,
) -> String {
    let mut s = String::from("metric,k,value\n");
    for (k, v) in &retrieval.recall {
        s.push_str(&format!("recall,{k},{v}\n"));
    }
    for (k, v) in &retrieval.subset_recall {
        s.push_str(&format!("subset_recall,{k},{v}\n"));
    }
    if let Some(d) = detection {
        s.push_str(&format!("detection_accuracy,,{}\n", d.accuracy));
        s.push_str(&format!("detection_precision,,{}\n", d.precision));
        s.push_str(&format!("detection_recall,,{}\n", d.recall));
        if let Some(a) = d.auc {
            s.push_str(&format!("detection_auc,,{a}\n"));
        }
    }
    if let Some(a) = anchor_accuracy {
        s.push_str(&format!("anchor_accuracy,,{a}\n"));
    }
    s
}

/// One JSON object keyed by metric name.
pub fn summary_json(
    variant: Option<Variant>,
    seed: u64,
    retrieval: &RetrievalMetrics,
    detection: Option<&DetectionMetrics>,
    anchor_accuracy: Option<f64>,
) -> String {
    let mut m: BTreeMap<String, Value> = BTreeMap::new();
    if let Some(v) = variant {
        m.insert("variant".into(), json!(v.name()));
    }
    m.insert("seed".into(), json!(seed));
    for (k, v) in &retrieval.recall {
        m.insert(format!("recall@{k}"), json!(v));
    }
    for (k, v) in &retrieval.subset_recall {
        m.insert(format!("subset_recall@{k}"), json!(v));
    }
    if let Some(d) = detection {
        m.insert("detection_accuracy".into(), json!(d.accuracy));
        m.insert("detection_precision".into(), json!(d.precision));
        m.insert("detection_recall".into(), json!(d.recall));
        if let Some(a) = d.auc {
            m.insert("detection_auc".into(), json!(a));
        }
    }
    if let Some(a) = anchor_accuracy {
        m.insert("anchor_accuracy".into(), json!(a));
    }
    let mut s = serde_json::to_string_pretty(&m).expect("summary serializes");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_heads(heads: &HeadParams, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string(heads).expect("heads serialize");
    s.push('\n');
    write_text(path, &s)
}

pub fn read_heads(path: &Path) -> Result<HeadParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_datasets(data: &Splits, dir: &Path) -> Result<()> {
    write_dataset(&data.train, &dir.join(TRAIN_FILE))?;
    write_dataset(&data.val, &dir.join(VAL_FILE))
}

/// Reads the splits written by [`write_datasets`] back in.
pub fn read_datasets(cfg: &RunConfig, dir: &Path) -> Result<Splits> {
    let world = generate_world(&cfg.world_spec())?;
    let train = read_dataset(&dir.join(TRAIN_FILE))?;
    let val = read_dataset(&dir.join(VAL_FILE))?;
    Ok(Splits { world, train, val })
}

pub fn read_anchor(dir: &Path) -> Result<Vec<AnchorRecord>> {
    read_anchor_set(&dir.join(ANCHOR_FILE)).map(|(_, r)| r)
}

pub fn read_proxy(dir: &Path) -> Result<MlpParams> {
    read_checkpoint(&dir.join(PROXY_FILE)).map(|(p, _)| p)
}

/// Writes every artifact of a run: effective config, datasets, anchor set,
/// proxy checkpoint, heads, per-epoch report, metrics and summary.
pub fn write_outcome(outcome: &Outcome, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_text(&dir.join(CONFIG_FILE), &outcome.config.to_toml())?;
    write_datasets(&outcome.data, dir)?;
    if outcome.variant.uses_eki() {
        write_anchor_set(&outcome.anchor, &outcome.arbiter, &dir.join(ANCHOR_FILE))?;
    }
    if let Some(p) = &outcome.proxy {
        write_checkpoint(&p.params, &outcome.config.eki, &dir.join(PROXY_FILE))?;
    }
    write_heads(&outcome.heads, &dir.join(HEADS_FILE))?;
    write_text(&dir.join(REPORT_FILE), &outcome.report.to_csv())?;
    write_text(
        &dir.join(METRICS_FILE),
        &metrics_csv(
            &outcome.retrieval,
            outcome.detection.as_ref(),
            outcome.anchor_accuracy,
        ),
    )?;
    write_text(
        &dir.join(SUMMARY_FILE),
        &summary_json(
            Some(outcome.variant),
            outcome.config.seed,
            &outcome.retrieval,
            outcome.detection.as_ref(),
            outcome.anchor_accuracy,
        ),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub recall: BTreeMap<usize, f64>,
}

/// Runs the full pipeline once per value of `param`.
pub fn run_sweep(cfg: &RunConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::config(format!(
            "sweep over {} has no values",
            param.name()
        )));
    }
    values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            param.apply(&mut c, v);
            info!("sweep {} = {v}", param.name());
            let o = run_experiment(&c, Variant::Full)?;
            Ok(SweepPoint {
                value: v,
                recall: o.retrieval.recall,
            })
        })
        .collect()
}

/// Two-column plot data: the swept value and recall at `k`.
pub fn sweep_csv(param: SweepParam, points: &[SweepPoint], k: usize) -> String {
    let mut s = format!("{},recall_at_{k}\n", param.name());
    for p in points {
        let r = p.recall.get(&k).copied().unwrap_or(f64::NAN);
        s.push_str(&format!("{},{r}\n", p.value));
    }
    s
}

/// The value with the highest recall at `k`; the first wins ties.
pub fn sweep_peak(points: &[SweepPoint], k: usize) -> Option<&SweepPoint> {
    points.iter().fold(None, |best: Option<&SweepPoint>, p| {
        let r = p.recall.get(&k).copied().unwrap_or(f64::NEG_INFINITY);
        match best {
            Some(b) if b.recall.get(&k).copied().unwrap_or(f64::NEG_INFINITY) >= r => Some(b),
            _ => Some(p),
        }
    })
}

pub fn sweep_file(param: SweepParam) -> PathBuf {
    PathBuf::from(format!("sweep_{}.csv", param.name()))
}
