//! Command-line front end. Every subcommand loads one configuration, writes
//! its artifacts under the output directory together with the effective
//! config, and maps failures to exit status 1 (bad input) or 2 (runtime).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config::{load_config, RunConfig};
use crate::dsr::train_stage2;
use crate::eki::{train_eki, write_checkpoint};
use crate::epa::write_anchor_set;
use crate::error::{Error, Result};
use crate::eval::experiment::{
    anchor_accuracy, annotate_report, arbitrate, ensure_dir, evaluate_retrieval,
    held_out_detection, initial_heads, make_arbiter, metrics_csv, prepare_data, read_anchor,
    read_datasets, read_heads, read_proxy, summary_json, sweep_csv, sweep_file, sweep_peak,
    write_datasets, write_heads, write_outcome, write_text, ANCHOR_FILE, CONFIG_FILE, HEADS_FILE,
    METRICS_FILE, PROXY_FILE, REPORT_FILE, SUMMARY_FILE,
};
use crate::eval::{run_experiment, run_sweep, SweepParam, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "airknow",
    version,
    about = "Robust composed-retrieval training under noisy triplets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Noise ratio of the training split.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Dotted `section.key=value` overrides.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train and validation splits.
    Gen(Common),
    /// Have the arbiter judge the anchor subset.
    Arbitrate(Common),
    /// Train the proxy on the anchor set.
    TrainEki(Common),
    /// Train the composition heads.
    Train(Common),
    /// Evaluate trained heads on the validation split.
    Eval(Common),
    /// Run the whole pipeline for one ablation variant.
    Ablate {
        #[arg(long, default_value = "full")]
        variant: String,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the dropout rate (`p`) or the reconciliation weight (`lambda`).
    Sweep {
        #[arg(long)]
        param: String,
        #[command(flatten)]
        common: Common,
    },
    /// Collect the summaries found under the output directory into one table.
    Report(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen(c)
            | Command::Arbitrate(c)
            | Command::TrainEki(c)
            | Command::Train(c)
            | Command::Eval(c)
            | Command::Report(c) => c,
            Command::Ablate { common, .. } | Command::Sweep { common, .. } => common,
        }
    }
}

/// Builds the effective configuration: file, then dotted overrides, then the
/// dedicated flags.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(s) = common.sigma {
        overrides.push(format!("noise.sigma={s}"));
    }
    if let Some(o) = &common.out {
        let text = toml::Value::String(o.to_string_lossy().into_owned()).to_string();
        overrides.push(format!("output.dir={text}"));
    }
    load_config(common.config.as_deref(), &overrides)
}

fn require(dir: &Path, file: &str, step: &str) -> Result<()> {
    let p = dir.join(file);
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} is missing; run `{step}` first",
            p.display()
        )))
    }
}

fn start(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    ensure_dir(&dir)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    Ok(dir)
}

fn gen(cfg: &RunConfig) -> Result<()> {
    let dir = start(cfg)?;
    let data = prepare_data(cfg)?;
    write_datasets(&data, &dir)?;
    println!(
        "wrote {} train and {} val triplets to {}",
        data.train.len(),
        data.val.len(),
        dir.display()
    );
    Ok(())
}

fn arbitrate_cmd(cfg: &RunConfig) -> Result<()> {
    let dir = start(cfg)?;
    require(&dir, crate::eval::experiment::TRAIN_FILE, "gen")?;
    let data = read_datasets(cfg, &dir)?;
    let arbiter = make_arbiter(cfg, &data.world)?;
    let anchor = arbitrate(cfg, &data, arbiter.as_ref())?;
    write_anchor_set(&anchor, &arbiter.describe(), &dir.join(ANCHOR_FILE))?;
    let clean = anchor.iter().filter(|r| r.verdict.is_clean()).count();
    println!("anchor set: {} verdicts ({clean} clean)", anchor.len());
    Ok(())
}

fn train_eki_cmd(cfg: &RunConfig) -> Result<()> {
    let dir = start(cfg)?;
    require(&dir, crate::eval::experiment::TRAIN_FILE, "gen")?;
    require(&dir, ANCHOR_FILE, "arbitrate")?;
    let data = read_datasets(cfg, &dir)?;
    let anchor = read_anchor(&dir)?;
    let heads = initial_heads(cfg, &data.world)?;
    let proxy = train_eki(&anchor, &data.train, &heads, &cfg.eki, cfg.seed)?;
    write_checkpoint(&proxy.params, &cfg.eki, &dir.join(PROXY_FILE))?;
    println!(
        "proxy loss {:.6} -> {:.6}",
        proxy.initial_loss, proxy.final_loss
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let dir = start(cfg)?;
    require(&dir, crate::eval::experiment::TRAIN_FILE, "gen")?;
    let data = read_datasets(cfg, &dir)?;
    let proxy = if cfg.dsr.uses_proxy() {
        require(&dir, PROXY_FILE, "train-eki")?;
        Some(read_proxy(&dir)?)
    } else {
        None
    };
    let heads = initial_heads(cfg, &data.world)?;
    let (trained, mut report) = train_stage2(
        &data.train,
        proxy.as_ref(),
        &cfg.eki,
        heads,
        &cfg.dsr,
        cfg.seed,
    )?;
    annotate_report(&mut report, &data.train);
    write_heads(&trained, &dir.join(HEADS_FILE))?;
    write_text(&dir.join(REPORT_FILE), &report.to_csv())?;
    if let Some(last) = report.epochs.last() {
        println!(
            "final epoch: l_align {:.6} l_recon {:.6}",
            last.l_align, last.l_recon
        );
    }
    Ok(())
}

fn eval_cmd(cfg: &RunConfig) -> Result<()> {
    let dir = start(cfg)?;
    require(&dir, crate::eval::experiment::TRAIN_FILE, "gen")?;
    require(&dir, HEADS_FILE, "train")?;
    let data = read_datasets(cfg, &dir)?;
    let heads = read_heads(&dir.join(HEADS_FILE))?;
    let retrieval = evaluate_retrieval(cfg, &heads, &data.val)?;
    let (detection, acc) = if dir.join(PROXY_FILE).exists() && dir.join(ANCHOR_FILE).exists() {
        let anchor = read_anchor(&dir)?;
        let proxy = read_proxy(&dir)?;
        let start_heads = initial_heads(cfg, &data.world)?;
        let det = held_out_detection(cfg, &proxy, &start_heads, &data.train, &anchor)?;
        (det, Some(anchor_accuracy(&anchor, &data.train)?))
    } else {
        (None, None)
    };
    let metrics = metrics_csv(&retrieval, detection.as_ref(), acc);
    write_text(&dir.join(METRICS_FILE), &metrics)?;
    write_text(
        &dir.join(SUMMARY_FILE),
        &summary_json(None, cfg.seed, &retrieval, detection.as_ref(), acc),
    )?;
    print!("{metrics}");
    Ok(())
}

fn ablate_cmd(cfg: &RunConfig, variant: &str) -> Result<()> {
    let variant: Variant = variant.parse()?;
    let outcome = run_experiment(cfg, variant)?;
    let dir = cfg.output.dir.clone();
    write_outcome(&outcome, &dir)?;
    print!(
        "{}",
        metrics_csv(
            &outcome.retrieval,
            outcome.detection.as_ref(),
            outcome.anchor_accuracy
        )
    );
    Ok(())
}

fn sweep_cmd(cfg: &RunConfig, param: &str) -> Result<()> {
    let param: SweepParam = param.parse()?;
    let dir = start(cfg)?;
    let points = run_sweep(cfg, param, &param.values(cfg))?;
    let k = cfg.eval.ks[0];
    let csv = sweep_csv(param, &points, k);
    write_text(&dir.join(sweep_file(param)), &csv)?;
    print!("{csv}");
    if let Some(p) = sweep_peak(&points, k) {
        println!("peak at {} = {}", param.name(), p.value);
    }
    Ok(())
}

/// Summaries in `dir` and its immediate subdirectories, in path order.
fn collect_summaries(
    dir: &Path,
) -> Result<Vec<(String, serde_json::Map<String, serde_json::Value>)>> {
    let mut paths = vec![dir.join(SUMMARY_FILE)];
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    paths.extend(subdirs.into_iter().map(|d| d.join(SUMMARY_FILE)));
    let mut out = Vec::new();
    for p in paths.into_iter().filter(|p| p.exists()) {
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let value: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
            .map_err(|e| Error::Parse {
                path: p.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
        let name = p
            .parent()
            .and_then(|d| d.strip_prefix(dir).ok())
            .map(|d| d.to_string_lossy().into_owned())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".into());
        out.push((name, value));
    }
    Ok(out)
}

fn report_cmd(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.output.dir.clone();
    let rows = collect_summaries(&dir)?;
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "no {SUMMARY_FILE} under {}",
            dir.display()
        )));
    }
    let mut keys: Vec<String> = rows.iter().flat_map(|(_, m)| m.keys().cloned()).collect();
    keys.sort();
    keys.dedup();
    let mut csv = format!("run,{}\n", keys.join(","));
    for (name, m) in &rows {
        let cells: Vec<String> = keys
            .iter()
            .map(|k| match m.get(k) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
                None => String::new(),
            })
            .collect();
        csv.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    write_text(&dir.join("report.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli.command.common())?;
    info!("output directory {}", cfg.output.dir.display());
    match &cli.command {
        Command::Gen(_) => gen(&cfg),
        Command::Arbitrate(_) => arbitrate_cmd(&cfg),
        Command::TrainEki(_) => train_eki_cmd(&cfg),
        Command::Train(_) => train_cmd(&cfg),
        Command::Eval(_) => eval_cmd(&cfg),
        Command::Ablate { variant, .. } => ablate_cmd(&cfg, variant),
        Command::Sweep { param, .. } => sweep_cmd(&cfg, param),
        Command::Report(_) => report_cmd(&cfg),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
