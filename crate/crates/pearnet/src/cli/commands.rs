//! The four subcommands as library functions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, NORMALIZE_FLOOR};
use crate::error::{Error, Result};
use crate::graph::{GraphDump, Mechanism};
use crate::model::checkpoint;
use crate::signal::{load_dataset, save_dataset, synthesize, Dataset, DatasetFormat};
use crate::train::{cross_validate, CvOutcome, MetricsReport};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.pnck";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const GRAPH_DUMP: &str = "graph_dump.json";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TXT: &str = "ablation.txt";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Default run directory: `<out_dir>/<UTC timestamp>-<tag>`.
pub fn default_run_dir(cfg: &RunConfig) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    cfg.out_dir.join(format!("{stamp}-{}", cfg.tag))
}

/// Refuse to reuse a non-empty directory unless forced.
fn check_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_file() {
        return Err(Error::config("--out", format!("{} is a file, expected a directory", dir.display())));
    }
    let occupied = dir.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !force {
        return Err(Error::config("--out", format!("{} is not empty; pass --force to overwrite", dir.display())));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// The dataset a run works on, normalised if the config asks for it.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let data = match &cfg.data.path {
        Some(p) => load_dataset(p, cfg.data.format_for(p))?,
        None => synthesize(&cfg.synth, cfg.seed)?,
    };
    if data.epoch_len() != cfg.model.epoch_len {
        return Err(Error::config(
            "model.epoch_len",
            format!("{} disagrees with the dataset's {}", cfg.model.epoch_len, data.epoch_len()),
        ));
    }
    if cfg.train.k_folds > data.len() {
        return Err(Error::config("train.k_folds", format!("{} folds for {} epochs", cfg.train.k_folds, data.len())));
    }
    Ok(if cfg.normalize { data.z_normalized(NORMALIZE_FLOOR) } else { data })
}

/// Synthesize the configured dataset and write it to `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<Dataset> {
    cfg.synth.validate().map_err(|e| match e {
        Error::Config { path, message } => Error::config(format!("synth.{path}"), message),
        other => other,
    })?;
    if out.exists() && !force {
        return Err(Error::config("--out", format!("{} exists; pass --force to overwrite", out.display())));
    }
    let data = synthesize(&cfg.synth, cfg.seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_dataset(&data, out, cfg.data.format_for(out))?;
    Ok(data)
}

/// `metrics.json`: the report plus what produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub seed: u64,
    pub config: RunConfig,
    pub report: MetricsReport,
}

#[derive(Serialize)]
struct StampedDump<'a> {
    seed: u64,
    config: &'a RunConfig,
    epoch: usize,
    label: u8,
    #[serde(flatten)]
    dump: &'a GraphDump,
}

fn loss_trace_csv(outcome: &CvOutcome) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(e.to_string());
    w.write_record(["fold", "epoch", "step", "vif", "ce", "total"]).map_err(err)?;
    for (fold, trace) in outcome.traces.iter().enumerate() {
        for r in trace {
            w.write_record([
                fold.to_string(),
                r.epoch.to_string(),
                r.step.to_string(),
                r.loss.vif.to_string(),
                r.loss.ce.to_string(),
                r.loss.total.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// What a training run produced.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub dir: PathBuf,
    pub outcome: CvOutcome,
}

/// Cross-validate and write every artifact into `dir`.
pub fn cmd_train(cfg: &RunConfig, dir: &Path, force: bool, mut log: impl FnMut(&str)) -> Result<TrainRun> {
    cfg.validate()?;
    check_dir(dir, force)?;
    let data = prepare_dataset(cfg)?;
    create_dir(dir)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let outcome = cross_validate(&data, &cfg.model, &cfg.train, |f, m| {
        log(&format!("fold {f}: accuracy {:.4} MF1 {:.4}", m.accuracy, m.macro_f1))
    })?;
    checkpoint::save(&outcome.first_model, &dir.join(CHECKPOINT_FILE))?;
    let metrics = MetricsFile { seed: cfg.seed, config: cfg.clone(), report: outcome.report.clone() };
    write_json(&dir.join(METRICS_JSON), &metrics)?;
    write_file(&dir.join(METRICS_TXT), outcome.report.to_table().as_bytes())?;
    write_file(&dir.join(LOSS_TRACE), &loss_trace_csv(&outcome)?)?;
    let epoch = &data.epochs()[0];
    let dump = outcome.first_model.graph_dump(&epoch.samples)?;
    let stamped = StampedDump { seed: cfg.seed, config: cfg, epoch: 0, label: epoch.label, dump: &dump };
    write_json(&dir.join(GRAPH_DUMP), &stamped)?;
    Ok(TrainRun { dir: dir.to_path_buf(), outcome })
}

/// One configuration of the ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub s_count: usize,
    pub l_max: usize,
    pub mechanism: Mechanism,
    pub vif_loss: bool,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; crate::signal::NUM_CLASSES],
}

/// Expand the ablation axes into labelled run configs. Structure rows vary
/// the segment count, then the level count (skipping the base point if the
/// segment axis already covered it); attention and VIF rows vary one
/// setting at the base point.
pub fn ablation_grid(cfg: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    let a = &cfg.ablate;
    let (s0, l0) = (cfg.model.s_count, cfg.model.l_max);
    let mut rows = Vec::new();
    let with = |s: usize, l: usize, m: Mechanism, v: bool| {
        let mut c = cfg.clone();
        c.model.s_count = s;
        c.model.l_max = l;
        c.model.graph.mechanism = m;
        c.train.vif_loss = v;
        c
    };
    let (m0, v0) = (cfg.model.graph.mechanism, cfg.train.vif_loss);
    for &s in &a.s_count {
        rows.push((format!("Base({s}, {l0})"), with(s, l0, m0, v0)));
    }
    for &l in &a.l_max {
        if l == l0 && a.s_count.contains(&s0) {
            continue;
        }
        rows.push((format!("Level({s0}, {l})"), with(s0, l, m0, v0)));
    }
    for &m in &a.mechanism {
        rows.push((format!("Atten({s0}, {l0}) {m}"), with(s0, l0, m, v0)));
    }
    for &v in &a.vif_loss {
        let tag = if v { "with VIF" } else { "without VIF" };
        rows.push((format!("VIF({s0}, {l0}) {tag}"), with(s0, l0, m0, v)));
    }
    if rows.is_empty() {
        return Err(Error::config("ablate", "no configurations"));
    }
    for (label, c) in &rows {
        c.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(format!("ablate[{label}].{path}"), message),
            other => other,
        })?;
    }
    Ok(rows)
}

/// Aligned text table of ablation rows.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(13);
    let mut out = format!("{:<width$}{:>10}{:>8}\n", "configuration", "Accuracy", "MF1");
    for r in rows {
        out.push_str(&format!("{:<width$}{:>10.4}{:>8.4}\n", r.label, r.accuracy, r.macro_f1));
    }
    out
}

/// Run every grid configuration; identical configurations are trained once.
pub fn cmd_ablate(cfg: &RunConfig, dir: &Path, force: bool, mut log: impl FnMut(&str)) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let grid = ablation_grid(cfg)?;
    check_dir(dir, force)?;
    let data = prepare_dataset(cfg)?;
    create_dir(dir)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let mut done: Vec<(RunConfig, MetricsReport)> = Vec::new();
    let mut rows = Vec::with_capacity(grid.len());
    for (i, (label, run)) in grid.iter().enumerate() {
        let report = match done.iter().find(|(c, _)| c == run) {
            Some((_, r)) => r.clone(),
            None => {
                log(&format!("[{}/{}] {label}", i + 1, grid.len()));
                let r = cross_validate(&data, &run.model, &run.train, |_, _| {})?.report;
                done.push((run.clone(), r.clone()));
                r
            }
        };
        let row_dir = dir.join(format!("row{i:02}"));
        create_dir(&row_dir)?;
        let metrics = MetricsFile { seed: run.seed, config: run.clone(), report: report.clone() };
        write_json(&row_dir.join(METRICS_JSON), &metrics)?;
        rows.push(AblationRow {
            label: label.clone(),
            s_count: run.model.s_count,
            l_max: run.model.l_max,
            mechanism: run.model.graph.mechanism,
            vif_loss: run.train.vif_loss,
            accuracy: report.pooled.accuracy,
            macro_f1: report.pooled.macro_f1,
            per_class_f1: report.pooled.per_class_f1,
        });
    }
    write_json(&dir.join(ABLATION_JSON), &rows)?;
    write_file(&dir.join(ABLATION_TXT), ablation_table(&rows).as_bytes())?;
    Ok(rows)
}

/// Graph dump of one dataset epoch under a saved model.
pub fn cmd_inspect(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    dataset_path: &Path,
    epoch: usize,
    out: &Path,
    force: bool,
) -> Result<GraphDump> {
    if out.exists() && !force {
        return Err(Error::config("--out", format!("{} exists; pass --force to overwrite", out.display())));
    }
    let model = checkpoint::load(checkpoint_path, None)?;
    let format = cfg.data.format.unwrap_or_else(|| DatasetFormat::from_path(dataset_path));
    let mut data = load_dataset(dataset_path, format)?;
    if cfg.normalize {
        data = data.z_normalized(NORMALIZE_FLOOR);
    }
    let Some(e) = data.epochs().get(epoch) else {
        return Err(Error::config("--epoch", format!("index {epoch} is outside the {} epochs", data.len())));
    };
    let dump = model.graph_dump(&e.samples)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let snapshot = RunConfig { model: model.config.clone(), ..cfg.clone() };
    let stamped = StampedDump { seed: cfg.seed, config: &snapshot, epoch, label: e.label, dump: &dump };
    write_json(out, &stamped)?;
    Ok(dump)
}
