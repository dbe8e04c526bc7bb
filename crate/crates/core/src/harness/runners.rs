use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::condense::{condense_observed, snapshot_set, CondenseConfig, CondenseTrace, Observer, TraceRecord};
use crate::coreset::{select_herding, select_random, CoresetResult};
use crate::data::{load_synthetic, save_synthetic, RetrievalData, SyntheticManifest, SyntheticSet};
use crate::error::{ensure, Error, Result};
use crate::harness::plot::{bar_chart, line_chart};
use crate::harness::spec::{ExperimentSpec, Method};
use crate::hashing::{loss_plugin, train_hash_with, HashLoss, TrainingSet};
use crate::model::init_network;
use crate::retrieval::{binarize, evaluate_codes, format_ablation_table, format_results_table, AblationRow, EvalReport};
use crate::Images;

pub const ARCHIVE_DIR: &str = "archive";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const CORESET_FILE: &str = "coreset.json";
pub const RUN_FILE: &str = "run.json";
pub const EVAL_FILE: &str = "eval.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// One produced set and where it was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub ipc: usize,
    pub dir: PathBuf,
    pub archive: PathBuf,
    pub manifest: SyntheticManifest,
    pub trace: Option<PathBuf>,
    pub coreset: Option<PathBuf>,
    pub iterations: usize,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
    pub seconds: f64,
}

/// Builds the set for `method` without touching the filesystem.
pub fn produce_set(
    spec: &ExperimentSpec,
    data: &RetrievalData,
    method: Method,
    seed: u64,
) -> Result<(SyntheticSet, Option<CondenseTrace>, Option<CoresetResult>)> {
    let train = &data.train;
    match method {
        Method::Iem | Method::DmPlain => {
            let mut cfg = spec.condense_config(seed)?;
            if method == Method::DmPlain {
                cfg.enable_na = false;
                cfg.enable_da = false;
            }
            let (set, trace) = condense_observed(train, &cfg, &mut ())?;
            Ok((set, Some(trace), None))
        }
        Method::Random => {
            let c = select_random(train, spec.ipc, seed)?;
            Ok((c.to_synthetic(train)?, None, Some(c)))
        }
        Method::Herding => {
            let theta = init_network(
                &spec.condense.arch,
                train.channels(),
                train.image_side(),
                spec.condense.code_bits,
                seed,
            )?;
            let c = select_herding(train, spec.ipc, &theta, seed)?;
            Ok((c.to_synthetic(train)?, None, Some(c)))
        }
        Method::Whole => Err(Error::Config("the whole train split has no archive to build".into())),
    }
}

/// Produces and writes one run under `run_dir(method, seed)`.
pub fn run_method(spec: &ExperimentSpec, data: &RetrievalData, method: Method, seed: u64) -> Result<RunRecord> {
    let start = Instant::now();
    let (set, trace, coreset) = produce_set(spec, data, method, seed)?;
    write_run(spec, method.label(), seed, &set, trace.as_ref(), coreset.as_ref(), start)
}

fn write_run(
    spec: &ExperimentSpec,
    label: &str,
    seed: u64,
    set: &SyntheticSet,
    trace: Option<&CondenseTrace>,
    coreset: Option<&CoresetResult>,
    start: Instant,
) -> Result<RunRecord> {
    let dir = spec.run_dir(label, seed);
    let archive = dir.join(ARCHIVE_DIR);
    let manifest = save_synthetic(set, &archive)?;
    let trace_path = match trace {
        Some(t) => {
            let p = dir.join(TRACE_FILE);
            t.write_jsonl(&p)?;
            Some(p)
        }
        None => None,
    };
    let coreset_path = match coreset {
        Some(c) => {
            let p = dir.join(CORESET_FILE);
            write_json(&p, c)?;
            Some(p)
        }
        None => None,
    };
    let record = RunRecord {
        method: label.to_string(),
        seed,
        ipc: set.ipc,
        dir: dir.clone(),
        archive,
        manifest,
        trace: trace_path,
        coreset: coreset_path,
        iterations: trace.map_or(0, CondenseTrace::len),
        first_loss: trace.and_then(CondenseTrace::first_loss),
        last_loss: trace.and_then(CondenseTrace::last_loss),
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(RUN_FILE), &record)?;
    tracing::info!(method = label, seed, archive = %record.archive.display(), "run written");
    Ok(record)
}

/// Condenses (or selects) with `spec.method` for every seed.
pub fn cmd_condense(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let data = spec.load_data()?;
    spec.seeds.iter().map(|&s| run_method(spec, &data, spec.method, s)).collect()
}

/// Coreset baseline runs; `method` must be random or herding.
pub fn cmd_baseline(spec: &ExperimentSpec, method: Method) -> Result<Vec<RunRecord>> {
    ensure!(
        matches!(method, Method::Random | Method::Herding),
        Config,
        "baseline method must be random or herding, got {method}"
    );
    let spec = ExperimentSpec { method, ..spec.clone() };
    cmd_condense(&spec)
}

/// Query and database shared by every method scored under one spec.
pub struct EvalContext<'a> {
    pub data: &'a RetrievalData,
    pub query_checksum: String,
    pub database_checksum: String,
}

impl<'a> EvalContext<'a> {
    pub fn new(data: &'a RetrievalData) -> Self {
        EvalContext {
            data,
            query_checksum: data.query.checksum(),
            database_checksum: data.database.checksum(),
        }
    }
}

/// Labels carried into each report.
#[derive(Debug, Clone)]
pub struct EvalMeta {
    pub method: String,
    pub ipc: usize,
    pub seed: u64,
    pub ratio: Option<f64>,
    pub trained_on: String,
}

impl EvalMeta {
    pub fn for_set(set: &SyntheticSet) -> Self {
        let p = &set.provenance;
        EvalMeta {
            method: p.method.clone(),
            ipc: set.ipc,
            seed: p.seed,
            ratio: Some(p.ratio),
            trained_on: format!("{}/{}ipc/seed{}/{}", p.method, set.ipc, p.seed, p.config_hash),
        }
    }
}

/// Trains one hash model per code length and scores it.
pub fn evaluate_set(
    spec: &ExperimentSpec,
    ctx: &EvalContext<'_>,
    set: &TrainingSet,
    seed: u64,
    loss: &dyn HashLoss,
    meta: &EvalMeta,
) -> Result<Vec<EvalReport>> {
    let mut out = Vec::with_capacity(spec.code_bits.len());
    for &bits in &spec.code_bits {
        let model = train_hash_with(set, &spec.hash_config(bits, seed), loss)?;
        let q = &ctx.data.query;
        let d = &ctx.data.database;
        let qc = binarize(&model.params.hash_forward(&q.images)?, q.labels.clone())?;
        let dc = binarize(&model.params.hash_forward(&d.images)?, d.labels.clone())?;
        let mut r = evaluate_codes(&qc, &dc, spec.eval.depth, &spec.eval.precision_at)?;
        r.method = meta.method.clone();
        r.dataset = spec.dataset.clone();
        r.ipc = meta.ipc;
        r.seed = meta.seed;
        r.loss = loss.name().to_string();
        r.trained_on = meta.trained_on.clone();
        r.ratio = meta.ratio;
        r.query_checksum = ctx.query_checksum.clone();
        r.database_checksum = ctx.database_checksum.clone();
        out.push(r);
    }
    Ok(out)
}

fn archive_for(spec: &ExperimentSpec, explicit: Option<&Path>, seed: u64) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| spec.run_dir(spec.method.label(), seed).join(ARCHIVE_DIR))
}

fn training_input(
    spec: &ExperimentSpec,
    data: &RetrievalData,
    archive: Option<&Path>,
    seed: u64,
) -> Result<(TrainingSet, EvalMeta)> {
    if spec.method == Method::Whole && archive.is_none() {
        let meta = EvalMeta {
            method: Method::Whole.label().into(),
            ipc: data.train.len() / data.train.num_classes.max(1),
            seed,
            ratio: Some(1.0),
            trained_on: format!("whole/{}", &data.train.checksum()[..16]),
        };
        return Ok((TrainingSet::from_dataset(&data.train), meta));
    }
    let set = load_synthetic(&archive_for(spec, archive, seed))?;
    ensure!(
        set.num_classes == data.train.num_classes && set.image_side == data.train.image_side(),
        Validation,
        "archive ({} classes, side {}) does not match dataset `{}` ({} classes, side {})",
        set.num_classes,
        set.image_side,
        spec.dataset,
        data.train.num_classes,
        data.train.image_side()
    );
    Ok((TrainingSet::from_synthetic(&set)?, EvalMeta::for_set(&set)))
}

/// Trains on an archive (or the whole train split) and scores retrieval for
/// every seed and code length. Reports land next to the run.
pub fn cmd_evaluate(spec: &ExperimentSpec, archive: Option<&Path>) -> Result<Vec<EvalReport>> {
    spec.validate()?;
    let data = spec.load_data()?;
    let ctx = EvalContext::new(&data);
    let loss = loss_plugin(&spec.hashing.loss, spec.hashing.quant_weight)?;
    let mut all = Vec::new();
    for &seed in &spec.seeds {
        let (set, meta) = training_input(spec, &data, archive, seed)?;
        let reports = evaluate_set(spec, &ctx, &set, seed, loss.as_ref(), &meta)?;
        let dir = spec.run_dir(&meta.method, seed);
        write_json(&dir.join(EVAL_FILE), &reports)?;
        for r in &reports {
            tracing::info!(method = %r.method, seed, bits = r.code_bits, map = r.map_value, "evaluated");
        }
        all.extend(reports);
    }
    Ok(all)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub ipc: usize,
    pub code_bits: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub table: String,
}

/// The NA x DA grid in the order (off,off), (on,off), (off,on), (on,on).
pub const ABLATION_GRID: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

pub fn cmd_ablate(spec: &ExperimentSpec) -> Result<AblationReport> {
    ensure!(spec.method == Method::Iem, Config, "ablation requires method iem, got {}", spec.method);
    spec.validate()?;
    let data = spec.load_data()?;
    let ctx = EvalContext::new(&data);
    let loss = loss_plugin(&spec.hashing.loss, spec.hashing.quant_weight)?;
    let bits = spec.code_bits[0];
    let eval_spec = ExperimentSpec { code_bits: vec![bits], ..spec.clone() };
    let mut rows = Vec::new();
    for (na, da) in ABLATION_GRID {
        let mut maps = Vec::new();
        for &seed in &spec.seeds {
            let cfg = CondenseConfig { enable_na: na, enable_da: da, ..spec.condense_config(seed)? };
            let start = Instant::now();
            let (set, trace) = condense_observed(&data.train, &cfg, &mut ())?;
            write_run(spec, cfg.method_label(), seed, &set, Some(&trace), None, start)?;
            let reports = evaluate_set(
                &eval_spec,
                &ctx,
                &TrainingSet::from_synthetic(&set)?,
                seed,
                loss.as_ref(),
                &EvalMeta::for_set(&set),
            )?;
            write_json(&spec.run_dir(cfg.method_label(), seed).join(EVAL_FILE), &reports)?;
            maps.push(reports[0].map_value);
        }
        rows.push(AblationRow { na, da, maps });
    }
    let report = AblationReport {
        dataset: spec.dataset.clone(),
        ipc: spec.ipc,
        code_bits: bits,
        seeds: spec.seeds.clone(),
        table: format_ablation_table(&rows),
        rows,
    };
    let dir = spec.output_dir.join(&spec.dataset).join("ablation").join(format!("{}ipc", spec.ipc));
    write_json(&dir.join("ablation.json"), &report)?;
    write_text(&dir.join("ablation.md"), &report.table)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub checkpoint: usize,
    pub nominal_seconds: f64,
    /// Condensation time actually elapsed at the snapshot.
    pub seconds: f64,
    pub iteration: usize,
    pub map_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSeries {
    pub method: String,
    pub seed: u64,
    pub points: Vec<TimingPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub dataset: String,
    pub ipc: usize,
    pub code_bits: usize,
    pub checkpoint_seconds: f64,
    pub series: Vec<TimingSeries>,
}

struct Snapshot {
    checkpoint: usize,
    nominal: f64,
    seconds: f64,
    iteration: usize,
    canvases: Images,
}

/// Snapshots the canvases each time condensation time crosses a multiple
/// of the checkpoint spacing, and stops after the last one.
struct CheckpointObserver {
    spacing: f64,
    total: usize,
    snaps: Vec<Snapshot>,
}

impl Observer for CheckpointObserver {
    fn on_iteration(&mut self, record: &TraceRecord, canvases: &Images) {
        let next = self.snaps.len() + 1;
        if next <= self.total && record.seconds >= self.spacing * next as f64 {
            self.snaps.push(Snapshot {
                checkpoint: next,
                nominal: self.spacing * next as f64,
                seconds: record.seconds,
                iteration: record.iteration + 1,
                canvases: canvases.clone(),
            });
        }
    }

    fn should_stop(&self) -> bool {
        self.snaps.len() >= self.total
    }
}

/// (time, mAP) series per method under a shared wall-clock budget.
pub fn cmd_timing(spec: &ExperimentSpec) -> Result<TimingReport> {
    spec.validate()?;
    let methods = &spec.timing.methods;
    ensure!(methods.len() >= 2, Config, "timing needs at least two methods");
    ensure!(
        methods.iter().all(|m| m.is_condensation()),
        Config,
        "timing compares condensation methods (iem, dm-plain)"
    );
    let data = spec.load_data()?;
    let ctx = EvalContext::new(&data);
    let loss = loss_plugin(&spec.hashing.loss, spec.hashing.quant_weight)?;
    let bits = spec.code_bits[0];
    let eval_spec = ExperimentSpec { code_bits: vec![bits], ..spec.clone() };
    let mut series = Vec::new();
    for &method in methods {
        for &seed in &spec.seeds {
            let mut cfg = spec.condense_config(seed)?;
            if method == Method::DmPlain {
                cfg.enable_na = false;
                cfg.enable_da = false;
            } else {
                cfg.enable_na = spec.condense.enable_na;
                cfg.enable_da = spec.condense.enable_da;
            }
            // Run until the last checkpoint instead of a fixed iteration count.
            cfg.iterations = usize::MAX / 2;
            cfg.outer_repeats = 1;
            let mut obs = CheckpointObserver {
                spacing: spec.timing.checkpoint_seconds,
                total: spec.timing.checkpoints,
                snaps: Vec::new(),
            };
            condense_observed(&data.train, &cfg, &mut obs)?;
            let mut points = Vec::new();
            for snap in obs.snaps {
                let set = snapshot_set(&data.train, &cfg, &snap.canvases, snap.iteration)?;
                let reports = evaluate_set(
                    &eval_spec,
                    &ctx,
                    &TrainingSet::from_synthetic(&set)?,
                    seed,
                    loss.as_ref(),
                    &EvalMeta::for_set(&set),
                )?;
                points.push(TimingPoint {
                    checkpoint: snap.checkpoint,
                    nominal_seconds: snap.nominal,
                    seconds: snap.seconds,
                    iteration: snap.iteration,
                    map_value: reports[0].map_value,
                });
            }
            series.push(TimingSeries { method: cfg.method_label().into(), seed, points });
        }
    }
    let report = TimingReport {
        dataset: spec.dataset.clone(),
        ipc: spec.ipc,
        code_bits: bits,
        checkpoint_seconds: spec.timing.checkpoint_seconds,
        series,
    };
    let dir = spec.output_dir.join(&spec.dataset).join("timing").join(format!("{}ipc", spec.ipc));
    write_json(&dir.join("timing.json"), &report)?;
    let lines: Vec<(String, Vec<(f64, f64)>)> = report
        .series
        .iter()
        .map(|s| {
            (
                format!("{} seed {}", s.method, s.seed),
                s.points.iter().map(|p| (p.seconds, p.map_value * 100.0)).collect(),
            )
        })
        .collect();
    write_text(&dir.join("timing.svg"), &line_chart("mAP vs condensation time", "seconds", "mAP (%)", &lines))?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralizeReport {
    pub plugins: Vec<String>,
    pub reports: Vec<EvalReport>,
    pub table: String,
}

/// Scores one archive per seed under each hashing-loss plugin.
pub fn cmd_generalize(spec: &ExperimentSpec, archive: Option<&Path>, plugins: &[String]) -> Result<GeneralizeReport> {
    ensure!(plugins.len() >= 2, Config, "generalize needs at least two loss plugins, got {}", plugins.len());
    let losses = plugins
        .iter()
        .map(|p| loss_plugin(p, spec.hashing.quant_weight))
        .collect::<Result<Vec<_>>>()?;
    spec.validate()?;
    let data = spec.load_data()?;
    let ctx = EvalContext::new(&data);
    let mut reports = Vec::new();
    for &seed in &spec.seeds {
        let (set, meta) = training_input(spec, &data, archive, seed)?;
        for (name, loss) in plugins.iter().zip(&losses) {
            let mut rs = evaluate_set(spec, &ctx, &set, seed, loss.as_ref(), &meta)?;
            rs.iter_mut().for_each(|r| r.loss = name.clone());
            reports.extend(rs);
        }
    }
    let mut lines = String::from("| Loss | Bits | Method | mAP (%) |\n|---|---|---|---|\n");
    let mut cells: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in &reports {
        cells.entry((r.loss.clone(), r.code_bits)).or_default().push(r.map_value * 100.0);
    }
    for ((loss, bits), v) in &cells {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        lines.push_str(&format!("| {loss} | {bits} | {} | {mean:.2} |\n", spec.method));
    }
    let out = GeneralizeReport { plugins: plugins.to_vec(), reports, table: lines };
    let dir = spec.output_dir.join(&spec.dataset).join("generalize").join(spec.method.label()).join(format!("{}ipc", spec.ipc));
    write_json(&dir.join("generalize.json"), &out)?;
    write_text(&dir.join("generalize.md"), &out.table)?;
    let groups: Vec<(String, Vec<f64>)> = spec
        .code_bits
        .iter()
        .map(|&b| {
            let vals = plugins
                .iter()
                .map(|p| {
                    let v = &cells[&(p.clone(), b)];
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect();
            (format!("{b} bits"), vals)
        })
        .collect();
    write_text(&dir.join("generalize.svg"), &bar_chart("mAP per hashing loss", "mAP (%)", plugins, &groups))?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    pub reports: Vec<EvalReport>,
    /// Every report for a dataset shares query and database checksums.
    pub fair: bool,
    pub table: String,
}

fn collect_eval_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_eval_files(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == EVAL_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Gathers every `eval.json` under `root` into one results table.
pub fn cmd_report(root: &Path) -> Result<SummaryReport> {
    let mut files = Vec::new();
    collect_eval_files(root, &mut files)?;
    let mut reports = Vec::new();
    for f in files {
        let rs: Vec<EvalReport> = read_json(&f)?;
        reports.extend(rs);
    }
    let mut sums: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
    let mut fair = true;
    for r in &reports {
        let e = sums.entry(&r.dataset).or_insert((&r.query_checksum, &r.database_checksum));
        fair &= *e == (r.query_checksum.as_str(), r.database_checksum.as_str());
    }
    let out = SummaryReport { table: format_results_table(&reports), reports, fair };
    write_json(&root.join("report.json"), &out)?;
    write_text(&root.join("report.md"), &out.table)?;
    Ok(out)
}
