//! Command implementations shared by the binary and the tests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use illumrl_core::agent::{load_checkpoint, save_checkpoint, AgentParams};
use illumrl_core::datasets::{
    load_idx_corpus, load_stack_file, simulate_image, split, Corpus, IlluminationDataset, SplitSpec, StackFileWriter,
    StackHeader,
};
use illumrl_core::optics::{LedGeometry, OpticsSpec, Simulator};
use illumrl_core::rng::{stream, Purpose};
use illumrl_core::training::{evaluate, EpochMetrics, EvalReport, TrainConfig, Trainer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::Manifest;

pub const TRAIN_STACKS: &str = "train.vistack";
pub const TEST_STACKS: &str = "test.vistack";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const METRICS: &str = "metrics.csv";
pub const EVALUATION: &str = "evaluation.csv";

/// Fixed seed of the train/validation partition, shared by every run.
const VALIDATION_SPLIT_SEED: u64 = 0;
/// Stacks simulated per parallel chunk before being streamed to disk.
const GENERATE_CHUNK: usize = 256;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn idx_paths(dir: &Path, prefix: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Test samples kept when the training corpus is limited to `limit`.
pub fn scaled_test_count(limit: usize, train_total: usize, test_total: usize) -> usize {
    if limit >= train_total {
        return test_total;
    }
    ((limit as f64 * test_total as f64 / train_total as f64).round() as usize).clamp(1, test_total)
}

#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub train: PathBuf,
    pub test: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
}

/// Simulates per-LED stacks for the MNIST train and test corpora.
pub fn generate_dataset(cfg: &RunConfig, out: &Path, limit: Option<usize>) -> Result<GeneratedData> {
    ensure_dir(out)?;
    let (train_img, train_lbl) = idx_paths(&cfg.data.mnist_dir, "train");
    let (test_img, test_lbl) = idx_paths(&cfg.data.mnist_dir, "t10k");
    let mut train = load_idx_corpus(&train_img, &train_lbl)
        .with_context(|| format!("loading MNIST training corpus from {}", cfg.data.mnist_dir.display()))?;
    let mut test = load_idx_corpus(&test_img, &test_lbl)
        .with_context(|| format!("loading MNIST test corpus from {}", cfg.data.mnist_dir.display()))?;
    if let Some(n) = limit {
        if n == 0 {
            bail!("--limit must be positive");
        }
        let n_test = scaled_test_count(n, train.len(), test.len());
        train = train.truncated(n);
        test = test.truncated(n_test);
    }
    let n_classes = train.n_classes().max(test.n_classes());
    let sim = Simulator::new(&LedGeometry::mnist(), &OpticsSpec::mnist())?;
    let train_path = out.join(TRAIN_STACKS);
    let test_path = out.join(TEST_STACKS);
    write_stacks(&sim, &train, n_classes, &train_path)?;
    write_stacks(&sim, &test, n_classes, &test_path)?;

    let mut m = Manifest::new("generate-dataset", cfg).arg("limit", limit.map_or(0, |n| n as i64));
    for p in [&train_img, &train_lbl, &test_img, &test_lbl] {
        m.input(p)?;
    }
    m.output(&train_path)?;
    m.output(&test_path)?;
    m.write(out)?;
    Ok(GeneratedData {
        train: train_path,
        test: test_path,
        n_train: train.len(),
        n_test: test.len(),
    })
}

fn write_stacks(sim: &Simulator, corpus: &Corpus, n_classes: usize, path: &Path) -> Result<()> {
    let (h, w) = sim.optics().detector_pixels;
    let header = StackHeader {
        n_samples: corpus.len() as u32,
        n_slices: sim.n_slices() as u32,
        height: h as u32,
        width: w as u32,
        n_classes: n_classes as u32,
    };
    let labels: Vec<u16> = corpus.labels.iter().map(|&l| l as u16).collect();
    let mut writer = StackFileWriter::create(path, header, &labels).with_context(|| format!("creating {}", path.display()))?;
    let idx: Vec<usize> = (0..corpus.len()).collect();
    for chunk in idx.chunks(GENERATE_CHUNK) {
        let stacks: Vec<Vec<f32>> = chunk
            .par_iter()
            .map(|&i| simulate_image(sim, corpus, i))
            .collect::<illumrl_core::Result<_>>()?;
        for s in &stacks {
            writer.push(s)?;
        }
    }
    writer.finish().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub struct Splits {
    pub train: IlluminationDataset,
    pub validation: Option<IlluminationDataset>,
    pub test: IlluminationDataset,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

/// Loads the stack files and carves the validation share off the training
/// file. `limit` caps the training file before the split.
pub fn load_splits(cfg: &RunConfig, out: &Path, limit: Option<usize>) -> Result<Splits> {
    let dir = cfg.stacks_dir(out);
    let train_path = dir.join(TRAIN_STACKS);
    let test_path = dir.join(TEST_STACKS);
    let limit = limit.or((cfg.data.train_limit > 0).then_some(cfg.data.train_limit));
    let full = load_stack_file(&train_path, limit).with_context(|| format!("loading {}", train_path.display()))?;
    let test = load_stack_file(&test_path, None).with_context(|| format!("loading {}", test_path.display()))?;
    let (train, validation) = if cfg.data.validation_fraction > 0.0 {
        let spec = SplitSpec {
            train_fraction: 1.0 - cfg.data.validation_fraction,
            seed: VALIDATION_SPLIT_SEED,
        };
        let (t, v) = split(&full, spec)?;
        (t, Some(v))
    } else {
        (full, None)
    };
    Ok(Splits {
        train,
        validation,
        test,
        train_path,
        test_path,
    })
}

/// Fresh parameters for an agent matching `data`.
pub fn init_params(cfg: &RunConfig, data: &IlluminationDataset, seed: u64) -> Result<AgentParams> {
    let acfg = cfg.agent_config(data.n_slices(), data.dims(), data.n_classes())?;
    Ok(AgentParams::init(&acfg, &mut stream(seed, Purpose::Init, 0))?)
}

/// One row of the per-epoch metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mode: String,
    pub seed: u64,
    /// Empty for the baseline.
    pub r_exit: Option<f64>,
    pub epoch: usize,
    pub split: String,
    pub samples: usize,
    pub accuracy: f64,
    pub mean_length: f64,
    /// Loss components exist for training rows only.
    pub loss_cls: Option<f64>,
    pub loss_dec: Option<f64>,
    pub skipped: Option<usize>,
}

impl MetricsRow {
    fn new(tcfg: &TrainConfig, epoch: usize, split: &str) -> Self {
        Self {
            mode: mode_name(tcfg.baseline).into(),
            seed: tcfg.seed,
            r_exit: (!tcfg.baseline).then_some(tcfg.reward.r_exit),
            epoch,
            split: split.into(),
            samples: 0,
            accuracy: 0.0,
            mean_length: 0.0,
            loss_cls: None,
            loss_dec: None,
            skipped: None,
        }
    }

    fn train(tcfg: &TrainConfig, m: &EpochMetrics) -> Self {
        Self {
            samples: m.samples,
            accuracy: m.accuracy(),
            mean_length: m.mean_length(),
            loss_cls: Some(m.loss_cls),
            loss_dec: Some(m.loss_dec),
            skipped: Some(m.skipped),
            ..Self::new(tcfg, m.epoch, "train")
        }
    }

    fn eval(tcfg: &TrainConfig, epoch: usize, split: &str, r: &EvalReport) -> Self {
        Self {
            samples: r.samples,
            accuracy: r.accuracy,
            mean_length: r.mean_length,
            ..Self::new(tcfg, epoch, split)
        }
    }
}

pub fn mode_name(baseline: bool) -> &'static str {
    if baseline {
        "baseline"
    } else {
        "adaptive"
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_csv(path)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
    pub test: EvalReport,
}

/// Trains one agent into `out`, keeping the checkpoint with the best
/// validation accuracy, then scores it on the test file.
///
/// Non-finite parameters or an epoch in which every batch was skipped abort
/// the run; the last good checkpoint stays on disk.
pub fn train(cfg: &RunConfig, out: &Path, seed: u64, r_exit: f64, baseline: bool, limit: Option<usize>) -> Result<TrainOutcome> {
    ensure_dir(out)?;
    let splits = load_splits(cfg, out, limit)?;
    let tcfg = cfg.train_config(seed, r_exit, baseline)?;
    let command = if baseline { "baseline" } else { "train" };
    let mut manifest = Manifest::new(command, cfg)
        .arg("seed", seed as i64)
        .arg("r_exit", r_exit)
        .arg("baseline", baseline)
        .arg("limit", limit.map_or(0, |n| n as i64));
    manifest.input(&splits.train_path)?;
    manifest.input(&splits.test_path)?;

    let params = init_params(cfg, &splits.train, seed)?;
    let mut trainer = Trainer::new(params, tcfg.clone())?;
    let ckpt = out.join(CHECKPOINT);
    let metrics_path = out.join(METRICS);
    save_checkpoint(&trainer.params, &ckpt)?;
    let mut csv = csv::Writer::from_path(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;

    let eval_seed = cfg.train.eval_seed;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for epoch in 1..=tcfg.epochs {
        let m = trainer.train_epoch(&splits.train)?;
        if !trainer.params.is_finite() || (m.batches > 0 && m.skipped == m.batches) {
            csv.flush()?;
            bail!(
                "training diverged in epoch {epoch}; kept the epoch-{} checkpoint at {}",
                best.1,
                ckpt.display()
            );
        }
        csv.serialize(MetricsRow::train(&tcfg, &m))?;
        let due = epoch % tcfg.eval_every == 0 || epoch == tcfg.epochs;
        match &splits.validation {
            Some(val) if due => {
                let r = evaluate(val, &trainer.params, eval_seed, Some(&tcfg))?;
                csv.serialize(MetricsRow::eval(&tcfg, epoch, "val", &r))?;
                if r.accuracy > best.0 {
                    best = (r.accuracy, epoch);
                    save_checkpoint(&trainer.params, &ckpt)?;
                }
            }
            Some(_) => {}
            None => {
                best = (f64::NAN, epoch);
                save_checkpoint(&trainer.params, &ckpt)?;
            }
        }
        csv.flush()?;
    }

    let kept = load_checkpoint(&ckpt)?;
    let test = evaluate(&splits.test, &kept, eval_seed, Some(&tcfg))?;
    csv.serialize(MetricsRow::eval(&tcfg, best.1, "test", &test))?;
    csv.flush()?;
    drop(csv);

    manifest.output(&ckpt)?;
    manifest.output(&metrics_path)?;
    manifest.write(out)?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        metrics: metrics_path,
        best_epoch: best.1,
        test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn select(self, splits: &Splits) -> Result<&IlluminationDataset> {
        match self {
            Split::Train => Ok(&splits.train),
            Split::Val => splits
                .validation
                .as_ref()
                .context("no validation split (data.validation_fraction = 0)"),
            Split::Test => Ok(&splits.test),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub split: String,
    pub eval_seed: u64,
    pub samples: usize,
    pub accuracy: f64,
    pub mean_length: f64,
    /// Episodes per length 1..=t_max, `;`-separated.
    pub length_counts: String,
}

/// Greedy evaluation of a stored checkpoint; appends nothing, overwrites
/// `evaluation.csv` in `out`.
pub fn evaluate_checkpoint(cfg: &RunConfig, out: &Path, checkpoint: &Path, which: Split, limit: Option<usize>) -> Result<EvalReport> {
    ensure_dir(out)?;
    let splits = load_splits(cfg, out, limit)?;
    let params = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let data = which.select(&splits)?;
    let report = evaluate(data, &params, cfg.train.eval_seed, None)?;
    let path = out.join(EVALUATION);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.serialize(EvaluationRow {
        split: which.name().into(),
        eval_seed: cfg.train.eval_seed,
        samples: report.samples,
        accuracy: report.accuracy,
        mean_length: report.mean_length,
        length_counts: report
            .per_length
            .iter()
            .map(|b| b.count.to_string())
            .collect::<Vec<_>>()
            .join(";"),
    })?;
    w.flush()?;
    drop(w);
    let mut m = Manifest::new("evaluate", cfg).arg("split", which.name());
    m.input(checkpoint)?;
    m.input(&splits.train_path)?;
    m.input(&splits.test_path)?;
    m.output(&path)?;
    m.write(out)?;
    Ok(report)
}

pub const SWEEP_CSV: &str = "sweep.csv";
pub const BASELINE_CSV: &str = "baseline.csv";
pub const SWEEP_SVG: &str = "sweep.svg";

/// Test-set outcome of one (grid point, seed) job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: String,
    pub r_exit: Option<f64>,
    pub seed: u64,
    /// `ok` or `failed`.
    pub status: String,
    pub accuracy: Option<f64>,
    pub mean_length: Option<f64>,
    pub samples: Option<usize>,
    pub best_epoch: Option<usize>,
    pub error: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Copy, Debug)]
struct Job {
    r_exit: f64,
    seed: u64,
    baseline: bool,
}

impl Job {
    fn dir(&self, out: &Path) -> PathBuf {
        let name = if self.baseline {
            format!("baseline_seed{}", self.seed)
        } else {
            format!("r{}_seed{}", self.r_exit, self.seed)
        };
        out.join("runs").join(name)
    }

    fn run(&self, cfg: &RunConfig, out: &Path, limit: Option<usize>) -> SweepRow {
        let mut row = SweepRow {
            mode: mode_name(self.baseline).into(),
            r_exit: (!self.baseline).then_some(self.r_exit),
            seed: self.seed,
            status: "ok".into(),
            accuracy: None,
            mean_length: None,
            samples: None,
            best_epoch: None,
            error: String::new(),
        };
        let mut job_cfg = cfg.clone();
        if job_cfg.data.stacks.as_os_str().is_empty() {
            job_cfg.data.stacks = out.to_path_buf();
        }
        match train(&job_cfg, &self.dir(out), self.seed, self.r_exit, self.baseline, limit) {
            Ok(o) => {
                row.accuracy = Some(o.test.accuracy);
                row.mean_length = Some(o.test.mean_length);
                row.samples = Some(o.test.samples);
                row.best_epoch = Some(o.best_epoch);
            }
            Err(e) => {
                row.status = "failed".into();
                row.error = format!("{e:#}");
            }
        }
        row
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub baseline: Vec<SweepRow>,
    pub csv: PathBuf,
    pub baseline_csv: PathBuf,
    pub plot: PathBuf,
}

/// Trains every (r_exit, seed) pair, plus per-seed baselines when enabled,
/// and writes the curve CSVs and plot. Failed jobs are recorded and the
/// sweep continues.
pub fn sweep(cfg: &RunConfig, out: &Path, limit: Option<usize>) -> Result<SweepOutput> {
    ensure_dir(out)?;
    let jobs: Vec<Job> = cfg
        .sweep
        .r_exit
        .iter()
        .flat_map(|&r_exit| cfg.sweep.seeds.iter().map(move |&seed| Job { r_exit, seed, baseline: false }))
        .collect();
    let baselines: Vec<Job> = if cfg.sweep.baseline {
        let r_exit = cfg.train.r_exit;
        cfg.sweep.seeds.iter().map(|&seed| Job { r_exit, seed, baseline: true }).collect()
    } else {
        Vec::new()
    };
    let csv_path = out.join(SWEEP_CSV);
    let baseline_path = out.join(BASELINE_CSV);
    let rows = run_jobs(cfg, out, limit, &jobs, &csv_path)?;
    let baseline = run_jobs(cfg, out, limit, &baselines, &baseline_path)?;
    let plot = out.join(SWEEP_SVG);
    crate::plot::sweep_plot(&rows, &baseline, &plot)?;

    let mut m = Manifest::new("sweep", cfg).arg("limit", limit.map_or(0, |n| n as i64));
    let dir = cfg.stacks_dir(out);
    m.input(&dir.join(TRAIN_STACKS))?;
    m.input(&dir.join(TEST_STACKS))?;
    for p in [&csv_path, &baseline_path, &plot] {
        m.output(p)?;
    }
    m.write(out)?;
    Ok(SweepOutput {
        rows,
        baseline,
        csv: csv_path,
        baseline_csv: baseline_path,
        plot,
    })
}

/// Runs `jobs` and writes one row each to `path`. Sequential runs flush
/// after every job, so an interrupted sweep leaves a valid CSV.
fn run_jobs(cfg: &RunConfig, out: &Path, limit: Option<usize>, jobs: &[Job], path: &Path) -> Result<Vec<SweepRow>> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let rows = if cfg.sweep.parallel {
        let rows: Vec<SweepRow> = jobs.par_iter().map(|j| j.run(cfg, out, limit)).collect();
        for r in &rows {
            w.serialize(r)?;
        }
        rows
    } else {
        let mut rows = Vec::with_capacity(jobs.len());
        for j in jobs {
            let r = j.run(cfg, out, limit);
            w.serialize(&r)?;
            w.flush()?;
            rows.push(r);
        }
        rows
    };
    w.flush()?;
    Ok(rows)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    read_csv(path)
}

/// Redraws the sweep plot from existing CSVs in `out`.
pub fn replot(out: &Path) -> Result<PathBuf> {
    let rows = read_sweep(&out.join(SWEEP_CSV))?;
    let bl = out.join(BASELINE_CSV);
    let baseline = if bl.exists() { read_sweep(&bl)? } else { Vec::new() };
    let plot = out.join(SWEEP_SVG);
    crate::plot::sweep_plot(&rows, &baseline, &plot)?;
    Ok(plot)
}

#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: PathBuf,
    pub metadata: PathBuf,
    pub meta: crate::plot::RenderMeta,
}

/// Draws the greedy trajectory of one sample, using the same readout noise
/// stream as evaluation.
pub fn render_trajectory(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    which: Split,
    index: usize,
    limit: Option<usize>,
) -> Result<Rendered> {
    ensure_dir(out)?;
    let splits = load_splits(cfg, out, limit)?;
    let data = which.select(&splits)?;
    if index >= data.len() {
        bail!("sample index {index} out of range for the {}-sample {} split", data.len(), which.name());
    }
    let params = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut rng = stream(cfg.train.eval_seed, Purpose::Evaluate, index as u64);
    let traj = illumrl_core::agent::rollout(
        &data.stack(index),
        &params,
        data.label(index),
        &mut rng,
        illumrl_core::agent::Mode::Greedy,
    )?;
    let stem = format!("trajectory_{}_{index}", which.name());
    let image = out.join(format!("{stem}.svg"));
    let metadata = out.join(format!("{stem}.toml"));
    let meta = crate::plot::render_trajectory(&traj, data.dims(), index, &image)?;
    crate::plot::write_render_meta(&meta, &metadata)?;
    let mut m = Manifest::new("render-trajectory", cfg)
        .arg("split", which.name())
        .arg("index", index as i64);
    m.input(checkpoint)?;
    m.output(&image)?;
    m.output(&metadata)?;
    m.write(out)?;
    Ok(Rendered { image, metadata, meta })
}
