use std::path::{Path, PathBuf};
use std::process::Command;

use illumrl::commands::{self, read_metrics, read_sweep, Split};
use illumrl::config::RunConfig;
use illumrl::manifest::{file_hash, Manifest};
use illumrl_core::agent::load_checkpoint;
use illumrl_core::datasets::{encode_idx, load_stack_file, read_stack_header, Corpus};
use tempfile::TempDir;

/// Three-class 28×28 corpus: class `c` is a bright bar in band `c`.
fn corpus(n: usize, offset: usize) -> Corpus {
    let mut images = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = (i + offset) % 3;
        labels.push(c as u8);
        let shift = (i * 7) % 4;
        for p in 0..784 {
            let (r, col) = (p / 28, p % 28);
            let on = r >= 4 + 7 * c + shift / 2 && r < 8 + 7 * c + shift / 2 && (6..22).contains(&col);
            images.push(if on { 1.0 } else { 0.0 });
        }
    }
    Corpus {
        rows: 28,
        cols: 28,
        images,
        labels,
    }
}

fn write_idx(dir: &Path, prefix: &str, c: &Corpus) {
    let (img, lab) = encode_idx(c);
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), img).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), lab).unwrap();
}

struct Fixture {
    _root: TempDir,
    mnist: PathBuf,
    data: PathBuf,
}

impl Fixture {
    /// 60 training and 12 test images, generated into stack files.
    fn new() -> Self {
        let root = tempfile::tempdir().unwrap();
        let mnist = root.path().join("mnist");
        std::fs::create_dir_all(&mnist).unwrap();
        write_idx(&mnist, "train", &corpus(60, 0));
        write_idx(&mnist, "t10k", &corpus(12, 1));
        let data = root.path().join("data");
        let f = Self {
            mnist,
            data,
            _root: root,
        };
        commands::generate_dataset(&f.config(&[]), &f.data, None).unwrap();
        f
    }

    /// Small agent and short training on the fixture's stacks.
    fn config(&self, extra: &[&str]) -> RunConfig {
        let mut o: Vec<String> = [
            "agent.encoder_hidden=16",
            "agent.embed_dim=8",
            "agent.hidden_dim=8",
            "agent.decision_hidden=4",
            "agent.t_max=3",
            "train.epochs=2",
            "train.batch_size=16",
            "data.validation_fraction=0.2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        o.push(format!("data.mnist_dir={:?}", self.mnist.display().to_string()));
        o.push(format!("data.stacks={:?}", self.data.display().to_string()));
        o.extend(extra.iter().map(|s| s.to_string()));
        RunConfig::load(None, &o).unwrap()
    }
}

#[test]
fn generation_writes_all_samples_and_scales_with_limit() {
    let f = Fixture::new();
    let h = read_stack_header(f.data.join(commands::TRAIN_STACKS)).unwrap();
    assert_eq!((h.n_samples, h.n_slices, h.height, h.width, h.n_classes), (60, 25, 28, 28, 3));
    assert_eq!(read_stack_header(f.data.join(commands::TEST_STACKS)).unwrap().n_samples, 12);

    let out = tempfile::tempdir().unwrap();
    let g = commands::generate_dataset(&f.config(&[]), out.path(), Some(30)).unwrap();
    assert_eq!((g.n_train, g.n_test), (30, 6));
    assert_eq!(commands::scaled_test_count(100, 60000, 10000), 17);
    assert_eq!(commands::scaled_test_count(1, 60000, 10000), 1);
    assert_eq!(commands::scaled_test_count(70000, 60000, 10000), 10000);
}

#[test]
fn regeneration_is_byte_identical_and_manifest_hashes_match() {
    let f = Fixture::new();
    let again = tempfile::tempdir().unwrap();
    commands::generate_dataset(&f.config(&[]), again.path(), None).unwrap();
    let m = Manifest::read(&f.data.join("generate-dataset.manifest.toml")).unwrap();
    assert_eq!(m.command, "generate-dataset");
    assert_eq!(m.inputs.len(), 4);
    for e in &m.outputs {
        let name = e.path.file_name().unwrap();
        assert_eq!(e.sha256, file_hash(&e.path).unwrap());
        assert_eq!(e.sha256, file_hash(&again.path().join(name)).unwrap());
    }
    // The recorded config resolves back to the one used.
    assert_eq!(m.run_config().unwrap(), f.config(&[]));
}

#[test]
fn missing_corpus_reports_the_path() {
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(None, &["data.mnist_dir=\"/nonexistent/mnist\"".into()]).unwrap();
    let err = commands::generate_dataset(&cfg, out.path(), None).unwrap_err();
    assert!(format!("{err:#}").contains("/nonexistent/mnist"), "{err:#}");
}

#[test]
fn training_writes_metrics_and_best_checkpoint() {
    let f = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let cfg = f.config(&["train.epochs=3"]);
    let o = commands::train(&cfg, out.path(), 4, 0.1, false, None).unwrap();
    let rows = read_metrics(&o.metrics).unwrap();
    let header = std::fs::read_to_string(&o.metrics).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "mode,seed,r_exit,epoch,split,samples,accuracy,mean_length,loss_cls,loss_dec,skipped"
    );
    // Train and validation rows per epoch, then the test row.
    assert_eq!(rows.len(), 7);
    assert_eq!(rows.iter().filter(|r| r.split == "train").count(), 3);
    assert!(rows.iter().filter(|r| r.split == "train").all(|r| r.loss_cls.is_some() && r.samples == 48));
    let val: Vec<_> = rows.iter().filter(|r| r.split == "val").collect();
    let best = val.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
    let first_best = val.iter().find(|r| r.accuracy == best).unwrap().epoch;
    assert_eq!(o.best_epoch, first_best);
    let test = rows.last().unwrap();
    assert_eq!((test.split.as_str(), test.epoch, test.samples), ("test", first_best, 12));
    assert_eq!((test.r_exit, test.seed), (Some(0.1), 4));
    assert!(out.path().join("train.manifest.toml").exists());
}

#[test]
fn baseline_metrics_have_length_one() {
    let f = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let o = commands::train(&f.config(&[]), out.path(), 0, 1.0, true, None).unwrap();
    let rows = read_metrics(&o.metrics).unwrap();
    assert!(rows.iter().all(|r| r.mean_length == 1.0 && r.mode == "baseline" && r.r_exit.is_none()));
    assert_eq!(load_checkpoint(&o.checkpoint).unwrap().config.t_max, 1);
}

#[test]
fn evaluation_reproduces_recorded_test_metrics() {
    let f = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let cfg = f.config(&[]);
    let o = commands::train(&cfg, out.path(), 2, 0.5, false, None).unwrap();
    let recorded = read_metrics(&o.metrics).unwrap().pop().unwrap();
    let r = commands::evaluate_checkpoint(&cfg, out.path(), &o.checkpoint, Split::Test, None).unwrap();
    assert_eq!((r.accuracy, r.mean_length, r.samples), (recorded.accuracy, recorded.mean_length, recorded.samples));
    // The evaluate command does not know the training reward.
    let mut expected = o.test.clone();
    expected.reward = None;
    expected.mapping = None;
    assert_eq!(r, expected);
}

#[test]
fn divergence_aborts_and_keeps_the_last_good_checkpoint() {
    let f = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let cfg = f.config(&["train.learning_rate=1e30", "train.clip_norm=1e30"]);
    let err = commands::train(&cfg, out.path(), 0, 1.0, false, None).unwrap_err();
    assert!(format!("{err:#}").contains("diverged"), "{err:#}");
    assert!(load_checkpoint(out.path().join(commands::CHECKPOINT)).unwrap().is_finite());
}

#[test]
fn sweep_rows_cover_the_grid_and_replot_needs_no_training() {
    let f = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let cfg = f.config(&[
        "train.epochs=1",
        "sweep.r_exit=[1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01]",
        "sweep.seeds=[0, 1, 2]",
    ]);
    let s = commands::sweep(&cfg, out.path(), None).unwrap();
    let rows = read_sweep(&s.csv).unwrap();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r.ok()));
    assert_eq!(rows.first().unwrap().r_exit, Some(1.0));
    assert_eq!(rows.last().unwrap().r_exit, Some(0.01));
    assert_eq!(read_sweep(&s.baseline_csv).unwrap().len(), 3);
    let svg = std::fs::read_to_string(&s.plot).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<circle").count() >= 21);

    std::fs::remove_file(&s.plot).unwrap();
    let before = std::fs::read(&s.csv).unwrap();
    let plot = commands::replot(out.path()).unwrap();
    assert!(plot.exists());
    assert_eq!(std::fs::read(&s.csv).unwrap(), before);
}

#[test]
fn failed_jobs_are_recorded_and_the_sweep_continues() {
    let f = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let cfg = f.config(&[
        "train.learning_rate=1e30",
        "train.clip_norm=1e30",
        "sweep.r_exit=[1.0, 0.1]",
        "sweep.seeds=[0]",
        "sweep.baseline=false",
    ]);
    let s = commands::sweep(&cfg, out.path(), None).unwrap();
    let rows = read_sweep(&s.csv).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.status == "failed" && r.error.contains("diverged") && r.accuracy.is_none()));
    assert!(s.plot.exists());
}

#[test]
fn parallel_sweep_matches_sequential() {
    let f = Fixture::new();
    let grid = ["train.epochs=1", "sweep.r_exit=[1.0, 0.1]", "sweep.seeds=[0, 1]", "sweep.baseline=false"];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    commands::sweep(&f.config(&grid), a.path(), None).unwrap();
    let mut par = grid.to_vec();
    par.push("sweep.parallel=true");
    commands::sweep(&f.config(&par), b.path(), None).unwrap();
    assert_eq!(
        std::fs::read(a.path().join(commands::SWEEP_CSV)).unwrap(),
        std::fs::read(b.path().join(commands::SWEEP_CSV)).unwrap()
    );
}

#[test]
fn render_draws_each_step_on_the_led_grid() {
    let f = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let cfg = f.config(&["train.epochs=1"]);
    let o = commands::train(&cfg, out.path(), 0, 1.0, true, None).unwrap();
    let r = commands::render_trajectory(&cfg, out.path(), &o.checkpoint, Split::Test, 3, None).unwrap();
    // Baseline: one observation lit by φ₀.
    assert_eq!(r.meta.length, 1);
    assert_eq!((r.meta.led_rows, r.meta.led_cols), (5, 5));
    assert_eq!(r.meta.steps[0].pattern, load_checkpoint(&o.checkpoint).unwrap().initial_pattern());
    let svg = std::fs::read_to_string(&r.image).unwrap();
    // 28×28 observation pixels plus 25 filled and 25 outlined LED cells.
    assert_eq!(svg.matches("<rect").count(), 1 + 784 + 50);
    let meta = std::fs::read_to_string(&r.metadata).unwrap();
    assert!(meta.contains("observation_min") && meta.contains("pattern_scale = [0.0, 1.0]"));

    let err = commands::render_trajectory(&cfg, out.path(), &o.checkpoint, Split::Test, 12, None).unwrap_err();
    assert!(format!("{err}").contains("out of range"), "{err}");
}

#[test]
fn validation_split_is_shared_across_seeds() {
    let f = Fixture::new();
    let cfg = f.config(&[]);
    let a = commands::load_splits(&cfg, &f.data, None).unwrap();
    let b = commands::load_splits(&cfg, &f.data, Some(60)).unwrap();
    assert_eq!(a.validation.as_ref().unwrap().data(), b.validation.as_ref().unwrap().data());
    assert_eq!((a.train.len(), a.validation.unwrap().len()), (48, 12));
    let full = load_stack_file(f.data.join(commands::TRAIN_STACKS), None).unwrap();
    assert_eq!(full.len(), 60);
}

fn illumrl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_illumrl")).args(args).output().unwrap()
}

#[test]
fn cli_exits_nonzero_on_errors() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let bad_set = illumrl(&["--out", o, "--set", "train.nope=1", "train"]);
    assert!(!bad_set.status.success());
    assert!(String::from_utf8_lossy(&bad_set.stderr).contains("error"));
    let missing = illumrl(&["--out", o, "train"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("train.vistack"));
}

#[test]
fn cli_honours_the_output_environment_variable() {
    let f = Fixture::new();
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_illumrl"))
        .env(illumrl::config::OUT_ENV, out.path())
        .args(["--limit", "12", "--set"])
        .arg(format!("data.mnist_dir={:?}", f.mnist.display().to_string()))
        .arg("generate-dataset")
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(read_stack_header(out.path().join(commands::TRAIN_STACKS)).unwrap().n_samples, 12);
    assert_eq!(read_stack_header(out.path().join(commands::TEST_STACKS)).unwrap().n_samples, 2);
}
