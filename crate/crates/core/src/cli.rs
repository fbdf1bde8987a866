//! Command-line front end: `gen-data`, `train`, `sample`, `eval`,
//! `gradcheck` and `compare`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{
    generate_bouncing_balls, load_mocap_csv, make_subsequences, read_video, synthetic_digits, synthetic_mocap,
    write_idx_images, write_idx_labels, write_mocap_csv, write_video, BouncingBallsConfig, SequenceDataset,
    ValueRange, MOCAP_FRAMES,
};
use crate::error::{Error, Result};
use crate::harness::{
    derive_seed, emit_image_grid, evaluate_bce, evaluate_mse, gaussian_blobs, gradcheck_target, load_checkpoint,
    preset, resolve_config, resume, train, write_config_echo, CopyLast, DatasetKind, ModelKind, TrainConfig, Trainer,
    MNIST_FILES,
};
use crate::tensor::{Matrix, RandomSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "gsn-seq", version, about = "Generative stochastic networks for sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Metric {
    Mse,
    Bce,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset to disk.
    GenData {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Videos (balls), images per class (mnist), frames (mocap) or images (blobs).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model from a JSON config or preset name.
    Train {
        #[arg(long)]
        config: String,
        /// Dotted `key=value` assignment applied after the preset merge.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint up to the config's epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate frames from a trained model.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model on held-out data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Video container or mocap CSV; defaults to the run's test split.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Metric::Mse)]
        metric: Metric,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        horizons: Vec<usize>,
    },
    /// Finite-difference check of a model family's gradients.
    Gradcheck {
        #[arg(long)]
        model: String,
        #[arg(long, value_delimiter = ',', default_value = "6,5,4")]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train several models on one dataset and tabulate their test MSE.
    Compare {
        #[arg(long)]
        dataset: String,
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit status for an error: 2 for configuration problems, 3 for a
/// diverged run, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { dataset, out, seed, count } => gen_data(&dataset, &out, seed, count),
        Command::Train {
            config,
            overrides,
            out,
            resume,
        } => cmd_train(&config, &overrides, &out, resume.as_deref()),
        Command::Sample { checkpoint, steps, out } => cmd_sample(&checkpoint, steps, &out),
        Command::Eval {
            checkpoint,
            dataset,
            metric,
            horizons,
        } => cmd_eval(&checkpoint, dataset.as_deref(), metric, &horizons),
        Command::Gradcheck { model, widths, seed } => cmd_gradcheck(&model, &widths, seed),
        Command::Compare {
            dataset,
            models,
            epochs,
            out,
        } => cmd_compare(&dataset, &models, epochs, &out),
    }
}

#[derive(Serialize)]
struct GenDataEcho<'a> {
    command: &'static str,
    dataset: &'a str,
    seed: u64,
    count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    balls: Option<BouncingBallsConfig>,
}

fn gen_data(dataset: &str, out: &Path, seed: u64, count: Option<usize>) -> Result<()> {
    let kind = DatasetKind::parse(dataset)?;
    fs::create_dir_all(out)?;
    let mut balls = None;
    let (count, files) = match kind {
        DatasetKind::Balls => {
            let cfg = BouncingBallsConfig {
                seed,
                ..Default::default()
            };
            let n = count.unwrap_or(100);
            write_video(&out.join("balls.gsnv"), &generate_bouncing_balls(&cfg, n)?)?;
            balls = Some(cfg);
            (n, vec!["balls.gsnv".to_string()])
        }
        DatasetKind::Mnist => {
            let n = count.unwrap_or(100);
            let train = synthetic_digits(n, 28, derive_seed(seed, 10))?;
            let test = synthetic_digits((n / 4).max(1), 28, derive_seed(seed, 11))?;
            write_idx_images(&out.join(MNIST_FILES[0]), &train)?;
            write_idx_labels(&out.join(MNIST_FILES[1]), &train.labels)?;
            write_idx_images(&out.join(MNIST_FILES[2]), &test)?;
            write_idx_labels(&out.join(MNIST_FILES[3]), &test.labels)?;
            (n, MNIST_FILES.iter().map(|s| s.to_string()).collect())
        }
        DatasetKind::Mocap => {
            let n = count.unwrap_or(MOCAP_FRAMES);
            write_mocap_csv(&out.join("mocap.csv"), &synthetic_mocap(n, derive_seed(seed, 2))?)?;
            (n, vec!["mocap.csv".to_string()])
        }
        DatasetKind::Blobs => {
            let n = count.unwrap_or(200);
            let m = gaussian_blobs(n, 8, derive_seed(seed, 3))?;
            let ds = SequenceDataset::new(vec![m], ValueRange::UnitInterval)?.with_frame_shape(8, 8)?;
            write_video(&out.join("blobs.gsnv"), &ds)?;
            (n, vec!["blobs.gsnv".to_string()])
        }
    };
    let echo = GenDataEcho {
        command: "gen-data",
        dataset,
        seed,
        count,
        balls,
    };
    fs::write(out.join("gen-data.json"), serde_json::to_string_pretty(&echo)? + "\n")?;
    for f in files {
        println!("{}", out.join(f).display());
    }
    Ok(())
}

fn as_config_error(e: Error) -> Error {
    match e {
        Error::Config(_) | Error::Diverged { .. } => e,
        other => Error::Config(other.to_string()),
    }
}

fn cmd_train(config: &str, overrides: &[String], out: &Path, resume_from: Option<&Path>) -> Result<()> {
    let cfg = resolve_config(Path::new(config), overrides)?;
    let t = match resume_from {
        None => {
            // Data and model construction problems are configuration errors.
            Trainer::new(&cfg).map_err(as_config_error)?;
            train(&cfg, Some(out))?
        }
        Some(ck_path) => {
            let ck = load_checkpoint(ck_path)?;
            let mut expected = ck.config.clone();
            expected.epochs = cfg.epochs;
            expected.checkpoint_every = cfg.checkpoint_every;
            if expected != cfg {
                return Err(Error::Config(format!(
                    "config differs from the checkpoint's beyond epochs and checkpoint_every; see {}",
                    ck_path.display()
                )));
            }
            resume(ck_path, Some(cfg.epochs), Some(out))?
        }
    };
    for r in t.metrics.rows.iter().filter(|r| r.epoch == t.epoch) {
        println!("epoch {} {} {} {}", r.epoch, r.split, r.metric, r.value);
    }
    Ok(())
}

fn cmd_sample(checkpoint: &Path, steps: usize, out: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let t = Trainer::from_checkpoint(&ck)?;
    fs::create_dir_all(out)?;
    write_config_echo(out, &t.config)?;
    let first = &t.data.test.sequences[0];
    let seed_len = if t.config.model.is_sequential() {
        t.config.window.max(1).min(first.rows())
    } else {
        1
    };
    let seed: Vec<Matrix> = (0..seed_len).map(|r| Matrix::row_vector(first.row(r).to_vec())).collect();
    let mut rng = RandomSource::new(t.config.seed).fork(3);
    let frames = t.model.sample(&seed, steps, &mut rng)?;
    let parts: Vec<&Matrix> = frames.iter().collect();
    let stacked = Matrix::vstack(&parts)?;
    let mut ds = SequenceDataset::new(vec![stacked.clone()], t.data.test.range)?;
    if let Some((h, w)) = t.data.frame_shape() {
        ds = ds.with_frame_shape(h, w)?;
    }
    write_video(&out.join("samples.gsnv"), &ds)?;
    println!("{}", out.join("samples.gsnv").display());
    if t.data.test.range == ValueRange::UnitInterval && !frames.is_empty() {
        emit_image_grid(&stacked, 10, t.data.frame_shape(), &out.join("samples.pgm"))?;
        println!("{}", out.join("samples.pgm").display());
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, dataset: Option<&Path>, metric: Metric, horizons: &[usize]) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let t = Trainer::from_checkpoint(&ck)?;
    let len = t.config.subsequence_length.max(2);
    let seqs = match dataset {
        None => t.data.test_sequences()?,
        Some(p) => {
            let mut ds = if p.extension().is_some_and(|e| e == "csv") {
                let raw = load_mocap_csv(p)?;
                let mut ds = raw.clone();
                ds.standardization = t.data.original_units.clone().or(raw.standardization);
                ds.standardize()?
            } else {
                read_video(p, t.data.test.range)?
            };
            ds.frame_shape = None;
            let w = make_subsequences(&ds, len, len)?;
            if w.is_empty() {
                ds.sequences
            } else {
                w
            }
        }
    };
    let batch = t.config.batch_size;
    let mut pred = t.model.predictor();
    let mut text = String::from("metric,horizon,value\n");
    match metric {
        Metric::Mse => {
            if horizons.iter().any(|&h| h != 1) {
                return Err(Error::InvalidArgument("mse is scored at horizon 1 only".into()));
            }
            let units = t.data.original_units.as_ref();
            let m = evaluate_mse(pred.as_mut(), &seqs, units, batch)?;
            let base = evaluate_mse(&mut CopyLast, &seqs, units, batch)?;
            writeln!(text, "mse,1,{m}").expect("write to string");
            writeln!(text, "copy_last_mse,1,{base}").expect("write to string");
        }
        Metric::Bce => {
            for (h, v) in horizons.iter().zip(evaluate_bce(pred.as_mut(), &seqs, horizons, batch)?) {
                writeln!(text, "bce,{h},{v}").expect("write to string");
            }
        }
    }
    print!("{text}");
    Ok(())
}

fn cmd_gradcheck(model: &str, widths: &[usize], seed: u64) -> Result<()> {
    let entries = gradcheck_target(model, widths, seed)?;
    let mut failed = false;
    for e in &entries {
        println!(
            "{model} {}: max relative error {:.3e} over {} elements [{}]",
            e.term,
            e.report.max_rel_error,
            e.report.checked,
            if e.passed() { "pass" } else { "FAIL" }
        );
        failed |= !e.passed();
    }
    if failed {
        return Err(Error::InvalidArgument(format!("{model} gradients disagree with finite differences")));
    }
    Ok(())
}

/// Preset for one model on one dataset. Static models borrow the dataset's
/// base settings.
pub fn compare_config(dataset: &str, model: ModelKind) -> Result<TrainConfig> {
    let name = match (dataset, model) {
        ("mnist", ModelKind::Tgsn) => "tgsn-mnist".to_string(),
        ("mnist", ModelKind::UntiedGsn) => "untied-mnist".to_string(),
        ("mnist", ModelKind::RnnGsn) => "rnngsn-mnist".to_string(),
        _ => format!("{dataset}/{}", model.name()),
    };
    if let Some(c) = preset(&name) {
        return Ok(c);
    }
    let kind = DatasetKind::parse(dataset)?;
    if model.is_sequential() {
        return Err(Error::Config(format!("no preset for {} on {dataset}", model.name())));
    }
    let mut c = match kind {
        DatasetKind::Mnist => preset("tgsn-mnist"),
        DatasetKind::Balls => preset("balls/tgsn"),
        DatasetKind::Mocap => preset("mocap/tgsn"),
        DatasetKind::Blobs => None,
    }
    .unwrap_or_default();
    c.preset = None;
    c.model = model;
    c.tied = true;
    if model == ModelKind::Dae {
        c.layers.truncate(1);
    }
    Ok(c)
}

fn cmd_compare(dataset: &str, models: &[String], epochs: Option<usize>, out: &Path) -> Result<()> {
    if models.is_empty() {
        return Err(Error::Config("--models lists no models".into()));
    }
    let kinds = models.iter().map(|m| ModelKind::parse(m)).collect::<Result<Vec<_>>>()?;
    let mut configs = Vec::new();
    for &k in &kinds {
        let mut c = compare_config(dataset, k)?;
        if let Some(e) = epochs {
            c.epochs = e;
        }
        c.validate()?;
        configs.push(c);
    }
    fs::create_dir_all(out)?;
    let mut csv = String::from("dataset,model,metric,value\n");
    for (k, c) in kinds.iter().zip(&configs) {
        let dir = out.join(k.name());
        let t = train(c, Some(&dir))?;
        let seqs = t.data.test_sequences()?;
        let mse = evaluate_mse(t.model.predictor().as_mut(), &seqs, t.data.original_units.as_ref(), c.batch_size)?;
        writeln!(csv, "{dataset},{},mse,{mse}", k.name()).expect("write to string");
        println!("{dataset} {} mse {mse}", k.name());
    }
    if let Some(c) = configs.first() {
        let t = Trainer::new(c)?;
        let base = evaluate_mse(&mut CopyLast, &t.data.test_sequences()?, t.data.original_units.as_ref(), c.batch_size)?;
        println!("{dataset} copy_last mse {base}");
    }
    fs::write(out.join("compare.csv"), csv)?;
    Ok(())
}
