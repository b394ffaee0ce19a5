//! Command-line surface: `synth`, `preprocess`, `train`, `eval`,
//! `count-params` and `gradcheck`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{info, warn};
use xtime_core::data::{generate_synthetic, SplitSpec, SynthConfig, WindowedDataset, MAX_REPETITION, MAX_STIMULUS};
use xtime_core::model::{Variant, XTimeNetwork, XTimeNetworkSpec};
use xtime_core::signal::{preprocess, NormKind, PrepConfig, WindowConfig};
use xtime_core::train::{evaluate, test_split_name, EpochMetrics, Evaluation, TrainConfig, Trainer};

use crate::checkpoint;
use crate::config;
use crate::csv_io;
use crate::dataset_file::{self, PreprocessedFile};
use crate::error::{AppError, AppResult, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
use crate::metrics;
use crate::verify::{run_gradcheck, GradcheckConfig};

#[derive(Debug, Parser)]
#[command(name = "xtime", version, about = "XceptionTime sEMG gesture classification", args_override_self = true)]
pub struct Cli {
    /// TOML file with per-subcommand flag defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic DB1-style recording as CSV.
    Synth(SynthArgs),
    /// Filter, normalize and window CSV recordings into a dataset file.
    Preprocess(PreprocessArgs),
    /// Train a network on one or more preprocessed datasets.
    Train(TrainArgs),
    /// Score a checkpoint on preprocessed datasets.
    Eval(EvalArgs),
    /// Print the exact trainable-parameter count with a per-layer table.
    CountParams(CountArgs),
    /// Compare backprop against central differences, layer by layer and end to end.
    Gradcheck(GradcheckArgs),
}

fn parse_norm(s: &str) -> Result<NormKind, String> {
    NormKind::parse(s).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant `{s}` (expected base or v2)"))
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub channels: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Ratio between the loudest and the quietest channel.
    #[arg(long, default_value_t = 30.0)]
    pub disparity: f64,
    #[arg(long = "snr-db", default_value_t = 10.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 1)]
    pub subject: u32,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    /// CSV recordings (comma-separated); statistics are pooled over all of them.
    #[arg(long = "in", value_delimiter = ',', required = true, action = ArgAction::Set)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "window-ms", default_value_t = 200)]
    pub window_ms: u32,
    #[arg(long = "step-ms", default_value_t = 10)]
    pub step_ms: u32,
    /// mu-law, minmax or none.
    #[arg(long, default_value = "mu-law", value_parser = parse_norm)]
    pub norm: NormKind,
    #[arg(long, default_value_t = 256.0)]
    pub mu: f64,
    /// Low-pass cutoff in Hz.
    #[arg(long, default_value_t = 1.0)]
    pub fc: f64,
    /// Forward-backward (zero-phase) filtering.
    #[arg(long = "two-pass", default_value_t = false, action = ArgAction::Set)]
    pub two_pass: bool,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 100.0)]
    pub fs: f64,
    #[arg(long = "test-reps", value_delimiter = ',', default_value = "2,5,7", action = ArgAction::Set)]
    pub test_reps: Vec<u16>,
    /// Number of classes (default: largest stimulus in the data).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Require exactly this many emg columns.
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Preprocessed datasets (comma-separated). Different window lengths train jointly.
    #[arg(long, value_delimiter = ',', required = true, action = ArgAction::Set)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log path (default: checkpoint path with a .tsv extension).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value = "base", value_parser = parse_variant)]
    pub variant: Variant,
    /// Peak learning rate of the first cycle.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long = "batch-size", default_value_t = 32)]
    pub batch_size: usize,
    /// Epochs per learning-rate cycle.
    #[arg(long, default_value_t = 20)]
    pub cycle: usize,
    /// Skip the per-epoch test evaluation.
    #[arg(long = "no-eval", default_value_t = false, action = ArgAction::Set)]
    pub no_eval: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Test,
    Train,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Preprocessed datasets (comma-separated), each scored separately.
    #[arg(long, value_delimiter = ',', required = true, action = ArgAction::Set)]
    pub data: Vec<PathBuf>,
    /// Per-class accuracy and confusion matrix.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: EvalSplit,
    #[arg(long = "batch-size", default_value_t = 256)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CountArgs {
    #[arg(long, default_value = "base", value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, default_value_t = 52)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub channels: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampled coordinates per parameter tensor.
    #[arg(long, default_value_t = 50)]
    pub coords: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long = "inject-fault", hide = true, default_value_t = false, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub inject_fault: bool,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Normal output goes to `out`; errors go to stderr.
pub fn run(argv: Vec<OsString>, out: &mut dyn Write) -> i32 {
    let argv = match config::expand_args(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> AppResult<i32> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a, out).map(|_| EXIT_OK),
        Command::Preprocess(a) => cmd_preprocess(&a, out).map(|_| EXIT_OK),
        Command::Train(a) => cmd_train(&a, out).map(|_| EXIT_OK),
        Command::Eval(a) => cmd_eval(&a, out).map(|_| EXIT_OK),
        Command::CountParams(a) => cmd_count_params(&a, out).map(|_| EXIT_OK),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out).map(|ok| if ok { EXIT_OK } else { EXIT_NUMERICAL }),
    }
}

fn say(out: &mut dyn Write, text: &str) -> AppResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| AppError::io(Path::new("<stdout>"), e))
}

fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> AppResult<()> {
    if a.classes < 2 || a.classes > MAX_STIMULUS as usize {
        return Err(usage(format!("--classes must be in 2..={MAX_STIMULUS}, got {}", a.classes)));
    }
    if a.channels == 0 {
        return Err(usage("--channels must be at least 1"));
    }
    if a.reps < 2 || a.reps > MAX_REPETITION as usize {
        return Err(usage(format!("--reps must be in 2..={MAX_REPETITION}, got {}", a.reps)));
    }
    if !(a.disparity >= 1.0 && a.disparity.is_finite()) {
        return Err(usage("--disparity must be a finite ratio of at least 1"));
    }
    if !a.snr_db.is_finite() {
        return Err(usage("--snr-db must be finite"));
    }
    let cfg = SynthConfig {
        num_classes: a.classes,
        channels: a.channels,
        reps: a.reps,
        seed: a.seed,
        amplitude_disparity: a.disparity,
        snr_db: a.snr_db,
        subject_id: a.subject,
        ..SynthConfig::default()
    };
    let record = generate_synthetic(&cfg)?;
    csv_io::save_record(&a.out, &record)?;
    say(
        out,
        &format!(
            "wrote {}: {} samples, {} channels, {} gesture segments\n",
            a.out.display(),
            record.num_samples(),
            record.channels(),
            a.classes * a.reps
        ),
    )
}

pub fn cmd_preprocess(a: &PreprocessArgs, out: &mut dyn Write) -> AppResult<()> {
    let split = SplitSpec::new(a.test_reps.iter().copied()).map_err(|e| usage(format!("--test-reps: {e}")))?;
    if !(a.mu > 0.0 && a.mu.is_finite()) {
        return Err(usage("--mu must be positive"));
    }
    if !(a.fs > 0.0 && a.fs.is_finite()) || !(a.fc > 0.0 && a.fc < a.fs / 2.0) {
        return Err(usage("need 0 < --fc < --fs / 2"));
    }
    if a.window_ms == 0 || a.step_ms == 0 {
        return Err(usage("--window-ms and --step-ms must be positive"));
    }
    if matches!(a.classes, Some(k) if k == 0 || k > MAX_STIMULUS as usize) {
        return Err(usage(format!("--classes must be in 1..={MAX_STIMULUS}")));
    }
    let mut records = Vec::new();
    for path in &a.inputs {
        records.extend(csv_io::load_records(path, a.channels)?);
    }
    let cfg = PrepConfig {
        cutoff_hz: a.fc,
        two_pass: a.two_pass,
        norm: a.norm,
        mu: a.mu,
        window: WindowConfig {
            window_ms: a.window_ms,
            step_ms: a.step_ms,
            sample_rate: a.fs,
            num_classes: a.classes,
        },
        split: split.clone(),
    };
    let (dataset, stats) = preprocess(&records, &cfg)?;
    let file = PreprocessedFile {
        dataset,
        stats,
        split,
        sample_rate: a.fs,
        step_ms: a.step_ms,
        cutoff_hz: a.fc,
        two_pass: a.two_pass,
    };
    let (train, test) = file.train_test()?;
    dataset_file::save(&a.out, &file)?;
    say(
        out,
        &format!(
            "wrote {}: {} windows of {} samples ({} ms), {} channels, {} classes, {} train / {} test, norm {}\n",
            a.out.display(),
            file.dataset.len(),
            file.dataset.window_len,
            file.dataset.window_ms,
            file.dataset.channels,
            file.dataset.num_classes,
            train.len(),
            test.len(),
            a.norm.as_str()
        ),
    )
}

/// Training and held-out sets from several files. Files with equal window
/// lengths are merged; each distinct length keeps its own train and test set.
struct Loaded {
    train: Vec<WindowedDataset>,
    test: Vec<WindowedDataset>,
    channels: usize,
    num_classes: usize,
    stats: xtime_core::signal::NormStats,
}

fn load_training_data(paths: &[PathBuf]) -> AppResult<Loaded> {
    let mut by_len: BTreeMap<usize, (WindowedDataset, WindowedDataset)> = BTreeMap::new();
    let mut first: Option<(PathBuf, usize, usize, xtime_core::signal::NormStats)> = None;
    for path in paths {
        let f = dataset_file::load(path)?;
        let ds = &f.dataset;
        match &first {
            None => first = Some((path.clone(), ds.channels, ds.num_classes, f.stats.clone())),
            Some((p0, c, k, s)) => {
                if ds.channels != *c || ds.num_classes != *k {
                    return Err(AppError::Data(format!(
                        "{} has {} channels / {} classes but {} has {c} / {k}",
                        path.display(),
                        ds.channels,
                        ds.num_classes,
                        p0.display()
                    )));
                }
                if f.stats != *s {
                    warn!(
                        "{} was normalized with different statistics than {}",
                        path.display(),
                        p0.display()
                    );
                }
            }
        }
        let (train, test) = f.train_test()?;
        match by_len.get_mut(&ds.window_len) {
            Some((tr, te)) => {
                tr.extend(&train)?;
                te.extend(&test)?;
            }
            None => {
                by_len.insert(ds.window_len, (train, test));
            }
        }
    }
    let (_, channels, num_classes, stats) = first.ok_or_else(|| usage("--data needs at least one path"))?;
    let (train, test): (Vec<_>, Vec<_>) = by_len.into_values().unzip();
    if train.iter().all(WindowedDataset::is_empty) {
        return Err(AppError::Data("no training windows (every window is in a test repetition)".into()));
    }
    Ok(Loaded {
        train,
        test,
        channels,
        num_classes,
        stats,
    })
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> AppResult<()> {
    if a.epochs == 0 {
        return Err(usage("--epochs must be at least 1"));
    }
    let cfg = TrainConfig {
        lr0: a.lr,
        cycle_epochs: a.cycle,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let data = load_training_data(&a.data)?;
    if data.num_classes < 2 {
        return Err(AppError::Data(format!("need at least 2 classes, data has {}", data.num_classes)));
    }
    let spec = XTimeNetworkSpec {
        input_channels: data.channels,
        ..XTimeNetworkSpec::with_classes(data.num_classes).with_variant(a.variant)
    };
    let mut net = XTimeNetwork::new(spec, a.seed)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| a.out.with_extension("tsv"));
    let eval_sets: Vec<&WindowedDataset> = if a.no_eval {
        Vec::new()
    } else {
        data.test.iter().filter(|d| !d.is_empty()).collect()
    };
    info!(
        "training {} ({} parameters) on {} windows across {} window length(s)",
        a.variant.as_str(),
        net.count_parameters(),
        data.train.iter().map(WindowedDataset::len).sum::<usize>(),
        data.train.len()
    );

    let mut trainer = Trainer::new(&net, cfg.clone())?;
    let mut log: Vec<EpochMetrics> = Vec::new();
    for _ in 0..cfg.epochs {
        let m = match trainer.run_epoch(&mut net, &data.train) {
            Ok(m) => m,
            Err(e) => {
                metrics::save(&metrics_path, &log)?;
                return Err(e.into());
            }
        };
        let mut line = format!(
            "epoch {:>3}/{}  lr {:.3e}  train loss {:.4} acc {:.4}",
            m.epoch + 1,
            cfg.epochs,
            m.lr,
            m.loss,
            m.accuracy
        );
        let (epoch, lr) = (m.epoch, m.lr);
        log.push(m);
        for ds in &eval_sets {
            let e = evaluate(&net, ds, cfg.eval_batch_size)?;
            let split = test_split_name(ds, eval_sets.len());
            write!(line, "  {split} loss {:.4} acc {:.4}", e.loss, e.accuracy).unwrap();
            log.push(EpochMetrics {
                epoch,
                split,
                loss: e.loss,
                accuracy: e.accuracy,
                lr,
            });
        }
        line.push('\n');
        say(out, &line)?;
        metrics::save(&metrics_path, &log)?;
    }
    checkpoint::save(&a.out, &net, &data.stats)?;
    say(
        out,
        &format!("wrote {} and {}\n", a.out.display(), metrics_path.display()),
    )
}

/// Text report: overall accuracy, per-class accuracy and confusion matrix,
/// all as tab-separated tables.
pub fn render_report(name: &str, e: &Evaluation) -> String {
    let mut s = String::new();
    writeln!(s, "dataset\t{name}").unwrap();
    writeln!(s, "accuracy\t{}\t{}/{}", e.accuracy, e.trace(), e.total()).unwrap();
    writeln!(s, "loss\t{}", e.loss).unwrap();
    writeln!(s, "\nclass\tsupport\tcorrect\taccuracy").unwrap();
    for (k, row) in e.confusion.iter().enumerate() {
        let support: usize = row.iter().sum();
        let acc = e.per_class[k].map_or_else(|| "-".to_string(), |a| a.to_string());
        writeln!(s, "{k}\t{support}\t{}\t{acc}", row[k]).unwrap();
    }
    writeln!(s, "\nconfusion (rows: true class, columns: predicted class)").unwrap();
    let k = e.confusion.len();
    let header: Vec<String> = (0..k).map(|c| c.to_string()).collect();
    writeln!(s, "true\\pred\t{}", header.join("\t")).unwrap();
    for (t, row) in e.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        writeln!(s, "{t}\t{}", cells.join("\t")).unwrap();
    }
    s
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> AppResult<()> {
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    let ckpt = checkpoint::load(&a.ckpt)?;
    let spec = ckpt.network.spec().clone();
    let mut report = String::new();
    for path in &a.data {
        let f = dataset_file::load(path)?;
        if f.dataset.channels != spec.input_channels || f.dataset.num_classes > spec.num_classes {
            return Err(AppError::Data(format!(
                "{} has {} channels / {} classes; checkpoint expects {} channels / {} classes",
                path.display(),
                f.dataset.channels,
                f.dataset.num_classes,
                spec.input_channels,
                spec.num_classes
            )));
        }
        if f.stats != ckpt.stats {
            warn!("{} was normalized with different statistics than the training data", path.display());
        }
        let ds = match a.split {
            EvalSplit::All => f.dataset.clone(),
            EvalSplit::Train => f.train_test()?.0,
            EvalSplit::Test => f.train_test()?.1,
        };
        if ds.is_empty() {
            return Err(AppError::Data(format!("{}: no windows in the selected split", path.display())));
        }
        let e = evaluate(&ckpt.network, &ds, a.batch_size)?;
        say(
            out,
            &format!(
                "{} ({} ms): accuracy {:.4} ({}/{})\n",
                path.display(),
                ds.window_ms,
                e.accuracy,
                e.trace(),
                e.total()
            ),
        )?;
        if !report.is_empty() {
            report.push('\n');
        }
        report.push_str(&render_report(&path.display().to_string(), &e));
    }
    if let Some(p) = &a.report {
        std::fs::write(p, report).map_err(|e| AppError::io(p, e))?;
    }
    Ok(())
}

pub fn cmd_count_params(a: &CountArgs, out: &mut dyn Write) -> AppResult<()> {
    if a.classes < 2 || a.channels == 0 {
        return Err(usage("--classes must be at least 2 and --channels at least 1"));
    }
    let spec = XTimeNetworkSpec {
        input_channels: a.channels,
        ..XTimeNetworkSpec::with_classes(a.classes).with_variant(a.variant)
    };
    let net = XTimeNetwork::new(spec, 0)?;
    let mut s = String::new();
    writeln!(s, "{:<32} {:>10}", "layer", "params").unwrap();
    for (layer, n) in net.parameter_breakdown() {
        writeln!(s, "{layer:<32} {n:>10}").unwrap();
    }
    writeln!(s, "{:<32} {:>10}", "total", net.count_parameters()).unwrap();
    say(out, &s)
}

/// Returns whether every check passed.
pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> AppResult<bool> {
    if a.coords == 0 || !(a.eps > 0.0) || !(a.tol > 0.0) {
        return Err(usage("--coords, --eps and --tol must be positive"));
    }
    let cfg = GradcheckConfig {
        seed: a.seed,
        coords: a.coords,
        eps: a.eps,
        tol: a.tol,
        inject_fault: a.inject_fault,
        ..GradcheckConfig::default()
    };
    let lines = run_gradcheck(&cfg)?;
    let mut s = String::new();
    for l in &lines {
        writeln!(s, "{}", l.render()).unwrap();
    }
    let worst = lines.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    let ok = lines.iter().all(|l| l.passed);
    writeln!(
        s,
        "{}: max relative error {worst:.3e} (tolerance {:.0e})",
        if ok { "PASS" } else { "FAIL" },
        a.tol
    )
    .unwrap();
    say(out, &s)?;
    Ok(ok)
}
