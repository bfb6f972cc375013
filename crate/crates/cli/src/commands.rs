use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use vcformer::autodiff::grad_check;
use vcformer::data::{self, load_csv, normalize, pearson_map, split_normalize, write_csv, SynthSpec};
use vcformer::lagcorr::{bench_lagcorr, write_bench_csv};
use vcformer::nn::seeded_uniform;
use vcformer::model::{forward, forward_tape, loss_mse_tape, score_maps, ModelConfig, ModelParams};
use vcformer::tensor::Tensor;
use vcformer::train::{evaluate, fit_with};

use crate::checkpoint::Checkpoint;
use crate::config::{extract_overrides, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "vcformer", version, about = "Variable-correlation forecaster: train, evaluate, inspect")]
#[command(after_help = "train and config accept any config field as a dotted flag, e.g. --train.lr 5e-4 or --model.blocks=1.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a JSON report.
    Train(TrainArgs),
    /// Score a checkpoint on one split of its dataset.
    Eval(EvalArgs),
    /// Forecast the horizon following the last look-back window of a CSV.
    Forecast(ForecastArgs),
    /// Time the naive and FFT lagged-correlation paths.
    BenchLagcorr(BenchArgs),
    /// Finite-difference check of every parameter gradient on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Export a block's pre-softmax score map and the Pearson maps of one window.
    Corrmap(CorrmapArgs),
    /// Generate a lag-coupled synthetic dataset.
    Synth(SynthArgs),
    /// Print the resolved run configuration.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration JSON; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset CSV (same as --data.path).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Same as --model.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Same as --train.threads.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "vcformer.ckpt")]
    pub out: PathBuf,
    /// Report path; defaults to the checkpoint path with a .report.json suffix.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset CSV; defaults to the path recorded in the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Raw-scale CSV with at least as many rows as the look-back length.
    #[arg(long)]
    pub input: PathBuf,
    /// Map the forecast back to the raw scale with the stored train statistics.
    #[arg(long)]
    pub denormalize: bool,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated NxL pairs.
    #[arg(long, default_value = "1x64,4x256,8x1024,8x4096")]
    pub sizes: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Use the tiny configuration (T=8, N=3, D=8, S=4, M=6, H=4, L=1); the only supported mode.
    #[arg(long, default_value_t = true)]
    pub tiny_config: bool,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct CorrmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Raw-scale CSV holding the window.
    #[arg(long)]
    pub input: PathBuf,
    /// Block index.
    #[arg(long, default_value_t = 0)]
    pub layer: usize,
    /// First row of the window; the window spans look-back plus horizon rows.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// Files are written as PREFIX.scores.csv, PREFIX.pearson_input.csv, PREFIX.pearson_target.csv.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 4000)]
    pub len: usize,
    #[arg(long, default_value_t = 7)]
    pub lag: usize,
    #[arg(long, default_value_t = 0.9)]
    pub coupling: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    /// CSV path; metadata goes next to it with a .json extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Print the built-in defaults, ignoring --config and overrides.
    #[arg(long)]
    pub print_defaults: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Parses `args` (without the program name) and runs the command.
pub fn run(args: Vec<String>, out: &mut dyn Write) -> Result<(), CliError> {
    let (rest, overrides) = extract_overrides(args)?;
    let cli = match Cli::try_parse_from(std::iter::once("vcformer".to_string()).chain(rest)) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}").map_err(io_out)?;
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            return Err(CliError::Usage(msg.trim_start_matches("error: ").trim_end().to_string()));
        }
    };
    let takes_overrides = matches!(cli.command, Command::Train(_) | Command::Config(_));
    if !overrides.is_empty() && !takes_overrides {
        return Err(CliError::Usage(format!(
            "config overrides such as --{} only apply to train and config",
            overrides[0].0
        )));
    }
    match cli.command {
        Command::Train(a) => cmd_train(&a, &overrides, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Forecast(a) => cmd_forecast(&a, out),
        Command::BenchLagcorr(a) => cmd_bench(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Corrmap(a) => cmd_corrmap(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Config(a) => cmd_config(&a, &overrides, out),
    }
}

fn io_out(e: std::io::Error) -> CliError {
    CliError::Io(format!("writing output: {e}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn resolve_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut run = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    run.apply(overrides)?;
    Ok(run)
}

fn load_dataset(run: &RunConfig, path: Option<&Path>) -> Result<data::RawSeries, CliError> {
    let path = path
        .or(run.data.path.as_deref())
        .ok_or_else(|| CliError::Usage("no dataset given; pass --data or set data.path".into()))?;
    Ok(load_csv(path, run.data.has_timestamp)?)
}

pub fn cmd_train(a: &TrainArgs, overrides: &[(String, String)], out: &mut dyn Write) -> Result<(), CliError> {
    let mut run = resolve_config(a.config.as_deref(), overrides)?;
    if let Some(d) = &a.data {
        run.data.path = Some(d.clone());
    }
    if let Some(s) = a.seed {
        run.model.seed = s;
    }
    if let Some(t) = a.threads {
        run.train.threads = t;
    }
    run.validate()?;
    let raw = load_dataset(&run, None)?;
    if raw.dropped_rows > 0 {
        eprintln!("warning: dropped {} rows containing NaN", raw.dropped_rows);
    }
    if raw.n_vars() != run.model.n_vars {
        return Err(CliError::Usage(format!(
            "dataset has {} channels but model.n_vars is {}",
            raw.n_vars(),
            run.model.n_vars
        )));
    }
    let split = split_normalize(&raw, run.data.split)?;
    let quiet = a.quiet;
    let mut progress = |e: &vcformer::train::EpochRecord| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  lr {:.3e}  train {:.6}  val mse {:.6}  mae {:.6}  ({:.1}s)",
                e.epoch, e.lr, e.train_loss, e.val_mse, e.val_mae, e.seconds
            );
        }
    };
    let outcome = fit_with(&run.model, &run.train, &split, None, &mut progress)?;
    Checkpoint::new(&run, &outcome.params, &split.mean, &split.std)?.save(&a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    let mut w = create(&report_path)?;
    serde_json::to_writer_pretty(&mut w, &outcome.report).map_err(vcformer::Error::from)?;
    w.flush().map_err(|e| CliError::io(&report_path, e))?;
    let r = &outcome.report;
    writeln!(
        out,
        "best epoch {} val mse {:.6} mae {:.6}; checkpoint {}; report {}",
        r.best_epoch,
        r.best_val_mse,
        r.best_val_mae,
        a.out.display(),
        report_path.display()
    )
    .map_err(io_out)?;
    match &r.diverged {
        Some(msg) => Err(CliError::Runtime(vcformer::Error::Numeric(format!(
            "training diverged ({msg}); best finite epoch saved"
        )))),
        None => Ok(()),
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let run = ck.run_config()?;
    let params = ck.model_params()?;
    let raw = load_dataset(&run, a.data.as_deref())?;
    let split = split_normalize(&raw, run.data.split)?;
    let (name, part) = match a.split {
        SplitName::Train => ("train", &split.train),
        SplitName::Val => ("val", &split.val),
        SplitName::Test => ("test", &split.test),
    };
    let m = evaluate(&params, &run.model, part, a.threads)?;
    let windows = part.shape()[0].saturating_sub(run.model.seq_len + run.model.pred_len - 1);
    let line = json!({ "split": name, "windows": windows, "mse": m.mse, "mae": m.mae });
    writeln!(out, "{line}").map_err(io_out)
}

/// The last `rows` rows of `values`, or an error naming what was needed.
fn tail(values: &Tensor, rows: usize) -> Result<Tensor, CliError> {
    let have = values.shape()[0];
    if have < rows {
        return Err(CliError::Runtime(vcformer::Error::Data(format!(
            "input has {have} rows, need at least {rows}"
        ))));
    }
    Ok(values.slice_first(have - rows, have)?)
}

pub fn cmd_forecast(a: &ForecastArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let run = ck.run_config()?;
    let params = ck.model_params()?;
    let (mean, std) = ck.stats()?;
    let raw = load_csv(&a.input, run.data.has_timestamp)?;
    let window = normalize(&tail(&raw.values, run.model.seq_len)?, &mean, &std)?;
    let mut pred = forward(&window, &params)?;
    if a.denormalize {
        pred = data::denormalize(&pred, &mean, &std)?;
    }
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            write_csv(&mut w, &raw.columns, &pred)?;
            w.flush().map_err(|e| CliError::io(p, e))
        }
        None => Ok(write_csv(out, &raw.columns, &pred)?),
    }
}

pub fn parse_sizes(spec: &str) -> Result<Vec<(usize, usize)>, CliError> {
    spec.split(',')
        .map(|pair| {
            let bad = || CliError::Usage(format!("size {pair:?} is not of the form NxL"));
            let (n, l) = pair.trim().split_once(['x', 'X']).ok_or_else(bad)?;
            let n: usize = n.parse().map_err(|_| bad())?;
            let l: usize = l.parse().map_err(|_| bad())?;
            if n == 0 || l == 0 {
                return Err(bad());
            }
            Ok((n, l))
        })
        .collect()
}

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let sizes = parse_sizes(&a.sizes)?;
    let rows = bench_lagcorr(&sizes, a.seed)?;
    for r in &rows {
        eprintln!(
            "N={:<3} L={:<6} naive {:>12} ns  fft {:>10} ns  speedup {:>7.1}x",
            r.n,
            r.len,
            r.naive_ns,
            r.fft_ns,
            r.speedup()
        );
    }
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            write_bench_csv(&rows, &mut w).map_err(|e| CliError::io(p, e))?;
            w.flush().map_err(|e| CliError::io(p, e))
        }
        None => write_bench_csv(&rows, out).map_err(io_out),
    }
}

pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        seq_len: 8,
        pred_len: 4,
        n_vars: 3,
        d_model: 8,
        koopman_dim: 6,
        segment_len: 4,
        blocks: 1,
        seed,
        ..ModelConfig::default()
    }
}

/// Full-model finite-difference check on the tiny configuration.
pub fn model_gradcheck(seed: u64, step: f64, tol: f64) -> Result<vcformer::autodiff::GradCheckReport, CliError> {
    let config = tiny_config(seed);
    let mut params = ModelParams::init(&config)?;
    // uniform lag weights collapse the score map onto row sums of Q and K,
    // which leaves their gradients at the finite-difference noise floor
    for (i, b) in params.blocks.iter_mut().enumerate() {
        b.vca.lambda = seeded_uniform(seed.wrapping_add(i as u64 + 1), &[config.d_model], 1.0)?;
    }
    let x = seeded_uniform(seed ^ 0x5eed, &[config.seq_len, config.n_vars], 1.0)?;
    let y = seeded_uniform(seed ^ 0xfeed, &[config.pred_len, config.n_vars], 1.0)?;
    let report = grad_check(
        |tape, vars| {
            let mut it = vars.iter().copied();
            let bound = params.map_named("", &mut |_, _| Ok(it.next().expect("one var per tensor")))?;
            loss_mse_tape(forward_tape(tape.constant(x.clone()), &bound)?.forecast, &y)
        },
        &params.to_named(),
        step,
        tol,
    )?;
    Ok(report)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !a.tiny_config {
        return Err(CliError::Usage("only the tiny configuration is supported".into()));
    }
    let report = model_gradcheck(a.seed, a.step, a.tol)?;
    for g in &report.groups {
        writeln!(
            out,
            "{:<4} {:<28} rel {:.3e}  abs {:.3e}",
            if g.passed { "ok" } else { "FAIL" },
            g.name,
            g.rel_err,
            g.max_abs_err
        )
        .map_err(io_out)?;
    }
    let failed: Vec<&str> = report.groups.iter().filter(|g| !g.passed).map(|g| g.name.as_str()).collect();
    writeln!(out, "worst relative error {:.3e} (tolerance {:.1e})", report.worst(), report.tol).map_err(io_out)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}

pub fn cmd_corrmap(a: &CorrmapArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let run = ck.run_config()?;
    let params = ck.model_params()?;
    let (mean, std) = ck.stats()?;
    let (t, h) = (run.model.seq_len, run.model.pred_len);
    if a.layer >= params.blocks.len() {
        return Err(CliError::Usage(format!(
            "layer {} requested but the model has {} blocks",
            a.layer,
            params.blocks.len()
        )));
    }
    let raw = load_csv(&a.input, run.data.has_timestamp)?;
    if raw.len() < a.start + t + h {
        return Err(CliError::Runtime(vcformer::Error::Data(format!(
            "window at row {} needs {} rows, input has {}",
            a.start,
            a.start + t + h,
            raw.len()
        ))));
    }
    let values = normalize(&raw.values, &mean, &std)?;
    let input = values.slice_first(a.start, a.start + t)?;
    let target = values.slice_first(a.start + t, a.start + t + h)?;
    let scores = score_maps(&input, &params)?.swap_remove(a.layer);

    let write = |suffix: &str, m: &Tensor| -> Result<PathBuf, CliError> {
        let mut p = a.out_prefix.clone().into_os_string();
        p.push(suffix);
        let p = PathBuf::from(p);
        let mut w = create(&p)?;
        write_csv(&mut w, &raw.columns, m)?;
        w.flush().map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    };
    let mut written = vec![write(".scores.csv", &scores)?];
    for (suffix, part) in [(".pearson_input.csv", &input), (".pearson_target.csv", &target)] {
        let pm = pearson_map(part)?;
        for &c in &pm.constant_columns {
            eprintln!(
                "warning: channel {} is constant in the {} window; its correlations are reported as 0",
                raw.columns[c],
                if suffix.contains("input") { "input" } else { "target" }
            );
        }
        written.push(write(suffix, &pm.map)?);
    }
    for p in written {
        writeln!(out, "{}", p.display()).map_err(io_out)?;
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = SynthSpec {
        n_vars: a.n,
        len: a.len,
        lag: a.lag,
        coupling: a.coupling,
        noise: a.noise,
        seed: a.seed,
    };
    let (raw, meta) = data::synth_lagged(&spec)?;
    let mut w = create(&a.out)?;
    write_csv(&mut w, &raw.columns, &raw.values)?;
    w.flush().map_err(|e| CliError::io(&a.out, e))?;
    let meta_path = a.out.with_extension("json");
    let mut m = create(&meta_path)?;
    serde_json::to_writer_pretty(&mut m, &meta).map_err(vcformer::Error::from)?;
    m.flush().map_err(|e| CliError::io(&meta_path, e))?;
    writeln!(out, "{} ({} x {}); metadata {}", a.out.display(), a.len, a.n, meta_path.display()).map_err(io_out)
}

pub fn cmd_config(a: &ConfigArgs, overrides: &[(String, String)], out: &mut dyn Write) -> Result<(), CliError> {
    let run = if a.print_defaults {
        RunConfig::default()
    } else {
        let run = resolve_config(a.config.as_deref(), overrides)?;
        run.validate()?;
        run
    };
    writeln!(out, "{}", run.to_json()).map_err(io_out)
}
