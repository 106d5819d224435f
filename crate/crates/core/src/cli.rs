//! Command-line front end.
//!
//! Every flag can also come from a `--config` file of `key=value` lines,
//! where `key` is the flag's long name. Flags on the command line win.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};

use crate::data::{self, Dataset, Split};
use crate::error::{NitsError, Result};
use crate::model::{checkpoint, Masking, NitsModel, WeightModelConfig};
use crate::sampler::{sample_ancestral, InversionConfig};
use crate::train::{evaluate_nll, fit, TrainConfig};
use crate::verify::{self, Mode};

#[derive(Debug, Parser)]
#[command(
    name = "nits",
    version,
    about = "Neural inverse transform sampling density models"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of `key=value` lines supplying default flag values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write a checkpoint plus a training report.
    Train(TrainArgs),
    /// Mean negative log-likelihood of a dataset under a checkpoint.
    Nll(NllArgs),
    /// Draw samples from a checkpoint into a CSV file.
    Sample(SampleArgs),
    /// Write log-density values on a 1D line or 2D slice.
    DensityGrid(GridArgs),
    /// Run the acceptance checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file of numeric rows.
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Synthetic generator: logistic, gmm2, two-moons-2d or ring-2d.
    #[arg(long, value_name = "NAME")]
    pub synthetic: Option<String>,
    /// Number of synthetic points.
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// The CSV file starts with a header row.
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        match (&self.data, &self.synthetic) {
            (Some(path), None) => {
                if !self.delimiter.is_ascii() {
                    return Err(NitsError::Usage(format!(
                        "delimiter '{}' is not ASCII",
                        self.delimiter
                    )));
                }
                data::load_csv(path, self.header, self.delimiter as u8)
            }
            (None, Some(name)) => Ok(data::make_synthetic(name, self.n, self.data_seed)?.dataset),
            _ => Err(NitsError::Usage(
                "exactly one of --data or --synthetic is required".into(),
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint path.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Training report path (default: checkpoint path with `.report`).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// PNN layer widths, comma separated.
    #[arg(long, default_value = "1,16,16,1")]
    pub widths: String,
    #[arg(long, default_value_t = WeightModelConfig::default().hidden_dim)]
    pub hidden: usize,
    #[arg(long, default_value_t = WeightModelConfig::default().residual_blocks)]
    pub blocks: usize,
    #[arg(long, default_value_t = WeightModelConfig::default().dropout_rate)]
    pub dropout: f64,
    /// independent or autoregressive.
    #[arg(long, default_value = "autoregressive")]
    pub masking: String,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    pub patience: usize,
    #[arg(long, default_value_t = TrainConfig::default().max_epochs)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().clip_norm)]
    pub clip_norm: f64,
    /// Columns to dequantize with uniform noise, comma separated.
    #[arg(long, value_name = "COLS")]
    pub dequantize: Option<String>,
    /// Quantization step used with --dequantize.
    #[arg(long, default_value_t = 1.0)]
    pub quant_step: f64,
    /// Seeds initialization, batching and dropout.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct NllArgs {
    /// Checkpoint path.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bisection tolerance in standardized units (default 1e-10 of the
    /// support width).
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub max_iters: usize,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Points per axis.
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
    /// One or two coordinates to vary, e.g. `0` or `0,1`.
    #[arg(long, default_value = "0")]
    pub dims: String,
    /// Values of every coordinate (original units); the varied ones are
    /// ignored. Defaults to the middle of the box.
    #[arg(long, value_name = "VALUES")]
    pub at: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Skip the training runs and the mixture sweep.
    #[arg(long, conflicts_with = "full")]
    pub quick: bool,
    /// Run every criterion.
    #[arg(long)]
    pub full: bool,
}

/// Parses `args` (including the program name), applies any config file and
/// runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &NitsError) -> i32 {
    match e {
        NitsError::Usage(_) => 2,
        _ => 1,
    }
}

fn parse(args: &[OsString]) -> std::result::Result<Cli, clap::Error> {
    let Some((path, pos)) = locate_config(args) else {
        return Cli::try_parse_from(args);
    };
    let sub = args[pos].to_string_lossy().into_owned();
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Cli::command().error(
            clap::error::ErrorKind::Io,
            format!("cannot read config file {}: {e}", path.display()),
        )
    })?;
    let injected = config_flags(&text, &sub).map_err(|msg| {
        Cli::command().error(
            clap::error::ErrorKind::InvalidValue,
            format!("{}: {msg}", path.display()),
        )
    })?;
    let mut merged = args[..=pos].to_vec();
    merged.extend(injected.into_iter().map(OsString::from));
    merged.extend_from_slice(&args[pos + 1..]);
    Cli::try_parse_from(merged)
}

/// Finds the `--config` path and the position of the subcommand name.
fn locate_config(args: &[OsString]) -> Option<(PathBuf, usize)> {
    let cmd = Cli::command();
    let mut path = None;
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--" {
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else if a == "--config" || a == "--threads" {
            if a == "--config" {
                path = args.get(i + 1).map(PathBuf::from);
            }
            i += 1;
        } else if sub.is_none() && cmd.find_subcommand(a.as_ref()).is_some() {
            sub = Some(i);
        }
        i += 1;
    }
    Some((path?, sub?))
}

/// Turns `key=value` lines into `--key value` flags for subcommand `sub`.
/// Blank lines and lines starting with `#` are skipped; boolean flags take
/// `true` or `false`.
fn config_flags(text: &str, sub: &str) -> std::result::Result<Vec<String>, String> {
    let cmd = Cli::command();
    let Some(subcmd) = cmd.find_subcommand(sub) else {
        return Err(format!("unknown subcommand '{sub}'"));
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let arg = subcmd
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key));
        let is_flag = matches!(arg.map(|a| a.get_action()), Some(ArgAction::SetTrue));
        if is_flag {
            match value {
                "true" => out.push(format!("--{key}")),
                "false" => {}
                other => {
                    return Err(format!(
                        "line {}: {key} expects true or false, got '{other}'",
                        i + 1
                    ))
                }
            }
        } else {
            // unknown keys are left for clap to reject with a suggestion
            out.push(format!("--{key}"));
            out.push(value.to_string());
        }
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<i32> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| {
                NitsError::Usage(format!("cannot configure {} threads: {e}", cli.threads))
            })?;
    }
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Nll(a) => cmd_nll(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::DensityGrid(a) => cmd_density_grid(&a),
        Command::Verify(a) => Ok(cmd_verify(&a)),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| NitsError::Usage(format!("cannot parse '{t}' in --{what}")))
        })
        .collect()
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let out = a
        .out
        .as_ref()
        .ok_or_else(|| NitsError::Usage("train needs --out <PATH> for the checkpoint".into()))?;
    let widths: Vec<usize> = parse_list(&a.widths, "widths")?;
    let masking: Masking = a.masking.parse()?;
    let wm = WeightModelConfig {
        hidden_dim: a.hidden,
        residual_blocks: a.blocks,
        dropout_rate: a.dropout,
        masking,
    };
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        learning_rate: a.lr,
        patience: a.patience,
        max_epochs: a.max_epochs,
        clip_norm: a.clip_norm,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(usage)?;

    let mut ds = a.data.load()?;
    if let Some(cols) = &a.dequantize {
        let cols: Vec<usize> = parse_list(cols, "dequantize")?;
        ds = data::dequantize(&ds, &cols, a.quant_step, a.seed)?;
    }
    let model = NitsModel::for_dataset(&ds, &widths, &wm, a.seed)?;
    let (model, report) = fit(model, &ds, &cfg)?;
    checkpoint::save(&model, out)?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(out, "report"));
    std::fs::write(&report_path, report.to_string())?;

    let first = &report.epochs[0];
    println!("checkpoint   {}", out.display());
    println!("report       {}", report_path.display());
    println!("epochs       {}", report.epochs.len() - 1);
    println!("best epoch   {}", report.best_epoch);
    println!("initial val  {:.4} nats", first.val_nll);
    println!("best val     {:.4} nats", report.best_val_nll);
    if let Ok(test) = evaluate_nll(&model, &ds, Split::Test) {
        println!(
            "test         {:.4} nats  {:.4} bits/dim  ({} excluded)",
            test.nats, test.bits_per_dim, test.excluded
        );
    }
    Ok(0)
}

fn usage(e: NitsError) -> NitsError {
    match e {
        NitsError::InvalidParameter(m) => NitsError::Usage(m),
        other => other,
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        "all" => Ok(Split::All),
        other => Err(NitsError::Usage(format!(
            "unknown split '{other}' (expected train, val, test or all)"
        ))),
    }
}

fn cmd_nll(a: &NllArgs) -> Result<i32> {
    let split = parse_split(&a.split)?;
    let model = checkpoint::load(&a.model)?;
    let ds = a.data.load()?;
    if ds.dims() != model.dims() {
        return Err(NitsError::Usage(format!(
            "data has {} columns, model has {} dimensions",
            ds.dims(),
            model.dims()
        )));
    }
    let r = evaluate_nll(&model, &ds, split)?;
    println!("nll          {:.4} nats", r.nats);
    println!("bits/dim     {:.4}", r.bits_per_dim);
    println!("points       {}", r.count);
    if r.excluded > 0 {
        println!("excluded     {} outside the model bounds", r.excluded);
    }
    Ok(0)
}

fn cmd_sample(a: &SampleArgs) -> Result<i32> {
    let model = checkpoint::load(&a.model)?;
    let cfg = match a.eps {
        Some(eps) => {
            let cfg = InversionConfig {
                tolerance: eps,
                max_iters: a.max_iters,
            };
            for b in model.bounds() {
                cfg.validate(b).map_err(usage)?;
            }
            Some(cfg)
        }
        None => None,
    };
    let values = sample_ancestral(&model, a.n, a.seed, cfg)?;
    data::write_csv(&a.out, &values, model.dims(), None)?;
    println!(
        "wrote {} samples of dimension {} to {}",
        a.n,
        model.dims(),
        a.out.display()
    );
    Ok(0)
}

fn cmd_density_grid(a: &GridArgs) -> Result<i32> {
    if a.resolution < 2 {
        return Err(NitsError::Usage("--resolution must be at least 2".into()));
    }
    let model = checkpoint::load(&a.model)?;
    let d = model.dims();
    let dims: Vec<usize> = parse_list(&a.dims, "dims")?;
    if dims.is_empty() || dims.len() > 2 {
        return Err(NitsError::Usage(
            "--dims takes one or two coordinates".into(),
        ));
    }
    if let Some(&bad) = dims.iter().find(|&&i| i >= d) {
        return Err(NitsError::Usage(format!(
            "coordinate {bad} is out of range for a {d}-dimensional model"
        )));
    }
    if dims.len() == 2 && dims[0] == dims[1] {
        return Err(NitsError::Usage(
            "--dims must name two different coordinates".into(),
        ));
    }
    let bounds = model.data_bounds();
    let mut base: Vec<f64> = match &a.at {
        Some(s) => parse_list(s, "at")?,
        None => bounds.iter().map(|b| 0.5 * (b.lo + b.hi)).collect(),
    };
    if base.len() != d {
        return Err(NitsError::Usage(format!(
            "--at needs {d} values, got {}",
            base.len()
        )));
    }
    let axis = |i: usize| -> Vec<f64> {
        let b = bounds[i];
        let h = b.width() / (a.resolution - 1) as f64;
        (0..a.resolution)
            .map(|k| {
                if k + 1 == a.resolution {
                    b.hi
                } else {
                    b.lo + k as f64 * h
                }
            })
            .collect()
    };
    let mut out = String::new();
    match dims[..] {
        [i] => {
            for v in axis(i) {
                base[i] = v;
                out.push_str(&format!("{v:?},{:?}\n", model.log_likelihood(&base)?));
            }
        }
        [i, j] => {
            let (xs, ys) = (axis(i), axis(j));
            for &x in &xs {
                for &y in &ys {
                    base[i] = x;
                    base[j] = y;
                    out.push_str(&format!("{x:?},{y:?},{:?}\n", model.log_likelihood(&base)?));
                }
            }
        }
        _ => unreachable!("checked above"),
    }
    let rows = out.lines().count();
    std::fs::write(&a.out, out)?;
    println!("wrote {rows} grid rows to {}", a.out.display());
    Ok(0)
}

fn cmd_verify(a: &VerifyArgs) -> i32 {
    let mode = if a.full { Mode::Full } else { Mode::Quick };
    let outcomes = verify::run(mode, |o| println!("{o}"));
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "{} of {} criteria passed",
        outcomes.len() - failed,
        outcomes.len()
    );
    if failed == 0 {
        0
    } else {
        1
    }
}
