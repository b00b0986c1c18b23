//! Command-line front end: `train`, `encode`, `eval` and `analyze-scale`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
//! failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Result, ScqError};
use crate::eval::{evaluate, EvalOptions, DEFAULT_K};
use crate::io::{read_codes, read_features, read_labels, write_atomic, write_codes};
use crate::linalg::{pca_fit, zero_center, FeatureMatrix};
use crate::model::{HashModel, Method};
use crate::pipeline::{train_model, PipelineConfig, DEFAULT_PCA_DIM};
use crate::scale::{default_grid, formula_scale, sweep_scale};
use crate::train::{TrainConfig, DEFAULT_EPS, DEFAULT_MAX_ITER, DEFAULT_MU};

pub const SEED_ENV: &str = "SCQ_SEED";

#[derive(Debug, Parser)]
#[command(name = "scq", version, about = "Binary hashing by simultaneous compression and quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a hashing model from a feature file
    Train(TrainArgs),
    /// Encode features into packed binary codes
    Encode(EncodeArgs),
    /// Score database and query codes with mAP, precision at radius 2 and precision at k
    Eval(EvalArgs),
    /// Sweep the input scale and report loss and retained variance per value
    AnalyzeScale(ScaleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    One,
    Oge,
    Itq,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::One => Method::One,
            MethodArg::Oge => Method::Oge,
            MethodArg::Itq => Method::Itq,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    bits: usize,
    /// Inputs wider than this are PCA-reduced first
    #[arg(long, default_value_t = DEFAULT_PCA_DIM)]
    pca_dim: usize,
    /// Never apply the PCA pre-reduction
    #[arg(long)]
    no_pca: bool,
    /// Fixed input scale instead of the spectrum-based default
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MU)]
    mu: f64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// ITQ rotation updates
    #[arg(long, default_value_t = crate::itq::DEFAULT_ITQ_ITERS)]
    itq_iters: usize,
    /// Random seed; falls back to $SCQ_SEED, then 0
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    db_codes: PathBuf,
    #[arg(long)]
    db_labels: PathBuf,
    #[arg(long)]
    query_codes: PathBuf,
    #[arg(long)]
    query_labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Leave queries with no relevant database item out of the mAP
    #[arg(long)]
    exclude_no_relevant: bool,
    /// Full-precision JSON instead of percentages
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ScaleArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    bits: usize,
    /// Smallest scale (default: formula scale / 8)
    #[arg(long)]
    grid_lo: Option<f64>,
    /// Largest scale (default: formula scale * 8)
    #[arg(long)]
    grid_hi: Option<f64>,
    #[arg(long, default_value_t = 16)]
    points: usize,
    #[arg(long, default_value_t = DEFAULT_PCA_DIM)]
    pca_dim: usize,
    #[arg(long)]
    no_pca: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| ScqError::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn run_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let raw = read_features(&a.features)?;
    let mut train = TrainConfig::new(a.bits)
        .with_seed(resolve_seed(a.seed)?)
        .with_mu(a.mu)
        .with_eps(a.eps)
        .with_max_iter(a.max_iter);
    train.scale_override = a.scale;
    let cfg = PipelineConfig {
        pca_dim: a.pca_dim,
        pca: !a.no_pca,
        itq_iters: a.itq_iters,
        ..PipelineConfig::new(a.method.into(), train)
    };
    let (model, report) = train_model(&raw, &cfg)?;
    model.save(&a.out)?;
    writeln!(
        out,
        "trained {} model: {} bits, {} iterations ({:?}), final loss {:.6}, scale {:.6e}",
        model.method(),
        model.bits(),
        report.trace.iterations(),
        report.trace.stop_reason,
        report.trace.last(),
        model.scale()
    )?;
    Ok(())
}

fn run_encode(a: EncodeArgs, out: &mut dyn Write) -> Result<()> {
    let model = HashModel::load(&a.model)?;
    let raw = read_features(&a.features)?;
    let codes = model.encode(&raw)?;
    write_codes(&a.out, &codes)?;
    writeln!(out, "encoded {} rows into {}-bit codes", codes.n(), codes.bits())?;
    Ok(())
}

fn run_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let db = read_codes(&a.db_codes)?;
    let dl = read_labels(&a.db_labels)?;
    let q = read_codes(&a.query_codes)?;
    let ql = read_labels(&a.query_labels)?;
    let opts = EvalOptions {
        k: a.k,
        exclude_no_relevant: a.exclude_no_relevant,
        per_query: false,
    };
    let r = evaluate(&db, &dl, &q, &ql, &opts)?;
    if a.json {
        let doc = serde_json::json!({
            "map": r.map,
            "prec_at_r2": r.prec_at_r2,
            "prec_at_k": r.prec_at_k,
            "k": r.k,
        });
        writeln!(out, "{doc}")?;
    } else {
        writeln!(out, "mAP: {:.2}%", 100.0 * r.map)?;
        writeln!(out, "prec@r2: {:.2}%", 100.0 * r.prec_at_r2)?;
        writeln!(out, "prec@{}: {:.2}%", r.k, 100.0 * r.prec_at_k)?;
    }
    Ok(())
}

fn run_analyze_scale(a: ScaleArgs, out: &mut dyn Write) -> Result<()> {
    if a.points == 0 {
        return Err(ScqError::InvalidConfig("--points must be at least 1".into()));
    }
    let raw = read_features(&a.features)?;
    let (centered, _) = zero_center(&raw)?;
    let x = if !a.no_pca && centered.d() > a.pca_dim {
        let p = pca_fit(&centered, a.pca_dim)?;
        FeatureMatrix::new(centered.project(&p.projection))?
    } else {
        centered
    };
    let cfg = TrainConfig::new(a.bits).with_seed(resolve_seed(a.seed)?);
    cfg.validate(x.d())?;
    let s = formula_scale(&x, a.bits)?;
    let grid = match (a.grid_lo, a.grid_hi, a.points) {
        (None, None, 16) => default_grid(s),
        (lo, hi, points) => {
            let (lo, hi) = (lo.unwrap_or(s / 8.0), hi.unwrap_or(s * 8.0));
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(ScqError::InvalidConfig(format!("invalid scale grid [{lo}, {hi}]")));
            }
            let steps = (points - 1).max(1) as f64;
            (0..points)
                .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / steps).exp())
                .collect()
        }
    };
    let rows = sweep_scale(&x, a.bits, &grid, &cfg)?;
    let mut table = String::from("s,per_bit_loss,retained_variance,mean_abs_gap,iterations,error\n");
    let mut failures = 0;
    for row in &rows {
        match &row.outcome {
            Ok(p) => table.push_str(&format!(
                "{:e},{:e},{:e},{:e},{},\n",
                row.s, p.per_bit_loss, p.retained_variance, p.mean_abs_gap, p.iterations
            )),
            Err(e) => {
                failures += 1;
                table.push_str(&format!("{:e},,,,,\"{}\"\n", row.s, e.to_string().replace('"', "'")));
            }
        }
    }
    write_atomic(&a.out, table.as_bytes())?;
    writeln!(out, "wrote {} scale points ({failures} failed) to {}", rows.len(), a.out.display())?;
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a, out),
        Command::Encode(a) => run_encode(a, out),
        Command::Eval(a) => run_eval(a, out),
        Command::AnalyzeScale(a) => run_analyze_scale(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
