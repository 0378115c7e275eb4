//! Command-line surface: `sense`, `recover` and `bench`.
//!
//! Exit codes: `0` success, `1` usage error (bad flag or value), `2` runtime
//! failure (I/O, corrupt input, solver error).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::{run_bench_with, BenchConfig};
use crate::error::Result;
use crate::image_io::{load_image, save_image};
use crate::regularizers::SelfWeight;
use crate::sensing::{sense, Measurements};
use crate::solver::{recover, SolverParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "tvnlr",
    version,
    about = "Compressive-sensing image recovery with TV and nonlocal-means regularization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure a grayscale image with a seeded Gaussian matrix.
    Sense(SenseArgs),
    /// Recover an image from a measurements file.
    Recover(RecoverArgs),
    /// Run a benchmark grid described by a config file.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SenseArgs {
    /// Input image (PGM or PNG, 8-bit grayscale).
    pub input: PathBuf,
    /// Measurements file to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Sampling ratio M/N in (0, 1].
    #[arg(long, value_parser = parse_ratio)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    /// Measurements file written by `sense`.
    pub input: PathBuf,
    /// Reconstructed image (.pgm or .png).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Original image, for PSNR reporting.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Per-inner-iteration trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Print the parameter set before solving.
    #[arg(short, long)]
    pub verbose: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Config file (flat `key = value` list, see the README).
    pub config: PathBuf,
    /// Suppress per-cell progress on stderr.
    #[arg(short, long)]
    pub quiet: bool,
}

/// Solver flags; anything left unset keeps the default.
#[derive(Debug, Args, Default)]
pub struct SolverArgs {
    /// Nonlocal weight; 0 runs the TV-only baseline.
    #[arg(long, value_parser = parse_nonneg)]
    pub alpha: Option<f64>,
    /// Penalty on Du = w.
    #[arg(long, value_parser = parse_positive)]
    pub beta: Option<f64>,
    /// Penalty on Au = b.
    #[arg(long, value_parser = parse_positive)]
    pub mu: Option<f64>,
    /// Penalty on u = x.
    #[arg(long, value_parser = parse_positive)]
    pub theta: Option<f64>,
    /// Patch side b_s (odd).
    #[arg(long, value_parser = parse_patch)]
    pub patch: Option<usize>,
    /// Search window side L (odd, >= 3).
    #[arg(long, value_parser = parse_window)]
    pub window: Option<usize>,
    /// Nonlocal-means kernel width.
    #[arg(long, value_parser = parse_positive)]
    pub h: Option<f64>,
    /// Self weight of a pixel in W: excluded, kernel or max-neighbor.
    #[arg(long, value_parser = parse_self_weight)]
    pub self_weight: Option<SelfWeight>,
    #[arg(long, value_parser = parse_count)]
    pub max_outer: Option<usize>,
    #[arg(long, value_parser = parse_count)]
    pub max_inner: Option<usize>,
    #[arg(long, value_parser = parse_positive)]
    pub inner_tol: Option<f64>,
    #[arg(long, value_parser = parse_positive)]
    pub outer_tol: Option<f64>,
    /// Steepest-descent steps per inner pass.
    #[arg(long, value_parser = parse_count)]
    pub u_steps: Option<usize>,
    /// Rebuild W every k inner passes.
    #[arg(long, value_parser = parse_count)]
    pub w_update_every: Option<usize>,
    /// Keep only the k most similar neighbors per pixel.
    #[arg(long, value_parser = parse_count)]
    pub top_k: Option<usize>,
}

impl SolverArgs {
    pub fn to_params(&self) -> SolverParams {
        let mut p = SolverParams::default();
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag { $field = v; })*
            };
        }
        set!(
            alpha => p.alpha,
            beta => p.beta,
            mu => p.mu,
            theta => p.theta,
            patch => p.nlm.patch,
            window => p.nlm.window,
            h => p.nlm.h,
            self_weight => p.nlm.self_weight,
            max_outer => p.max_outer,
            max_inner => p.max_inner,
            inner_tol => p.inner_tol,
            outer_tol => p.outer_tol,
            u_steps => p.u_steps_per_inner,
            w_update_every => p.w_update_every,
        );
        if self.top_k.is_some() {
            p.top_k = self.top_k;
        }
        p
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

fn parse_ratio(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("ratio must be in (0, 1], got {v}"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be > 0, got {v}"))
    }
}

fn parse_nonneg(s: &str) -> std::result::Result<f64, String> {
    let v = parse_f64(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be >= 0, got {v}"))
    }
}

fn parse_count(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("must be an integer >= 1, got {s:?}")),
    }
}

fn parse_patch(s: &str) -> std::result::Result<usize, String> {
    let v = parse_count(s)?;
    if v % 2 == 1 {
        Ok(v)
    } else {
        Err(format!("patch size must be odd, got {v}"))
    }
}

fn parse_window(s: &str) -> std::result::Result<usize, String> {
    let v = parse_count(s)?;
    if v >= 3 && v % 2 == 1 {
        Ok(v)
    } else {
        Err(format!("window must be odd and >= 3, got {v}"))
    }
}

fn parse_self_weight(s: &str) -> std::result::Result<SelfWeight, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

/// One line per parameter, in the order of the flags.
pub fn describe_params(p: &SolverParams) -> String {
    let top_k = p
        .top_k
        .map(|k| k.to_string())
        .unwrap_or_else(|| "all".into());
    format!(
        "mu = {}\ntheta = {}\nbeta = {}\nalpha = {}\nb_s = {}\nL = {}\nh = {}\nself_weight = {}\ntop_k = {}\n\
         max_outer = {}\nmax_inner = {}\ninner_tol = {}\nouter_tol = {}\nu_steps = {}\nw_update_every = {}\n",
        p.mu,
        p.theta,
        p.beta,
        p.alpha,
        p.nlm.patch,
        p.nlm.window,
        p.nlm.h,
        p.nlm.self_weight,
        top_k,
        p.max_outer,
        p.max_inner,
        p.inner_tol,
        p.outer_tol,
        p.u_steps_per_inner,
        p.w_update_every,
    )
}

pub fn cmd_sense(args: &SenseArgs) -> Result<()> {
    let img = load_image(&args.input)?;
    let meas = sense(&img, args.ratio, args.seed)?;
    meas.write(&args.output)?;
    println!("M = {}", meas.m());
    println!("N = {}", meas.n);
    Ok(())
}

pub fn cmd_recover(args: &RecoverArgs) -> Result<()> {
    let params = args.solver.to_params();
    params.validate()?;
    if args.verbose {
        print!("{}", describe_params(&params));
    }
    let meas = Measurements::read(&args.input)?;
    let gt = args.ground_truth.as_ref().map(load_image).transpose()?;
    let res = recover(&meas, &params, gt.as_ref())?;
    save_image(&res.image, &args.output)?;
    if let Some(path) = &args.trace {
        res.write_trace_csv(path)?;
    }
    if let Some(p) = res.final_psnr {
        println!("psnr_db = {p:.4}");
    }
    println!("outer_iters = {}", res.outer_iters);
    println!("inner_iters_total = {}", res.inner_iters_total);
    println!("residual_rel = {:e}", res.final_residual);
    println!("wall_s = {:.3}", res.wall_time);
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let config = BenchConfig::load(&args.config)?;
    let quiet = args.quiet;
    let report = run_bench_with(&config, |r| {
        if quiet {
            return;
        }
        match &r.error {
            None => eprintln!(
                "{} ratio {} seed {} {}: {:.3} dB in {:.2} s",
                r.image,
                r.ratio,
                r.seed,
                r.algorithm.tag(),
                r.psnr_db,
                r.wall_s
            ),
            Some(e) => eprintln!(
                "{} ratio {} seed {} {}: failed: {e}",
                r.image,
                r.ratio,
                r.seed,
                r.algorithm.tag()
            ),
        }
    })?;
    for s in report.summary() {
        println!(
            "ratio {}: mean gain {:+.3} dB, tvnlr wins {}/{}",
            s.ratio, s.mean_gain_db, s.wins, s.cells
        );
    }
    let failed = report.records.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        println!("{failed} cell(s) failed");
    }
    println!("wrote {}", report.csv_path.display());
    Ok(())
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Sense(a) => cmd_sense(a),
        Command::Recover(a) => cmd_recover(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
