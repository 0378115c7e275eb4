//! Benchmark grid: every image is sensed at every ratio and seed, then recovered
//! with TVNLR and, optionally, with the TV-only baseline (`alpha = 0`).
//!
//! # Config format
//!
//! A flat list of `key = value` lines (a TOML subset). Lists use brackets,
//! strings are quoted, `#` starts a comment:
//!
//! ```text
//! images = ["data/camera64.pgm", "data/brick64.pgm"]  # relative to this file
//! ratios = [0.2, 0.3]
//! seeds = [1, 2, 3]
//! output_dir = "bench-out"
//! baseline = true          # also run alpha = 0 (default true)
//! parallel_cells = false   # run cells concurrently (default false)
//! save_images = true       # write every reconstruction (default true)
//! alpha = 16.0             # optional solver overrides, same names as the CLI flags
//! ```
//!
//! Overridable solver keys: `alpha`, `beta`, `mu`, `theta`, `patch`, `window`,
//! `h`, `self_weight`, `top_k`, `max_outer`, `max_inner`, `inner_tol`,
//! `outer_tol`, `u_steps`, `w_update_every`.
//!
//! # Output
//!
//! `bench.csv` in the output directory holds blank-line separated sections,
//! each with its own header row:
//!
//! 1. one row per cell:
//!    `image,ratio,seed,algorithm,psnr_db,wall_s,outer_iters,inner_iters_total,residual_rel`
//!    (numeric fields are left empty for a failed cell);
//! 2. with the baseline, the per-cell gain `psnr(tvnlr) - psnr(tv-only)`;
//! 3. with the baseline, per-ratio mean gain, wins and mean wall times;
//! 4. if any cell failed, the error message of each failed cell.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::image_io::{load_image, save_image};
use crate::regularizers::SelfWeight;
use crate::sensing::sense_with_operator;
use crate::solver::{recover_with_operator, SolverParams};

/// Column header of the per-cell section.
pub const CSV_HEADER: &str =
    "image,ratio,seed,algorithm,psnr_db,wall_s,outer_iters,inner_iters_total,residual_rel";

/// Images above this many pixels trigger a warning: the dense operator grows
/// with the square of the pixel count.
pub const DESK_SCALE_PIXELS: usize = 16384;

pub const CSV_FILE: &str = "bench.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Tvnlr,
    TvOnly,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Tvnlr => "tvnlr",
            Algorithm::TvOnly => "tv-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub images: Vec<PathBuf>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Parameters of the TVNLR runs; the baseline uses the same with `alpha = 0`.
    pub params: SolverParams,
    pub output_dir: PathBuf,
    pub baseline: bool,
    pub parallel_cells: bool,
    pub save_images: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    images: Vec<PathBuf>,
    ratios: Vec<f64>,
    seeds: Vec<u64>,
    output_dir: PathBuf,
    baseline: Option<bool>,
    parallel_cells: Option<bool>,
    save_images: Option<bool>,
    alpha: Option<f64>,
    beta: Option<f64>,
    mu: Option<f64>,
    theta: Option<f64>,
    patch: Option<usize>,
    window: Option<usize>,
    h: Option<f64>,
    self_weight: Option<String>,
    top_k: Option<usize>,
    max_outer: Option<usize>,
    max_inner: Option<usize>,
    inner_tol: Option<f64>,
    outer_tol: Option<f64>,
    u_steps: Option<usize>,
    w_update_every: Option<usize>,
}

impl BenchConfig {
    /// Parses a config; relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut p = SolverParams::default();
        macro_rules! set {
            ($($key:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = raw.$key { $field = v; })*
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
            max_outer => p.max_outer,
            max_inner => p.max_inner,
            inner_tol => p.inner_tol,
            outer_tol => p.outer_tol,
            u_steps => p.u_steps_per_inner,
            w_update_every => p.w_update_every,
        );
        if let Some(s) = raw.self_weight {
            p.nlm.self_weight = s.parse::<SelfWeight>()?;
        }
        p.top_k = raw.top_k.or(p.top_k);

        let resolve = |path: PathBuf| {
            if path.is_relative() {
                base_dir.join(path)
            } else {
                path
            }
        };
        let config = Self {
            images: raw.images.into_iter().map(resolve).collect(),
            ratios: raw.ratios,
            seeds: raw.seeds,
            params: p,
            output_dir: resolve(raw.output_dir),
            baseline: raw.baseline.unwrap_or(true),
            parallel_cells: raw.parallel_cells.unwrap_or(false),
            save_images: raw.save_images.unwrap_or(true),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::Config("images must not be empty".into()));
        }
        if self.ratios.is_empty() {
            return Err(Error::Config("ratios must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if let Some(r) = self.ratios.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::Config(format!("ratio {r} is outside (0, 1]")));
        }
        self.params
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn algorithms(&self) -> Vec<Algorithm> {
        if self.baseline {
            vec![Algorithm::Tvnlr, Algorithm::TvOnly]
        } else {
            vec![Algorithm::Tvnlr]
        }
    }

    /// Cells in output order: image, then ratio, then seed, then algorithm.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for image in &self.images {
            for &ratio in &self.ratios {
                for &seed in &self.seeds {
                    for algorithm in self.algorithms() {
                        out.push(Cell {
                            image: image.clone(),
                            ratio,
                            seed,
                            algorithm,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub image: PathBuf,
    pub ratio: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
}

impl Cell {
    pub fn image_name(&self) -> String {
        image_name(&self.image)
    }
}

fn image_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Outcome of one cell. On failure the numeric fields are `NaN`/`0` and
/// `error` holds the message.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub image: String,
    pub ratio: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub psnr_db: f64,
    pub wall_s: f64,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub residual_rel: f64,
    pub error: Option<String>,
}

impl BenchRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Mean gain of TVNLR over the baseline at one ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSummary {
    pub ratio: f64,
    /// Cells where both algorithms succeeded.
    pub cells: usize,
    pub mean_gain_db: f64,
    /// Cells where TVNLR has the strictly higher PSNR.
    pub wins: usize,
    pub mean_tvnlr_s: f64,
    pub mean_tv_only_s: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub csv_path: PathBuf,
}

impl BenchReport {
    pub fn gains(&self) -> Vec<CellGain> {
        cell_gains(&self.records)
    }

    pub fn summary(&self) -> Vec<RatioSummary> {
        summarize(&self.records)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellGain {
    pub image: String,
    pub ratio: f64,
    pub seed: u64,
    pub gain_db: f64,
    pub tvnlr_s: f64,
    pub tv_only_s: f64,
}

/// `psnr(tvnlr) - psnr(tv-only)` for every cell where both runs succeeded, in
/// grid order.
pub fn cell_gains(records: &[BenchRecord]) -> Vec<CellGain> {
    let mut out = Vec::new();
    for r in records
        .iter()
        .filter(|r| r.algorithm == Algorithm::Tvnlr && !r.failed())
    {
        let base = records.iter().find(|b| {
            b.algorithm == Algorithm::TvOnly
                && !b.failed()
                && b.image == r.image
                && b.ratio == r.ratio
                && b.seed == r.seed
        });
        if let Some(b) = base {
            out.push(CellGain {
                image: r.image.clone(),
                ratio: r.ratio,
                seed: r.seed,
                gain_db: r.psnr_db - b.psnr_db,
                tvnlr_s: r.wall_s,
                tv_only_s: b.wall_s,
            });
        }
    }
    out
}

/// Per-ratio summary, ratios in first-seen order.
pub fn summarize(records: &[BenchRecord]) -> Vec<RatioSummary> {
    let gains = cell_gains(records);
    let mut ratios: Vec<f64> = Vec::new();
    for g in &gains {
        if !ratios.contains(&g.ratio) {
            ratios.push(g.ratio);
        }
    }
    ratios
        .into_iter()
        .map(|ratio| {
            let cells: Vec<&CellGain> = gains.iter().filter(|g| g.ratio == ratio).collect();
            let k = cells.len() as f64;
            RatioSummary {
                ratio,
                cells: cells.len(),
                mean_gain_db: cells.iter().map(|g| g.gain_db).sum::<f64>() / k,
                wins: cells.iter().filter(|g| g.gain_db > 0.0).count(),
                mean_tvnlr_s: cells.iter().map(|g| g.tvnlr_s).sum::<f64>() / k,
                mean_tv_only_s: cells.iter().map(|g| g.tv_only_s).sum::<f64>() / k,
            }
        })
        .collect()
}

fn run_cell(cell: &Cell, config: &BenchConfig) -> BenchRecord {
    let mut record = BenchRecord {
        image: cell.image_name(),
        ratio: cell.ratio,
        seed: cell.seed,
        algorithm: cell.algorithm,
        psnr_db: f64::NAN,
        wall_s: f64::NAN,
        outer_iters: 0,
        inner_iters_total: 0,
        residual_rel: f64::NAN,
        error: None,
    };
    let params = match cell.algorithm {
        Algorithm::Tvnlr => config.params.clone(),
        Algorithm::TvOnly => config.params.tv_only(),
    };
    let outcome = (|| -> Result<()> {
        let img = load_image(&cell.image)?;
        let (meas, a) = sense_with_operator(&img, cell.ratio, cell.seed)?;
        let res = recover_with_operator(&a, &meas, &params, Some(&img))?;
        record.psnr_db = res.final_psnr.unwrap_or(f64::NAN);
        record.wall_s = res.wall_time;
        record.outer_iters = res.outer_iters;
        record.inner_iters_total = res.inner_iters_total;
        record.residual_rel = res.final_residual;
        if config.save_images {
            let name = format!(
                "{}_r{}_s{}_{}.png",
                record.image,
                cell.ratio,
                cell.seed,
                cell.algorithm.tag()
            );
            save_image(&res.image, config.output_dir.join(name))?;
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        record.error = Some(e.to_string());
    }
    record
}

/// Runs the whole grid and writes `bench.csv`. A failing cell becomes a failed
/// row; only I/O on the output directory or the CSV aborts the run.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    run_bench_with(config, |_| {})
}

/// [`run_bench`] with a callback invoked as each cell finishes (in completion
/// order, which differs from grid order when cells run in parallel).
pub fn run_bench_with(
    config: &BenchConfig,
    on_record: impl Fn(&BenchRecord) + Sync,
) -> Result<BenchReport> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    for path in &config.images {
        if let Ok(img) = load_image(path) {
            if img.len() > DESK_SCALE_PIXELS {
                eprintln!(
                    "warning: {} has {} pixels; the dense sensing matrix grows quadratically above {}",
                    path.display(),
                    img.len(),
                    DESK_SCALE_PIXELS
                );
            }
        }
    }
    let cells = config.cells();
    let run = |cell: &Cell| {
        let r = run_cell(cell, config);
        on_record(&r);
        r
    };
    let records: Vec<BenchRecord> = if config.parallel_cells {
        cells.par_iter().map(run).collect()
    } else {
        cells.iter().map(run).collect()
    };
    let csv_path = config.output_dir.join(CSV_FILE);
    let text = render_csv(&records, config.baseline)?;
    fs::write(&csv_path, text).map_err(|e| Error::io(&csv_path, e))?;
    Ok(BenchReport { records, csv_path })
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn section(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Renders the CSV described in the module docs.
pub fn render_csv(records: &[BenchRecord], baseline: bool) -> Result<String> {
    let header = |s: &str| s.split(',').map(String::from).collect::<Vec<_>>();
    let mut rows = vec![header(CSV_HEADER)];
    for r in records {
        let failed = r.failed();
        let count = |c: usize| if failed { String::new() } else { c.to_string() };
        rows.push(vec![
            r.image.clone(),
            r.ratio.to_string(),
            r.seed.to_string(),
            r.algorithm.tag().to_string(),
            num(r.psnr_db),
            num(r.wall_s),
            count(r.outer_iters),
            count(r.inner_iters_total),
            num(r.residual_rel),
        ]);
    }
    let mut sections = vec![section(rows)?];

    if baseline {
        let mut rows = vec![header("image,ratio,seed,gain_db")];
        for g in cell_gains(records) {
            rows.push(vec![
                g.image,
                g.ratio.to_string(),
                g.seed.to_string(),
                g.gain_db.to_string(),
            ]);
        }
        sections.push(section(rows)?);

        let mut rows = vec![header(
            "ratio,cells,mean_gain_db,wins,mean_tvnlr_s,mean_tv_only_s",
        )];
        for s in summarize(records) {
            rows.push(vec![
                s.ratio.to_string(),
                s.cells.to_string(),
                s.mean_gain_db.to_string(),
                s.wins.to_string(),
                num(s.mean_tvnlr_s),
                num(s.mean_tv_only_s),
            ]);
        }
        sections.push(section(rows)?);
    }

    let failures: Vec<&BenchRecord> = records.iter().filter(|r| r.failed()).collect();
    if !failures.is_empty() {
        let mut rows = vec![header("failed_image,ratio,seed,algorithm,error")];
        for r in failures {
            rows.push(vec![
                r.image.clone(),
                r.ratio.to_string(),
                r.seed.to_string(),
                r.algorithm.tag().to_string(),
                r.error.clone().unwrap_or_default(),
            ]);
        }
        sections.push(section(rows)?);
    }
    Ok(sections.join("\n"))
}

/// Blanks every timing column (header name ending in `_s`) of a bench CSV, so
/// that two runs can be compared for equality.
pub fn strip_timing(text: &str) -> Result<String> {
    let mut out = Vec::new();
    for part in text.split("\n\n") {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(part.as_bytes());
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut timing: Vec<bool> = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            if rows.is_empty() {
                timing = rec.iter().map(|h| h.ends_with("_s")).collect();
            }
            let is_header = rows.is_empty();
            rows.push(
                rec.iter()
                    .enumerate()
                    .map(|(k, f)| {
                        if !is_header && timing.get(k).copied().unwrap_or(false) {
                            String::new()
                        } else {
                            f.to_string()
                        }
                    })
                    .collect(),
            );
        }
        out.push(section(rows)?);
    }
    Ok(out.join("\n"))
}
