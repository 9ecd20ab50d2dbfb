//! Command-line front end: `generate`, `fit`, `eval` and `sweep`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Manifest};
use crate::metrics::{evaluate, fmt_opt, EvalReport};
use crate::nolips::{fit, FitConfig, FitResult, KernelKind};
use crate::scm_gen::{
    sample_dag, sample_data, Dataset, GraphModel, GraphSpec, NoiseFamily, NoiseSpec,
};
use crate::weights::{Adjacency, Mode, WeightMatrix};

pub const RESULT_FILE: &str = "result.json";
pub const EDGES_FILE: &str = "edges.csv";
pub const DETAIL_FILE: &str = "detail.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

pub const EVAL_COLUMNS: [&str; 11] = [
    "n", "m", "k", "model", "noise", "lambda", "seed", "shd", "fdr", "tpr", "time",
];

pub const DETAIL_COLUMNS: [&str; 21] = [
    "n",
    "m",
    "k",
    "model",
    "noise",
    "mode",
    "lambda",
    "seed",
    "shd",
    "fdr",
    "tpr",
    "tp",
    "missing",
    "extra",
    "reversed",
    "p_true",
    "predicted",
    "outer_iterations",
    "converged",
    "time",
    "error",
];

pub const SUMMARY_COLUMNS: [&str; 15] = [
    "n",
    "m",
    "k",
    "model",
    "noise",
    "mode",
    "runs",
    "failures",
    "shd_mean",
    "shd_sd",
    "fdr_mean",
    "fdr_sd",
    "tpr_mean",
    "tpr_sd",
    "outer_mean",
];

const SCHEMA_HELP: &str = "\
Files:
  data CSV       header row of variable names, then one sample per row (decimal reals)
  matrix CSV     n rows of n comma-separated reals, no header; entry (i,j) is edge i->j
  manifest.json  graph spec, noise spec, m, data_seed, sha256 of data.csv and truth.csv
  result.json    keys weights, binary, traces, config_echo, timing, converged
  edges.csv      source,target,weight
  eval --format csv
                 n,m,k,model,noise,lambda,seed,shd,fdr,tpr,time
  detail.csv     n,m,k,model,noise,mode,lambda,seed,shd,fdr,tpr,tp,missing,extra,
                 reversed,p_true,predicted,outer_iterations,converged,time,error
  summary.csv    n,m,k,model,noise,mode,runs,failures,shd_mean,shd_sd,fdr_mean,fdr_sd,
                 tpr_mean,tpr_sd,outer_mean
                 (one row per grid cell, aggregated over seeds and lambdas; sd is the
                 sample standard deviation, empty below two values)

Configuration is one JSON document (--config); flags override its fields.";

#[derive(Debug, Parser)]
#[command(
    name = "bregdag",
    version,
    about = "Sparse linear DAG learning with dynamic NoLips"
)]
#[command(after_help = SCHEMA_HELP)]
pub struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a DAG and data; writes data.csv, truth.csv and manifest.json.
    Generate {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Fit a data CSV (or generated dataset directory); writes result.json and edges.csv.
    Fit {
        data: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Compare a predicted graph with the truth.
    Eval {
        /// result.json from `fit`, or a matrix CSV.
        pred: PathBuf,
        /// Matrix CSV, or a generated dataset directory.
        truth: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalFormat::Json)]
        format: EvalFormat,
    },
    /// Run every (grid cell, lambda, seed) combination; writes detail.csv and summary.csv.
    Sweep {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Concurrent fits (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<GraphModel>,
    #[arg(long, value_parser = parse_noise)]
    pub noise: Option<NoiseFamily>,
    /// Only positive edge weights in the sampled DAG.
    #[arg(long)]
    pub positive_only: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long, value_parser = parse_kernel)]
    pub kernel: Option<KernelKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Hard threshold on |W_ij|.
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub enforce_norm_floor: bool,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown value {s:?}"))
}

fn parse_model(s: &str) -> std::result::Result<GraphModel, String> {
    parse_enum(s)
}

fn parse_noise(s: &str) -> std::result::Result<NoiseFamily, String> {
    parse_enum(s)
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    parse_enum(s)
}

fn parse_kernel(s: &str) -> std::result::Result<KernelKind, String> {
    parse_enum(s)
}

/// Experiment grid plus solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub k: Vec<usize>,
    pub model: Vec<GraphModel>,
    pub noise: Vec<NoiseFamily>,
    pub lambda: Vec<f64>,
    pub mode: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub weight_low: f64,
    pub weight_high: f64,
    pub positive_only: bool,
    pub noise_scale: f64,
    pub centered: bool,
    pub solver: FitConfig,
    pub output_dir: PathBuf,
    /// Keep each sweep run's result.json under `runs/`.
    pub save_runs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: vec![20],
            m: vec![200],
            k: vec![2],
            model: vec![GraphModel::Er],
            noise: vec![NoiseFamily::Gaussian],
            lambda: vec![0.0, 1e-6, 1e-4],
            mode: vec![Mode::Positive],
            seeds: vec![0, 1],
            weight_low: 0.5,
            weight_high: 2.0,
            positive_only: false,
            noise_scale: 1.0,
            centered: true,
            solver: FitConfig::default(),
            output_dir: PathBuf::from("out"),
            save_runs: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("n", self.n.is_empty()),
            ("m", self.m.is_empty()),
            ("k", self.k.is_empty()),
            ("model", self.model.is_empty()),
            ("noise", self.noise.is_empty()),
            ("lambda", self.lambda.is_empty()),
            ("mode", self.mode.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::InvalidParameter(format!(
                "grid field {name} is empty"
            )));
        }
        self.solver.validate()
    }

    pub fn apply_grid(&mut self, args: &GridArgs) {
        if let Some(n) = args.n {
            self.n = vec![n];
        }
        if let Some(m) = args.m {
            self.m = vec![m];
        }
        if let Some(k) = args.k {
            self.k = vec![k];
        }
        if let Some(model) = args.model {
            self.model = vec![model];
        }
        if let Some(noise) = args.noise {
            self.noise = vec![noise];
        }
        self.positive_only |= args.positive_only;
    }

    pub fn apply_solver(&mut self, args: &SolverArgs) {
        let s = &mut self.solver;
        if let Some(seed) = args.seed {
            self.seeds = vec![seed];
            s.seed = seed;
        }
        if let Some(mode) = args.mode {
            self.mode = vec![mode];
            s.mode = mode;
        }
        if let Some(lambda) = args.lambda {
            self.lambda = vec![lambda];
            s.lambda = lambda;
        }
        if let Some(kernel) = args.kernel {
            s.kernel = kernel;
        }
        if let Some(alpha) = args.alpha {
            s.alpha = Some(alpha);
        }
        if let Some(mu) = args.mu {
            s.mu = mu;
        }
        if let Some(tau) = args.tau {
            s.tau = tau;
        }
        if let Some(omega) = args.omega {
            s.threshold_omega = omega;
        }
        s.enforce_norm_floor |= args.enforce_norm_floor;
    }

    pub fn graph_spec(&self, n: usize, k: usize, model: GraphModel, seed: u64) -> GraphSpec {
        GraphSpec {
            weight_low: self.weight_low,
            weight_high: self.weight_high,
            positive_only: self.positive_only,
            ..GraphSpec::new(n, k, model, graph_seed(seed, n, k, model))
        }
    }

    pub fn noise_spec(&self, family: NoiseFamily) -> NoiseSpec {
        NoiseSpec {
            family,
            scale: self.noise_scale,
            centered: self.centered,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ p))
}

/// Graph seed for a replicate. Independent of `m` and the noise family, so
/// the same DAG is reused along those axes.
pub fn graph_seed(seed: u64, n: usize, k: usize, model: GraphModel) -> u64 {
    mix(seed, &[n as u64, k as u64, model as u64])
}

pub fn data_seed(graph_seed: u64, m: usize, noise: NoiseFamily) -> u64 {
    mix(graph_seed, &[m as u64, noise as u64 + 1])
}

fn single<T: Copy + std::fmt::Debug>(name: &str, values: &[T]) -> Result<T> {
    match values {
        [x] => Ok(*x),
        _ => Err(Error::InvalidParameter(format!(
            "generate needs exactly one value for {name}, got {values:?}"
        ))),
    }
}

/// Samples the dataset of one replicate.
pub fn generate_dataset(
    cfg: &ExperimentConfig,
    n: usize,
    m: usize,
    k: usize,
    model: GraphModel,
    noise: NoiseFamily,
    seed: u64,
) -> Result<(Dataset, GraphSpec, NoiseSpec, u64)> {
    let spec = cfg.graph_spec(n, k, model, seed);
    let truth = sample_dag(&spec)?;
    let noise_spec = cfg.noise_spec(noise);
    let dseed = data_seed(spec.seed, m, noise);
    let data = sample_data(&truth, m, &noise_spec, dseed)?;
    Ok((data, spec, noise_spec, dseed))
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Manifest> {
    let (data, spec, noise, dseed) = generate_dataset(
        cfg,
        single("n", &cfg.n)?,
        single("m", &cfg.m)?,
        single("k", &cfg.k)?,
        single("model", &cfg.model)?,
        single("noise", &cfg.noise)?,
        single("seeds", &cfg.seeds)?,
    )?;
    let manifest = io::write_generated(&cfg.output_dir, &data, &spec, &noise, dseed)?;
    info!("wrote dataset to {}", cfg.output_dir.display());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    pub objective: Vec<f64>,
    pub l2: Vec<f64>,
    pub gamma: Vec<f64>,
    pub halvings: Vec<u32>,
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    pub inner_not_converged: usize,
    pub halving_limit_hit: bool,
    pub positive_edge_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_seconds: f64,
}

/// On-disk form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub weights: WeightMatrix,
    pub binary: Adjacency,
    pub traces: Traces,
    pub config_echo: FitConfig,
    pub timing: Timing,
    pub converged: bool,
}

impl ResultFile {
    pub fn new(result: &FitResult, cfg: &FitConfig) -> Self {
        let n = result.weights.n();
        ResultFile {
            weights: result.weights.clone(),
            binary: result.binary.clone(),
            traces: Traces {
                objective: result.objective_trace.clone(),
                l2: result.l2_trace.clone(),
                gamma: result.gamma_trace.clone(),
                halvings: result.halvings.clone(),
                outer_iterations: result.outer_iterations,
                inner_iterations_total: result.inner_iterations_total,
                inner_not_converged: result.inner_not_converged,
                halving_limit_hit: result.halving_limit_hit,
                positive_edge_fraction: result.positive_edge_fraction,
            },
            config_echo: FitConfig {
                alpha: Some(cfg.alpha_for(n)),
                ..cfg.clone()
            },
            timing: Timing {
                wall_time_seconds: result.wall_time_seconds,
            },
            converged: result.converged,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        io::write_file(path, json.as_bytes())
    }
}

pub fn cmd_fit(data_path: &Path, cfg: &ExperimentConfig) -> Result<ResultFile> {
    cfg.solver.validate()?;
    let (data, _) = io::load_data(data_path)?;
    let result = fit(&data, &cfg.solver)?;
    if !result.converged {
        warn!("outer budget of {} steps exhausted", cfg.solver.max_outer);
    }
    let file = ResultFile::new(&result, &cfg.solver);
    file.write(&cfg.output_dir.join(RESULT_FILE))?;
    let edges = io::edges_csv_string(&result.binary, &result.weights, data.variable_names());
    io::write_file(&cfg.output_dir.join(EDGES_FILE), edges.as_bytes())?;
    info!(
        "{} edges after {} outer steps; wrote {}",
        result.binary.edge_count(),
        result.outer_iterations,
        cfg.output_dir.display()
    );
    Ok(file)
}

/// Report plus whatever run context the inputs carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub n: usize,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub model: Option<GraphModel>,
    pub noise: Option<NoiseFamily>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    pub time: Option<f64>,
    #[serde(flatten)]
    pub report: EvalReport,
}

impl EvalRecord {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            opt(self.m),
            opt(self.k),
            opt(self.model),
            opt(self.noise),
            opt(self.lambda),
            opt(self.seed),
            self.report.shd.to_string(),
            fmt_opt(self.report.fdr),
            fmt_opt(self.report.tpr),
            opt(self.time),
        ]
    }
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn cmd_eval(pred_path: &Path, truth_path: &Path) -> Result<EvalRecord> {
    let (pred, result) = if is_json(pred_path) {
        let r = ResultFile::load(pred_path)?;
        (r.binary.clone(), Some(r))
    } else {
        (io::read_adjacency_csv(pred_path)?, None)
    };
    let (truth, manifest) = if truth_path.is_dir() {
        let manifest = io::read_manifest(truth_path)?;
        io::verify_checksum(&manifest, truth_path, io::TRUTH_FILE)?;
        (
            io::read_adjacency_csv(&truth_path.join(io::TRUTH_FILE))?,
            Some(manifest),
        )
    } else {
        (io::read_adjacency_csv(truth_path)?, None)
    };
    let report = evaluate(&pred, &truth)?;
    Ok(EvalRecord {
        n: truth.n(),
        m: manifest.as_ref().map(|mf| mf.m),
        k: manifest.as_ref().map(|mf| mf.graph.k),
        model: manifest.as_ref().map(|mf| mf.graph.model),
        noise: manifest.as_ref().map(|mf| mf.noise.family),
        lambda: result.as_ref().map(|r| r.config_echo.lambda),
        seed: result.as_ref().map(|r| r.config_echo.seed),
        time: result.as_ref().map(|r| r.timing.wall_time_seconds),
        report,
    })
}

pub fn eval_csv(record: &EvalRecord) -> String {
    csv_text(&EVAL_COLUMNS, [record.csv_row()])
}

fn csv_text<const N: usize>(
    header: &[&str; N],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// One grid cell: everything except lambda and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub model: GraphModel,
    pub noise: NoiseFamily,
    pub mode: Mode,
}

impl Cell {
    fn fields(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.m.to_string(),
            self.k.to_string(),
            self.model.to_string(),
            self.noise.to_string(),
            self.mode.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub cell: usize,
    pub lambda: f64,
    pub seed: u64,
    pub result: std::result::Result<RunStats, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub report: EvalReport,
    pub outer_iterations: usize,
    pub converged: bool,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub cells: Vec<Cell>,
    pub runs: Vec<RunOutcome>,
    pub detail_csv: String,
    pub summary_csv: String,
}

pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &n in &cfg.n {
        for &m in &cfg.m {
            for &k in &cfg.k {
                for &model in &cfg.model {
                    for &noise in &cfg.noise {
                        for &mode in &cfg.mode {
                            cells.push(Cell {
                                n,
                                m,
                                k,
                                model,
                                noise,
                                mode,
                            });
                        }
                    }
                }
            }
        }
    }
    cells
}

fn run_dir(cell: &Cell, lambda: f64, seed: u64) -> String {
    format!(
        "n{}_m{}_k{}_{}_{}_{}_lambda{}_seed{}",
        cell.n, cell.m, cell.k, cell.model, cell.noise, cell.mode, lambda, seed
    )
}

fn run_one(cfg: &ExperimentConfig, cell: &Cell, lambda: f64, seed: u64) -> Result<RunStats> {
    let (data, ..) = generate_dataset(cfg, cell.n, cell.m, cell.k, cell.model, cell.noise, seed)?;
    let solver = FitConfig {
        lambda,
        mode: cell.mode,
        seed,
        ..cfg.solver.clone()
    };
    let started = Instant::now();
    let result = fit(&data, &solver)?;
    let time = started.elapsed().as_secs_f64();
    let truth = data.truth().expect("generated data has truth").support();
    let report = evaluate(&result.binary, &truth)?;
    if cfg.save_runs {
        let dir = cfg
            .output_dir
            .join("runs")
            .join(run_dir(cell, lambda, seed));
        ResultFile::new(&result, &solver).write(&dir.join(RESULT_FILE))?;
    }
    Ok(RunStats {
        report,
        outer_iterations: result.outer_iterations,
        converged: result.converged,
        time,
    })
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let count = values.len();
    if count == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let sd = (count > 1).then(|| {
        let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
        (ss / (count - 1) as f64).sqrt()
    });
    (Some(mean), sd)
}

fn detail_row(cell: &Cell, run: &RunOutcome) -> Vec<String> {
    let mut row = cell.fields();
    row.extend([run.lambda.to_string(), run.seed.to_string()]);
    match &run.result {
        Ok(s) => {
            let r = &s.report;
            row.extend([
                r.shd.to_string(),
                fmt_opt(r.fdr),
                fmt_opt(r.tpr),
                r.tp.to_string(),
                r.missing.to_string(),
                r.extra.to_string(),
                r.reversed.to_string(),
                r.p_true.to_string(),
                r.predicted.to_string(),
                s.outer_iterations.to_string(),
                s.converged.to_string(),
                format!("{:.6}", s.time),
                String::new(),
            ]);
        }
        Err(msg) => {
            row.extend(std::iter::repeat_n(String::new(), 12));
            row.push(msg.replace([',', '\n'], ";"));
        }
    }
    row
}

fn summary_row(cell: &Cell, runs: &[&RunOutcome]) -> Vec<String> {
    let ok: Vec<&RunStats> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let collect =
        |f: &dyn Fn(&RunStats) -> Option<f64>| ok.iter().filter_map(|s| f(s)).collect::<Vec<_>>();
    let (shd_mean, shd_sd) = mean_sd(&collect(&|s| Some(s.report.shd as f64)));
    let (fdr_mean, fdr_sd) = mean_sd(&collect(&|s| s.report.fdr));
    let (tpr_mean, tpr_sd) = mean_sd(&collect(&|s| s.report.tpr));
    let (outer_mean, _) = mean_sd(&collect(&|s| Some(s.outer_iterations as f64)));
    let mut row = cell.fields();
    row.extend([
        runs.len().to_string(),
        (runs.len() - ok.len()).to_string(),
        fmt_opt(shd_mean),
        fmt_opt(shd_sd),
        fmt_opt(fdr_mean),
        fmt_opt(fdr_sd),
        fmt_opt(tpr_mean),
        fmt_opt(tpr_sd),
        fmt_opt(outer_mean),
    ]);
    row
}

/// Runs the whole grid. Failed runs are recorded in their detail row and
/// excluded from the aggregates. Output order does not depend on `jobs`.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<SweepOutput> {
    cfg.validate()?;
    let cells = grid_cells(cfg);
    let mut tasks = Vec::new();
    for cell in 0..cells.len() {
        for &lambda in &cfg.lambda {
            for &seed in &cfg.seeds {
                tasks.push((cell, lambda, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let runs: Vec<RunOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(cell, lambda, seed)| {
                let result = run_one(cfg, &cells[cell], lambda, seed).map_err(|e| e.to_string());
                if let Err(msg) = &result {
                    warn!("run {} failed: {msg}", run_dir(&cells[cell], lambda, seed));
                }
                RunOutcome {
                    cell,
                    lambda,
                    seed,
                    result,
                }
            })
            .collect()
    });
    let detail_csv = csv_text(
        &DETAIL_COLUMNS,
        runs.iter().map(|r| detail_row(&cells[r.cell], r)),
    );
    let summary_csv = csv_text(
        &SUMMARY_COLUMNS,
        cells.iter().enumerate().map(|(i, cell)| {
            let mine: Vec<&RunOutcome> = runs.iter().filter(|r| r.cell == i).collect();
            summary_row(cell, &mine)
        }),
    );
    Ok(SweepOutput {
        cells,
        runs,
        detail_csv,
        summary_csv,
    })
}

pub fn cmd_sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<SweepOutput> {
    let out = run_sweep(cfg, jobs)?;
    io::write_file(&cfg.output_dir.join(DETAIL_FILE), out.detail_csv.as_bytes())?;
    io::write_file(
        &cfg.output_dir.join(SUMMARY_FILE),
        out.summary_csv.as_bytes(),
    )?;
    let failures = out.runs.iter().filter(|r| r.result.is_err()).count();
    info!(
        "{} runs in {} cells ({failures} failed); wrote {}",
        out.runs.len(),
        out.cells.len(),
        cfg.output_dir.display()
    );
    Ok(out)
}

/// Executes a parsed command line and returns what should go to stdout.
pub fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Generate {
            grid,
            seed,
            output_dir,
        } => {
            cfg.apply_grid(&grid);
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let manifest = cmd_generate(&cfg)?;
            Ok(serde_json::to_string_pretty(&manifest)? + "\n")
        }
        Command::Fit {
            data,
            solver,
            output_dir,
        } => {
            cfg.apply_solver(&solver);
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let file = cmd_fit(&data, &cfg)?;
            Ok(format!(
                "{} edges, converged: {}, outer iterations: {}\n",
                file.binary.edge_count(),
                file.converged,
                file.traces.outer_iterations
            ))
        }
        Command::Eval {
            pred,
            truth,
            format,
        } => {
            let record = cmd_eval(&pred, &truth)?;
            Ok(match format {
                EvalFormat::Json => serde_json::to_string_pretty(&record)? + "\n",
                EvalFormat::Csv => eval_csv(&record),
            })
        }
        Command::Sweep {
            grid,
            solver,
            output_dir,
            jobs,
        } => {
            cfg.apply_grid(&grid);
            cfg.apply_solver(&solver);
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            Ok(cmd_sweep(&cfg, jobs)?.summary_csv)
        }
    }
}
