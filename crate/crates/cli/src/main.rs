use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, bail};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use transglasso::Error;
use transglasso::linalg::Matrix;
use transglasso::pipeline::{CvConfig, GridChoice, TransGlassoConfig, TuningGrid, trans_glasso, trans_glasso_cv};
use transglasso::simgen::experiment::PRESETS;
use transglasso::simgen::{ExperimentConfig, ModelId, gen_model, sample_gaussian};
use transglasso::study_data::{build_problem, load_csv};

const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "transglasso",
    version,
    about = "Transfer-learning estimation of sparse precision matrices"
)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the target precision matrix from CSV studies.
    Estimate(EstimateArgs),
    /// Generate a ground truth and sample studies from it.
    Simulate(SimulateArgs),
    /// Run repeated simulations and score every estimator.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct Tuning {
    /// λ_M grid: "auto" or a comma-separated list.
    #[arg(long, default_value = "auto")]
    lambda_m: String,
    /// λ_Ψ grid: "auto" or a comma-separated list.
    #[arg(long, default_value = "auto")]
    lambda_psi: String,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    target: PathBuf,
    /// Source study CSV; repeat for several sources.
    #[arg(long = "sources", num_args = 1..)]
    sources: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Input files start with a header row.
    #[arg(long)]
    header: bool,
    /// Subtract column means before forming covariances.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    center: bool,
    /// Choose the informative sources by cross-validation.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    select_informative: bool,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, env = "TRANSGLASSO_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelId>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    /// One sparsity level, or one per study (target first), comma-separated.
    #[arg(long, value_delimiter = ',')]
    h: Vec<usize>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    nsource: Option<usize>,
    #[arg(long, env = "TRANSGLASSO_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Named configuration; explicit flags override its values.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

fn parse_model(s: &str) -> Result<ModelId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_grid(s: &str) -> anyhow::Result<GridChoice> {
    if s.trim().eq_ignore_ascii_case("auto") {
        return Ok(GridChoice::Auto);
    }
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad grid value {v:?}")))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(|e| Error::Config(format!("{e:#}")))?;
    Ok(GridChoice::Explicit(TuningGrid::from_unsorted(values)?))
}

fn fit_config(t: &Tuning) -> anyhow::Result<TransGlassoConfig> {
    Ok(TransGlassoConfig {
        lambda_m_grid: parse_grid(&t.lambda_m)?,
        lambda_psi_grid: parse_grid(&t.lambda_psi)?,
        ..TransGlassoConfig::default()
    })
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Dense CSV, no header, 17 significant digits.
fn write_matrix(path: &Path, m: &Matrix) -> anyhow::Result<()> {
    let mut w = create_file(path)?;
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))
}

fn cmd_estimate(a: &EstimateArgs) -> anyhow::Result<()> {
    let fit = fit_config(&a.tuning)?;
    let target = load_csv(&a.target, a.header)?;
    let sources = a
        .sources
        .iter()
        .map(|p| load_csv(p, a.header))
        .collect::<Result<Vec<_>, _>>()?;
    let est = if a.select_informative {
        let cfg = CvConfig {
            folds: a.folds,
            seed: a.seed,
            center: a.center,
            fit,
        };
        trans_glasso_cv(&target, &sources, &cfg)?
    } else {
        trans_glasso(&build_problem(&target, &sources, a.center)?, &fit)?
    };
    create_dir(&a.out)?;
    write_matrix(&a.out.join("omega0.csv"), &est.omega0)?;
    write_text(&a.out.join("selection.json"), &serde_json::to_string_pretty(&est)?)?;
    log::info!("λ_M = {}, informative set {:?}", est.lambda_m, est.informative_set);
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let m = &a.model;
    let (Some(model), Some(d), Some(k), Some(n0)) = (m.model, m.d, m.k, m.n0) else {
        return Err(Error::Config("simulate needs --model, --d, --K and --n0".into()).into());
    };
    if k > 0 && m.nsource.is_none() {
        return Err(Error::Config("--nsource is required when K > 0".into()).into());
    }
    let h = if m.h.is_empty() { vec![0] } else { m.h.clone() };
    let seed = m.seed.unwrap_or(0);
    let truth = gen_model(model, d, k, &h, seed)?;
    create_dir(&a.out)?;
    write_matrix(&a.out.join("shared.csv"), &truth.shared)?;
    for (s, omega) in truth.precisions.iter().enumerate() {
        let n = if s == 0 { n0 } else { m.nsource.unwrap_or(0) };
        let data = sample_gaussian(omega, n, transglasso::simgen::derive_seed(seed, &[1, s as u64]))?;
        write_matrix(&a.out.join(format!("omega{s}.csv")), omega)?;
        write_matrix(&a.out.join(format!("study{s}.csv")), data.samples())?;
    }
    let meta = json!({
        "model": model.to_string(),
        "d": d,
        "K": k,
        "n0": n0,
        "nsource": m.nsource,
        "h_per_study": truth.h_per_study,
        "sigma_offset": truth.sigma_offset,
        "seed": seed,
    });
    write_text(&a.out.join("truth.json"), &serde_json::to_string_pretty(&meta)?)
}

fn benchmark_config(a: &BenchmarkArgs) -> anyhow::Result<ExperimentConfig> {
    let m = &a.model;
    let mut cfg = match &a.preset {
        Some(name) => ExperimentConfig::preset(name)?,
        None => {
            let (Some(model), Some(d), Some(k), Some(n0)) = (m.model, m.d, m.k, m.n0) else {
                return Err(Error::Config(format!(
                    "benchmark needs --preset ({}) or --model, --d, --K and --n0",
                    PRESETS.join(", ")
                ))
                .into());
            };
            let h = if m.h.is_empty() { vec![0] } else { m.h.clone() };
            ExperimentConfig::new(model, d, k, n0, m.nsource.unwrap_or(0), h)
        }
    };
    if a.preset.is_some() {
        if let Some(v) = m.model {
            cfg.model = v;
        }
        if let Some(v) = m.d {
            cfg.d = v;
        }
        if let Some(v) = m.k {
            cfg.k = v;
        }
        if let Some(v) = m.n0 {
            cfg.n0 = v;
        }
        if !m.h.is_empty() {
            cfg.h = m.h.clone();
        }
    }
    if let Some(v) = m.nsource {
        cfg.n_source = v;
    }
    if let Some(v) = m.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.reps {
        cfg.repetitions = v;
    }
    if let Some(v) = a.folds {
        cfg.folds = v;
    }
    if !a.estimators.is_empty() {
        cfg.estimators = a.estimators.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    }
    cfg.fit = fit_config(&a.tuning)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_benchmark(a: &BenchmarkArgs) -> anyhow::Result<()> {
    let cfg = benchmark_config(a)?;
    let report = transglasso::simgen::run_experiment(&cfg)?;
    create_dir(&a.out)?;
    let path = a.out.join("report.csv");
    report.write_csv(create_file(&path)?)?;
    write_text(&a.out.join("summary.json"), &report.summary_json()?)?;
    if report.all_failed() {
        return Err(Error::Selection("every estimator failed on every repetition".into()).into());
    }
    for s in &report.summary {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<16} mean {} stderr {} ({} ok, {} failed)",
            s.estimator.name(),
            fmt(s.mean),
            fmt(s.stderr),
            s.n,
            s.failed
        );
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } | Error::Parse { .. } | Error::Dimension(_) | Error::Config(_) => EXIT_INPUT,
                Error::Numeric(_) | Error::Selection(_) => EXIT_SOLVER,
                Error::Contract(_) => EXIT_INTERNAL,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_INPUT;
        }
    }
    EXIT_INTERNAL
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
