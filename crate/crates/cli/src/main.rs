use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rtgee::cv::mse_cv;
use rtgee::io::{load_dataset, load_scenario, LoadOptions};
use rtgee::simulation::run_cell;
use rtgee::solver::solve;
use rtgee::tuning::{default_lambda_grid, RECOMMENDED_TUKEY_B};
use rtgee::{CorrelationKind, LongitudinalDataset, Method, Problem, ScoreFunction, TuningOptions};

mod output;

use output::{AnalysisReport, CvSummary};

#[derive(Parser)]
#[command(name = "rtgee", version, about = "Robust sparse estimation for longitudinal data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit at a single lambda and score constant.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Thresholding parameter.
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
    },
    /// Select lambda (and the Tukey constant) over a grid.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Tune on the full data, then leave-one-subject-out prediction error
    /// with the tuned values held fixed.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run a Monte Carlo scenario described by a TOML file.
    Simulate {
        /// Scenario file.
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of replicates.
        #[arg(long)]
        replicates: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Long-format CSV: subject,time,y,covariates...
    data: PathBuf,
    /// Prepend an intercept column.
    #[arg(long)]
    intercept: bool,
    /// Use the time value as a covariate.
    #[arg(long)]
    time_covariate: bool,
    /// Recorded in the report; the analysis itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "rtgee")]
    method: Method,
    /// Working correlation: ind, exc, ar1 or run.
    #[arg(long, default_value = "exc")]
    corr: CorrelationKind,
    /// Fixed Tukey constant (RTGEE); otherwise a grid is searched.
    #[arg(long)]
    b: Option<f64>,
    /// Smallest Gaussian efficiency in the Tukey grid.
    #[arg(long, default_value_t = 0.7)]
    b_grid_min_eff: f64,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
}

impl ModelArgs {
    fn options(&self) -> TuningOptions {
        TuningOptions {
            tau: self.tau,
            lambda_grid: self.lambda_grid.clone(),
            b_grid_min_eff: self.b_grid_min_eff,
            fixed_b: self.b,
            max_iter: self.max_iter,
            epsilon: self.epsilon,
            ..TuningOptions::default()
        }
    }

    /// Score used by `fit`.
    fn single_score(&self) -> ScoreFunction {
        match self.method {
            Method::Sgee => ScoreFunction::Identity,
            Method::Rsgee => ScoreFunction::Huber {
                c: rtgee::score::HUBER_DEFAULT_C,
            },
            Method::Rtgee => ScoreFunction::Tukey {
                b: self.b.unwrap_or(RECOMMENDED_TUKEY_B),
            },
        }
    }
}

fn load(args: &DataArgs) -> Result<LongitudinalDataset> {
    let opts = LoadOptions {
        intercept: args.intercept,
        time_covariate: args.time_covariate,
    };
    load_dataset(&args.data, opts).with_context(|| format!("loading {}", args.data.display()))
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RTGEE_THREADS") {
        let n: usize = v.parse().with_context(|| format!("RTGEE_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run_fit(data: &DataArgs, model: &ModelArgs, lambda: f64) -> Result<()> {
    let start = Instant::now();
    let d = load(data)?;
    let opts = model.options();
    let mut config = model.method.fit_config(model.corr, &opts);
    config.lambda = lambda;
    config.score = model.single_score();
    let fit = solve(&d, &config)?;
    if !fit.converged {
        log::warn!("no convergence after {} iterations", fit.iterations);
    }
    let report = AnalysisReport::new("fit", data, model, &d, &fit, Vec::new(), None, start.elapsed().as_secs_f64());
    emit(data.out.as_deref(), &report, None)
}

fn run_tune(data: &DataArgs, model: &ModelArgs, with_cv: bool) -> Result<()> {
    let start = Instant::now();
    let d = load(data)?;
    let opts = model.options();
    let tuned = rtgee::tune(&d, model.method, model.corr, &opts)?;
    let grid = match &opts.lambda_grid {
        Some(g) => g.clone(),
        None => {
            let problem = Problem::new(&d, &model.method.fit_config(model.corr, &opts))?;
            default_lambda_grid(problem.initial(), opts.tau)?
        }
    };
    let scores = model.method.score_candidates(&opts)?;
    let cv = if with_cv {
        let r = mse_cv(&d, model.method, model.corr, &opts, tuned.lambda_opt, tuned.score_opt)?;
        if !r.failed.is_empty() {
            log::warn!("{} of {} folds failed", r.failed.len(), r.folds);
        }
        Some(CvSummary::from(r))
    } else {
        None
    };
    let fit = tuned.best();
    let mut report = AnalysisReport::new(
        if with_cv { "cv" } else { "tune" },
        data,
        model,
        &d,
        fit,
        tuned.path.clone(),
        cv,
        start.elapsed().as_secs_f64(),
    );
    report.lambda_grid = grid;
    report.score_candidates = scores;
    emit(data.out.as_deref(), &report, Some(&tuned.path))
}

fn emit(out: Option<&Path>, report: &AnalysisReport, path: Option<&[rtgee::tuning::PathEntry]>) -> Result<()> {
    match out {
        None => {
            println!("{}", serde_json::to_string_pretty(report)?);
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let file = dir.join("report.json");
            std::fs::write(&file, serde_json::to_string_pretty(report)? + "\n")
                .with_context(|| format!("writing {}", file.display()))?;
            output::write_coefficients(&dir.join("coefficients.csv"), report)?;
            if let Some(path) = path {
                output::write_tuning_path(&dir.join("tuning_path.csv"), path)?;
            }
            eprintln!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn run_simulate(scenario: &Path, seed: Option<u64>, replicates: Option<usize>, out: &Path) -> Result<()> {
    if !scenario.exists() {
        bail!("scenario file {} does not exist", scenario.display());
    }
    let mut s = load_scenario(scenario).with_context(|| format!("reading scenario {}", scenario.display()))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(r) = replicates {
        s.replicates = r;
    }
    let start = Instant::now();
    let cell = run_cell(&s)?;
    let seconds = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    output::write_simulation(out, &s, &cell)?;
    for m in &cell.metrics {
        eprintln!(
            "{:>5}/{:<3} C {:.2} IC {:.2} CF {:.2} MMSPE {:.4} AMSE {:.4}{}",
            m.method,
            m.correlation,
            m.c,
            m.ic,
            m.cf,
            m.mmspe,
            m.amse,
            if m.valid { "" } else { " (invalid)" }
        );
    }
    eprintln!("{} replicates in {seconds:.1}s, wrote {}", s.replicates, out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Fit { data, model, lambda } => run_fit(data, model, *lambda),
        Command::Tune { data, model } => run_tune(data, model, false),
        Command::Cv { data, model } => run_tune(data, model, true),
        Command::Simulate {
            scenario,
            seed,
            replicates,
            out,
        } => run_simulate(scenario, *seed, *replicates, out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
