//! `osde`: density transport runs, benchmark sweeps and amplitude-estimation
//! experiments from the command line.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 when a
//! computation fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use osde_core::bench::{self, ClassicalMode, Method};
use osde_core::legendre;
use osde_core::pipeline;
use osde_core::qae::{self, QaeBackend};
use osde_core::{rbm, seed};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::Accounting;

const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Parser, Debug)]
#[command(
    name = "osde",
    version,
    about = "Legendre-series density transport with simulated amplitude estimation"
)]
struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = "osde-out")]
    out_dir: PathBuf,
    /// Units for query and depth totals in plot data.
    #[arg(long, global = true, value_enum, default_value_t = Accounting::UpUnits)]
    accounting: Accounting,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transport the density through the time grid once.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `pipeline.N`.
        #[arg(long = "N")]
        n: Option<usize>,
    },
    /// Sweep over N and compare methods.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `bench.ns`, comma separated.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        /// Overrides `bench.runs`.
        #[arg(long)]
        runs: Option<usize>,
        /// Overrides `bench.methods`, comma separated.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Repeated amplitude estimation of a fixed amplitude.
    Qae {
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        eps: f64,
        /// Shots per round.
        #[arg(long = "R", default_value_t = 12)]
        shots: u64,
        /// Depth exponent of the low-depth schedule.
        #[arg(long)]
        beta: Option<f64>,
        /// Derive the depth exponent from this many time steps.
        #[arg(long = "N")]
        n: Option<u64>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Tabulate the transition density from a start point.
    Rbm {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dt: f64,
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Project a test function onto the Legendre basis.
    Project {
        #[arg(long, value_enum)]
        function: TestFunction,
        #[arg(long = "L", default_value_t = 5)]
        degree: usize,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Rqae,
    Lqae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TestFunction {
    /// `exp(x_1 + … + x_d)`
    Exp,
    /// `x_1`
    Identity,
    /// The uniform density `2^-d`
    Uniform,
    /// `exp(−|x|² / 0.18)`
    Gaussian,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Pipeline { config, n } => cmd_pipeline(cli, config.as_deref(), *n),
        Command::Bench {
            config,
            ns,
            runs,
            methods,
        } => cmd_bench(cli, config.as_deref(), ns.clone(), *runs, methods.clone()),
        Command::Qae {
            variant,
            a,
            eps,
            shots,
            beta,
            n,
            trials,
        } => cmd_qae(cli.seed, *variant, *a, *eps, *shots, *beta, *n, *trials),
        Command::Rbm {
            config,
            dt,
            x0,
            points,
        } => cmd_rbm(config.as_deref(), *dt, *x0, *points),
        Command::Project {
            function,
            degree,
            d,
            tol,
        } => cmd_project(*function, *degree, *d, *tol),
    }
}

fn cmd_pipeline(cli: &Cli, config: Option<&Path>, n: Option<usize>) -> Result<(), Failure> {
    let rc = RunConfig::load(config).map_err(usage)?;
    let n = n.unwrap_or(rc.pipeline.n);
    let cfg = rc.pipeline_config(n).map_err(usage)?;
    let traj = match pipeline::run(&cfg, cli.seed) {
        Ok(t) => t,
        Err(f) => {
            // keep what was computed
            let _ = output::write_trajectory(&cli.out_dir, &f.partial);
            return Err(Failure::Runtime(anyhow::Error::new(f)));
        }
    };
    output::write_trajectory(&cli.out_dir, &traj)?;
    let q_hat = traj.exceed_probability().context("reading out q_hat")?;
    let t_end = *cfg.times.last().expect("validated");
    let q_ref = cfg
        .kernel
        .exceed_probability(cfg.x0[0], cfg.times[0], t_end, bench::REFERENCE_TOL)
        .context("reference probability")?;
    println!("q_hat = {q_hat}");
    println!("reference = {q_ref}");
    println!("abs_err = {}", (q_hat - q_ref).abs());
    println!("total_queries = {}", traj.total_queries);
    println!("max_depth = {}", traj.max_depth);
    let not_bona_fide = traj.steps.iter().filter(|s| !s.bona_fide).count();
    println!("steps_with_negative_density = {not_bona_fide}");
    eprintln!(
        "floored transition density evaluations: {}",
        rbm::floor_event_count()
    );
    Ok(())
}

fn cmd_bench(
    cli: &Cli,
    config: Option<&Path>,
    ns: Option<Vec<usize>>,
    runs: Option<usize>,
    methods: Option<Vec<String>>,
) -> Result<(), Failure> {
    let mut rc = RunConfig::load(config).map_err(usage)?;
    if let Some(ns) = ns {
        rc.bench.ns = ns;
    }
    if let Some(r) = runs {
        rc.bench.runs = r;
    }
    if let Some(ms) = methods {
        rc.bench.methods = ms
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<_, _>>()
            .map_err(|e| usage(e.to_string()))?;
    }
    let sweep = rc.sweep_config().map_err(usage)?;
    let records = bench::run_sweep(&sweep, cli.seed).context("sweep")?;
    for r in records.iter().filter(|r| r.failed()) {
        eprintln!(
            "cell {} N={} run={} failed: {}",
            r.method, r.n, r.run, r.error
        );
    }
    let analytic_rmse = match sweep.classical_mode {
        ClassicalMode::Analytic => Some(sweep.classical_target_rmse),
        ClassicalMode::Sampled { .. } => None,
    };
    let summary = bench::summarize(&records, analytic_rmse).context("summary")?;
    output::write_bench(&cli.out_dir, &records, &summary, cli.accounting)?;
    for f in &summary.fits {
        let (q, d) = match cli.accounting {
            Accounting::UpUnits => (f.queries.slope, f.depth.slope),
            Accounting::RawGrover => (f.queries_raw.slope, f.depth_raw.slope),
        };
        println!(
            "{:<12} queries slope {:.3}  depth slope {:.3}  rmse slope {:.3}",
            f.method.to_string(),
            q,
            d,
            f.rmse.slope
        );
    }
    println!("wrote {}", cli.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct Trial {
    estimate: f64,
    total_queries: u64,
    max_depth: u64,
}

#[derive(Serialize)]
struct QaeReport {
    variant: &'static str,
    a: f64,
    eps: f64,
    beta: Option<f64>,
    shots: u64,
    trials: Vec<Trial>,
    mean: f64,
    bias: f64,
    rmse: f64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_qae(
    master: u64,
    variant: Variant,
    a: f64,
    eps: f64,
    shots: u64,
    beta: Option<f64>,
    n: Option<u64>,
    trials: usize,
) -> Result<(), Failure> {
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(usage(format!("--a must lie in [0, 1], got {a}")));
    }
    let backend = match variant {
        Variant::Rqae => {
            if beta.is_some() || n.is_some() {
                return Err(usage("--beta and --N apply to --variant lqae only"));
            }
            QaeBackend::Rqae { eps, shots }
        }
        Variant::Lqae => {
            let beta = match (beta, n) {
                (Some(b), None) => b,
                (None, Some(n)) => qae::choose_beta(n, eps).map_err(|e| usage(e.to_string()))?,
                (Some(_), Some(_)) => return Err(usage("give either --beta or --N, not both")),
                (None, None) => return Err(usage("--variant lqae needs --beta or --N")),
            };
            QaeBackend::Lqae { eps, beta, shots }
        }
    };
    backend.validate().map_err(|e| usage(e.to_string()))?;

    let outcomes: Vec<Trial> = (0..trials)
        .map(|i| {
            let mut rng = seed::stream(seed::derive_seed(master, &[i as u64]));
            backend.estimate(a, &mut rng).map(|o| Trial {
                estimate: o.estimate,
                total_queries: o.total_queries,
                max_depth: o.max_depth,
            })
        })
        .collect::<Result<_, _>>()
        .context("estimation")?;
    let k = trials as f64;
    let mean = outcomes.iter().map(|t| t.estimate).sum::<f64>() / k;
    let rmse = (outcomes
        .iter()
        .map(|t| (t.estimate - a).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    let report = QaeReport {
        variant: match variant {
            Variant::Rqae => "rqae",
            Variant::Lqae => "lqae",
        },
        a,
        eps,
        beta: match backend {
            QaeBackend::Lqae { beta, .. } => Some(beta),
            _ => None,
        },
        shots,
        trials: outcomes,
        mean,
        bias: mean - a,
        rmse,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).context("serializing report")?
    );
    Ok(())
}

fn cmd_rbm(config: Option<&Path>, dt: f64, x0: f64, points: usize) -> Result<(), Failure> {
    let rc = RunConfig::load(config).map_err(usage)?;
    let k = rc.kernel;
    k.validate().map_err(|e| usage(e.to_string()))?;
    if !(dt > 0.0) {
        return Err(usage("--dt must be positive"));
    }
    if points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    if !(k.lower..=k.upper).contains(&x0) {
        return Err(usage(format!(
            "--x0 must lie in [{}, {}]",
            k.lower, k.upper
        )));
    }
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["x", "density"]).context("writing table")?;
    let last = (points - 1) as f64;
    for i in 0..points {
        let x = k.lower + (k.upper - k.lower) * i as f64 / last;
        let p = k
            .transition_density(x0, 0.0, x, dt)
            .context("transition density")?;
        w.write_record([x.to_string(), p.to_string()])
            .context("writing table")?;
    }
    w.flush().context("writing table")?;
    Ok(())
}

fn cmd_project(function: TestFunction, degree: usize, d: usize, tol: f64) -> Result<(), Failure> {
    if d == 0 || d > 3 {
        return Err(usage("--d must be 1, 2 or 3"));
    }
    if !(tol > 0.0) {
        return Err(usage("--tol must be positive"));
    }
    let uniform = 0.5f64.powi(d as i32);
    let f = move |x: &[f64]| match function {
        TestFunction::Exp => x.iter().sum::<f64>().exp(),
        TestFunction::Identity => x[0],
        TestFunction::Uniform => uniform,
        TestFunction::Gaussian => (-x.iter().map(|v| v * v).sum::<f64>() / 0.18).exp(),
    };
    let series = legendre::project(f, d, degree, tol).context("projection")?;
    println!(
        "{}",
        serde_json::to_string(&series).context("serializing series")?
    );
    Ok(())
}
