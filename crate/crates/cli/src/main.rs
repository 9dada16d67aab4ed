//! `prefixhh`: run private heavy-hitter experiments from the command line.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 infeasible privacy
//! budget, 4 runtime failure. `PREFIXHH_THREADS` caps parallelism.

mod config;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use prefixhh::accountant::{solve_local_epsilon, PrivacyBudget, DEFAULT_TOLERANCE};
use prefixhh::baselines::{
    calibrate_gaussian, calibrate_laplace, run_central, run_triehh, triehhpp_rate, CentralNoiseConfig, TrieHHConfig,
};
use prefixhh::data::{generate_zipf, ZipfSpec};
use prefixhh::engine::{run, run_two_rounds};
use prefixhh::metrics::GlobalDistribution;

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{write_all, Summary};

#[derive(Parser, Debug)]
#[command(name = "prefixhh", version, about = "Private heavy-hitter discovery with a prefix tree")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Solve for the local epsilon meeting an aggregate budget.
    Accountant {
        #[arg(long)]
        eps_agg: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        rounds: usize,
        #[arg(long)]
        devices: u64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Also print the published reference grid next to ours.
        #[arg(long)]
        table: bool,
    },
    /// Generate a synthetic Zipf dataset as TSV.
    Gen {
        #[arg(long)]
        devices: usize,
        #[arg(long)]
        vocab: usize,
        #[arg(long, default_value_t = 1.1)]
        zipf: f64,
        #[arg(long, default_value_t = 8.0)]
        mean: f64,
        #[arg(long, default_value_t = 1)]
        min: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a comparison method on the same tree and data.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        theta: Option<u64>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Noise scale for the central methods; calibrated from the budget
        /// when absent.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Method {
    Triehh,
    Triehhpp,
    CentralLaplace,
    CentralGaussian,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Triehh => "triehh",
            Method::Triehhpp => "triehhpp",
            Method::CentralLaplace => "central-laplace",
            Method::CentralGaussian => "central-gaussian",
        }
    }
}

/// Published local epsilons for eps_agg 0.25, 0.5 and 1 at T = 1..6.
const REFERENCE_EPS_L: [(f64, [f64; 6]); 3] = [
    (0.25, [6.36, 6.05, 5.79, 5.63, 5.35, 5.31]),
    (0.5, [7.18, 6.96, 6.73, 6.48, 6.33, 6.26]),
    (1.0, [8.03, 7.73, 7.58, 7.39, 7.03, 7.018]),
];

fn reference(eps_agg: f64, rounds: usize) -> Option<f64> {
    let (_, row) = REFERENCE_EPS_L.iter().find(|(e, _)| (e - eps_agg).abs() < 1e-12)?;
    row.get(rounds.checked_sub(1)?).copied()
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn is_budget_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<prefixhh::Error>(),
            Some(prefixhh::Error::BudgetTooTight { .. } | prefixhh::Error::InfeasibleTheta { .. })
        )
    })
}

/// Errors while loading inputs are the user's to fix (2); later ones are
/// runtime failures (4). Infeasible budgets are 3 wherever they surface.
fn classify(e: anyhow::Error, loading: bool) -> Failure {
    let code = if is_budget_error(&e) {
        3
    } else if loading || e.downcast_ref::<ConfigError>().is_some() {
        2
    } else {
        4
    };
    Failure { code, error: e }
}

fn setup_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("PREFIXHH_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Failure {
        code: 2,
        error: anyhow::anyhow!("PREFIXHH_THREADS must be a positive integer, got {v:?}"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure {
            code: 4,
            error: e.into(),
        })
}

fn cmd_run(config: &Path, output_dir: Option<PathBuf>) -> Result<(), Failure> {
    let (cfg, prep) = load(config)?;
    let result = if cfg.two_rounds {
        run_two_rounds(&prep.devices, Some(&prep.codebook), &prep.run)
    } else {
        run(&prep.devices, Some(&prep.codebook), &prep.run)
    }
    .map_err(|e| classify(e.into(), false))?;
    let dir = output_dir.unwrap_or_else(|| cfg.output_dir());
    let f = GlobalDistribution::from_devices(&prep.devices);
    let summary = Summary {
        method: if cfg.two_rounds { "opt-two-rounds" } else { "opt" },
        n_devices: prep.devices.len(),
        extra: vec![
            ("dropped_entries", prep.dropped_entries.to_string()),
            ("dropped_deny_words", prep.dropped_deny_words.to_string()),
        ],
    };
    let report = write_all(&dir, &result, &f, &prep.codebook, cfg.window, &summary).map_err(|e| classify(e, false))?;
    println!(
        "discovered {} words ({} false positives), weight ratio {:.4}; outputs in {}",
        report.discovered_count,
        report.fp_count,
        report.weight_ratio,
        dir.display()
    );
    Ok(())
}

fn load(config: &Path) -> Result<(ExperimentConfig, config::Prepared), Failure> {
    let cfg = ExperimentConfig::load(config).map_err(|e| classify(e, true))?;
    let prep = cfg.prepare().map_err(|e| classify(e, true))?;
    Ok((cfg, prep))
}

fn cmd_accountant(
    eps_agg: f64,
    delta: f64,
    rounds: usize,
    devices: u64,
    gamma: f64,
    tolerance: f64,
    table: bool,
) -> Result<(), Failure> {
    let budget = PrivacyBudget::new(eps_agg, delta, rounds, devices)
        .and_then(|b| b.with_sampling_rate(gamma))
        .map_err(|e| classify(e.into(), true))?;
    for w in budget.warnings() {
        eprintln!("warning: {w}");
    }
    let r = solve_local_epsilon(&budget, tolerance).map_err(|e| classify(e.into(), false))?;
    let mut out = std::io::stdout().lock();
    let io = |e: std::io::Error| classify(e.into(), false);
    writeln!(out, "epsilon_local = {:.6}", r.epsilon_local).map_err(io)?;
    writeln!(out, "achieved_epsilon_agg = {:.6}", r.achieved_epsilon_agg).map_err(io)?;
    writeln!(out, "achieved_delta = {:.6e}", r.achieved_delta).map_err(io)?;
    writeln!(out, "epsilon_round = {:.6}", r.epsilon_round).map_err(io)?;
    writeln!(out, "amplified = {}", r.amplified).map_err(io)?;
    writeln!(out, "bound = {}", r.bound_name).map_err(io)?;
    if let Some(p) = reference(eps_agg, rounds) {
        writeln!(out, "reference (numerical bound) epsilon_local = {p}").map_err(io)?;
    }
    if table {
        writeln!(out, "eps_agg\trounds\tepsilon_local\treference (numerical bound)").map_err(io)?;
        for (e, row) in REFERENCE_EPS_L {
            for (t, p) in (1..=6).zip(row) {
                let b = PrivacyBudget::new(e, delta, t, devices)
                    .and_then(|b| b.with_sampling_rate(gamma))
                    .map_err(|e| classify(e.into(), true))?;
                let ours = match solve_local_epsilon(&b, tolerance) {
                    Ok(x) => format!("{:.4}", x.epsilon_local),
                    Err(_) => "infeasible".into(),
                };
                writeln!(out, "{e}\t{t}\t{ours}\t{p}").map_err(io)?;
            }
        }
    }
    Ok(())
}

fn cmd_gen(spec: &ZipfSpec, out: Option<&Path>) -> Result<(), Failure> {
    let data = generate_zipf(spec).map_err(|e| classify(e.into(), true))?;
    match out {
        Some(p) => data.write_tsv(p).map_err(|e| classify(e.into(), false)),
        None => data
            .write_tsv_to(std::io::stdout().lock())
            .context("writing to standard output")
            .map_err(|e| classify(e, false)),
    }
}

struct BaselineArgs {
    method: Method,
    theta: Option<u64>,
    rate: Option<f64>,
    rounds: Option<usize>,
    scale: Option<f64>,
    output_dir: Option<PathBuf>,
}

fn cmd_baseline(config: &Path, a: BaselineArgs) -> Result<(), Failure> {
    let (cfg, mut prep) = load(config)?;
    if let Some(t) = a.rounds {
        if t == 0 {
            return Err(classify(ConfigError("--rounds must be at least 1".into()).into(), true));
        }
        prep.run.rounds = t;
        prep.run.budget = prep.run.budget.with_rounds(t);
    }
    let rounds = prep.run.rounds;
    let (eps_agg, delta) = (prep.run.budget.epsilon_agg, prep.run.budget.delta);
    let mut extra: Vec<(&str, String)> = vec![("dropped_entries", prep.dropped_entries.to_string())];
    let cb = Some(&prep.codebook);
    let result = match a.method {
        Method::Triehh | Method::Triehhpp => {
            let theta = a.theta.or(cfg.baseline.theta).unwrap_or(10);
            let rate = match a.rate.or(cfg.baseline.sampling_rate) {
                Some(r) => r,
                None if a.method == Method::Triehhpp => {
                    triehhpp_rate(eps_agg, delta, rounds, theta as f64).map_err(|e| classify(e.into(), true))?
                }
                None => {
                    return Err(classify(
                        ConfigError("triehh needs a sampling rate (--rate or baseline.sampling_rate)".into()).into(),
                        true,
                    ))
                }
            };
            extra.push(("theta", theta.to_string()));
            extra.push(("sampling_rate", format!("{rate:.6}")));
            run_triehh(&prep.devices, cb, &prep.run, &TrieHHConfig { theta, sampling_rate: rate })
        }
        Method::CentralLaplace | Method::CentralGaussian => {
            let laplace = a.method == Method::CentralLaplace;
            let noise = match a.scale.or(cfg.baseline.scale) {
                Some(s) if laplace => CentralNoiseConfig::laplace(s),
                Some(s) => CentralNoiseConfig::gaussian(s),
                None if laplace => calibrate_laplace(eps_agg, delta, rounds).map_err(|e| classify(e.into(), true))?,
                None => calibrate_gaussian(eps_agg, delta, rounds).map_err(|e| classify(e.into(), true))?,
            };
            extra.push(("noise_scale", format!("{:.6}", noise.scale)));
            extra.push(("noise_std", format!("{:.6}", noise.noise_std())));
            run_central(&prep.devices, cb, &prep.run, &noise)
        }
    }
    .map_err(|e| classify(e.into(), false))?;
    let dir = a.output_dir.unwrap_or_else(|| cfg.output_dir());
    let f = GlobalDistribution::from_devices(&prep.devices);
    let summary = Summary {
        method: a.method.name(),
        n_devices: prep.devices.len(),
        extra,
    };
    let report = write_all(&dir, &result, &f, &prep.codebook, cfg.window, &summary).map_err(|e| classify(e, false))?;
    println!(
        "{}: discovered {} words ({} false positives); outputs in {}",
        a.method.name(),
        report.discovered_count,
        report.fp_count,
        dir.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    setup_threads()?;
    match cli.command {
        Command::Run { config, output_dir } => cmd_run(&config, output_dir),
        Command::Accountant {
            eps_agg,
            delta,
            rounds,
            devices,
            gamma,
            tolerance,
            table,
        } => cmd_accountant(eps_agg, delta, rounds, devices, gamma, tolerance, table),
        Command::Gen {
            devices,
            vocab,
            zipf,
            mean,
            min,
            seed,
            out,
        } => cmd_gen(
            &ZipfSpec {
                n_devices: devices,
                vocab_size: vocab,
                exponent: zipf,
                words_per_device_mean: mean,
                words_per_device_min: min,
                seed,
            },
            out.as_deref(),
        ),
        Command::Baseline {
            config,
            method,
            theta,
            rate,
            rounds,
            scale,
            output_dir,
        } => cmd_baseline(
            &config,
            BaselineArgs {
                method,
                theta,
                rate,
                rounds,
                scale,
                output_dir,
            },
        ),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
