//! Command-line front end: `generate`, `solve`, `ensemble`, `rate-check`
//! and `reproduce-table`.
//!
//! Exit codes: 0 on success, 2 on validation errors (bad flags, parameter
//! bounds, inadmissible plans without `--force`), 1 on runtime failures.
//! Every CSV contains a metadata block echoing the resolved configuration
//! and all seeds, so any output can be regenerated bit-identically.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fileio;
use crate::harness::{
    self, derive_streams, ExperimentConfig, Method, MethodSpec, ProblemSpec, StopSpec,
    QUARTILE_CONVENTION,
};
use crate::linop::Observation;
use crate::noise::{add_relative_noise, GAUSSIAN_SAMPLER};
use crate::problems;
use crate::solvers::Monitor;
use crate::stepsize::{dp_constant_c1, StepSizePlan};

#[derive(Parser, Debug)]
#[command(
    name = "svrg-reg",
    version,
    about = "Stochastic variance-reduced iterative regularization benchmark"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a discretized test problem to disk.
    Generate(GenerateArgs),
    /// Run one solver on one noisy instance and write a per-epoch CSV.
    Solve(SolveArgs),
    /// Run a seeded ensemble described by a JSON config file.
    Ensemble(EnsembleArgs),
    /// Fit the convergence-rate slope on a synthetic source-condition
    /// instance.
    RateCheck(RateCheckArgs),
    /// Regenerate the benchmark table (Landweber vs SVRG under the
    /// discrepancy principle) for one problem.
    ReproduceTable(ReproduceTableArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// phillips | gravity | shaw
    #[arg(long)]
    pub problem: String,
    #[arg(long)]
    pub n: usize,
    /// Gravity kernel depth (default 0.25).
    #[arg(long)]
    pub depth: Option<f64>,
    /// Output path stem; writes <stem>.csv, <stem>.json and
    /// <stem>_solution.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// phillips | gravity | shaw | file
    #[arg(long)]
    pub problem: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub depth: Option<f64>,
    /// Path stem of a stored problem (for --problem file).
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Relative noise level.
    #[arg(long, default_value_t = 0.01)]
    pub delta_rel: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.99)]
    pub beta: f64,
    /// Update frequency as a fraction of N: m = max(1, round(m_frac * N)).
    #[arg(long, default_value_t = 0.1)]
    pub m_frac: f64,
    /// Explicit step size (landweber, sgd, svrg-classic).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Discrepancy-principle threshold factor (> 1).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Epoch count for fixed-length runs (epoch 0 is also recorded).
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Safety cap for discrepancy-gated runs.
    #[arg(long, default_value_t = 100_000)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stopping rule: `apriori:c[:p]` or `dp:tau`. Defaults to a fixed
    /// epoch count (or `dp` for --method svrg-dp with --tau).
    #[arg(long)]
    pub stop_rule: Option<String>,
    /// Run even with an inadmissible step-size plan (never overrides
    /// tau > 1).
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// JSON experiment config (schema documented in the README).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for runs.csv, epochs.csv and boxplot.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct RateCheckArgs {
    /// Base problem providing the operator.
    #[arg(long, default_value = "phillips")]
    pub problem: String,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long)]
    pub depth: Option<f64>,
    /// Comma-separated absolute noise levels, strictly decreasing.
    #[arg(long, default_value = "1e-1,1e-2,1e-3")]
    pub deltas: String,
    /// Stopping constant: n_delta = max(1, round(c / delta)).
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.99)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub m_frac: f64,
    /// Scale of the random source element defining the synthetic truth.
    #[arg(long, default_value_t = 1.0)]
    pub lambda_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional CSV output of the per-delta table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReproduceTableArgs {
    #[arg(long, default_value = "phillips")]
    pub problem: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub depth: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    /// Comma-separated relative noise levels.
    #[arg(long, default_value = "1e-1,1e-2,1e-3")]
    pub delta_rels: String,
    #[arg(long, default_value_t = 1.01)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub max_epochs: usize,
    /// Optional CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `apriori:c[:p]` / `dp:tau`.
pub fn parse_stop_rule(s: &str) -> Result<StopSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = |msg: String| Error::invalid("stop-rule", msg);
    match parts.as_slice() {
        ["dp", tau] => {
            let tau: f64 = tau
                .parse()
                .map_err(|_| bad(format!("bad tau in `{s}`")))?;
            if !(tau > 1.0) {
                return Err(bad(format!("dp requires tau > 1, got {tau}")));
            }
            Ok(StopSpec::Dp { tau })
        }
        ["apriori", c] => {
            let c: f64 = c.parse().map_err(|_| bad(format!("bad c in `{s}`")))?;
            Ok(StopSpec::Apriori { c, p: None })
        }
        ["apriori", c, p] => {
            let c: f64 = c.parse().map_err(|_| bad(format!("bad c in `{s}`")))?;
            let p: f64 = p.parse().map_err(|_| bad(format!("bad p in `{s}`")))?;
            Ok(StopSpec::Apriori { c, p: Some(p) })
        }
        _ => Err(bad(format!(
            "expected `apriori:c[:p]` or `dp:tau`, got `{s}`"
        ))),
    }
}

fn parse_f64_list(name: &'static str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(name, format!("bad value `{t}`")))
        })
        .collect()
}

/// Resolved solve configuration echoed into the CSV metadata block.
#[derive(Serialize)]
struct SolveEcho<'a> {
    method: &'a str,
    problem: &'a str,
    n: usize,
    depth: Option<f64>,
    delta_rel: f64,
    alpha: f64,
    beta: f64,
    m_frac: f64,
    m: usize,
    gamma: Option<f64>,
    stop: &'a StopSpec,
    epochs: usize,
    max_epochs: usize,
    seed: u64,
    noise_seed: u64,
    path_seed: u64,
    realized_delta: f64,
    gamma0: Option<f64>,
    gamma1: Option<f64>,
    admissible: Option<bool>,
    c0: Option<f64>,
    c1: Option<f64>,
    force: bool,
}

fn admissibility_error(plan: &StepSizePlan) -> Error {
    let mi = 1.0 - plan.gamma1 * plan.block_lipschitz;
    let mo = 2.0 * plan.gamma0
        - plan.gamma0 * plan.gamma0 * plan.op_norm * plan.op_norm
        - 2.0 * plan.m as f64 * plan.gamma1 * plan.gamma1 * plan.block_lipschitz
            / plan.n_blocks as f64;
    Error::invalid(
        "plan",
        format!(
            "step-size plan inadmissible (1 - gamma1 L = {mi}, \
             2 gamma0 - gamma0^2 ||A||^2 - 2 m gamma1^2 L / N = {mo}); \
             pass --force to run anyway"
        ),
    )
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let p = problems::by_name(&args.problem, args.n, args.depth)?;
    fileio::write_problem(&p, &args.out)?;
    println!(
        "wrote {} (n={}) to {}{{.csv,.json,_solution.csv}}",
        p.meta.name,
        p.meta.n,
        args.out.display()
    );
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let spec = ProblemSpec {
        name: args.problem.clone(),
        n: args.n,
        depth: args.depth,
        file: args.file.clone(),
    };
    let problem = spec.build()?;

    let stop = match &args.stop_rule {
        Some(s) => parse_stop_rule(s)?,
        None => match (args.method, args.tau) {
            (Method::SvrgDp, Some(tau)) => {
                if !(tau > 1.0) {
                    return Err(Error::invalid("tau", format!("must be > 1, got {tau}")));
                }
                StopSpec::Dp { tau }
            }
            (Method::SvrgDp, None) => {
                return Err(Error::invalid(
                    "tau",
                    "svrg-dp needs --tau (> 1) or --stop-rule dp:tau",
                ))
            }
            _ => StopSpec::Fixed {
                epochs: args.epochs,
            },
        },
    };

    let method = MethodSpec {
        method: args.method,
        alpha: args.alpha,
        beta: args.beta,
        m_frac: args.m_frac,
        gamma: args.gamma,
    };

    let plan = harness::plan_for(&problem, &method)?;
    if let Some(p) = &plan {
        if !p.admissible {
            if args.force {
                log::warn!("running with an inadmissible plan under --force");
            } else {
                return Err(admissibility_error(p));
            }
        }
    }
    let c1 = match (&plan, &stop) {
        (Some(p), StopSpec::Dp { tau }) => {
            let c1 = dp_constant_c1(p, *tau)?;
            if c1 <= 0.0 {
                log::warn!(
                    "dp constant c1 = {c1} is not positive; finite termination is not guaranteed"
                );
            }
            Some(c1)
        }
        _ => None,
    };

    let (noise_seed, path_seed) = derive_streams(args.seed);
    let noisy = add_relative_noise(&problem.y_exact, args.delta_rel, noise_seed)?;
    let monitor = Monitor::with_truth(&problem.x_true);
    let trace = harness::execute_run(
        &problem,
        &method,
        &stop,
        plan.as_ref(),
        &noisy,
        path_seed,
        args.max_epochs,
        &monitor,
    )?;

    let echo = SolveEcho {
        method: args.method.name(),
        problem: &args.problem,
        n: problem.n_blocks(),
        depth: problem.meta.depth,
        delta_rel: args.delta_rel,
        alpha: args.alpha,
        beta: args.beta,
        m_frac: args.m_frac,
        m: method.resolve_m(problem.n_blocks()),
        gamma: args.gamma,
        stop: &stop,
        epochs: args.epochs,
        max_epochs: args.max_epochs,
        seed: args.seed,
        noise_seed,
        path_seed,
        realized_delta: noisy.delta,
        gamma0: plan.as_ref().map(|p| p.gamma0),
        gamma1: plan.as_ref().map(|p| p.gamma1),
        admissible: plan.as_ref().map(|p| p.admissible),
        c0: plan.as_ref().and_then(|p| p.c0),
        c1,
        force: args.force,
    };
    let config_json = serde_json::to_string(&echo).expect("echo serializes");
    let metadata = [
        ("svrg-reg", crate::VERSION.to_string()),
        ("config", config_json),
        (
            "seeds",
            format!(
                "seed={} noise_seed={} path_seed={}",
                args.seed, noise_seed, path_seed
            ),
        ),
        ("noise-algorithm", GAUSSIAN_SAMPLER.to_string()),
    ];
    fileio::write_trace_csv(&trace, &metadata, &args.out)?;

    let last_err = trace
        .final_error_sq()
        .map(|e| format!("{e:.6e}"))
        .unwrap_or_else(|| "n/a".into());
    match trace.stop_index {
        Some(s) => println!(
            "stopped at epoch {s} (residual {:.6e} <= tau*delta); final relative_error_sq {last_err}",
            trace.residual_norms[s]
        ),
        None if trace.non_termination => println!(
            "gate never closed within {} epochs; final relative_error_sq {last_err}",
            args.max_epochs
        ),
        None => println!(
            "ran {} epochs; final relative_error_sq {last_err}",
            trace.epochs_recorded() - 1
        ),
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_ensemble(args: &EnsembleArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| Error::Io {
        path: args.config.clone(),
        source,
    })?;
    let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: args.config.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let result = harness::run_ensemble(&cfg)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    let config_json = serde_json::to_string(&cfg).expect("config serializes");
    let plan_echo = result
        .plan
        .as_ref()
        .map(|p| {
            format!(
                "gamma0={} gamma1={} admissible={}",
                fileio::fmt_f64(p.gamma0),
                fileio::fmt_f64(p.gamma1),
                p.admissible
            )
        })
        .unwrap_or_else(|| "none".into());
    let metadata = [
        ("svrg-reg", crate::VERSION.to_string()),
        ("config", config_json),
        ("seeds", format!("base_seed={}", cfg.base_seed)),
        ("noise-algorithm", GAUSSIAN_SAMPLER.to_string()),
        ("quartile-convention", QUARTILE_CONVENTION.to_string()),
        ("plan", plan_echo),
    ];

    fileio::write_runs_csv(&result.runs, &metadata, &args.out_dir.join("runs.csv"))?;
    fileio::write_epochs_csv(&result, &metadata, &args.out_dir.join("epochs.csv"))?;
    let mut box_entries = Vec::new();
    if let Some(s) = &result.stats.stop_index {
        box_entries.push(("stop_index", s));
    }
    if let Some(s) = &result.stats.final_error_sq {
        box_entries.push(("final_relative_error_sq", s));
    }
    fileio::write_boxplot_csv(&box_entries, &metadata, &args.out_dir.join("boxplot.csv"))?;

    println!(
        "{} runs of {} on {}: mean wall time {:.4}s",
        cfg.n_runs,
        cfg.method.method.name(),
        cfg.problem.name,
        result.stats.mean_wall_time
    );
    if let Some(s) = &result.stats.stop_index {
        println!(
            "stop_index: mean {:.2}, median {}, q25 {}, q75 {}",
            s.mean, s.median, s.q25, s.q75
        );
    }
    if let Some(s) = &result.stats.final_error_sq {
        println!(
            "final relative_error_sq: mean {:.6e}, median {:.6e}",
            s.mean, s.median
        );
    }
    println!("wrote {}/{{runs,epochs,boxplot}}.csv", args.out_dir.display());
    Ok(())
}

fn cmd_rate_check(args: &RateCheckArgs) -> Result<()> {
    let deltas = parse_f64_list("deltas", &args.deltas)?;
    let base = problems::by_name(&args.problem, args.n, args.depth)?;
    let (lambda_seed, run_seed) = derive_streams(args.seed);

    // seeded smooth source element lambda = scale * A a, so the truth
    // satisfies the benchmark source condition and its bias decays fast
    // enough for the rate to be visible at these noise levels
    let mut rng = ChaCha8Rng::seed_from_u64(lambda_seed);
    let a_vec = Array1::from_shape_fn(base.operator.dim(), |_| {
        args.lambda_scale * rng.sample::<f64, _>(StandardNormal)
    });
    let lam = base.operator.apply(&a_vec)?.into_stacked();
    let lambda = Observation::from_stacked(base.operator.structure().clone(), lam)?;
    let x0 = Array1::zeros(base.operator.dim());
    let instance = problems::synthetic_source_instance(base.operator.clone(), &lambda, &x0)?;

    let method = MethodSpec {
        method: Method::Svrg,
        alpha: args.alpha,
        beta: args.beta,
        m_frac: args.m_frac,
        gamma: None,
    };
    let result = harness::rate_check(&instance, &deltas, args.c, args.runs, &method, run_seed)?;

    println!("rate check on {} (n={}):", args.problem, args.n);
    println!("{:>12} {:>8} {:>16}", "delta", "n_delta", "mean_error_sq");
    for p in &result.points {
        println!(
            "{:>12.4e} {:>8} {:>16.8e}",
            p.delta, p.n_delta, p.mean_error_sq
        );
    }
    println!("fitted slope of log(error) vs log(delta): {:.4}", result.slope);

    if let Some(out) = &args.out {
        let mut w = std::io::BufWriter::new(std::fs::File::create(out).map_err(|source| {
            Error::Io {
                path: out.clone(),
                source,
            }
        })?);
        use std::io::Write;
        (|| -> std::io::Result<()> {
            fileio::write_metadata(
                &mut w,
                &[
                    ("svrg-reg", crate::VERSION.to_string()),
                    (
                        "config",
                        format!(
                            "{{\"problem\":\"{}\",\"n\":{},\"c\":{},\"runs\":{},\"seed\":{},\"lambda_scale\":{}}}",
                            args.problem, args.n, args.c, args.runs, args.seed, args.lambda_scale
                        ),
                    ),
                    ("slope", fileio::fmt_f64(result.slope)),
                ],
            )?;
            writeln!(w, "delta,n_delta,mean_error_sq")?;
            for p in &result.points {
                writeln!(
                    w,
                    "{},{},{}",
                    fileio::fmt_f64(p.delta),
                    p.n_delta,
                    fileio::fmt_f64(p.mean_error_sq)
                )?;
            }
            w.flush()
        })()
        .map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn cmd_reproduce_table(args: &ReproduceTableArgs) -> Result<()> {
    let delta_rels = parse_f64_list("delta-rels", &args.delta_rels)?;
    let spec = ProblemSpec {
        name: args.problem.clone(),
        n: args.n,
        depth: args.depth,
        file: None,
    };
    let rows = harness::reproduce_table(
        &spec,
        &delta_rels,
        args.runs,
        args.seed,
        args.tau,
        args.max_epochs,
    )?;

    println!(
        "{:>6} {:>10} {:>14} {:>12} {:>10} {:>14} {:>14}",
        "N", "delta_rel", "method", "iteration", "time(s)", "rel_error_sq", "rel_error"
    );
    for r in &rows {
        println!(
            "{:>6} {:>10.0e} {:>14} {:>12.2} {:>10.4} {:>14.4e} {:>14.4e}",
            r.n, r.delta_rel, r.method, r.mean_stop_index, r.mean_time_s, r.mean_error_sq, r.mean_error
        );
    }

    if let Some(out) = &args.out {
        let mut w = std::io::BufWriter::new(std::fs::File::create(out).map_err(|source| {
            Error::Io {
                path: out.clone(),
                source,
            }
        })?);
        use std::io::Write;
        (|| -> std::io::Result<()> {
            fileio::write_metadata(
                &mut w,
                &[
                    ("svrg-reg", crate::VERSION.to_string()),
                    (
                        "config",
                        format!(
                            "{{\"problem\":\"{}\",\"n\":{},\"runs\":{},\"tau\":{},\"seed\":{}}}",
                            args.problem, args.n, args.runs, args.tau, args.seed
                        ),
                    ),
                    ("quartile-convention", QUARTILE_CONVENTION.to_string()),
                ],
            )?;
            writeln!(
                w,
                "n,delta_rel,method,mean_stop_index,mean_time_s,mean_relative_error_sq,mean_relative_error"
            )?;
            for r in &rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    r.n,
                    fileio::fmt_f64(r.delta_rel),
                    r.method,
                    fileio::fmt_f64(r.mean_stop_index),
                    fileio::fmt_f64(r.mean_time_s),
                    fileio::fmt_f64(r.mean_error_sq),
                    fileio::fmt_f64(r.mean_error)
                )?;
            }
            w.flush()
        })()
        .map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

/// Dispatches a parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Ensemble(args) => cmd_ensemble(args),
        Command::RateCheck(args) => cmd_rate_check(args),
        Command::ReproduceTable(args) => cmd_reproduce_table(args),
    }
}
