//! Seeded Monte-Carlo experiment harness.
//!
//! An ensemble executes `n_runs` independent solves of one configured
//! problem/method pair. Run `r` is seeded with `base_seed + r`; from that
//! seed two independent sub-seeds are derived (one for the noise
//! realization, one for the sample path), so by default every run draws both
//! fresh noise and a fresh path. Runs may execute in parallel; aggregation
//! is a deterministic fold in run-index order regardless of completion
//! order, so aggregates are independent of scheduling and of input
//! shuffling.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::noise::{add_absolute_noise, add_relative_noise, NoisyObservation};
use crate::problems::{self, ProblemInstance};
use crate::solvers::{
    landweber, landweber_dp, sgd, svrg, svrg_classic, svrg_dp, Monitor, PathSource, SolveTrace,
    StepSchedule,
};
use crate::stepsize::{plan_from_alpha_beta, StepSizePlan};
use crate::stopping::{apriori_index, AprioriRule};

/// Derives independent (noise, path) sub-seeds from a per-run seed.
pub fn derive_streams(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.next_u64(), rng.next_u64())
}

/// Which problem instance to build.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProblemSpec {
    /// `phillips`, `gravity`, `shaw`, or `file`.
    pub name: String,
    #[serde(default)]
    pub n: usize,
    /// Gravity kernel depth; ignored elsewhere.
    #[serde(default)]
    pub depth: Option<f64>,
    /// Path stem for `name = "file"` (expects `<stem>.csv`, `<stem>.json`,
    /// `<stem>_solution.csv`).
    #[serde(default)]
    pub file: Option<std::path::PathBuf>,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<ProblemInstance> {
        if self.name == "file" {
            let stem = self.file.as_ref().ok_or_else(|| {
                Error::invalid("problem", "`file` problems need a `file` path stem")
            })?;
            crate::fileio::read_problem(stem)
        } else {
            problems::by_name(&self.name, self.n, self.depth)
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Landweber,
    Sgd,
    SvrgClassic,
    Svrg,
    SvrgDp,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Landweber => "landweber",
            Method::Sgd => "sgd",
            Method::SvrgClassic => "svrg-classic",
            Method::Svrg => "svrg",
            Method::SvrgDp => "svrg-dp",
        }
    }

    fn uses_plan(&self) -> bool {
        matches!(self, Method::Svrg | Method::SvrgDp)
    }
}

fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    0.99
}
fn default_m_frac() -> f64 {
    0.1
}

/// Method plus solver parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Update frequency as a fraction of N: `m = max(1, round(m_frac * N))`.
    #[serde(default = "default_m_frac")]
    pub m_frac: f64,
    /// Explicit step size for `landweber` (default `1/||A||^2`), `sgd`
    /// (default `1/L^2`) and `svrg-classic` (required).
    #[serde(default)]
    pub gamma: Option<f64>,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        MethodSpec {
            method,
            alpha: default_alpha(),
            beta: default_beta(),
            m_frac: default_m_frac(),
            gamma: None,
        }
    }

    pub fn resolve_m(&self, n_blocks: usize) -> usize {
        ((self.m_frac * n_blocks as f64).round() as usize).max(1)
    }
}

/// Stopping rule for a run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StopSpec {
    /// Run exactly this many epochs.
    Fixed { epochs: usize },
    /// Discrepancy principle with threshold `tau * delta`.
    Dp { tau: f64 },
    /// A-priori index `n_delta = max(1, round(c * delta^{-p}))`
    /// (`p` defaults to 1, the rate-optimal choice).
    Apriori {
        c: f64,
        #[serde(default)]
        p: Option<f64>,
    },
}

impl StopSpec {
    fn apriori_rule(c: f64, p: Option<f64>) -> Result<AprioriRule> {
        match p {
            None => AprioriRule::rate_optimal(c),
            Some(p) if (p - 1.0).abs() < 1e-15 => AprioriRule::rate_optimal(c),
            Some(p) => AprioriRule::general(c, p),
        }
    }
}

fn default_max_epochs() -> usize {
    100_000
}

/// Full description of a reproducible ensemble.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub method: MethodSpec,
    /// Relative noise level for the per-run perturbation.
    pub delta_rel: f64,
    pub n_runs: usize,
    pub base_seed: u64,
    pub stop: StopSpec,
    /// Cap for discrepancy-gated runs.
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// When set, every run reuses this noise seed (only paths vary); by
    /// default each run draws fresh noise.
    #[serde(default)]
    pub fixed_noise_seed: Option<u64>,
    /// Proceed even when the derived step-size plan is inadmissible.
    #[serde(default)]
    pub force: bool,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::invalid("n_runs", "must be >= 1"));
        }
        if !(self.delta_rel >= 0.0) {
            return Err(Error::invalid(
                "delta_rel",
                format!("must be >= 0, got {}", self.delta_rel),
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs", "must be >= 1"));
        }
        Ok(())
    }
}

/// Outcome of a single run inside an ensemble.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub noise_seed: u64,
    pub path_seed: u64,
    /// Realized noise level of this run.
    pub delta: f64,
    pub stop_index: Option<usize>,
    pub non_termination: bool,
    /// `||x - x_true||^2 / ||x_true||^2` of the final iterate.
    pub final_error_sq: Option<f64>,
    pub wall_time: f64,
    pub residual_norms: Vec<f64>,
    pub errors: Option<Vec<f64>>,
}

/// Five-number boxplot summary plus mean, with whiskers at the most extreme
/// data within `1.5 * IQR` of the box and everything beyond flagged as an
/// outlier. Quartiles use linear interpolation between closest ranks.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxplotStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Name of the pinned quartile convention, recorded in CSV metadata.
pub const QUARTILE_CONVENTION: &str = "linear-interpolation-closest-ranks";

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn summarize_boxplot(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::invalid("values", "boxplot needs a nonempty list"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let q25 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q75 = quantile_sorted(&sorted, 0.75);
    let iqr = q75 - q25;
    let lo_fence = q25 - 1.5 * iqr;
    let hi_fence = q75 + 1.5 * iqr;
    let whisker_low = sorted
        .iter()
        .copied()
        .find(|v| *v >= lo_fence)
        .unwrap_or(sorted[0]);
    let whisker_high = sorted
        .iter()
        .rev()
        .copied()
        .find(|v| *v <= hi_fence)
        .unwrap_or(sorted[sorted.len() - 1]);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|v| *v < lo_fence || *v > hi_fence)
        .collect();
    Ok(BoxplotStats {
        n: values.len(),
        mean,
        median,
        q25,
        q75,
        whisker_low,
        whisker_high,
        outliers,
    })
}

/// Per-epoch statistics of the relative squared error over the ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_error_sq: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Clone, Debug)]
pub struct EnsembleStats {
    /// Present when the true solution is known. Runs that stopped early are
    /// extended by their final (frozen) value so all series align.
    pub per_epoch: Vec<EpochStats>,
    /// Over the runs' stop indices, when a stop rule produced any.
    pub stop_index: Option<BoxplotStats>,
    /// Over the runs' final relative squared errors.
    pub final_error_sq: Option<BoxplotStats>,
    pub mean_wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub config: ExperimentConfig,
    pub plan: Option<StepSizePlan>,
    pub runs: Vec<RunRecord>,
    pub stats: EnsembleStats,
}

/// Builds the step-size plan a method needs, if any, from the operator's
/// cached norms.
pub fn plan_for(
    problem: &ProblemInstance,
    method: &MethodSpec,
) -> Result<Option<StepSizePlan>> {
    if !method.method.uses_plan() {
        return Ok(None);
    }
    let m = method.resolve_m(problem.n_blocks());
    let plan = plan_from_alpha_beta(
        method.alpha,
        method.beta,
        problem.operator.op_norm(),
        problem.operator.block_lipschitz(),
        m,
        problem.n_blocks(),
    )?;
    Ok(Some(plan))
}

/// Executes one solve of `problem` under the given method/stop pair.
///
/// `noisy` carries the realized noise level used by discrepancy and
/// a-priori stopping.
#[allow(clippy::too_many_arguments)]
pub fn execute_run(
    problem: &ProblemInstance,
    method: &MethodSpec,
    stop: &StopSpec,
    plan: Option<&StepSizePlan>,
    noisy: &NoisyObservation,
    path_seed: u64,
    max_epochs: usize,
    monitor: &Monitor<'_>,
) -> Result<SolveTrace> {
    let a = &problem.operator;
    let x0 = Array1::zeros(a.dim());
    let y = &noisy.observation;
    let m = method.resolve_m(a.n_blocks());

    let fixed_epochs = match stop {
        StopSpec::Fixed { epochs } => Some(*epochs),
        StopSpec::Apriori { c, p } => {
            let rule = StopSpec::apriori_rule(*c, *p)?;
            Some(apriori_index(&rule, noisy.delta)?)
        }
        StopSpec::Dp { .. } => None,
    };

    match (method.method, stop) {
        (Method::Landweber, StopSpec::Dp { tau }) => {
            let gamma = method.gamma.unwrap_or_else(|| {
                let op = a.op_norm();
                1.0 / (op * op)
            });
            landweber_dp(a, noisy, &x0, gamma, *tau, max_epochs, monitor)
        }
        (Method::Landweber, _) => {
            let gamma = method.gamma.unwrap_or_else(|| {
                let op = a.op_norm();
                1.0 / (op * op)
            });
            landweber(a, y, &x0, gamma, fixed_epochs.unwrap(), monitor)
        }
        (Method::Sgd, StopSpec::Dp { .. }) => Err(Error::invalid(
            "stop",
            "discrepancy stopping is not supported for sgd; use landweber or svrg",
        )),
        (Method::Sgd, _) => {
            let gamma = method.gamma.unwrap_or_else(|| 1.0 / a.block_lipschitz());
            sgd(
                a,
                y,
                &x0,
                &StepSchedule::Constant(gamma),
                fixed_epochs.unwrap(),
                path_seed,
                monitor,
            )
        }
        (Method::SvrgClassic, StopSpec::Dp { .. }) => Err(Error::invalid(
            "stop",
            "discrepancy stopping is not supported for svrg-classic; use svrg",
        )),
        (Method::SvrgClassic, _) => {
            let gamma = method.gamma.ok_or_else(|| {
                Error::invalid("gamma", "svrg-classic needs an explicit step size")
            })?;
            svrg_classic(
                a,
                y,
                &x0,
                m,
                gamma,
                fixed_epochs.unwrap(),
                PathSource::Seed(path_seed),
                monitor,
            )
        }
        (Method::Svrg | Method::SvrgDp, stop) => {
            let plan = plan.ok_or_else(|| {
                Error::invalid("plan", "svrg methods need a step-size plan")
            })?;
            match stop {
                StopSpec::Dp { tau } => svrg_dp(
                    a,
                    noisy,
                    &x0,
                    m,
                    plan.gamma0,
                    plan.gamma1,
                    *tau,
                    max_epochs,
                    path_seed,
                    monitor,
                ),
                _ => {
                    if method.method == Method::SvrgDp {
                        return Err(Error::invalid(
                            "stop",
                            "svrg-dp requires a dp stop rule (set tau)",
                        ));
                    }
                    svrg(
                        a,
                        y,
                        &x0,
                        m,
                        plan.gamma0,
                        plan.gamma1,
                        fixed_epochs.unwrap(),
                        PathSource::Seed(path_seed),
                        monitor,
                    )
                }
            }
        }
    }
}

/// Runs the full ensemble described by `cfg`.
///
/// Any run failing validation aborts the ensemble, reporting the run index.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<EnsembleResult> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    run_ensemble_on(cfg, &problem)
}

/// Like [`run_ensemble`] but reuses an already-built problem instance.
pub fn run_ensemble_on(
    cfg: &ExperimentConfig,
    problem: &ProblemInstance,
) -> Result<EnsembleResult> {
    cfg.validate()?;
    let plan = plan_for(problem, &cfg.method)?;
    if let Some(p) = &plan {
        if !p.admissible {
            if cfg.force {
                log::warn!(
                    "step-size plan inadmissible (gamma0={}, gamma1={}); proceeding under force",
                    p.gamma0,
                    p.gamma1
                );
            } else {
                return Err(Error::invalid(
                    "plan",
                    "step-size plan is inadmissible; pass force to run anyway",
                ));
            }
        }
    }

    let results: Vec<Result<RunRecord>> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|r| single_run(cfg, problem, plan.as_ref(), r))
        .collect();
    let mut runs = Vec::with_capacity(cfg.n_runs);
    for (r, result) in results.into_iter().enumerate() {
        runs.push(result.map_err(|e| Error::EnsembleRun {
            run: r,
            source: Box::new(e),
        })?);
    }
    let stats = aggregate(&runs);
    Ok(EnsembleResult {
        config: cfg.clone(),
        plan,
        runs,
        stats,
    })
}

fn single_run(
    cfg: &ExperimentConfig,
    problem: &ProblemInstance,
    plan: Option<&StepSizePlan>,
    run_id: usize,
) -> Result<RunRecord> {
    let seed = cfg.base_seed + run_id as u64;
    let (derived_noise_seed, path_seed) = derive_streams(seed);
    let noise_seed = cfg.fixed_noise_seed.unwrap_or(derived_noise_seed);
    let noisy = add_relative_noise(&problem.y_exact, cfg.delta_rel, noise_seed)?;
    let monitor = Monitor::with_truth(&problem.x_true);
    let trace = execute_run(
        problem,
        &cfg.method,
        &cfg.stop,
        plan,
        &noisy,
        path_seed,
        cfg.max_epochs,
        &monitor,
    )?;
    Ok(RunRecord {
        run_id,
        seed,
        noise_seed,
        path_seed,
        delta: noisy.delta,
        stop_index: trace.stop_index,
        non_termination: trace.non_termination,
        final_error_sq: trace.final_error_sq(),
        wall_time: trace.total_wall_time(),
        residual_norms: trace.residual_norms,
        errors: trace.errors,
    })
}

/// Deterministic fold over records in run-id order.
pub fn aggregate(runs: &[RunRecord]) -> EnsembleStats {
    let mut order: Vec<&RunRecord> = runs.iter().collect();
    order.sort_by_key(|r| r.run_id);

    let mut per_epoch = Vec::new();
    if !order.is_empty() && order.iter().all(|r| r.errors.is_some()) {
        let max_len = order
            .iter()
            .map(|r| r.errors.as_ref().unwrap().len())
            .max()
            .unwrap();
        for e in 0..max_len {
            // runs that stopped earlier hold their final value (a closed
            // discrepancy gate freezes the iterate)
            let values: Vec<f64> = order
                .iter()
                .map(|r| {
                    let errs = r.errors.as_ref().unwrap();
                    errs[e.min(errs.len() - 1)]
                })
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let mut sorted = values;
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
            per_epoch.push(EpochStats {
                epoch: e,
                mean_error_sq: mean,
                q25: quantile_sorted(&sorted, 0.25),
                median: quantile_sorted(&sorted, 0.5),
                q75: quantile_sorted(&sorted, 0.75),
            });
        }
    }

    let stops: Vec<f64> = order
        .iter()
        .filter_map(|r| r.stop_index.map(|s| s as f64))
        .collect();
    let stop_index = if stops.is_empty() {
        None
    } else {
        Some(summarize_boxplot(&stops).expect("nonempty"))
    };

    let finals: Vec<f64> = order.iter().filter_map(|r| r.final_error_sq).collect();
    let final_error_sq = if finals.is_empty() {
        None
    } else {
        Some(summarize_boxplot(&finals).expect("nonempty"))
    };

    let mean_wall_time = if order.is_empty() {
        0.0
    } else {
        order.iter().map(|r| r.wall_time).sum::<f64>() / order.len() as f64
    };

    EnsembleStats {
        per_epoch,
        stop_index,
        final_error_sq,
        mean_wall_time,
    }
}

/// One fitted point of the rate check.
#[derive(Clone, Debug)]
pub struct RatePoint {
    pub delta: f64,
    pub n_delta: usize,
    /// Monte-Carlo estimate of `E||x_{n_delta} - x_true||^2` (absolute).
    pub mean_error_sq: f64,
}

#[derive(Clone, Debug)]
pub struct RateCheckResult {
    pub c: f64,
    pub points: Vec<RatePoint>,
    /// Least-squares slope of `log(mean error)` vs `log(delta)`.
    pub slope: f64,
}

/// Convergence-rate experiment on a source-condition instance: for each
/// absolute noise level `delta`, runs an ensemble of split-step SVRG solves
/// stopped at `n_delta = max(1, round(c / delta))` and fits the slope of the
/// mean squared error against `delta` on log-log axes.
pub fn rate_check(
    instance: &ProblemInstance,
    deltas: &[f64],
    c: f64,
    runs_per_delta: usize,
    method: &MethodSpec,
    base_seed: u64,
) -> Result<RateCheckResult> {
    if deltas.len() < 3 {
        return Err(Error::invalid(
            "deltas",
            format!("need at least 3 noise levels, got {}", deltas.len()),
        ));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("deltas", "must be strictly decreasing"));
    }
    if deltas.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::invalid("deltas", "must all be positive"));
    }
    if runs_per_delta == 0 {
        return Err(Error::invalid("runs_per_delta", "must be >= 1"));
    }
    let rule = AprioriRule::rate_optimal(c)?;
    let plan = plan_for(instance, method)?
        .ok_or_else(|| Error::invalid("method", "rate check runs split-step svrg"))?;
    let m = method.resolve_m(instance.n_blocks());
    let x0 = Array1::zeros(instance.dim());

    let mut points = Vec::with_capacity(deltas.len());
    for (di, &delta) in deltas.iter().enumerate() {
        let n_delta = apriori_index(&rule, delta)?;
        let errs: Vec<Result<f64>> = (0..runs_per_delta)
            .into_par_iter()
            .map(|r| {
                let seed = base_seed + (di * runs_per_delta + r) as u64;
                let (noise_seed, path_seed) = derive_streams(seed);
                let noisy = add_absolute_noise(&instance.y_exact, delta, noise_seed)?;
                let trace = svrg(
                    &instance.operator,
                    &noisy.observation,
                    &x0,
                    m,
                    plan.gamma0,
                    plan.gamma1,
                    n_delta,
                    PathSource::Seed(path_seed),
                    &Monitor::default(),
                )?;
                let diff = &trace.final_x - &instance.x_true;
                Ok(diff.dot(&diff))
            })
            .collect();
        let mut sum = 0.0;
        for (r, e) in errs.into_iter().enumerate() {
            sum += e.map_err(|e| Error::EnsembleRun {
                run: di * runs_per_delta + r,
                source: Box::new(e),
            })?;
        }
        points.push(RatePoint {
            delta,
            n_delta,
            mean_error_sq: sum / runs_per_delta as f64,
        });
    }

    let xs: Vec<f64> = points.iter().map(|p| p.delta.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_error_sq.ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    Ok(RateCheckResult { c, points, slope })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - xbar) * (y - ybar);
        den += (x - xbar) * (x - xbar);
    }
    num / den
}

/// One row of the benchmark table: a method at one noise level.
#[derive(Clone, Debug)]
pub struct TableRow {
    pub n: usize,
    pub delta_rel: f64,
    pub method: String,
    pub mean_stop_index: f64,
    pub mean_time_s: f64,
    /// Mean over runs of `||x - x_true||^2 / ||x_true||^2`.
    pub mean_error_sq: f64,
    /// Mean over runs of `||x - x_true|| / ||x_true||`.
    pub mean_error: f64,
}

/// Reproduces the benchmark-table protocol for one problem: Landweber with
/// `gamma = 1/||A||^2` and split-step SVRG with `m = N` and `m = 0.1 N`
/// (`alpha = 1, beta = 0.99`), all stopped by the discrepancy principle.
#[allow(clippy::too_many_arguments)]
pub fn reproduce_table(
    problem: &ProblemSpec,
    delta_rels: &[f64],
    n_runs: usize,
    base_seed: u64,
    tau: f64,
    max_epochs: usize,
) -> Result<Vec<TableRow>> {
    let instance = problem.build()?;
    let mut rows = Vec::new();
    for &delta_rel in delta_rels {
        let variants: [(String, MethodSpec); 3] = [
            (
                "landweber".into(),
                MethodSpec::new(Method::Landweber),
            ),
            ("svrg m=N".into(), {
                let mut ms = MethodSpec::new(Method::SvrgDp);
                ms.m_frac = 1.0;
                ms
            }),
            ("svrg m=0.1N".into(), {
                let mut ms = MethodSpec::new(Method::SvrgDp);
                ms.m_frac = 0.1;
                ms
            }),
        ];
        for (label, method) in variants {
            let cfg = ExperimentConfig {
                problem: problem.clone(),
                method,
                delta_rel,
                n_runs,
                base_seed,
                stop: StopSpec::Dp { tau },
                max_epochs,
                fixed_noise_seed: None,
                force: false,
            };
            let result = run_ensemble_on(&cfg, &instance)?;
            if let Some(bad) = result.runs.iter().find(|r| r.non_termination) {
                return Err(Error::invalid(
                    "max_epochs",
                    format!(
                        "run {} did not reach the discrepancy threshold within {max_epochs} epochs",
                        bad.run_id
                    ),
                ));
            }
            let n_f = result.runs.len() as f64;
            let mean_stop = result
                .runs
                .iter()
                .map(|r| r.stop_index.unwrap_or(0) as f64)
                .sum::<f64>()
                / n_f;
            let mean_err_sq = result
                .runs
                .iter()
                .map(|r| r.final_error_sq.unwrap_or(f64::NAN))
                .sum::<f64>()
                / n_f;
            let mean_err = result
                .runs
                .iter()
                .map(|r| r.final_error_sq.unwrap_or(f64::NAN).sqrt())
                .sum::<f64>()
                / n_f;
            rows.push(TableRow {
                n: instance.n_blocks(),
                delta_rel,
                method: label,
                mean_stop_index: mean_stop,
                mean_time_s: result.stats.mean_wall_time,
                mean_error_sq: mean_err_sq,
                mean_error: mean_err,
            });
        }
    }
    Ok(rows)
}
