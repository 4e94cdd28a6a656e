//! Iterative solvers: Landweber, SGD, classic SVRG, split-step SVRG, its
//! dual reformulation, and SVRG gated by the discrepancy principle.
//!
//! All stochastic solvers are driven either by a 64-bit seed (the sample
//! path is generated with the pinned ChaCha8 generator and recorded in the
//! trace) or by an explicit [`SamplePath`] that is replayed index by index,
//! so a run is completely determined by its inputs and replays
//! bit-identically.
//!
//! Epoch accounting: a trace row is written per epoch, including epoch 0
//! for the initial guess. One SVRG epoch is a full-gradient evaluation plus
//! `m` inner block steps (`N + m` block applications); one SGD "epoch"
//! is defined as `N` single-block steps so cross-method plots share an
//! x-axis; one Landweber epoch is one full iteration (`N` block
//! applications).

use std::time::Instant;

use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linop::{BlockOperator, Observation};
use crate::noise::NoisyObservation;

/// The realized sequence of random block indices `i_{n,k}`, ordered by
/// `(epoch, inner step)`. A path fully determines a stochastic run.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    /// Zero-based block indices, `epoch * m + k` ordering.
    pub indices: Vec<u32>,
    /// Seed of the generator that produced the path, when one was used.
    pub seed: Option<u64>,
    /// Inner steps per epoch.
    pub m: usize,
}

impl SamplePath {
    /// Draws `epochs * m` indices uniformly from `{0, ..., n_blocks - 1}`
    /// with the pinned generator, one per inner step in loop order.
    pub fn generate(seed: u64, epochs: usize, m: usize, n_blocks: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices = (0..epochs * m)
            .map(|_| rng.random_range(0..n_blocks as u32))
            .collect();
        SamplePath {
            indices,
            seed: Some(seed),
            m,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn validate(&self, needed: usize, n_blocks: usize) -> Result<()> {
        if self.indices.len() < needed {
            return Err(Error::PathTooShort {
                needed,
                available: self.indices.len(),
            });
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i as usize >= n_blocks) {
            return Err(Error::BlockIndexOutOfRange {
                index: bad as usize,
                n_blocks,
            });
        }
        Ok(())
    }
}

/// Either a seed (path generated and recorded) or an explicit path
/// (replayed exactly).
#[derive(Clone, Debug)]
pub enum PathSource<'a> {
    Seed(u64),
    Path(&'a SamplePath),
}

/// Per-step size schedule for SGD.
#[derive(Clone, Copy, Debug)]
pub enum StepSchedule {
    Constant(f64),
    /// `gamma_j = scale / (j + 1)^exponent` over the global step count `j`.
    Decaying { scale: f64, exponent: f64 },
}

impl StepSchedule {
    fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant(c) if c > 0.0 => Ok(()),
            StepSchedule::Constant(c) => Err(Error::invalid(
                "step_schedule",
                format!("constant step must be > 0, got {c}"),
            )),
            StepSchedule::Decaying { scale, exponent } if scale > 0.0 && exponent >= 0.0 => {
                let _ = exponent;
                Ok(())
            }
            StepSchedule::Decaying { scale, exponent } => Err(Error::invalid(
                "step_schedule",
                format!("need scale > 0 and exponent >= 0, got scale={scale}, exponent={exponent}"),
            )),
        }
    }

    fn step(&self, j: usize) -> f64 {
        match *self {
            StepSchedule::Constant(c) => c,
            StepSchedule::Decaying { scale, exponent } => {
                scale / ((j + 1) as f64).powf(exponent)
            }
        }
    }
}

/// What to track during a solve.
#[derive(Clone, Copy, Default)]
pub struct Monitor<'a> {
    /// When known, per-epoch relative squared errors
    /// `||x_n - x_true||^2 / ||x_true||^2` are recorded.
    pub x_true: Option<&'a Array1<f64>>,
    /// Store a snapshot of every epoch iterate.
    pub store_iterates: bool,
    /// Also store every inner iterate `x_{n,k}` (memory-heavy; off by
    /// default).
    pub store_inner_iterates: bool,
}

impl<'a> Monitor<'a> {
    pub fn with_truth(x_true: &'a Array1<f64>) -> Self {
        Monitor {
            x_true: Some(x_true),
            ..Monitor::default()
        }
    }

    pub fn iterates(mut self, on: bool) -> Self {
        self.store_iterates = on;
        self
    }
}

/// Record of one solver run.
#[derive(Clone, Debug)]
pub struct SolveTrace {
    /// Per-epoch snapshots (empty unless requested).
    pub iterates: Vec<Array1<f64>>,
    /// Inner iterates `x_{n,0}, ..., x_{n,m}` per epoch (empty unless
    /// requested).
    pub inner_iterates: Vec<Array1<f64>>,
    /// `||A x_n - y_obs||` per epoch, starting at epoch 0.
    pub residual_norms: Vec<f64>,
    /// `||x_n - x_true||^2 / ||x_true||^2` per epoch, when the truth is
    /// known; absent otherwise.
    pub errors: Option<Vec<f64>>,
    /// Seconds elapsed when each epoch row was recorded.
    pub wall_times: Vec<f64>,
    /// First epoch at which a discrepancy gate closed, when one was active.
    pub stop_index: Option<usize>,
    /// Set when a discrepancy-gated run hit its epoch cap without stopping.
    pub non_termination: bool,
    /// The sample path that drove the run (absent for deterministic
    /// methods).
    pub path: Option<SamplePath>,
    /// The last iterate.
    pub final_x: Array1<f64>,
    /// Single-block operator applications per epoch, for complexity-fair
    /// cross-method plots.
    pub block_steps_per_epoch: usize,
}

impl SolveTrace {
    /// Number of recorded epoch rows (epoch 0 included).
    pub fn epochs_recorded(&self) -> usize {
        self.residual_norms.len()
    }

    pub fn total_wall_time(&self) -> f64 {
        self.wall_times.last().copied().unwrap_or(0.0)
    }

    /// Relative squared error of the final iterate, when tracked.
    pub fn final_error_sq(&self) -> Option<f64> {
        self.errors.as_ref().and_then(|e| e.last().copied())
    }
}

struct TraceBuilder<'a> {
    monitor: Monitor<'a>,
    truth_norm_sq: Option<f64>,
    start: Instant,
    iterates: Vec<Array1<f64>>,
    inner_iterates: Vec<Array1<f64>>,
    residual_norms: Vec<f64>,
    errors: Vec<f64>,
    wall_times: Vec<f64>,
}

impl<'a> TraceBuilder<'a> {
    fn new(monitor: Monitor<'a>) -> Self {
        let truth_norm_sq = monitor.x_true.map(|t| {
            let n = t.dot(t);
            if n > 0.0 {
                n
            } else {
                1.0
            }
        });
        TraceBuilder {
            monitor,
            truth_norm_sq,
            start: Instant::now(),
            iterates: Vec::new(),
            inner_iterates: Vec::new(),
            residual_norms: Vec::new(),
            errors: Vec::new(),
            wall_times: Vec::new(),
        }
    }

    fn record_epoch(&mut self, x: &Array1<f64>, residual_norm: f64) {
        self.residual_norms.push(residual_norm);
        if let (Some(t), Some(tn)) = (self.monitor.x_true, self.truth_norm_sq) {
            let diff = x - t;
            self.errors.push(diff.dot(&diff) / tn);
        }
        if self.monitor.store_iterates {
            self.iterates.push(x.clone());
        }
        self.wall_times.push(self.start.elapsed().as_secs_f64());
    }

    fn record_inner(&mut self, x: &Array1<f64>) {
        if self.monitor.store_inner_iterates {
            self.inner_iterates.push(x.clone());
        }
    }

    fn finish(
        self,
        final_x: Array1<f64>,
        path: Option<SamplePath>,
        stop_index: Option<usize>,
        non_termination: bool,
        block_steps_per_epoch: usize,
    ) -> SolveTrace {
        SolveTrace {
            iterates: self.iterates,
            inner_iterates: self.inner_iterates,
            residual_norms: self.residual_norms,
            errors: if self.monitor.x_true.is_some() {
                Some(self.errors)
            } else {
                None
            },
            wall_times: self.wall_times,
            stop_index,
            non_termination,
            path,
            final_x,
            block_steps_per_epoch,
        }
    }
}

fn check_solver_inputs(
    a: &BlockOperator,
    y_obs: &Observation,
    x0: &Array1<f64>,
) -> Result<()> {
    if y_obs.structure() != a.structure() {
        return Err(Error::DimensionMismatch {
            context: "solver (observation does not conform to operator)",
            expected: a.total_rows(),
            actual: y_obs.len(),
        });
    }
    if x0.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            context: "solver (initial guess)",
            expected: a.dim(),
            actual: x0.len(),
        });
    }
    Ok(())
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// The Landweber iteration `x_{n+1} = x_n - gamma A*(A x_n - y_obs)`.
///
/// Step sizes outside the recommended `(0, 2/||A||^2]` are warned about but
/// not rejected; the bound is only checked against an already-cached norm
/// estimate to keep this call cheap.
pub fn landweber(
    a: &BlockOperator,
    y_obs: &Observation,
    x0: &Array1<f64>,
    gamma: f64,
    epochs: usize,
    monitor: &Monitor<'_>,
) -> Result<SolveTrace> {
    check_solver_inputs(a, y_obs, x0)?;
    warn_landweber_step(a, gamma);
    let y = y_obs.stacked();
    let mut builder = TraceBuilder::new(*monitor);
    let mut x = x0.clone();
    for n in 0..=epochs {
        let mut r = a.forward(&x.view());
        r -= y;
        builder.record_epoch(&x, norm(&r));
        if n == epochs {
            break;
        }
        let g = a.adjoint(&r.view());
        x.scaled_add(-gamma, &g);
    }
    Ok(builder.finish(x, None, None, false, a.n_blocks()))
}

/// Landweber terminated by the discrepancy principle: stops at the first
/// epoch with `||A x_n - y^delta|| <= tau * delta`.
#[allow(clippy::too_many_arguments)]
pub fn landweber_dp(
    a: &BlockOperator,
    y_noisy: &NoisyObservation,
    x0: &Array1<f64>,
    gamma: f64,
    tau: f64,
    max_epochs: usize,
    monitor: &Monitor<'_>,
) -> Result<SolveTrace> {
    if !(tau > 1.0) {
        return Err(Error::invalid("tau", format!("must be > 1, got {tau}")));
    }
    check_solver_inputs(a, &y_noisy.observation, x0)?;
    warn_landweber_step(a, gamma);
    let y = y_noisy.observation.stacked();
    let threshold = tau * y_noisy.delta;
    let mut builder = TraceBuilder::new(*monitor);
    let mut x = x0.clone();
    let mut stop_index = None;
    let mut non_termination = false;
    for n in 0.. {
        let mut r = a.forward(&x.view());
        r -= y;
        let rn = norm(&r);
        builder.record_epoch(&x, rn);
        if rn <= threshold {
            stop_index = Some(n);
            break;
        }
        if n == max_epochs {
            non_termination = true;
            break;
        }
        let g = a.adjoint(&r.view());
        x.scaled_add(-gamma, &g);
    }
    Ok(builder.finish(x, None, stop_index, non_termination, a.n_blocks()))
}

fn warn_landweber_step(a: &BlockOperator, gamma: f64) {
    if gamma <= 0.0 {
        log::warn!("landweber step size {gamma} is not positive; iteration will not converge");
    } else if let Some(op) = a.cached_op_norm() {
        if op > 0.0 && gamma > 2.0 / (op * op) {
            log::warn!(
                "landweber step size {gamma} exceeds the recommended bound 2/||A||^2 = {}",
                2.0 / (op * op)
            );
        }
    }
}

/// Stochastic gradient descent
/// `x_{j+1} = x_j - gamma_j A_{i_j}*(A_{i_j} x_j - y_{i_j})` with uniformly
/// drawn block indices. One trace epoch is `N` single-block steps.
#[allow(clippy::too_many_arguments)]
pub fn sgd(
    a: &BlockOperator,
    y_obs: &Observation,
    x0: &Array1<f64>,
    schedule: &StepSchedule,
    epochs: usize,
    seed: u64,
    monitor: &Monitor<'_>,
) -> Result<SolveTrace> {
    check_solver_inputs(a, y_obs, x0)?;
    schedule.validate()?;
    let n_blocks = a.n_blocks();
    let path = SamplePath::generate(seed, epochs, n_blocks, n_blocks);
    let y = y_obs.stacked();
    let entries = a.entries();
    let mut builder = TraceBuilder::new(*monitor);
    let mut x = x0.clone();
    let mut g = Array1::zeros(a.dim());
    let mut step_count = 0usize;
    for n in 0..=epochs {
        let mut r = a.forward(&x.view());
        r -= y;
        builder.record_epoch(&x, norm(&r));
        if n == epochs {
            break;
        }
        for k in 0..n_blocks {
            let i = path.indices[n * n_blocks + k] as usize;
            let gamma = schedule.step(step_count);
            step_count += 1;
            // single-block gradient A_i*(A_i x - y_i), evaluated before the
            // iterate moves
            g.fill(0.0);
            for ri in a.structure().range(i) {
                let row = entries.row(ri);
                let w = row.dot(&x) - y[ri];
                if w != 0.0 {
                    g.scaled_add(w, &row);
                }
            }
            x.scaled_add(-gamma, &g);
        }
    }
    Ok(builder.finish(x, Some(path), None, false, n_blocks))
}

/// Internal uniform index stream: replayed or freshly drawn (and recorded).
enum IndexStream<'a> {
    Replay {
        indices: &'a [u32],
        pos: usize,
    },
    Draw {
        rng: Box<ChaCha8Rng>,
        n_blocks: u32,
        drawn: Vec<u32>,
    },
}

impl IndexStream<'_> {
    fn next_index(&mut self) -> usize {
        match self {
            IndexStream::Replay { indices, pos } => {
                let i = indices[*pos];
                *pos += 1;
                i as usize
            }
            IndexStream::Draw {
                rng,
                n_blocks,
                drawn,
            } => {
                let i = rng.random_range(0..*n_blocks);
                drawn.push(i);
                i as usize
            }
        }
    }
}

/// One SVRG epoch: starting from the snapshot `x_snap` with stored full
/// gradient `g_full`, performs the optional snapshot step and `m` inner
/// variance-reduced steps, returning `x_{n,m}`.
///
/// `anchor_scale` is the multiple of `g_full` entering each inner gradient
/// (`1/N` for the split-step variant, `1` for the classic variant whose
/// stored gradient is pre-divided by `N`).
#[allow(clippy::too_many_arguments)]
fn svrg_epoch(
    a: &BlockOperator,
    x_snap: &Array1<f64>,
    g_full: &Array1<f64>,
    snapshot_step: Option<f64>,
    inner_step: f64,
    anchor_scale: f64,
    m: usize,
    idx: &mut IndexStream<'_>,
    builder: &mut TraceBuilder<'_>,
) -> Array1<f64> {
    let entries = a.entries();
    let d = a.dim();
    let mut x_cur = x_snap.clone();
    if let Some(g0) = snapshot_step {
        x_cur.scaled_add(-g0, g_full);
    }
    builder.record_inner(&x_cur);
    let mut diff = Array1::zeros(d);
    let mut gk = Array1::zeros(d);
    for _ in 0..m {
        let i = idx.next_index();
        diff.assign(&x_cur);
        diff -= x_snap;
        gk.assign(g_full);
        gk *= anchor_scale;
        for ri in a.structure().range(i) {
            let row = entries.row(ri);
            let w = row.dot(&diff);
            if w != 0.0 {
                gk.scaled_add(w, &row);
            }
        }
        x_cur.scaled_add(-inner_step, &gk);
        builder.record_inner(&x_cur);
    }
    x_cur
}

/// Classic one-step-size SVRG: per epoch,
/// `g_n = (1/N) A*(A x_n - y)`, `x_{n,0} = x_n`, then `m` inner steps
/// `x_{n,k+1} = x_{n,k} - gamma (A_i* A_i (x_{n,k} - x_n) + g_n)`.
#[allow(clippy::too_many_arguments)]
pub fn svrg_classic(
    a: &BlockOperator,
    y_obs: &Observation,
    x0: &Array1<f64>,
    m: usize,
    gamma: f64,
    epochs: usize,
    path: PathSource<'_>,
    monitor: &Monitor<'_>,
) -> Result<SolveTrace> {
    check_solver_inputs(a, y_obs, x0)?;
    validate_svrg_params(m, gamma, gamma)?;
    let owned = resolve_path(path, epochs, m, a.n_blocks())?;
    let y = y_obs.stacked();
    let inv_n = 1.0 / a.n_blocks() as f64;
    let mut builder = TraceBuilder::new(*monitor);
    let mut idx = IndexStream::Replay {
        indices: &owned.indices,
        pos: 0,
    };
    let mut x = x0.clone();
    for n in 0..=epochs {
        let mut r = a.forward(&x.view());
        r -= y;
        builder.record_epoch(&x, norm(&r));
        if n == epochs {
            break;
        }
        let mut g = a.adjoint(&r.view());
        g *= inv_n;
        x = svrg_epoch(a, &x, &g, None, gamma, 1.0, m, &mut idx, &mut builder);
    }
    let steps = a.n_blocks() + m;
    Ok(builder.finish(x, Some(owned), None, false, steps))
}

/// Split-step SVRG: per epoch,
/// `g_n = A*(A x_n - y)`, `x_{n,0} = x_n - gamma0 g_n`, then `m` inner steps
/// `x_{n,k+1} = x_{n,k} - gamma1 (A_i* A_i (x_{n,k} - x_n) + g_n / N)`.
///
/// Accepts either a seed (path generated and recorded) or an explicit path
/// (replayed exactly); both routes produce bit-identical traces for the same
/// index sequence.
#[allow(clippy::too_many_arguments)]
pub fn svrg(
    a: &BlockOperator,
    y_obs: &Observation,
    x0: &Array1<f64>,
    m: usize,
    gamma0: f64,
    gamma1: f64,
    epochs: usize,
    path: PathSource<'_>,
    monitor: &Monitor<'_>,
) -> Result<SolveTrace> {
    check_solver_inputs(a, y_obs, x0)?;
    validate_svrg_params(m, gamma0, gamma1)?;
    let owned = resolve_path(path, epochs, m, a.n_blocks())?;
    let y = y_obs.stacked();
    let inv_n = 1.0 / a.n_blocks() as f64;
    let mut builder = TraceBuilder::new(*monitor);
    let mut idx = IndexStream::Replay {
        indices: &owned.indices,
        pos: 0,
    };
    let mut x = x0.clone();
    for n in 0..=epochs {
        let mut r = a.forward(&x.view());
        r -= y;
        builder.record_epoch(&x, norm(&r));
        if n == epochs {
            break;
        }
        let g = a.adjoint(&r.view());
        x = svrg_epoch(
            a,
            &x,
            &g,
            Some(gamma0),
            gamma1,
            inv_n,
            m,
            &mut idx,
            &mut builder,
        );
    }
    let steps = a.n_blocks() + m;
    Ok(builder.finish(x, Some(owned), None, false, steps))
}

fn validate_svrg_params(m: usize, gamma0: f64, gamma1: f64) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("m", "must be >= 1"));
    }
    if !(gamma0 > 0.0) {
        return Err(Error::invalid(
            "gamma0",
            format!("must be > 0, got {gamma0}"),
        ));
    }
    if !(gamma1 > 0.0) {
        return Err(Error::invalid(
            "gamma1",
            format!("must be > 0, got {gamma1}"),
        ));
    }
    Ok(())
}

fn resolve_path(
    path: PathSource<'_>,
    epochs: usize,
    m: usize,
    n_blocks: usize,
) -> Result<SamplePath> {
    match path {
        PathSource::Seed(seed) => Ok(SamplePath::generate(seed, epochs, m, n_blocks)),
        PathSource::Path(p) => {
            p.validate(epochs * m, n_blocks)?;
            Ok(p.clone())
        }
    }
}

/// Dual variables of the reformulated iteration at exit.
#[derive(Clone, Debug)]
pub struct DualState {
    /// Snapshot multiplier `lambda_n` (stacked, observation-shaped).
    pub lambda: Array1<f64>,
    /// Multiplier after the last inner update.
    pub lambda_inner: Array1<f64>,
    /// Last snapshot residual `mu_n = A x_n - y`.
    pub mu: Array1<f64>,
    /// Last inner direction `mu_{n,k}`.
    pub mu_inner: Array1<f64>,
}

/// Result of the dual solver: the usual trace plus the final dual state.
#[derive(Clone, Debug)]
pub struct DualSolve {
    pub trace: SolveTrace,
    pub state: DualState,
}

/// Dual reformulation of split-step SVRG for exact data. Maintains
/// multipliers `lambda` with `x = x0 + A* lambda` throughout:
///
/// ```text
/// mu_n      = A x_n - y
/// lambda_n0 = lambda_n - gamma0 mu_n
/// mu_nk     = e_i (x) A_i (x_nk - x_n) + mu_n / N
/// lambda_   = lambda_nk - gamma1 mu_nk
/// ```
///
/// Exactly the same iterates as [`svrg`] in exact arithmetic; used as an
/// exactness oracle, so it requires an explicit path (silent reseeding would
/// break equivalence tests) and favors clarity over speed.
#[allow(clippy::too_many_arguments)]
pub fn svrg_dual(
    a: &BlockOperator,
    y_exact: &Observation,
    x0: &Array1<f64>,
    m: usize,
    gamma0: f64,
    gamma1: f64,
    epochs: usize,
    path: &SamplePath,
    monitor: &Monitor<'_>,
) -> Result<DualSolve> {
    check_solver_inputs(a, y_exact, x0)?;
    validate_svrg_params(m, gamma0, gamma1)?;
    path.validate(epochs * m, a.n_blocks())?;
    let y = y_exact.stacked();
    let entries = a.entries();
    let total_rows = a.total_rows();
    let inv_n = 1.0 / a.n_blocks() as f64;
    let mut builder = TraceBuilder::new(*monitor);

    let mut lambda: Array1<f64> = Array1::zeros(total_rows);
    let mut x_n = x0.clone();
    let mut mu_n: Array1<f64> = Array1::zeros(total_rows);
    let mut lambda_inner = lambda.clone();
    let mut mu_inner: Array1<f64> = Array1::zeros(total_rows);
    let mut pos = 0usize;

    for n in 0..=epochs {
        mu_n = a.forward(&x_n.view());
        mu_n -= y;
        builder.record_epoch(&x_n, norm(&mu_n));
        if n == epochs {
            break;
        }
        lambda.scaled_add(-gamma0, &mu_n);
        let mut x_cur = x0 + &a.adjoint(&lambda.view());
        builder.record_inner(&x_cur);
        for _ in 0..m {
            let i = path.indices[pos] as usize;
            pos += 1;
            let range = a.structure().range(i);
            // mu_nk = e_i (x) A_i (x_cur - x_n) + mu_n / N
            mu_inner.assign(&mu_n);
            mu_inner *= inv_n;
            for ri in range {
                let row = entries.row(ri);
                mu_inner[ri] += row.dot(&x_cur) - row.dot(&x_n);
            }
            lambda.scaled_add(-gamma1, &mu_inner);
            lambda_inner.assign(&lambda);
            x_cur = x0 + &a.adjoint(&lambda.view());
            builder.record_inner(&x_cur);
        }
        x_n = x_cur;
    }

    let steps = a.n_blocks() + m;
    let trace = builder.finish(x_n, Some(path.clone()), None, false, steps);
    Ok(DualSolve {
        trace,
        state: DualState {
            lambda,
            lambda_inner,
            mu: mu_n,
            mu_inner,
        },
    })
}

/// Split-step SVRG gated by the discrepancy principle: updates are frozen as
/// soon as `||A x_n - y^delta|| <= tau * delta`, so the run stops there and
/// `stop_index` is set to that epoch. If the gate never closes within
/// `max_epochs`, `non_termination` is flagged instead.
#[allow(clippy::too_many_arguments)]
pub fn svrg_dp(
    a: &BlockOperator,
    y_noisy: &NoisyObservation,
    x0: &Array1<f64>,
    m: usize,
    gamma0: f64,
    gamma1: f64,
    tau: f64,
    max_epochs: usize,
    seed: u64,
    monitor: &Monitor<'_>,
) -> Result<SolveTrace> {
    if !(tau > 1.0) {
        return Err(Error::invalid("tau", format!("must be > 1, got {tau}")));
    }
    if max_epochs == 0 {
        return Err(Error::invalid("max_epochs", "must be >= 1"));
    }
    check_solver_inputs(a, &y_noisy.observation, x0)?;
    validate_svrg_params(m, gamma0, gamma1)?;
    let y = y_noisy.observation.stacked();
    let threshold = tau * y_noisy.delta;
    let inv_n = 1.0 / a.n_blocks() as f64;
    let mut builder = TraceBuilder::new(*monitor);
    let mut idx = IndexStream::Draw {
        rng: Box::new(ChaCha8Rng::seed_from_u64(seed)),
        n_blocks: a.n_blocks() as u32,
        drawn: Vec::new(),
    };
    let mut x = x0.clone();
    let mut stop_index = None;
    let mut non_termination = false;
    for n in 0.. {
        let mut r = a.forward(&x.view());
        r -= y;
        let rn = norm(&r);
        builder.record_epoch(&x, rn);
        if rn <= threshold {
            stop_index = Some(n);
            break;
        }
        if n == max_epochs {
            non_termination = true;
            break;
        }
        let g = a.adjoint(&r.view());
        x = svrg_epoch(
            a,
            &x,
            &g,
            Some(gamma0),
            gamma1,
            inv_n,
            m,
            &mut idx,
            &mut builder,
        );
    }
    let drawn = match idx {
        IndexStream::Draw { drawn, .. } => drawn,
        IndexStream::Replay { .. } => unreachable!(),
    };
    let path = SamplePath {
        indices: drawn,
        seed: Some(seed),
        m,
    };
    let steps = a.n_blocks() + m;
    Ok(builder.finish(x, Some(path), stop_index, non_termination, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::add_relative_noise;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn obs(a: &BlockOperator, data: Array1<f64>) -> Observation {
        Observation::from_stacked(a.structure().clone(), data).unwrap()
    }

    #[test]
    fn landweber_fixed_point_at_truth() {
        let p = crate::problems::phillips(20).unwrap();
        let mon = Monitor::with_truth(&p.x_true).iterates(true);
        let t = landweber(&p.operator, &p.y_exact, &p.x_true, 0.05, 5, &mon).unwrap();
        for r in &t.residual_norms {
            assert!(*r <= 1e-12);
        }
        for it in &t.iterates {
            assert_eq!(it, &p.x_true);
        }
    }

    #[test]
    fn landweber_identity_one_step() {
        let a = BlockOperator::from_rows(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let y = obs(&a, array![1.0, 1.0]);
        let t = landweber(&a, &y, &array![0.0, 0.0], 1.0, 1, &Monitor::default()).unwrap();
        assert_eq!(t.final_x, array![1.0, 1.0]);
        assert_eq!(t.epochs_recorded(), 2);
    }

    #[test]
    fn landweber_hand_iterations() {
        // A = [[2]], y = 2, x0 = 0, gamma = 0.2: x1 = 0.8, x2 = 0.96
        let a = BlockOperator::from_rows(array![[2.0]]).unwrap();
        let y = obs(&a, array![2.0]);
        let mon = Monitor::default().iterates(true);
        let t = landweber(&a, &y, &array![0.0], 0.2, 2, &mon).unwrap();
        assert_relative_eq!(t.iterates[1][0], 0.8, max_relative = 1e-15);
        assert_relative_eq!(t.iterates[2][0], 0.96, max_relative = 1e-15);
    }

    #[test]
    fn sgd_constant_at_truth() {
        let p = crate::problems::phillips(15).unwrap();
        let mon = Monitor::with_truth(&p.x_true);
        let t = sgd(
            &p.operator,
            &p.y_exact,
            &p.x_true,
            &StepSchedule::Constant(0.05),
            3,
            7,
            &mon,
        )
        .unwrap();
        for e in t.errors.as_ref().unwrap() {
            assert!(*e <= 1e-24);
        }
    }

    #[test]
    fn sgd_single_block_is_landweber() {
        let a = BlockOperator::single_block(array![[1.0, 0.5], [0.0, 2.0]]).unwrap();
        let y = obs(&a, array![1.0, 2.0]);
        let x0 = array![0.0, 0.0];
        let mon = Monitor::default().iterates(true);
        let s = sgd(&a, &y, &x0, &StepSchedule::Constant(0.1), 4, 3, &mon).unwrap();
        let l = landweber(&a, &y, &x0, 0.1, 4, &mon).unwrap();
        for (xs, xl) in s.iterates.iter().zip(l.iterates.iter()) {
            assert_eq!(xs, xl);
        }
    }

    #[test]
    fn sgd_hand_geometric_recursion() {
        // one block A = [[1]], y = 2, x0 = 0, gamma = 0.5: 1, 1.5, 1.75, ...
        let a = BlockOperator::from_rows(array![[1.0]]).unwrap();
        let y = obs(&a, array![2.0]);
        let mon = Monitor::default().iterates(true);
        let t = sgd(&a, &y, &array![0.0], &StepSchedule::Constant(0.5), 3, 0, &mon).unwrap();
        assert_relative_eq!(t.iterates[1][0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(t.iterates[2][0], 1.5, max_relative = 1e-15);
        assert_relative_eq!(t.iterates[3][0], 1.75, max_relative = 1e-15);
    }

    #[test]
    fn sgd_rejects_bad_schedule() {
        let a = BlockOperator::from_rows(array![[1.0]]).unwrap();
        let y = obs(&a, array![1.0]);
        assert!(sgd(
            &a,
            &y,
            &array![0.0],
            &StepSchedule::Constant(0.0),
            1,
            0,
            &Monitor::default()
        )
        .is_err());
    }

    #[test]
    fn svrg_classic_constant_at_truth() {
        let p = crate::problems::phillips(15).unwrap();
        let mon = Monitor::with_truth(&p.x_true);
        let t = svrg_classic(
            &p.operator,
            &p.y_exact,
            &p.x_true,
            5,
            0.05,
            3,
            PathSource::Seed(1),
            &mon,
        )
        .unwrap();
        for e in t.errors.as_ref().unwrap() {
            assert!(*e <= 1e-24);
        }
    }

    #[test]
    fn svrg_classic_single_block_single_step_is_landweber() {
        // N = 1, m = 1: x_{n,1} = x_n - gamma A*(A x_n - y)
        let a = BlockOperator::single_block(array![[1.0, 0.3], [0.2, 2.0]]).unwrap();
        let y = obs(&a, array![1.0, 2.0]);
        let x0 = array![0.0, 0.0];
        let mon = Monitor::default().iterates(true);
        let c = svrg_classic(&a, &y, &x0, 1, 0.1, 5, PathSource::Seed(0), &mon).unwrap();
        let l = landweber(&a, &y, &x0, 0.1, 5, &mon).unwrap();
        for (xc, xl) in c.iterates.iter().zip(l.iterates.iter()) {
            assert_eq!(xc, xl);
        }
    }

    #[test]
    fn svrg_classic_hand_simulation_one_epoch() {
        // two single-row blocks [2,0], [0,3]; y = (2,3); x0 = 0; gamma = 0.1;
        // m = 2; fixed path [0, 1]
        let a = BlockOperator::from_rows(array![[2.0, 0.0], [0.0, 3.0]]).unwrap();
        let y = obs(&a, array![2.0, 3.0]);
        let path = SamplePath {
            indices: vec![0, 1],
            seed: None,
            m: 2,
        };
        let mon = Monitor::default().iterates(true);
        let t = svrg_classic(
            &a,
            &y,
            &array![0.0, 0.0],
            2,
            0.1,
            1,
            PathSource::Path(&path),
            &mon,
        )
        .unwrap();

        // hand roll: g0 = (1/2) A^T (A x0 - y) = (-2, -4.5)
        // k=0 (i=0): block grad = 0, g = g0, x01 = (0.2, 0.45)
        // k=1 (i=1): A_1 (x01 - x0) = 3*0.45 = 1.35,
        //            g = (0, 4.05) + (-2, -4.5) = (-2, -0.45)
        //            x02 = (0.4, 0.495)
        let x1 = &t.iterates[1];
        assert_relative_eq!(x1[0], 0.4, max_relative = 1e-14);
        assert_relative_eq!(x1[1], 0.495, max_relative = 1e-14);
    }

    #[test]
    fn svrg_constant_at_truth() {
        let p = crate::problems::phillips(15).unwrap();
        let mon = Monitor::with_truth(&p.x_true);
        let t = svrg(
            &p.operator,
            &p.y_exact,
            &p.x_true,
            4,
            0.01,
            0.01,
            3,
            PathSource::Seed(9),
            &mon,
        )
        .unwrap();
        for (r, e) in t
            .residual_norms
            .iter()
            .zip(t.errors.as_ref().unwrap().iter())
        {
            assert!(*r <= 1e-12 && *e <= 1e-24);
        }
    }

    #[test]
    fn svrg_hand_one_epoch_reaches_truth() {
        // N = 1, m = 1, A = [[1]], y = 2, x0 = 0, gamma0 = 1, gamma1 = 0.5:
        // g0 = -2; x_{0,0} = 2; inner: g = 1*(2-0) + (-2) = 0; x1 = 2
        let a = BlockOperator::from_rows(array![[1.0]]).unwrap();
        let y = obs(&a, array![2.0]);
        let mon = Monitor::default().iterates(true);
        let t = svrg(
            &a,
            &y,
            &array![0.0],
            1,
            1.0,
            0.5,
            1,
            PathSource::Seed(0),
            &mon,
        )
        .unwrap();
        assert_eq!(t.iterates[1][0], 2.0);
        assert_eq!(t.residual_norms[1], 0.0);
    }

    #[test]
    fn svrg_hand_simulation_two_blocks() {
        // blocks [2,0] and [0,3]; y = (2,3); x0 = 0; gamma0 = 0.1,
        // gamma1 = 0.05; m = 2; fixed path [0, 1]
        let a = BlockOperator::from_rows(array![[2.0, 0.0], [0.0, 3.0]]).unwrap();
        let y = obs(&a, array![2.0, 3.0]);
        let path = SamplePath {
            indices: vec![0, 1],
            seed: None,
            m: 2,
        };
        let mon = Monitor::default().iterates(true);
        let t = svrg(
            &a,
            &y,
            &array![0.0, 0.0],
            2,
            0.1,
            0.05,
            1,
            PathSource::Path(&path),
            &mon,
        )
        .unwrap();

        // hand roll: g0 = A^T (A x0 - y) = (-4, -9)
        // x_{0,0} = x0 - 0.1 g0 = (0.4, 0.9)
        // k=0 (i=0): A_0 (x00 - x0) = 0.8; grad = (1.6, 0) + g0/2 = (-0.4, -4.5)
        //            x01 = (0.42, 1.125)
        // k=1 (i=1): A_1 (x01 - x0) = 3.375; grad = (0, 10.125) + g0/2 = (-2, 5.625)
        //            x02 = (0.52, 0.84375)
        let x1 = &t.iterates[1];
        assert_relative_eq!(x1[0], 0.52, max_relative = 1e-14);
        assert_relative_eq!(x1[1], 0.84375, max_relative = 1e-14);
    }

    #[test]
    fn sgd_decaying_schedule_steps() {
        let s = StepSchedule::Decaying {
            scale: 0.5,
            exponent: 0.75,
        };
        assert_eq!(s.step(0), 0.5);
        assert_relative_eq!(s.step(3), 0.5 / 4f64.powf(0.75), max_relative = 1e-15);
    }

    #[test]
    fn svrg_same_seed_bit_identical() {
        let p = crate::problems::phillips(30).unwrap();
        let noisy = add_relative_noise(&p.y_exact, 0.01, 5).unwrap();
        let x0 = Array1::zeros(p.dim());
        let mon = Monitor::with_truth(&p.x_true).iterates(true);
        let run = || {
            svrg(
                &p.operator,
                &noisy.observation,
                &x0,
                6,
                0.02,
                0.01,
                8,
                PathSource::Seed(77),
                &mon,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.residual_norms, b.residual_norms);
        assert_eq!(a.errors, b.errors);
        assert_eq!(a.iterates, b.iterates);
        assert_eq!(a.path, b.path);
    }

    #[test]
    fn svrg_path_replay_matches_seeded_run() {
        let p = crate::problems::phillips(25).unwrap();
        let noisy = add_relative_noise(&p.y_exact, 0.05, 3).unwrap();
        let x0 = Array1::zeros(p.dim());
        let mon = Monitor::with_truth(&p.x_true).iterates(true);
        let seeded = svrg(
            &p.operator,
            &noisy.observation,
            &x0,
            5,
            0.02,
            0.01,
            6,
            PathSource::Seed(123),
            &mon,
        )
        .unwrap();
        let path = seeded.path.clone().unwrap();
        let replayed = svrg(
            &p.operator,
            &noisy.observation,
            &x0,
            5,
            0.02,
            0.01,
            6,
            PathSource::Path(&path),
            &mon,
        )
        .unwrap();
        assert_eq!(seeded.residual_norms, replayed.residual_norms);
        assert_eq!(seeded.iterates, replayed.iterates);
        assert_eq!(seeded.path, replayed.path);
    }

    #[test]
    fn svrg_rejects_short_path() {
        let a = BlockOperator::from_rows(array![[1.0]]).unwrap();
        let y = obs(&a, array![1.0]);
        let path = SamplePath {
            indices: vec![0, 0, 0],
            seed: None,
            m: 2,
        };
        let err = svrg(
            &a,
            &y,
            &array![0.0],
            2,
            0.1,
            0.1,
            2,
            PathSource::Path(&path),
            &Monitor::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::PathTooShort { .. }));
    }

    #[test]
    fn svrg_dual_zero_lambda_instance_stays_put() {
        // lambda_dag = 0 gives x_true = x0; starting at the truth, every
        // residual vanishes and lambda stays 0
        let p = crate::problems::phillips(12).unwrap();
        let path = SamplePath::generate(4, 3, 4, p.n_blocks());
        let mon = Monitor::with_truth(&p.x_true).iterates(true);
        let d = svrg_dual(
            &p.operator,
            &p.y_exact,
            &p.x_true,
            4,
            0.02,
            0.01,
            3,
            &path,
            &mon,
        )
        .unwrap();
        for it in &d.trace.iterates {
            let diff = it - &p.x_true;
            assert!(diff.dot(&diff).sqrt() <= 1e-12);
        }
        assert!(d.state.lambda.iter().all(|&v| v.abs() <= 1e-12));
    }

    #[test]
    fn svrg_dual_hand_example_matches_primal() {
        let a = BlockOperator::from_rows(array![[1.0]]).unwrap();
        let y = obs(&a, array![2.0]);
        let path = SamplePath {
            indices: vec![0],
            seed: None,
            m: 1,
        };
        let mon = Monitor::default().iterates(true);
        let d = svrg_dual(&a, &y, &array![0.0], 1, 1.0, 0.5, 1, &path, &mon).unwrap();
        assert_relative_eq!(d.trace.iterates[1][0], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn svrg_dual_matches_primal_on_phillips() {
        let p = crate::problems::phillips(50).unwrap();
        let x0 = Array1::zeros(p.dim());
        let plan = crate::stepsize::plan_from_alpha_beta(
            1.0,
            0.99,
            p.operator.op_norm(),
            p.operator.block_lipschitz(),
            5,
            p.n_blocks(),
        )
        .unwrap();
        let path = SamplePath::generate(11, 10, 5, p.n_blocks());
        let mon = Monitor::with_truth(&p.x_true).iterates(true);
        let primal = svrg(
            &p.operator,
            &p.y_exact,
            &x0,
            5,
            plan.gamma0,
            plan.gamma1,
            10,
            PathSource::Path(&path),
            &mon,
        )
        .unwrap();
        let dual = svrg_dual(
            &p.operator,
            &p.y_exact,
            &x0,
            5,
            plan.gamma0,
            plan.gamma1,
            10,
            &path,
            &mon,
        )
        .unwrap();
        let scale = p.x_true.dot(&p.x_true).sqrt();
        for (xp, xd) in primal.iterates.iter().zip(dual.trace.iterates.iter()) {
            let diff = xp - xd;
            assert!(diff.dot(&diff).sqrt() <= 1e-10 * scale);
        }
        // x reconstructed from the final multiplier matches the primal iterate
        let recon = &x0 + &p.operator.adjoint(&dual.state.lambda.view());
        let diff = &recon - &primal.final_x;
        assert!(diff.dot(&diff).sqrt() <= 1e-10 * scale);
    }

    #[test]
    fn svrg_dual_requires_path_long_enough() {
        let a = BlockOperator::from_rows(array![[1.0]]).unwrap();
        let y = obs(&a, array![1.0]);
        let path = SamplePath {
            indices: vec![],
            seed: None,
            m: 1,
        };
        assert!(svrg_dual(
            &a,
            &y,
            &array![0.0],
            1,
            0.1,
            0.1,
            1,
            &path,
            &Monitor::default()
        )
        .is_err());
    }

    #[test]
    fn svrg_dp_gate_closed_at_start() {
        // noiseless data and x0 = x_true: residual 0 <= tau * 0 immediately
        let p = crate::problems::phillips(15).unwrap();
        let noisy = add_relative_noise(&p.y_exact, 0.0, 0).unwrap();
        let t = svrg_dp(
            &p.operator,
            &noisy,
            &p.x_true,
            3,
            0.02,
            0.01,
            1.01,
            100,
            0,
            &Monitor::default(),
        )
        .unwrap();
        assert_eq!(t.stop_index, Some(0));
        assert_eq!(t.final_x, p.x_true);
        assert_eq!(t.epochs_recorded(), 1);
    }

    #[test]
    fn svrg_dp_exact_data_never_terminates() {
        // delta = 0 with x0 != x_true: gate never closes within the cap
        let p = crate::problems::phillips(15).unwrap();
        let noisy = add_relative_noise(&p.y_exact, 0.0, 0).unwrap();
        let x0 = Array1::zeros(p.dim());
        let plan = crate::stepsize::plan_from_alpha_beta(
            1.0,
            0.99,
            p.operator.op_norm(),
            p.operator.block_lipschitz(),
            3,
            p.n_blocks(),
        )
        .unwrap();
        let t = svrg_dp(
            &p.operator,
            &noisy,
            &x0,
            3,
            plan.gamma0,
            plan.gamma1,
            1.01,
            40,
            1,
            &Monitor::default(),
        )
        .unwrap();
        assert_eq!(t.stop_index, None);
        assert!(t.non_termination);
        assert_eq!(t.epochs_recorded(), 41);
    }

    #[test]
    fn svrg_dp_residual_contract() {
        let p = crate::problems::phillips(200).unwrap();
        let noisy = add_relative_noise(&p.y_exact, 0.01, 13).unwrap();
        let x0 = Array1::zeros(p.dim());
        let plan = crate::stepsize::plan_from_alpha_beta(
            1.0,
            0.99,
            p.operator.op_norm(),
            p.operator.block_lipschitz(),
            20,
            p.n_blocks(),
        )
        .unwrap();
        let t = svrg_dp(
            &p.operator,
            &noisy,
            &x0,
            20,
            plan.gamma0,
            plan.gamma1,
            1.01,
            5000,
            13,
            &Monitor::with_truth(&p.x_true),
        )
        .unwrap();
        let stop = t.stop_index.expect("must terminate on noisy data");
        let threshold = 1.01 * noisy.delta;
        assert!(t.residual_norms[stop] <= threshold);
        for j in 0..stop {
            assert!(t.residual_norms[j] > threshold);
        }
    }

    #[test]
    fn svrg_dp_with_open_gate_matches_plain_svrg() {
        // exact data with x0 != x_true keeps the gate open forever, so the
        // gated run must reproduce the ungated one bit for bit (same seeded
        // index stream, different code path)
        let p = crate::problems::phillips(25).unwrap();
        let noisy = add_relative_noise(&p.y_exact, 0.0, 0).unwrap();
        let x0 = Array1::zeros(p.dim());
        let mon = Monitor::with_truth(&p.x_true).iterates(true);
        let epochs = 12;
        let gated = svrg_dp(
            &p.operator,
            &noisy,
            &x0,
            4,
            0.02,
            0.01,
            1.01,
            epochs,
            99,
            &mon,
        )
        .unwrap();
        let plain = svrg(
            &p.operator,
            &p.y_exact,
            &x0,
            4,
            0.02,
            0.01,
            epochs,
            PathSource::Seed(99),
            &mon,
        )
        .unwrap();
        assert!(gated.non_termination);
        assert_eq!(gated.residual_norms, plain.residual_norms);
        assert_eq!(gated.iterates, plain.iterates);
        assert_eq!(
            gated.path.as_ref().unwrap().indices,
            plain.path.as_ref().unwrap().indices
        );
    }

    #[test]
    fn svrg_dp_rejects_tau_at_most_one() {
        let p = crate::problems::phillips(10).unwrap();
        let noisy = add_relative_noise(&p.y_exact, 0.01, 0).unwrap();
        let x0 = Array1::zeros(p.dim());
        let err = svrg_dp(
            &p.operator,
            &noisy,
            &x0,
            2,
            0.1,
            0.1,
            1.0,
            10,
            0,
            &Monitor::default(),
        )
        .unwrap_err();
        match err {
            Error::InvalidParameter { name, .. } => assert_eq!(name, "tau"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn iterates_stay_in_adjoint_range() {
        // exact data: x_n - x0 lies in Ran(A^T); project onto Null(A) via an
        // SVD oracle and check the projection is negligible
        let entries = array![
            [1.0, 0.4, -0.2, 0.7, 0.1, -0.5],
            [0.3, -1.0, 0.6, 0.0, 0.2, 0.4],
            [-0.6, 0.2, 0.9, 0.5, -0.3, 0.8],
        ];
        let a = BlockOperator::from_rows(entries.clone()).unwrap();
        let x_star = array![0.5, -0.2, 0.8, 0.1, -0.7, 0.3];
        let y = a.apply(&x_star).unwrap();
        let x0 = array![0.1, 0.0, -0.1, 0.2, 0.0, 0.05];
        let mon = Monitor::default().iterates(true);
        let t = svrg(
            &a,
            &y,
            &x0,
            4,
            0.2,
            0.1,
            8,
            PathSource::Seed(21),
            &mon,
        )
        .unwrap();

        // Null(A) is the orthogonal complement of Ran(A^T): subtract the
        // projection of each step onto the row space (right singular vectors
        // with nonnegligible sigma) and check nothing is left over.
        let dm = nalgebra::DMatrix::from_row_iterator(3, 6, entries.iter().cloned());
        let svd = dm.svd(false, true);
        let vt = svd.v_t.unwrap();
        let smax = svd.singular_values[0];
        for it in &t.iterates {
            let step = it - &x0;
            let mut v = nalgebra::DVector::from_iterator(6, step.iter().cloned());
            for (k, row) in vt.row_iter().enumerate() {
                if svd.singular_values[k] > 1e-12 * smax {
                    let basis = row.transpose();
                    let c = basis.dot(&v);
                    v -= basis * c;
                }
            }
            assert!(v.norm() <= 1e-8, "null-space component {} too large", v.norm());
        }
    }

    #[test]
    fn trace_has_epoch_zero_row() {
        let a = BlockOperator::from_rows(array![[1.0]]).unwrap();
        let y = obs(&a, array![1.0]);
        let t = landweber(&a, &y, &array![0.0], 0.5, 0, &Monitor::default()).unwrap();
        assert_eq!(t.epochs_recorded(), 1);
        assert_eq!(t.residual_norms[0], 1.0);
    }
}
