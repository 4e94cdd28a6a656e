//! Discretized Fredholm test problems.
//!
//! All three classical one-dimensional instances (`phillips`, `gravity`,
//! `shaw`) come from sampling a first-kind Fredholm integral equation
//! `y(s) = int_a^b K(s,t) x(t) dt` at `N` points `s_i` and approximating the
//! integral by the midpoint rule on `M = N` equal subintervals, giving a
//! square dense system with one row per block.
//!
//! Note on the sample points: they are placed as `s_i = c + (i - 0.5)(d-c)/N`
//! so that every `s_i` lies inside `[c, d]`; dropping the `+ c` offset would
//! push them outside the interval whenever `c != 0`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linop::{BlockOperator, Observation};

/// Name and parameters of a generated instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemMeta {
    pub name: String,
    pub n: usize,
    /// Depth parameter of the gravity kernel, when applicable.
    pub depth: Option<f64>,
}

/// A discretized instance: operator, exact solution and exact data.
///
/// `y_exact` is always computed as `operator * x_true`, never assumed.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub operator: BlockOperator,
    pub x_true: Array1<f64>,
    pub y_exact: Observation,
    /// Sample points `s_i`, one per block.
    pub grid_s: Array1<f64>,
    /// Quadrature nodes `t_j`, one per column.
    pub grid_t: Array1<f64>,
    pub meta: ProblemMeta,
}

impl ProblemInstance {
    pub fn n_blocks(&self) -> usize {
        self.operator.n_blocks()
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }
}

/// Midpoint-rule discretization of a Fredholm kernel on
/// `[c, d] x [a, b]` with `N` sample points and `M = N` quadrature nodes.
///
/// `entry(i, j) = ((b-a)/N) * K(s_i, t_j)` with `t_j = a + (j-1/2)(b-a)/N`
/// and `s_i = c + (i-1/2)(d-c)/N`.
pub fn discretize<K, X>(
    kernel: K,
    s_domain: (f64, f64),
    t_domain: (f64, f64),
    x_true_fn: X,
    n: usize,
) -> Result<ProblemInstance>
where
    K: Fn(f64, f64) -> f64,
    X: Fn(f64) -> f64,
{
    discretize_named(
        kernel,
        s_domain,
        t_domain,
        x_true_fn,
        n,
        ProblemMeta {
            name: "custom".into(),
            n,
            depth: None,
        },
    )
}

fn discretize_named<K, X>(
    kernel: K,
    (c, d): (f64, f64),
    (a, b): (f64, f64),
    x_true_fn: X,
    n: usize,
    meta: ProblemMeta,
) -> Result<ProblemInstance>
where
    K: Fn(f64, f64) -> f64,
    X: Fn(f64) -> f64,
{
    if n < 2 {
        return Err(Error::invalid("n", format!("must be >= 2, got {n}")));
    }
    let h_t = (b - a) / n as f64;
    let h_s = (d - c) / n as f64;
    let grid_t = Array1::from_shape_fn(n, |j| a + (j as f64 + 0.5) * h_t);
    let grid_s = Array1::from_shape_fn(n, |i| c + (i as f64 + 0.5) * h_s);

    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let v = kernel(grid_s[i], grid_t[j]);
            if !v.is_finite() {
                return Err(Error::NonFiniteKernel {
                    value: v,
                    s: grid_s[i],
                    t: grid_t[j],
                    row: i,
                    col: j,
                });
            }
            entries[[i, j]] = h_t * v;
        }
    }
    let operator = BlockOperator::from_rows(entries)?;
    let x_true = grid_t.mapv(&x_true_fn);
    let y_exact = operator.apply(&x_true)?;
    Ok(ProblemInstance {
        operator,
        x_true,
        y_exact,
        grid_s,
        grid_t,
        meta,
    })
}

/// The hat-shaped profile of the phillips problem:
/// `rho(t) = 1 + cos(pi t / 3)` for `|t| < 3`, zero outside.
pub fn phillips_rho(t: f64) -> f64 {
    if t.abs() < 3.0 {
        1.0 + (std::f64::consts::PI * t / 3.0).cos()
    } else {
        0.0
    }
}

/// Mildly ill-posed convolution problem on `[-6, 6]`:
/// `K(s, t) = rho(s - t)`, `x_true(t) = rho(t)`.
pub fn phillips(n: usize) -> Result<ProblemInstance> {
    discretize_named(
        |s, t| phillips_rho(s - t),
        (-6.0, 6.0),
        (-6.0, 6.0),
        phillips_rho,
        n,
        ProblemMeta {
            name: "phillips".into(),
            n,
            depth: None,
        },
    )
}

/// Default depth of the buried mass distribution in [`gravity`].
pub const GRAVITY_DEFAULT_DEPTH: f64 = 0.25;

pub fn gravity_kernel(depth: f64, s: f64, t: f64) -> f64 {
    let q = depth * depth + (s - t) * (s - t);
    depth * q.powf(-1.5)
}

pub fn gravity_solution(t: f64) -> f64 {
    (std::f64::consts::PI * t).sin() + 0.5 * (2.0 * std::f64::consts::PI * t).sin()
}

/// Severely ill-posed gravity surveying problem on `[0, 1]`: recover a mass
/// distribution at depth `depth` from the vertical field component at the
/// surface.
pub fn gravity(n: usize, depth: f64) -> Result<ProblemInstance> {
    if !(depth > 0.0) {
        return Err(Error::invalid(
            "depth",
            format!("must be > 0, got {depth}"),
        ));
    }
    discretize_named(
        |s, t| gravity_kernel(depth, s, t),
        (0.0, 1.0),
        (0.0, 1.0),
        gravity_solution,
        n,
        ProblemMeta {
            name: "gravity".into(),
            n,
            depth: Some(depth),
        },
    )
}

pub fn shaw_kernel(s: f64, t: f64) -> f64 {
    let u = std::f64::consts::PI * (s.sin() + t.sin());
    // removable singularity at u = 0: (sin u / u)^2 -> 1; the Taylor guard
    // 1 - u^2/3 keeps the kernel C^1 across the switch
    let sinc_sq = if u.abs() < 1e-8 {
        1.0 - u * u / 3.0
    } else {
        let r = u.sin() / u;
        r * r
    };
    let c = s.cos() + t.cos();
    c * c * sinc_sq
}

pub fn shaw_solution(t: f64) -> f64 {
    2.0 * (-6.0 * (t - 0.8) * (t - 0.8)).exp() + (-2.0 * (t + 0.5) * (t + 0.5)).exp()
}

/// Severely ill-posed one-dimensional image restoration problem on
/// `[-pi/2, pi/2]`.
pub fn shaw(n: usize) -> Result<ProblemInstance> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    discretize_named(
        shaw_kernel,
        (-half_pi, half_pi),
        (-half_pi, half_pi),
        shaw_solution,
        n,
        ProblemMeta {
            name: "shaw".into(),
            n,
            depth: None,
        },
    )
}

/// Builds an instance whose solution satisfies the benchmark source
/// condition by construction: `x_true = x0 + A* lambda_dag`, so
/// `x_true - x0` lies in the range of `A*`.
///
/// Used to manufacture rate-test instances; the grids carry plain index
/// coordinates since no quadrature is involved.
pub fn synthetic_source_instance(
    operator: BlockOperator,
    lambda_dag: &Observation,
    x0: &Array1<f64>,
) -> Result<ProblemInstance> {
    if x0.len() != operator.dim() {
        return Err(Error::DimensionMismatch {
            context: "synthetic_source_instance (x0)",
            expected: operator.dim(),
            actual: x0.len(),
        });
    }
    let x_true = x0 + &operator.apply_adjoint(lambda_dag)?;
    let y_exact = operator.apply(&x_true)?;
    let n_blocks = operator.n_blocks();
    let dim = operator.dim();
    Ok(ProblemInstance {
        grid_s: Array1::from_shape_fn(n_blocks, |i| i as f64),
        grid_t: Array1::from_shape_fn(dim, |j| j as f64),
        meta: ProblemMeta {
            name: "synthetic-source".into(),
            n: n_blocks,
            depth: None,
        },
        operator,
        x_true,
        y_exact,
    })
}

/// Looks up a named generator. `depth` only applies to `gravity`.
pub fn by_name(name: &str, n: usize, depth: Option<f64>) -> Result<ProblemInstance> {
    match name {
        "phillips" => phillips(n),
        "gravity" => gravity(n, depth.unwrap_or(GRAVITY_DEFAULT_DEPTH)),
        "shaw" => shaw(n),
        other => Err(Error::invalid(
            "problem",
            format!("unknown problem `{other}` (expected phillips, gravity or shaw)"),
        )),
    }
}
