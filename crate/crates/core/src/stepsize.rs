//! Step-size plans for the split-step SVRG iteration.
//!
//! A plan carries the pair `(gamma0, gamma1)` for the snapshot step and the
//! inner stochastic steps, the admissibility conditions
//!
//! ```text
//! 1 - gamma1 * L > 0   and   2 gamma0 - gamma0^2 ||A||^2 - 2 m gamma1^2 L / N > 0
//! ```
//!
//! (both strict, no epsilon slack), and the derived constants: the stability
//! constant `C0` bounding `E||x_n^delta - x_n||^2 <= C0 n delta^2`, and the
//! discrepancy-principle constant `c1` whose positivity guarantees a.s.
//! finite termination.
//!
//! `L` here is the Lipschitz constant of the block gradients,
//! `L = max_i ||A_i||^2`: every admissibility estimate bounds
//! `sum_i ||A_i||^2 ||v_i||^2` by `L ||v||^2`, and the step-size formula is
//! only scale-invariant (`A -> cA` implies `gamma -> gamma / c^2`) with the
//! squared constant.

use crate::error::{Error, Result};

/// Two-step-size plan with admissibility flags and derived constants.
#[derive(Clone, Copy, Debug)]
pub struct StepSizePlan {
    /// Snapshot (full-gradient) step size.
    pub gamma0: f64,
    /// Inner stochastic step size.
    pub gamma1: f64,
    /// Aggressiveness parameter in `(0, 2)` used to derive `gamma0`;
    /// NaN when the plan was built from raw step sizes.
    pub alpha: f64,
    /// Safety factor in `(0, 1)` used to derive `gamma1`; NaN when the plan
    /// was built from raw step sizes.
    pub beta: f64,
    /// Inner steps per epoch.
    pub m: usize,
    /// Number of blocks.
    pub n_blocks: usize,
    /// `||A||`.
    pub op_norm: f64,
    /// `L = max_i ||A_i||^2`.
    pub block_lipschitz: f64,
    /// Both admissibility conditions hold strictly.
    pub admissible: bool,
    /// Stability constant, present only when admissible.
    pub c0: Option<f64>,
    /// Discrepancy-principle constant for a chosen `tau`; filled by
    /// [`StepSizePlan::with_dp_constant`]. May be negative.
    pub c1: Option<f64>,
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0) {
        return Err(Error::invalid(name, format!("must be > 0, got {v}")));
    }
    Ok(())
}

/// First admissibility margin `1 - gamma1 L`.
fn margin_inner(gamma1: f64, l: f64) -> f64 {
    1.0 - gamma1 * l
}

/// Second admissibility margin `2 gamma0 - gamma0^2 ||A||^2 - 2 m gamma1^2 L / N`.
fn margin_outer(gamma0: f64, gamma1: f64, op_norm: f64, l: f64, m: usize, n: usize) -> f64 {
    2.0 * gamma0 - gamma0 * gamma0 * op_norm * op_norm
        - 2.0 * m as f64 * gamma1 * gamma1 * l / n as f64
}

#[allow(clippy::too_many_arguments)]
fn build_plan(
    gamma0: f64,
    gamma1: f64,
    alpha: f64,
    beta: f64,
    op_norm: f64,
    l: f64,
    m: usize,
    n: usize,
) -> StepSizePlan {
    let mi = margin_inner(gamma1, l);
    let mo = margin_outer(gamma0, gamma1, op_norm, l, m, n);
    let admissible = mi > 0.0 && mo > 0.0;
    let c0 = admissible.then(|| {
        gamma0 * gamma0 / mo + m as f64 * gamma1 * gamma1 / (2.0 * n as f64 * mi)
    });
    StepSizePlan {
        gamma0,
        gamma1,
        alpha,
        beta,
        m,
        n_blocks: n,
        op_norm,
        block_lipschitz: l,
        admissible,
        c0,
        c1: None,
    }
}

/// Derives the plan
/// `gamma0 = alpha / ||A||^2`,
/// `gamma1 = beta * min(1/L, (1/||A||) * sqrt((2-alpha) alpha N / (2 m L)))`,
/// which is admissible for every `0 < alpha < 2` and `0 < beta < 1`.
pub fn plan_from_alpha_beta(
    alpha: f64,
    beta: f64,
    op_norm: f64,
    block_lipschitz: f64,
    m: usize,
    n_blocks: usize,
) -> Result<StepSizePlan> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::invalid(
            "alpha",
            format!("must lie in (0, 2), got {alpha}"),
        ));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(
            "beta",
            format!("must lie in (0, 1), got {beta}"),
        ));
    }
    check_positive("op_norm", op_norm)?;
    check_positive("block_lipschitz", block_lipschitz)?;
    if m == 0 {
        return Err(Error::invalid("m", "must be >= 1"));
    }
    if n_blocks == 0 {
        return Err(Error::invalid("n_blocks", "must be >= 1"));
    }
    let l = block_lipschitz;
    let gamma0 = alpha / (op_norm * op_norm);
    let gamma1 = beta
        * (1.0 / l).min(
            (1.0 / op_norm)
                * ((2.0 - alpha) * alpha * n_blocks as f64 / (2.0 * m as f64 * l)).sqrt(),
        );
    Ok(build_plan(
        gamma0, gamma1, alpha, beta, op_norm, l, m, n_blocks,
    ))
}

/// Builds a plan directly from raw step sizes, evaluating admissibility and
/// constants for the given operator norms. `alpha`/`beta` are recorded as NaN.
pub fn plan_from_gammas(
    gamma0: f64,
    gamma1: f64,
    op_norm: f64,
    block_lipschitz: f64,
    m: usize,
    n_blocks: usize,
) -> Result<StepSizePlan> {
    check_positive("gamma0", gamma0)?;
    check_positive("gamma1", gamma1)?;
    check_positive("op_norm", op_norm)?;
    check_positive("block_lipschitz", block_lipschitz)?;
    if m == 0 {
        return Err(Error::invalid("m", "must be >= 1"));
    }
    if n_blocks == 0 {
        return Err(Error::invalid("n_blocks", "must be >= 1"));
    }
    Ok(build_plan(
        gamma0,
        gamma1,
        f64::NAN,
        f64::NAN,
        op_norm,
        block_lipschitz,
        m,
        n_blocks,
    ))
}

/// The stability constant
/// `C0 = gamma0^2 / (2 gamma0 - gamma0^2 ||A||^2 - 2 m gamma1^2 L / N)
///     + m gamma1^2 / (2 N (1 - gamma1 L))`.
///
/// Errors when the plan is inadmissible (a denominator would be
/// nonpositive).
pub fn stability_constant_c0(plan: &StepSizePlan) -> Result<f64> {
    if !plan.admissible {
        return Err(Error::invalid(
            "plan",
            format!(
                "inadmissible plan: 1 - gamma1 L = {}, outer margin = {}",
                margin_inner(plan.gamma1, plan.block_lipschitz),
                margin_outer(
                    plan.gamma0,
                    plan.gamma1,
                    plan.op_norm,
                    plan.block_lipschitz,
                    plan.m,
                    plan.n_blocks
                )
            ),
        ));
    }
    Ok(plan.c0.expect("admissible plan carries C0"))
}

/// The discrepancy-principle constant
/// `c1 = 2 gamma0 - 2 gamma0 / tau - gamma0^2 ||A||^2 - 2 m gamma1^2 L / N
///     - m gamma1 / (2 N (1 - gamma1 L) tau^2)`.
///
/// The sign is reported, not enforced: published experiments run `tau` just
/// above 1 where `c1` is typically negative yet the discrepancy principle
/// still terminates in practice, and the caller must be able to explore that
/// regime.
pub fn dp_constant_c1(plan: &StepSizePlan, tau: f64) -> Result<f64> {
    if !(tau > 1.0) {
        return Err(Error::invalid("tau", format!("must be > 1, got {tau}")));
    }
    let mi = margin_inner(plan.gamma1, plan.block_lipschitz);
    if !(mi > 0.0) {
        return Err(Error::invalid(
            "plan",
            format!("requires gamma1 L < 1, got 1 - gamma1 L = {mi}"),
        ));
    }
    let (g0, g1) = (plan.gamma0, plan.gamma1);
    let (m, n) = (plan.m as f64, plan.n_blocks as f64);
    let l = plan.block_lipschitz;
    Ok(2.0 * g0
        - 2.0 * g0 / tau
        - g0 * g0 * plan.op_norm * plan.op_norm
        - 2.0 * m * g1 * g1 * l / n
        - m * g1 / (2.0 * n * mi * tau * tau))
}

impl StepSizePlan {
    /// Returns the plan with `c1` filled in for the given `tau`.
    pub fn with_dp_constant(mut self, tau: f64) -> Result<Self> {
        self.c1 = Some(dp_constant_c1(&self, tau)?);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn plan_example_unit_norms() {
        // alpha = 1, beta = 0.99, ||A|| = L = 1, m = N
        let p = plan_from_alpha_beta(1.0, 0.99, 1.0, 1.0, 10, 10).unwrap();
        assert_relative_eq!(p.gamma0, 1.0, max_relative = 1e-15);
        assert_relative_eq!(p.gamma1, 0.99 / 2.0f64.sqrt(), max_relative = 1e-15);
        assert!(p.admissible);
        // evaluate (SVRG.5) numerically as the oracle
        let lhs1 = 1.0 - p.gamma1 * 1.0;
        let lhs2 = 2.0 * p.gamma0 - p.gamma0 * p.gamma0 - 2.0 * p.gamma1 * p.gamma1;
        assert!(lhs1 > 0.0 && lhs2 > 0.0);
        assert_relative_eq!(lhs1, 1.0 - 0.99 / 2.0f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn plan_example_mixed_parameters() {
        // alpha = 1, beta = 0.99, ||A|| = 2, L = 1, N = 10, m = 1
        let p = plan_from_alpha_beta(1.0, 0.99, 2.0, 1.0, 1, 10).unwrap();
        assert_relative_eq!(p.gamma0, 0.25, max_relative = 1e-15);
        // min(1, 0.5 * sqrt(5)) = 1, so gamma1 = 0.99
        assert_relative_eq!(p.gamma1, 0.99, max_relative = 1e-15);
        assert!(p.admissible);
    }

    #[test]
    fn parameter_validation_names_bound() {
        for (alpha, beta) in [(0.0, 0.5), (2.0, 0.5), (1.0, 0.0), (1.0, 1.0)] {
            let err = plan_from_alpha_beta(alpha, beta, 1.0, 1.0, 1, 1).unwrap_err();
            match err {
                Error::InvalidParameter { name, .. } => {
                    assert!(name == "alpha" || name == "beta")
                }
                other => panic!("unexpected error {other:?}"),
            }
        }
        assert!(plan_from_alpha_beta(1.0, 0.5, 0.0, 1.0, 1, 1).is_err());
        assert!(plan_from_alpha_beta(1.0, 0.5, 1.0, -1.0, 1, 1).is_err());
        assert!(plan_from_alpha_beta(1.0, 0.5, 1.0, 1.0, 0, 1).is_err());
    }

    #[test]
    fn c0_direct_evaluation() {
        let p = plan_from_alpha_beta(1.0, 0.99, 1.0, 1.0, 10, 10).unwrap();
        let c0 = stability_constant_c0(&p).unwrap();
        // independent evaluation of the formula
        let g1 = 0.99 / 2.0f64.sqrt();
        let denom1 = 2.0 - 1.0 - 2.0 * g1 * g1;
        let expected = 1.0 / denom1 + g1 * g1 / (2.0 * (1.0 - g1));
        assert_relative_eq!(c0, expected, max_relative = 1e-12);
    }

    #[test]
    fn c0_small_gamma1_limit() {
        // gamma1 -> 0 with m fixed: C0 -> gamma0^2 / (2 gamma0 - gamma0^2 ||A||^2)
        let p = plan_from_gammas(0.5, 1e-9, 1.0, 1.0, 4, 8).unwrap();
        let c0 = stability_constant_c0(&p).unwrap();
        let limit = 0.25 / (1.0 - 0.25);
        assert_relative_eq!(c0, limit, max_relative = 1e-6);
    }

    #[test]
    fn c0_depends_on_m_only_through_ratio() {
        let a = plan_from_gammas(0.3, 0.2, 1.0, 1.0, 5, 50).unwrap();
        let b = plan_from_gammas(0.3, 0.2, 1.0, 1.0, 10, 100).unwrap();
        assert_eq!(
            stability_constant_c0(&a).unwrap().to_bits(),
            stability_constant_c0(&b).unwrap().to_bits()
        );
    }

    #[test]
    fn c0_rejects_inadmissible_plan() {
        // gamma1 L >= 1 violates the first condition
        let p = plan_from_gammas(0.5, 2.0, 1.0, 1.0, 1, 1).unwrap();
        assert!(!p.admissible);
        assert!(stability_constant_c0(&p).is_err());
    }

    #[test]
    fn c1_direct_evaluation() {
        let p = plan_from_gammas(0.1, 0.05, 1.0, 1.0, 1, 10).unwrap();
        let c1 = dp_constant_c1(&p, 4.0).unwrap();
        let expected = 0.2 - 0.05 - 0.01 - 0.0005 - 0.05 / (2.0 * 10.0 * 0.95 * 16.0);
        assert_relative_eq!(c1, expected, max_relative = 1e-14);
        assert!(c1 > 0.1393 && c1 < 0.1394);
    }

    #[test]
    fn c1_large_tau_limit() {
        let p = plan_from_gammas(0.1, 0.05, 1.0, 1.0, 1, 10).unwrap();
        let c1 = dp_constant_c1(&p, 1e12).unwrap();
        let limit = 0.2 - 0.01 - 0.0005;
        assert_relative_eq!(c1, limit, max_relative = 1e-9);
    }

    #[test]
    fn c1_rejects_tau_at_or_below_one() {
        let p = plan_from_gammas(0.1, 0.05, 1.0, 1.0, 1, 10).unwrap();
        assert!(dp_constant_c1(&p, 1.0).is_err());
        assert!(dp_constant_c1(&p, 0.5).is_err());
        assert!(p.with_dp_constant(1.01).is_ok());
    }

    #[test]
    fn remark_choice_is_always_admissible_on_test_problems() {
        // all alpha in {0.5, 1.0, 1.9}, beta = 0.99, three problems,
        // N in {100, 1000}, m in {N, N/10}
        for n in [100usize, 1000] {
            for p in [
                crate::problems::phillips(n).unwrap(),
                crate::problems::gravity(n, 0.25).unwrap(),
                crate::problems::shaw(n).unwrap(),
            ] {
                let op = p.operator.op_norm();
                let l = p.operator.block_lipschitz();
                for alpha in [0.5, 1.0, 1.9] {
                    for m in [n, n / 10] {
                        let plan = plan_from_alpha_beta(alpha, 0.99, op, l, m, n).unwrap();
                        assert!(
                            plan.admissible,
                            "{} N={n} m={m} alpha={alpha} inadmissible",
                            p.meta.name
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn c0_increasing_in_gamma1() {
        // finite sampling on the admissible region, other fields fixed
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=20 {
            let g1 = 0.03 * k as f64;
            let p = plan_from_gammas(0.5, g1, 1.0, 1.0, 2, 10).unwrap();
            if !p.admissible {
                break;
            }
            let c0 = stability_constant_c0(&p).unwrap();
            assert!(c0 > prev, "C0 not increasing at gamma1 = {g1}");
            prev = c0;
        }
        assert!(prev > f64::NEG_INFINITY);
    }
}
