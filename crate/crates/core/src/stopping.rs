//! A-priori stopping index selection.
//!
//! The rate-optimal rule `n_delta = round(c / delta)` matches the
//! `n_delta ~ delta^{-1}` choice that yields the `O(delta)` error bound under
//! the benchmark source condition. The general rule
//! `n_delta = round(c * delta^{-p})` with `0 < p < 2` satisfies
//! `n_delta -> infinity` and `delta^2 n_delta -> 0`, which is all that plain
//! convergence requires.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AprioriRule {
    /// `n_delta = max(1, round(c / delta))`.
    RateOptimal { c: f64 },
    /// `n_delta = max(1, round(c * delta^{-p}))` with `0 < p < 2`.
    General { c: f64, p: f64 },
}

impl AprioriRule {
    pub fn rate_optimal(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::invalid("c", format!("must be > 0, got {c}")));
        }
        Ok(AprioriRule::RateOptimal { c })
    }

    pub fn general(c: f64, p: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::invalid("c", format!("must be > 0, got {c}")));
        }
        if !(p > 0.0 && p < 2.0) {
            return Err(Error::invalid(
                "p",
                format!("must lie in (0, 2), got {p}"),
            ));
        }
        Ok(AprioriRule::General { c, p })
    }
}

/// Stopping index for a positive noise level; floored at 1.
pub fn apriori_index(rule: &AprioriRule, delta: f64) -> Result<usize> {
    if !(delta > 0.0) {
        return Err(Error::invalid(
            "delta",
            format!("a-priori rules need a positive noise level, got {delta}"),
        ));
    }
    let raw = match *rule {
        AprioriRule::RateOptimal { c } => c / delta,
        AprioriRule::General { c, p } => c * delta.powf(-p),
    };
    Ok((raw.round() as usize).max(1))
}
