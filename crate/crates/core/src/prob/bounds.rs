//! Closed-form probability bounds for envy-free existence.
//!
//! For utilities drawn i.i.d. the per-allocation success chance of the
//! favorite-count event is an equal-cell multinomial mass; Stirling's
//! approximation sandwiches that mass between explicit expressions, and
//! multiplying by the number of allocations gives first-moment bounds on
//! existence. The nondivisible variants replace the exact mass with a
//! concentration bound driven by the median gap alpha = Q_D(1/2)/1024.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::prob::RandomModel;

/// Evaluated bounds at one (n, m, k, distribution) point. The divisible
/// bounds take m as a real so asymptotic diets like m = ln(n)/4 can be
/// probed directly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// Stirling upper bound k^{k/2} / (2 pi n)^{(k-1)/2} on the
    /// equal-cell mass, an upper estimate of each allocation's success
    /// probability.
    pub first_moment_upper: f64,
    /// Matching lower bound e^{-k^2/n} times the upper bound.
    pub first_moment_lower: f64,
    /// Union bound k^m times the per-allocation upper bound.
    pub divisible_union_bound: f64,
    /// Concentration bound sqrt(k) * exp(-alpha^2 n / (k^4 m)) for a
    /// single allocation when bundle sizes need not divide evenly.
    pub nondivisible_per_alloc_bound: f64,
    /// Union bound k^m times the nondivisible per-allocation bound.
    pub nondivisible_union_bound: f64,
}

/// Stirling upper bound on the equal-cell multinomial mass at n trials.
pub fn stirling_upper(n: usize, k: usize) -> f64 {
    let (n, kf) = (n as f64, k as f64);
    kf.powf(kf / 2.0) / (2.0 * std::f64::consts::PI * n).powf((kf - 1.0) / 2.0)
}

/// Matching lower bound: e^{-k^2/n} times [`stirling_upper`].
pub fn stirling_lower(n: usize, k: usize) -> f64 {
    (-((k * k) as f64) / n as f64).exp() * stirling_upper(n, k)
}

pub fn bound_evaluators(n: usize, m: f64, k: usize, model: &RandomModel) -> Result<BoundReport> {
    if n == 0 || k < 2 {
        return Err(Error::InvalidArgument(format!(
            "bounds need n >= 1 and k >= 2, got n={n}, k={k}"
        )));
    }
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bounds need finite m > 0, got {m}"
        )));
    }
    model.distribution.validate()?;

    let kf = k as f64;
    let nf = n as f64;
    let upper = stirling_upper(n, k);
    let lower = stirling_lower(n, k);
    // k^m through logs so large m degrades to +inf instead of panicking.
    let ln_km = m * kf.ln();
    let divisible_union = (ln_km + upper.ln()).exp();

    let alpha = model.quantile(0.5) / 1024.0;
    let per_alloc = kf.sqrt() * (-(alpha * alpha) * nf / (kf.powi(4) * m)).exp();
    let nondivisible_union = (ln_km + per_alloc.ln()).exp();

    Ok(BoundReport {
        first_moment_upper: upper,
        first_moment_lower: lower,
        divisible_union_bound: divisible_union,
        nondivisible_per_alloc_bound: per_alloc,
        nondivisible_union_bound: nondivisible_union,
    })
}
