//! Random instances and envy-free existence search.
//!
//! Utilities are drawn i.i.d. from a configurable distribution on [0,1].
//! Every draw is keyed by (seed, trial, agent, good) through a counter-based
//! generator, so a given entry has the same value no matter which order or
//! thread produced it. For a fixed complete allocation A, assigning each
//! agent to her favorite bundle is envy-free exactly when the favorite
//! counts hit the group sizes (the event E_A); existence of an envy-free
//! outcome is then a disjunction of E_A over allocations, searched either
//! exhaustively ([`exists_ef_exact`]) or over random balanced allocations
//! ([`randomized_ef_search`]).
//!
//! [`bounds`] evaluates the closed-form probability estimates this picture
//! leads to: the equal-cell multinomial mass, its Stirling sandwich, and
//! the union bounds that locate the phase transition.

pub mod bounds;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mix::{mix, unit_open};
use crate::model::{is_efc, Allocation, GoodSet, GroupPartition, Instance, Outcome, UtilityModel};

/// Cap on the exhaustive search space of [`exists_ef_exact`].
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 100_000_000;

/// Cap on the default trial count of [`randomized_ef_search`].
pub const DEFAULT_TRIAL_CAP: u64 = 100_000;

/// Distribution of a single utility entry; support is inside [0,1] and has
/// no point masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    /// Uniform on (0,1).
    Uniform,
    /// Beta(alpha, beta).
    Beta { alpha: f64, beta: f64 },
    /// Normal(mu, sigma) conditioned on landing in [0,1].
    TruncatedNormal { mu: f64, sigma: f64 },
}

/// A utility distribution together with the master seed that makes draws
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomModel {
    pub distribution: Distribution,
    pub seed: u64,
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Uniform => Ok(()),
            Distribution::Beta { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "beta parameters must be positive and finite, got ({alpha}, {beta})"
                    )));
                }
                Ok(())
            }
            Distribution::TruncatedNormal { mu, sigma } => {
                if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "truncated normal needs finite mu and positive sigma, got ({mu}, {sigma})"
                    )));
                }
                let (lo, hi) = phi_bounds(mu, sigma);
                if hi - lo < 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "normal({mu}, {sigma}) has no usable mass inside [0,1]"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Mean of the clipped distribution.
    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Uniform => 0.5,
            Distribution::Beta { alpha, beta } => alpha / (alpha + beta),
            Distribution::TruncatedNormal { mu, sigma } => {
                let (a, b) = ((0.0 - mu) / sigma, (1.0 - mu) / sigma);
                let z = std_cdf(b) - std_cdf(a);
                mu + sigma * (std_pdf(a) - std_pdf(b)) / z
            }
        }
    }

    /// Variance of the clipped distribution.
    pub fn variance(&self) -> f64 {
        match *self {
            Distribution::Uniform => 1.0 / 12.0,
            Distribution::Beta { alpha, beta } => {
                let s = alpha + beta;
                alpha * beta / (s * s * (s + 1.0))
            }
            Distribution::TruncatedNormal { mu, sigma } => {
                let (a, b) = ((0.0 - mu) / sigma, (1.0 - mu) / sigma);
                let z = std_cdf(b) - std_cdf(a);
                let ratio = (std_pdf(a) - std_pdf(b)) / z;
                sigma * sigma * (1.0 + (a * std_pdf(a) - b * std_pdf(b)) / z - ratio * ratio)
            }
        }
    }

    /// Quantile function Q(p) for p in (0,1).
    pub fn quantile(&self, p: f64) -> f64 {
        debug_assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1)");
        match *self {
            Distribution::Uniform => p,
            Distribution::Beta { alpha, beta } => {
                let d = Beta::new(alpha, beta).expect("validated parameters");
                // statrs bisects to roughly 1e-4; Newton steps against the
                // exact cdf/pdf sharpen the root.
                let mut q = d.inverse_cdf(p);
                for _ in 0..4 {
                    let density = d.pdf(q);
                    if !(density.is_finite() && density > 0.0) {
                        break;
                    }
                    q = (q - (d.cdf(q) - p) / density).clamp(0.0, 1.0);
                }
                q
            }
            Distribution::TruncatedNormal { mu, sigma } => {
                let (lo, hi) = phi_bounds(mu, sigma);
                let target = lo + p * (hi - lo);
                let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(target);
                (mu + sigma * z).clamp(0.0, 1.0)
            }
        }
    }
}

fn std_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Standard-normal CDF at the clip boundaries of a truncated normal.
fn phi_bounds(mu: f64, sigma: f64) -> (f64, f64) {
    (std_cdf((0.0 - mu) / sigma), std_cdf((1.0 - mu) / sigma))
}

impl RandomModel {
    pub fn new(distribution: Distribution, seed: u64) -> Result<Self> {
        distribution.validate()?;
        Ok(RandomModel { distribution, seed })
    }

    pub fn mean(&self) -> f64 {
        self.distribution.mean()
    }

    pub fn variance(&self) -> f64 {
        self.distribution.variance()
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.distribution.quantile(p)
    }
}

/// One utility entry, keyed so the value is independent of evaluation
/// order: the uniform input comes from (seed, trial, agent, good) and is
/// pushed through the quantile function.
pub(crate) fn keyed_draw(
    dist: &Distribution,
    seed: u64,
    trial: u64,
    agent: usize,
    good: usize,
) -> f64 {
    let u = unit_open(mix(&[seed, trial, agent as u64, good as u64]));
    dist.quantile(u)
}

/// Additive instance with i.i.d. entries for the given trial index.
pub fn sample_instance_trial(
    sizes: &[usize],
    m: usize,
    model: &RandomModel,
    trial: u64,
) -> Result<Instance> {
    model.distribution.validate()?;
    let n: usize = sizes.iter().sum();
    let matrix: Vec<Vec<f64>> = (1..=n)
        .map(|a| {
            (1..=m)
                .map(|g| keyed_draw(&model.distribution, model.seed, trial, a, g))
                .collect()
        })
        .collect();
    Instance::new(sizes.to_vec(), UtilityModel::additive(matrix)?)
}

/// Additive instance with i.i.d. entries, deterministic in the model seed.
pub fn sample_instance(sizes: &[usize], m: usize, model: &RandomModel) -> Result<Instance> {
    sample_instance_trial(sizes, m, model, 0)
}

/// Favorite-bundle tallies for a fixed complete allocation: agent a goes to
/// the bundle maximizing her utility (lowest index on ties), inducing a
/// tentative partition whose group sizes are the counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArgmaxCounts {
    pub counts: Vec<usize>,
    pub partition: GroupPartition,
}

pub fn argmax_partition(instance: &Instance, allocation: &Allocation) -> Result<ArgmaxCounts> {
    instance.validate_allocation(allocation)?;
    if !allocation.complete() {
        return Err(Error::InvalidArgument(
            "argmax partition needs a complete allocation".into(),
        ));
    }
    let k = instance.k();
    let mut groups = vec![std::collections::BTreeSet::new(); k];
    let mut counts = vec![0usize; k];
    for a in 1..=instance.n() {
        let mut best = 0usize;
        let mut best_val = f64::NEG_INFINITY;
        for (j, bundle) in allocation.bundles().iter().enumerate() {
            let v = instance.eval(a - 1, bundle.iter().copied());
            if v > best_val {
                best_val = v;
                best = j;
            }
        }
        groups[best].insert(a);
        counts[best] += 1;
    }
    Ok(ArgmaxCounts {
        counts,
        partition: GroupPartition::new(groups)?,
    })
}

/// The event E_A: favorite counts land exactly on the prescribed group
/// sizes, so the argmax partition is a valid (and envy-free) seating. With
/// unequal sizes this is the natural generalization of the equal-size
/// event; treat results off the equal-size diet as experimental.
pub fn check_event_ea(instance: &Instance, allocation: &Allocation) -> Result<bool> {
    Ok(argmax_partition(instance, allocation)?.counts == instance.group_sizes())
}

/// Exhaustive envy-free existence with the default enumeration budget.
pub fn exists_ef_exact(instance: &Instance) -> Result<Option<Outcome>> {
    exists_ef_exact_with_budget(instance, DEFAULT_ENUMERATION_BUDGET)
}

/// Walks all k^m complete allocations in lexicographic order of the
/// good-to-group assignment vector and returns the first whose argmax
/// partition fills every group exactly (verified envy-free). `None` means
/// no allocation anywhere satisfies E_A.
///
/// With atomless utilities this is equivalent to envy-free existence; on
/// adversarial inputs with exact ties E_A can fail even though some other
/// seating is envy-free, so tied fixtures belong to a partition-enumerating
/// oracle instead.
pub fn exists_ef_exact_with_budget(instance: &Instance, budget: u128) -> Result<Option<Outcome>> {
    let (k, m, n) = (instance.k(), instance.m(), instance.n());
    let required = (k as u128)
        .checked_pow(m as u32)
        .ok_or(Error::BudgetExceeded {
            required: u128::MAX,
            budget,
        })?;
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }

    // Odometer over assignment vectors (good m spins fastest). Bundle
    // values are evaluated freshly per candidate so the argmax sees
    // exactly the sums the envy checker would; incremental updates round
    // differently and could disagree on knife-edge instances.
    let mut assign = vec![0usize; m]; // assign[g-1] = 0-based group
    let mut bundles_scratch: Vec<Vec<usize>> = vec![Vec::new(); k];
    loop {
        for b in &mut bundles_scratch {
            b.clear();
        }
        for g in 1..=m {
            bundles_scratch[assign[g - 1]].push(g);
        }
        let mut counts = vec![0usize; k];
        let mut feasible = true;
        for a0 in 0..n {
            let mut best = 0usize;
            let mut best_val = f64::NEG_INFINITY;
            for (j, bundle) in bundles_scratch.iter().enumerate() {
                let v = instance.eval_slice(a0, bundle);
                if v > best_val {
                    best_val = v;
                    best = j;
                }
            }
            counts[best] += 1;
            if counts[best] > instance.group_sizes()[best] {
                feasible = false;
                break;
            }
        }
        if feasible && counts == instance.group_sizes() {
            let bundles: Vec<GoodSet> = bundles_scratch
                .iter()
                .map(|b| b.iter().copied().collect())
                .collect();
            let allocation = Allocation::new(m, bundles)?;
            let tally = argmax_partition(instance, &allocation)?;
            let outcome = Outcome::new(instance, tally.partition, allocation)?;
            if !is_efc(instance, &outcome, 0)? {
                return Err(Error::InvariantViolation(
                    "argmax seating with exact counts must be envy-free".into(),
                ));
            }
            return Ok(Some(outcome));
        }
        // Advance to the lexicographic successor.
        let mut g = m;
        loop {
            if g == 0 {
                return Ok(None);
            }
            if assign[g - 1] + 1 < k {
                assign[g - 1] += 1;
                break;
            }
            assign[g - 1] = 0;
            g -= 1;
        }
    }
}

/// Uniformly random balanced allocation: a shuffled deal of m goods into k
/// bundles of m/k each.
pub fn sample_balanced_allocation<R: Rng>(m: usize, k: usize, rng: &mut R) -> Result<Allocation> {
    if k == 0 || !m.is_multiple_of(k) {
        return Err(Error::InvalidArgument(format!(
            "balanced allocation needs k | m, got m={m}, k={k}"
        )));
    }
    let mut goods: Vec<usize> = (1..=m).collect();
    goods.shuffle(rng);
    let per = m / k;
    let bundles: Vec<GoodSet> = (0..k)
        .map(|j| goods[j * per..(j + 1) * per].iter().copied().collect())
        .collect();
    Allocation::new(m, bundles)
}

/// Default sample count for the randomized search: n^{2k} capped.
pub fn default_randomized_trials(n: usize, k: usize) -> u64 {
    let mut acc: u128 = 1;
    for _ in 0..2 * k {
        acc = acc.saturating_mul(n as u128);
        if acc >= DEFAULT_TRIAL_CAP as u128 {
            return DEFAULT_TRIAL_CAP;
        }
    }
    acc as u64
}

/// Draws balanced allocations from the seeded stream until one satisfies
/// E_A; the argmax seating of a hit is returned as a verified envy-free
/// outcome. `None` trial count means the n^{2k} default (capped).
pub fn randomized_ef_search(
    instance: &Instance,
    trials: Option<u64>,
    seed: u64,
) -> Result<Option<Outcome>> {
    let (n, k, m) = (instance.n(), instance.k(), instance.m());
    if m % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "randomized search needs k | m, got m={m}, k={k}"
        )));
    }
    if instance.group_sizes().iter().any(|&s| s != n / k) {
        return Err(Error::InvalidArgument(
            "randomized search expects equal group sizes".into(),
        ));
    }
    let trials = trials.unwrap_or_else(|| default_randomized_trials(n, k));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let allocation = sample_balanced_allocation(m, k, &mut rng)?;
        let tally = argmax_partition(instance, &allocation)?;
        if tally.counts == instance.group_sizes() {
            let outcome = Outcome::new(instance, tally.partition, allocation)?;
            if !is_efc(instance, &outcome, 0)? {
                return Err(Error::InvariantViolation(
                    "argmax seating with exact counts must be envy-free".into(),
                ));
            }
            return Ok(Some(outcome));
        }
    }
    Ok(None)
}

/// Intersection-balance check: every |A_i ∩ A'_j| must lie within
/// [m(1-δ)/k², m(1+δ)/k²]. Both allocations must be balanced over the same
/// goods.
pub fn is_delta_ib(a: &Allocation, a_prime: &Allocation, delta: f64) -> Result<bool> {
    if a.m() != a_prime.m() || a.k() != a_prime.k() {
        return Err(Error::InvalidArgument(
            "intersection balance needs allocations over the same m and k".into(),
        ));
    }
    let (m, k) = (a.m(), a.k());
    for alloc in [a, a_prime] {
        if !alloc.complete() || alloc.bundles().iter().any(|b| b.len() != m / k) || m % k != 0 {
            return Err(Error::InvalidArgument(
                "intersection balance needs balanced complete allocations".into(),
            ));
        }
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid delta {delta}")));
    }
    let lo = m as f64 * (1.0 - delta) / (k * k) as f64;
    let hi = m as f64 * (1.0 + delta) / (k * k) as f64;
    for bi in a.bundles() {
        for bj in a_prime.bundles() {
            let inter = bi.intersection(bj).count() as f64;
            if inter < lo || inter > hi {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Exact equal-cell multinomial mass Mult(n, p){(n/k, ..., n/k)}, via
/// log-gamma so large n stays finite.
pub fn multinomial_mass_equal(n: usize, k: usize, p: &[f64]) -> Result<f64> {
    if k == 0 || !n.is_multiple_of(k) {
        return Err(Error::InvalidArgument(format!(
            "equal-cell mass needs k | n, got n={n}, k={k}"
        )));
    }
    if p.len() != k {
        return Err(Error::InvalidArgument(format!(
            "probability vector has {} entries, expected {k}",
            p.len()
        )));
    }
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::InvalidArgument(
            "probabilities must be non-negative".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }
    let b = n / k;
    if b > 0 && p.contains(&0.0) {
        return Ok(0.0);
    }
    use statrs::function::gamma::ln_gamma;
    let mut log_mass = ln_gamma(n as f64 + 1.0) - k as f64 * ln_gamma(b as f64 + 1.0);
    for &x in p {
        log_mass += b as f64 * x.ln();
    }
    Ok(log_mass.exp())
}

/// Empirical joint favorite-bundle frequencies: a fresh utility vector is
/// drawn per trial (keyed by the model seed and trial index) and the
/// favorite bundle under each allocation is tallied. Entries sum to 1.
pub fn estimate_pair_probs(
    a: &Allocation,
    a_prime: &Allocation,
    model: &RandomModel,
    trials: u64,
) -> Result<Vec<Vec<f64>>> {
    if trials == 0 {
        return Err(Error::InvalidArgument(
            "pair probabilities need at least one trial".into(),
        ));
    }
    if a.m() != a_prime.m() || a.k() != a_prime.k() {
        return Err(Error::InvalidArgument(
            "pair probabilities need allocations over the same m and k".into(),
        ));
    }
    model.distribution.validate()?;
    let (m, k) = (a.m(), a.k());
    let mut tally = vec![vec![0u64; k]; k];
    let mut utils = vec![0.0f64; m];
    for t in 0..trials {
        for g in 1..=m {
            utils[g - 1] = keyed_draw(&model.distribution, model.seed, t, 1, g);
        }
        let fav = |alloc: &Allocation| {
            let mut best = 0usize;
            let mut best_val = f64::NEG_INFINITY;
            for (j, bundle) in alloc.bundles().iter().enumerate() {
                let v: f64 = bundle.iter().map(|&g| utils[g - 1]).sum();
                if v > best_val {
                    best_val = v;
                    best = j;
                }
            }
            best
        };
        tally[fav(a)][fav(a_prime)] += 1;
    }
    Ok(tally
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / trials as f64).collect())
        .collect())
}
