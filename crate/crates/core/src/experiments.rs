//! Reproducible Monte Carlo sweeps and stress suites.
//!
//! A sweep walks a grid of (sizes, m) cells, samples `trials` instances
//! per cell, applies the configured method, and writes one CSV row per
//! cell with a Wilson 95% interval around the empirical success rate.
//! Every random draw is keyed by (master seed, cell index, trial index),
//! so results are independent of worker count and execution order; only
//! the timing column varies between runs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::connected::{connected_allocation_count, solve_connected_ef1};
use crate::ef1::solve_ef1;
use crate::error::{Error, Result};
use crate::mix::mix;
use crate::model::{is_efc, Instance, UtilityModel, TABLE_GOODS_CAP};
use crate::prob::{
    default_randomized_trials, exists_ef_exact_with_budget, randomized_ef_search,
    sample_instance_trial, Distribution, RandomModel,
};

/// z for a central 95% normal interval.
pub const WILSON_Z: f64 = 1.959963984540054;

/// Environment variable supplying the default worker count.
pub const WORKERS_ENV: &str = "GROUPFAIR_WORKERS";

/// Schema version stamped into sweep results.
pub const ARTIFACT_VERSION: &str = "1";

/// Cells whose exact search space k^m stays within this bound run the
/// exhaustive oracle; larger cells fall back to the randomized method.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Randomized-search trial count used when a cell falls back from exact.
pub const FALLBACK_SEARCH_TRIALS: u64 = 100_000;

fn default_enumeration_cap() -> u128 {
    DEFAULT_ENUMERATION_CAP
}

/// What a sweep does with each sampled instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Exhaustive envy-free existence (falls back to randomized search
    /// when k^m exceeds the enumeration cap).
    Exact,
    /// Randomized balanced-allocation search for an envy-free outcome.
    Randomized,
    /// Solve with envy cycle elimination and check EF1.
    Ef1Stress,
    /// Solve the connected problem and check EF1.
    ConnectedStress,
}

/// Utility generator for stress cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    #[default]
    Additive,
    /// Random monotone set-function tables (m capped by the table limit).
    Table,
}

/// One grid point: group sizes and good count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCell {
    pub sizes: Vec<usize>,
    pub m: usize,
}

impl SweepCell {
    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub cells: Vec<SweepCell>,
    pub trials: u64,
    pub method: Method,
    pub distribution: Distribution,
    pub seed: u64,
    /// Worker threads; `None` defers to GROUPFAIR_WORKERS, then to the
    /// rayon default.
    #[serde(default)]
    pub workers: Option<usize>,
    /// CSV destination; the CLI flag overrides this.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub utility_kind: UtilityKind,
    /// Allocation-count cap: exact cells above it fall back to randomized
    /// search, and connected-stress cells above it are rejected.
    #[serde(default = "default_enumeration_cap")]
    pub enumeration_cap: u128,
    /// Trial count for the randomized method; `None` means the n^{2k}
    /// default for randomized cells and the fixed fallback count for
    /// downgraded exact cells.
    #[serde(default)]
    pub randomized_trials: Option<u64>,
    /// Wall-clock budget per cell; exceeding it marks the cell incomplete
    /// and the sweep moves on.
    #[serde(default)]
    pub cell_time_budget_ms: Option<u64>,
}

impl SweepConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: SweepConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// SHA-256 of the canonical JSON form, stamped into results so a CSV
    /// can be traced back to its exact configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.cells.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        self.distribution
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for (idx, cell) in self.cells.iter().enumerate() {
            let (n, k, m) = (cell.n(), cell.k(), cell.m);
            if k < 2 || cell.sizes.contains(&0) {
                return Err(Error::InvalidConfig(format!(
                    "cell {idx}: need k >= 2 groups of size >= 1, got {:?}",
                    cell.sizes
                )));
            }
            match self.method {
                Method::Exact => {}
                Method::Randomized => {
                    if m % k != 0 || cell.sizes.iter().any(|&s| s != n / k) {
                        return Err(Error::InvalidConfig(format!(
                            "cell {idx}: randomized method needs k | m and equal sizes"
                        )));
                    }
                }
                Method::Ef1Stress => {
                    if self.utility_kind == UtilityKind::Table && m > TABLE_GOODS_CAP {
                        return Err(Error::InvalidConfig(format!(
                            "cell {idx}: table utilities support at most {TABLE_GOODS_CAP} goods"
                        )));
                    }
                }
                Method::ConnectedStress => {
                    if connected_allocation_count(m, k) > self.enumeration_cap {
                        return Err(Error::InvalidConfig(format!(
                            "cell {idx}: connected cut space exceeds the enumeration cap"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-cell sweep statistics. `method` records what actually ran, which
/// for exact cells above the enumeration cap is the randomized fallback.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub n: usize,
    pub k: usize,
    pub sizes: Vec<usize>,
    pub m: usize,
    pub method: &'static str,
    pub trials: u64,
    pub successes: u64,
    pub p_hat: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub seed: u64,
    pub mean_ms: f64,
    /// False when the cell's time budget expired before all trials ran.
    pub complete: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub config_hash: String,
    pub version: String,
}

impl SweepResult {
    pub fn all_complete(&self) -> bool {
        self.cells.iter().all(|c| c.complete)
    }
}

/// Wilson 95% score interval for `successes` hits in `trials` draws.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let (s, n) = (successes as f64, trials as f64);
    let p = s / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let radius = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // At p = 0 (resp. 1) the bound collapses to exactly 0 (resp. 1);
    // rounding can land one ulp inside, so pin the algebraic value.
    let lo = if successes == 0 {
        0.0
    } else {
        ((center - radius) / denom).clamp(0.0, 1.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        ((center + radius) / denom).clamp(0.0, 1.0)
    };
    (lo, hi)
}

/// Worker count: explicit config, then the environment default, then the
/// ambient rayon pool size.
pub fn resolve_workers(config: &SweepConfig) -> usize {
    config
        .workers
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(rayon::current_num_threads)
        .max(1)
}

/// Random monotone table utilities: each agent gets a set function built
/// by closing random increments under single-good monotonicity.
fn random_table_matrix<R: Rng>(rng: &mut R, n: usize, m: usize) -> Vec<Vec<f64>> {
    let full = 1usize << m;
    (0..n)
        .map(|_| {
            let mut t = vec![0.0f64; full];
            for mask in 1..full {
                // Raise each set at least to its largest single-removal
                // subset, plus a random increment.
                let mut floor = 0.0f64;
                for g in 0..m {
                    if mask & (1 << g) != 0 {
                        floor = floor.max(t[mask & !(1 << g)]);
                    }
                }
                t[mask] = floor + rng.gen_range(0.0..1.0);
            }
            t
        })
        .collect()
}

fn stress_instance(
    cell: &SweepCell,
    kind: UtilityKind,
    dist: &Distribution,
    cell_seed: u64,
    trial: u64,
) -> Result<Instance> {
    match kind {
        UtilityKind::Additive => {
            let model = RandomModel {
                distribution: dist.clone(),
                seed: cell_seed,
            };
            sample_instance_trial(&cell.sizes, cell.m, &model, trial)
        }
        UtilityKind::Table => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cell_seed, trial]));
            let tables = random_table_matrix(&mut rng, cell.n(), cell.m);
            Instance::new(cell.sizes.clone(), UtilityModel::table(tables)?)
        }
    }
}

/// Runs one trial; returns success plus the method that actually ran.
fn run_trial(
    config: &SweepConfig,
    cell: &SweepCell,
    cell_seed: u64,
    trial: u64,
) -> Result<(bool, &'static str)> {
    let (k, m) = (cell.k(), cell.m);
    match config.method {
        Method::Exact => {
            let space = (k as u128).checked_pow(m as u32);
            let model = RandomModel {
                distribution: config.distribution.clone(),
                seed: cell_seed,
            };
            let inst = sample_instance_trial(&cell.sizes, m, &model, trial)?;
            match space {
                Some(space) if space <= config.enumeration_cap => {
                    let hit = exists_ef_exact_with_budget(&inst, config.enumeration_cap)?;
                    Ok((hit.is_some(), "exact"))
                }
                _ => {
                    let t = config.randomized_trials.unwrap_or(FALLBACK_SEARCH_TRIALS);
                    let search_seed = mix(&[cell_seed, trial, 1]);
                    let hit = randomized_ef_search(&inst, Some(t), search_seed)?;
                    Ok((hit.is_some(), "randomized"))
                }
            }
        }
        Method::Randomized => {
            let model = RandomModel {
                distribution: config.distribution.clone(),
                seed: cell_seed,
            };
            let inst = sample_instance_trial(&cell.sizes, m, &model, trial)?;
            let t = config
                .randomized_trials
                .unwrap_or_else(|| default_randomized_trials(inst.n(), k));
            let search_seed = mix(&[cell_seed, trial, 1]);
            let hit = randomized_ef_search(&inst, Some(t), search_seed)?;
            Ok((hit.is_some(), "randomized"))
        }
        Method::Ef1Stress => {
            let inst = stress_instance(
                cell,
                config.utility_kind,
                &config.distribution,
                cell_seed,
                trial,
            )?;
            let (outcome, trace) = solve_ef1(&inst, None)?;
            trace.validate()?;
            Ok((is_efc(&inst, &outcome, 1)?, "ef1-stress"))
        }
        Method::ConnectedStress => {
            let inst = stress_instance(
                cell,
                config.utility_kind,
                &config.distribution,
                cell_seed,
                trial,
            )?;
            let outcome = solve_connected_ef1(&inst)?;
            Ok((is_efc(&inst, &outcome, 1)?, "connected-stress"))
        }
    }
}

fn run_cell(config: &SweepConfig, idx: usize, cell: &SweepCell) -> Result<CellResult> {
    let cell_seed = mix(&[config.seed, idx as u64]);
    let started = Instant::now();
    let mut successes = 0u64;
    let mut done = 0u64;
    let mut method_used = match config.method {
        Method::Exact => "exact",
        Method::Randomized => "randomized",
        Method::Ef1Stress => "ef1-stress",
        Method::ConnectedStress => "connected-stress",
    };
    let mut complete = true;
    for trial in 0..config.trials {
        if let Some(budget) = config.cell_time_budget_ms {
            if started.elapsed().as_millis() as u64 > budget {
                complete = false;
                break;
            }
        }
        let (success, used) = run_trial(config, cell, cell_seed, trial)?;
        method_used = used;
        done += 1;
        if success {
            successes += 1;
        }
    }
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    let p_hat = if done > 0 {
        successes as f64 / done as f64
    } else {
        0.0
    };
    let (wilson_lo, wilson_hi) = wilson_interval(successes, done);
    Ok(CellResult {
        n: cell.n(),
        k: cell.k(),
        sizes: cell.sizes.clone(),
        m: cell.m,
        method: method_used,
        trials: done,
        successes,
        p_hat,
        wilson_lo,
        wilson_hi,
        seed: cell_seed,
        mean_ms: if done > 0 {
            elapsed_ms / done as f64
        } else {
            0.0
        },
        complete,
    })
}

/// Runs the whole grid, writing the CSV when an output path is set.
/// Cells are dispatched to a worker pool; per-cell seeds are derived from
/// the master seed and the cell index, so the statistical columns are
/// identical for any worker count.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let workers = resolve_workers(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let cells: Vec<CellResult> = pool.install(|| {
        use rayon::prelude::*;
        config
            .cells
            .par_iter()
            .enumerate()
            .map(|(idx, cell)| run_cell(config, idx, cell))
            .collect::<Result<Vec<_>>>()
    })?;
    let result = SweepResult {
        cells,
        config_hash: config.config_hash(),
        version: ARTIFACT_VERSION.to_string(),
    };
    if let Some(path) = &config.out {
        write_csv(&result, path)?;
    }
    Ok(result)
}

/// Pinned CSV schema, one row per cell. Sizes are dash-joined; the hash
/// and version ride in a comment-free trailing metadata row would break
/// consumers, so they live only in [`SweepResult`].
pub fn write_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "n",
        "k",
        "sizes",
        "m",
        "method",
        "trials",
        "successes",
        "p_hat",
        "wilson_lo",
        "wilson_hi",
        "seed",
        "mean_ms",
    ])?;
    for cell in &result.cells {
        let sizes = cell
            .sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("-");
        writer.write_record([
            cell.n.to_string(),
            cell.k.to_string(),
            sizes,
            cell.m.to_string(),
            cell.method.to_string(),
            cell.trials.to_string(),
            cell.successes.to_string(),
            cell.p_hat.to_string(),
            cell.wilson_lo.to_string(),
            cell.wilson_hi.to_string(),
            cell.seed.to_string(),
            format!("{:.3}", cell.mean_ms),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// One EF1-solver run kept for scaling analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OpsSample {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub ops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StressFailure {
    pub cell: usize,
    pub trial: u64,
    pub message: String,
}

/// Outcome of a stress suite: every trial must pass; failures list the
/// offending (cell, trial) pairs.
#[derive(Debug, Clone, Serialize)]
pub struct StressReport {
    pub trials: u64,
    pub failures: Vec<StressFailure>,
    pub ops: Vec<OpsSample>,
}

impl StressReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn run_stress(config: &SweepConfig, method: Method) -> Result<StressReport> {
    let mut forced = config.clone();
    forced.method = method;
    forced.validate()?;
    let mut report = StressReport {
        trials: 0,
        failures: Vec::new(),
        ops: Vec::new(),
    };
    for (idx, cell) in forced.cells.iter().enumerate() {
        let cell_seed = mix(&[forced.seed, idx as u64]);
        for trial in 0..forced.trials {
            report.trials += 1;
            let inst = stress_instance(
                cell,
                forced.utility_kind,
                &forced.distribution,
                cell_seed,
                trial,
            )?;
            let pass = match method {
                Method::Ef1Stress => {
                    let (outcome, trace) = solve_ef1(&inst, None)?;
                    trace.validate()?;
                    report.ops.push(OpsSample {
                        n: cell.n(),
                        k: cell.k(),
                        m: cell.m,
                        ops: trace.ops,
                    });
                    is_efc(&inst, &outcome, 1)?
                }
                Method::ConnectedStress => {
                    let outcome = solve_connected_ef1(&inst)?;
                    is_efc(&inst, &outcome, 1)?
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "stress runner only handles the stress methods".into(),
                    ))
                }
            };
            if !pass {
                report.failures.push(StressFailure {
                    cell: idx,
                    trial,
                    message: format!(
                        "EF1 check failed: sizes {:?}, m={}, trial {trial}",
                        cell.sizes, cell.m
                    ),
                });
            }
        }
    }
    Ok(report)
}

/// Solves every cell's instances with envy cycle elimination and checks
/// EF1; the config's method field is ignored.
pub fn run_ef1_stress(config: &SweepConfig) -> Result<StressReport> {
    run_stress(config, Method::Ef1Stress)
}

/// Solves every cell's instances with the connected solver and checks
/// EF1; the config's method field is ignored.
pub fn run_connected_stress(config: &SweepConfig) -> Result<StressReport> {
    run_stress(config, Method::ConnectedStress)
}

/// Renders a report as pretty JSON for CLI consumption.
pub fn report_to_json<T: Serialize>(report: &T, out: &mut impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, report)?;
    out.write_all(b"\n")?;
    Ok(())
}
