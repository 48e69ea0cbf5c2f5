//! Core domain types and fairness checkers.
//!
//! An [`Instance`] holds `n` agents, `k >= 2` groups with prescribed sizes
//! `(n_1, ..., n_k)`, `m` goods, and a utility model. Utilities are
//! normalized (empty set worth 0), non-negative, and monotone. An
//! [`Outcome`] pairs a [`GroupPartition`] of the agents with a complete
//! [`Allocation`] of the goods to groups.
//!
//! The checkers in this module define fairness for the whole crate:
//! an outcome is EFc when every agent, comparing her group's bundle against
//! any other group's bundle, is no worse off once some set of at most `c`
//! goods is removed from the other bundle.
//!
//! Invariants:
//! - agents are `1..=n`, goods are `1..=m`
//! - utility comparisons are strict f64 comparisons, no epsilon
//! - tabulated utilities are capped at m <= 20 (dense subset tables)

use std::collections::BTreeSet;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of good ids (1-based).
pub type GoodSet = BTreeSet<usize>;

/// Largest m for which tabulated monotonic utilities are representable.
pub const TABLE_GOODS_CAP: usize = 20;

/// Removal-set searches on tabulated models are capped at this c.
pub const MONOTONIC_C_CAP: usize = 3;

/// Agent utilities, either additive per-good values or a dense table over
/// all subsets of the goods.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilityModel {
    /// `matrix[a-1][g-1]` is agent a's value for good g. All entries are
    /// finite and non-negative, so utilities are monotone and modular.
    Additive { matrix: Vec<Vec<f64>> },
    /// `tables[a-1][mask]` is agent a's value for the subset encoded by
    /// `mask` (bit g-1 set iff good g present). Row length is 2^m.
    Table { tables: Vec<Vec<f64>> },
}

impl UtilityModel {
    pub fn additive(matrix: Vec<Vec<f64>>) -> Result<Self> {
        if matrix.is_empty() {
            return Err(Error::InvalidInstance("no agents in utility matrix".into()));
        }
        let m = matrix[0].len();
        for (a0, row) in matrix.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidInstance(format!(
                    "agent {} has {} per-good values, expected {}",
                    a0 + 1,
                    row.len(),
                    m
                )));
            }
            for (g0, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInstance(format!(
                        "agent {} good {} has invalid value {}",
                        a0 + 1,
                        g0 + 1,
                        v
                    )));
                }
            }
        }
        Ok(UtilityModel::Additive { matrix })
    }

    /// Builds a tabulated model. Each row must have 2^m entries, start at 0
    /// for the empty set, and be monotone along every single-good extension
    /// (which implies monotonicity for all comparable pairs).
    pub fn table(tables: Vec<Vec<f64>>) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::InvalidInstance("no agents in utility table".into()));
        }
        let len = tables[0].len();
        if !len.is_power_of_two() {
            return Err(Error::InvalidInstance(format!(
                "table row length {len} is not a power of two"
            )));
        }
        let m = len.trailing_zeros() as usize;
        if m > TABLE_GOODS_CAP {
            return Err(Error::InvalidInstance(format!(
                "tabulated utilities support at most {TABLE_GOODS_CAP} goods, got {m}"
            )));
        }
        for (a0, row) in tables.iter().enumerate() {
            if row.len() != len {
                return Err(Error::InvalidInstance(format!(
                    "agent {} table has {} entries, expected {}",
                    a0 + 1,
                    row.len(),
                    len
                )));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidInstance(format!(
                    "agent {} table has a negative or non-finite entry",
                    a0 + 1
                )));
            }
            if row[0] != 0.0 {
                return Err(Error::InvalidInstance(format!(
                    "agent {} table is not normalized: empty set has value {}",
                    a0 + 1,
                    row[0]
                )));
            }
            for mask in 1..len {
                let mut bits = mask;
                while bits != 0 {
                    let bit = bits & bits.wrapping_neg();
                    if row[mask] < row[mask ^ bit] {
                        return Err(Error::InvalidInstance(format!(
                            "agent {} table is not monotone at mask {:#x}",
                            a0 + 1,
                            mask
                        )));
                    }
                    bits ^= bit;
                }
            }
        }
        Ok(UtilityModel::Table { tables })
    }

    pub fn n(&self) -> usize {
        match self {
            UtilityModel::Additive { matrix } => matrix.len(),
            UtilityModel::Table { tables } => tables.len(),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            UtilityModel::Additive { matrix } => matrix[0].len(),
            UtilityModel::Table { tables } => tables[0].len().trailing_zeros() as usize,
        }
    }

    pub fn is_additive(&self) -> bool {
        matches!(self, UtilityModel::Additive { .. })
    }
}

/// A fair-division instance in the variable-group model.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    group_sizes: Vec<usize>,
    utilities: UtilityModel,
}

impl Instance {
    /// `group_sizes` determines both k (its length, at least 2) and
    /// n (its sum, which must match the utility model).
    pub fn new(group_sizes: Vec<usize>, utilities: UtilityModel) -> Result<Self> {
        if group_sizes.len() < 2 {
            return Err(Error::InvalidInstance(format!(
                "need at least 2 groups, got {}",
                group_sizes.len()
            )));
        }
        if group_sizes.contains(&0) {
            return Err(Error::InvalidInstance(
                "every group size must be positive".into(),
            ));
        }
        let n: usize = group_sizes.iter().sum();
        if n != utilities.n() {
            return Err(Error::InvalidInstance(format!(
                "group sizes sum to {n} but the utility model covers {} agents",
                utilities.n()
            )));
        }
        Ok(Instance {
            group_sizes,
            utilities,
        })
    }

    pub fn n(&self) -> usize {
        self.utilities.n()
    }

    pub fn k(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn m(&self) -> usize {
        self.utilities.m()
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn utilities(&self) -> &UtilityModel {
        &self.utilities
    }

    /// u_a(S). Errors on unknown agent or good ids.
    pub fn utility(&self, agent: usize, goods: &GoodSet) -> Result<f64> {
        if agent == 0 || agent > self.n() {
            return Err(Error::UnknownAgent(agent));
        }
        let m = self.m();
        if let Some(&bad) = goods.iter().find(|&&g| g == 0 || g > m) {
            return Err(Error::UnknownGood(bad));
        }
        Ok(self.eval(agent - 1, goods.iter().copied()))
    }

    /// Unchecked evaluation; `a0` is 0-based, goods are 1-based and in range.
    pub(crate) fn eval(&self, a0: usize, goods: impl Iterator<Item = usize>) -> f64 {
        match &self.utilities {
            UtilityModel::Additive { matrix } => goods.map(|g| matrix[a0][g - 1]).sum(),
            UtilityModel::Table { tables } => {
                let mut mask = 0usize;
                for g in goods {
                    mask |= 1 << (g - 1);
                }
                tables[a0][mask]
            }
        }
    }

    pub(crate) fn eval_slice(&self, a0: usize, goods: &[usize]) -> f64 {
        self.eval(a0, goods.iter().copied())
    }

    /// Per-good value for additive models. Must not be called on tables.
    pub(crate) fn good_value(&self, a0: usize, g: usize) -> f64 {
        match &self.utilities {
            UtilityModel::Additive { matrix } => matrix[a0][g - 1],
            UtilityModel::Table { .. } => unreachable!("per-good value on a table model"),
        }
    }

    pub(crate) fn table_value(&self, a0: usize, mask: usize) -> f64 {
        match &self.utilities {
            UtilityModel::Table { tables } => tables[a0][mask],
            UtilityModel::Additive { .. } => unreachable!("mask lookup on an additive model"),
        }
    }

    pub fn validate_partition(&self, partition: &GroupPartition) -> Result<()> {
        if partition.k() != self.k() {
            return Err(Error::InvalidArgument(format!(
                "partition has {} groups, instance has {}",
                partition.k(),
                self.k()
            )));
        }
        if partition.n() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "partition covers {} agents, instance has {}",
                partition.n(),
                self.n()
            )));
        }
        for (i, group) in partition.groups().iter().enumerate() {
            if group.len() != self.group_sizes[i] {
                return Err(Error::InvalidArgument(format!(
                    "group {} has {} agents, prescribed size is {}",
                    i + 1,
                    group.len(),
                    self.group_sizes[i]
                )));
            }
        }
        Ok(())
    }

    pub fn validate_allocation(&self, allocation: &Allocation) -> Result<()> {
        if allocation.k() != self.k() {
            return Err(Error::InvalidArgument(format!(
                "allocation has {} bundles, instance has {} groups",
                allocation.k(),
                self.k()
            )));
        }
        if allocation.m() != self.m() {
            return Err(Error::InvalidArgument(format!(
                "allocation is over {} goods, instance has {}",
                allocation.m(),
                self.m()
            )));
        }
        Ok(())
    }
}

/// k disjoint bundles of goods; complete when every good is allocated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Allocation {
    m: usize,
    bundles: Vec<GoodSet>,
}

impl Allocation {
    pub fn new(m: usize, bundles: Vec<GoodSet>) -> Result<Self> {
        let mut seen = vec![false; m];
        for bundle in &bundles {
            for &g in bundle {
                if g == 0 || g > m {
                    return Err(Error::UnknownGood(g));
                }
                if seen[g - 1] {
                    return Err(Error::InvalidArgument(format!(
                        "good {g} appears in two bundles"
                    )));
                }
                seen[g - 1] = true;
            }
        }
        Ok(Allocation { m, bundles })
    }

    pub fn empty(m: usize, k: usize) -> Self {
        Allocation {
            m,
            bundles: vec![GoodSet::new(); k],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.bundles.len()
    }

    pub fn bundles(&self) -> &[GoodSet] {
        &self.bundles
    }

    /// Bundle of group `i` (1-based).
    pub fn bundle(&self, i: usize) -> &GoodSet {
        &self.bundles[i - 1]
    }

    pub fn complete(&self) -> bool {
        self.bundles.iter().map(|b| b.len()).sum::<usize>() == self.m
    }
}

/// k disjoint groups of agents covering 1..=n.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupPartition {
    groups: Vec<BTreeSet<usize>>,
}

impl GroupPartition {
    pub fn new(groups: Vec<BTreeSet<usize>>) -> Result<Self> {
        let n: usize = groups.iter().map(|g| g.len()).sum();
        let mut seen = vec![false; n];
        for group in &groups {
            for &a in group {
                if a == 0 || a > n {
                    return Err(Error::InvalidArgument(format!(
                        "agent id {a} outside 1..={n} in partition"
                    )));
                }
                if seen[a - 1] {
                    return Err(Error::InvalidArgument(format!(
                        "agent {a} appears in two groups"
                    )));
                }
                seen[a - 1] = true;
            }
        }
        Ok(GroupPartition { groups })
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn n(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    pub fn groups(&self) -> &[BTreeSet<usize>] {
        &self.groups
    }

    /// Group of agent `a` (both 1-based).
    pub fn group_of(&self, a: usize) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.contains(&a))
            .map(|i| i + 1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }
}

/// A partition of the agents together with a complete allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    partition: GroupPartition,
    allocation: Allocation,
}

impl Outcome {
    pub fn new(
        instance: &Instance,
        partition: GroupPartition,
        allocation: Allocation,
    ) -> Result<Self> {
        instance.validate_partition(&partition)?;
        instance.validate_allocation(&allocation)?;
        if !allocation.complete() {
            return Err(Error::InvalidArgument(
                "outcome requires a complete allocation".into(),
            ));
        }
        Ok(Outcome {
            partition,
            allocation,
        })
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn allocation(&self) -> &Allocation {
        &self.allocation
    }
}

/// Smallest utility agent `a0` can leave bundle `goods` with by deleting at
/// most `c` of its goods. This is the comparison floor of the EFc check.
fn removal_floor(instance: &Instance, a0: usize, goods: &GoodSet, c: usize) -> Result<f64> {
    if goods.is_empty() {
        return Ok(0.0);
    }
    match instance.utilities() {
        UtilityModel::Additive { matrix } => {
            // Remove the c most valuable goods, then price the remainder the
            // same way eval does (fresh ascending-id sum); subtracting from
            // the total would change the rounding.
            let dropped = top_value_goods(matrix, a0, goods, c);
            let kept: f64 = goods
                .iter()
                .filter(|g| !dropped.contains(g))
                .map(|&g| matrix[a0][g - 1])
                .sum();
            Ok(kept)
        }
        UtilityModel::Table { .. } => {
            if c > MONOTONIC_C_CAP {
                return Err(Error::MonotonicCapExceeded(c));
            }
            // Monotone utilities: removing a superset never raises the
            // remainder's value, so only subsets of size exactly min(c, |goods|)
            // need to be inspected.
            let items: Vec<usize> = goods.iter().copied().collect();
            let full_mask: usize = items.iter().map(|&g| 1 << (g - 1)).sum();
            let r = c.min(items.len());
            let mut best = f64::INFINITY;
            for combo in items.iter().combinations(r) {
                let mut mask = full_mask;
                for &&g in &combo {
                    mask ^= 1 << (g - 1);
                }
                best = best.min(instance.table_value(a0, mask));
            }
            Ok(best)
        }
    }
}

/// EFc check on a partition plus a possibly incomplete allocation: every
/// agent must weakly prefer her group's bundle to every other bundle with
/// some set of at most `c` goods removed from the latter.
pub fn is_efc_parts(
    instance: &Instance,
    partition: &GroupPartition,
    allocation: &Allocation,
    c: usize,
) -> Result<bool> {
    instance.validate_partition(partition)?;
    instance.validate_allocation(allocation)?;
    let k = instance.k();
    for i in 0..k {
        for a in partition.groups()[i].iter().copied() {
            let own = instance.eval(a - 1, allocation.bundles()[i].iter().copied());
            for j in 0..k {
                if j == i {
                    continue;
                }
                let floor = removal_floor(instance, a - 1, &allocation.bundles()[j], c)?;
                if own < floor {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// EFc check on a complete outcome.
pub fn is_efc(instance: &Instance, outcome: &Outcome, c: usize) -> Result<bool> {
    is_efc_parts(instance, outcome.partition(), outcome.allocation(), c)
}

/// Smallest c for which the outcome is EFc. Never exceeds the largest
/// bundle size. Unlike chaining [`is_efc`] over growing c, this searches
/// each (agent, bundle) pair for its minimal removal count directly, so it
/// is total for tabulated models as well.
pub fn min_c_envy(instance: &Instance, outcome: &Outcome) -> Result<usize> {
    let k = instance.k();
    let partition = outcome.partition();
    let allocation = outcome.allocation();
    let mut worst = 0usize;
    for i in 0..k {
        for a in partition.groups()[i].iter().copied() {
            let own = instance.eval(a - 1, allocation.bundles()[i].iter().copied());
            for j in 0..k {
                if j == i {
                    continue;
                }
                worst = worst.max(min_removals(instance, a - 1, &allocation.bundles()[j], own));
            }
        }
    }
    Ok(worst)
}

/// The (up to) c goods in `goods` that agent `a0` values most, ties broken
/// toward lower good ids by the stable sort.
fn top_value_goods(matrix: &[Vec<f64>], a0: usize, goods: &GoodSet, c: usize) -> GoodSet {
    let mut by_value: Vec<usize> = goods.iter().copied().collect();
    by_value.sort_by(|&x, &y| matrix[a0][y - 1].partial_cmp(&matrix[a0][x - 1]).unwrap());
    by_value.into_iter().take(c).collect()
}

/// Minimal number of goods to delete from `goods` so that agent `a0` values
/// the remainder at most `own`.
fn min_removals(instance: &Instance, a0: usize, goods: &GoodSet, own: f64) -> usize {
    match instance.utilities() {
        UtilityModel::Additive { matrix } => {
            for r in 0..=goods.len() {
                let dropped = top_value_goods(matrix, a0, goods, r);
                let kept: f64 = goods
                    .iter()
                    .filter(|g| !dropped.contains(g))
                    .map(|&g| matrix[a0][g - 1])
                    .sum();
                if own >= kept {
                    return r;
                }
            }
            unreachable!("the empty remainder is worth 0 <= own")
        }
        UtilityModel::Table { .. } => {
            let items: Vec<usize> = goods.iter().copied().collect();
            let full_mask: usize = items.iter().map(|&g| 1 << (g - 1)).sum();
            for r in 0..=items.len() {
                for combo in items.iter().combinations(r) {
                    let mut mask = full_mask;
                    for &&g in &combo {
                        mask ^= 1 << (g - 1);
                    }
                    if own >= instance.table_value(a0, mask) {
                        return r;
                    }
                }
            }
            unreachable!("deleting the whole bundle always reaches the normalized 0")
        }
    }
}

/// Value of interval `goods` for agent `a` after the least favorable
/// connectivity-preserving single removal: 0 for the empty interval,
/// otherwise the smaller of the two endpoint-removal values (the whole
/// interval vanishes when it is a singleton).
pub fn up_to_one(instance: &Instance, agent: usize, goods: &GoodSet) -> Result<f64> {
    if agent == 0 || agent > instance.n() {
        return Err(Error::UnknownAgent(agent));
    }
    if goods.is_empty() {
        return Ok(0.0);
    }
    let m = instance.m();
    if let Some(&bad) = goods.iter().find(|&&g| g == 0 || g > m) {
        return Err(Error::UnknownGood(bad));
    }
    let lo = *goods.iter().next().unwrap();
    let hi = *goods.iter().next_back().unwrap();
    if hi - lo + 1 != goods.len() {
        return Err(Error::InvalidArgument(format!(
            "goods {goods:?} do not form a contiguous interval"
        )));
    }
    if goods.len() == 1 {
        return Ok(0.0);
    }
    let a0 = agent - 1;
    let without_lo = instance.eval(a0, goods.iter().copied().filter(|&g| g != lo));
    let without_hi = instance.eval(a0, goods.iter().copied().filter(|&g| g != hi));
    Ok(without_lo.min(without_hi))
}

/// One edge of the envy graph: some agent in group `from` strictly prefers
/// group `to`'s bundle. Group ids and the agent id are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EnvyEdge {
    pub from: usize,
    pub to: usize,
    pub agent: usize,
}

/// Directed multigraph on the k groups with one edge per (envying agent,
/// envied group) pair. No self-loops by construction.
#[derive(Debug, Clone)]
pub struct EnvyGraph {
    k: usize,
    edges: Vec<EnvyEdge>,
}

impl EnvyGraph {
    pub(crate) fn from_edges(k: usize, mut edges: Vec<EnvyEdge>) -> Self {
        edges.sort_by_key(|e| (e.from, e.to, e.agent));
        EnvyGraph { k, edges }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[EnvyEdge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// In-degree of group `i` (1-based), counting parallel edges.
    pub fn in_degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|e| e.to == i).count()
    }

    /// Groups with no incoming edge, ascending.
    pub fn unenvied_groups(&self) -> Vec<usize> {
        let mut envied = vec![false; self.k];
        for e in &self.edges {
            envied[e.to - 1] = true;
        }
        (1..=self.k).filter(|&i| !envied[i - 1]).collect()
    }

    pub fn is_acyclic(&self) -> bool {
        self.find_cycle().is_none()
    }

    /// First simple directed cycle under the deterministic search order:
    /// depth-first from the lowest-indexed vertex, hops ordered by edge
    /// label (the lowest agent id among parallel edges) and then by target.
    /// Returns the cycle's edges in traversal order.
    pub fn find_cycle(&self) -> Option<Vec<EnvyEdge>> {
        // One representative edge per (from, to): the lowest-agent label.
        let mut hops: Vec<Vec<EnvyEdge>> = vec![Vec::new(); self.k];
        for &e in &self.edges {
            let row = &mut hops[e.from - 1];
            match row.iter_mut().find(|h| h.to == e.to) {
                Some(h) => {
                    if e.agent < h.agent {
                        *h = e;
                    }
                }
                None => row.push(e),
            }
        }
        for row in &mut hops {
            row.sort_by_key(|e| (e.agent, e.to));
        }

        const WHITE: u8 = 0;
        const ON_PATH: u8 = 1;
        const DONE: u8 = 2;
        let mut color = vec![WHITE; self.k];
        let mut path: Vec<usize> = Vec::new(); // vertices, 0-based
        let mut taken: Vec<EnvyEdge> = Vec::new(); // taken[i] leads path[i] -> path[i+1]

        fn dfs(
            v: usize,
            hops: &[Vec<EnvyEdge>],
            color: &mut [u8],
            path: &mut Vec<usize>,
            taken: &mut Vec<EnvyEdge>,
        ) -> Option<Vec<EnvyEdge>> {
            color[v] = ON_PATH;
            path.push(v);
            for &e in &hops[v] {
                let w = e.to - 1;
                match color[w] {
                    ON_PATH => {
                        let pos = path.iter().position(|&x| x == w).unwrap();
                        let mut cycle: Vec<EnvyEdge> = taken[pos..].to_vec();
                        cycle.push(e);
                        return Some(cycle);
                    }
                    WHITE => {
                        taken.push(e);
                        if let Some(c) = dfs(w, hops, color, path, taken) {
                            return Some(c);
                        }
                        taken.pop();
                    }
                    _ => {}
                }
            }
            path.pop();
            color[v] = DONE;
            None
        }

        for start in 0..self.k {
            if color[start] == WHITE {
                if let Some(c) = dfs(start, &hops, &mut color, &mut path, &mut taken) {
                    return Some(c);
                }
            }
        }
        None
    }
}

/// Envy graph of a (possibly incomplete) allocation: edge (i -> j, a)
/// present iff agent a sits in group i and strictly prefers bundle j.
pub fn build_envy_graph(
    instance: &Instance,
    partition: &GroupPartition,
    allocation: &Allocation,
) -> Result<EnvyGraph> {
    instance.validate_partition(partition)?;
    instance.validate_allocation(allocation)?;
    let k = instance.k();
    let mut edges = Vec::new();
    for i in 0..k {
        for a in partition.groups()[i].iter().copied() {
            let own = instance.eval(a - 1, allocation.bundles()[i].iter().copied());
            for j in 0..k {
                if j == i {
                    continue;
                }
                let other = instance.eval(a - 1, allocation.bundles()[j].iter().copied());
                if other > own {
                    edges.push(EnvyEdge {
                        from: i + 1,
                        to: j + 1,
                        agent: a,
                    });
                }
            }
        }
    }
    Ok(EnvyGraph::from_edges(k, edges))
}

// ---------------------------------------------------------------------------
// Instance file format

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum UtilityFile {
    Additive { matrix: Vec<Vec<f64>> },
    Table { entries: Vec<Vec<f64>> },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    n: usize,
    k: usize,
    group_sizes: Vec<usize>,
    m: usize,
    utility: UtilityFile,
}

impl Instance {
    /// Parses the JSON instance format:
    /// `{n, k, group_sizes, m, utility: {kind: "additive", matrix} | {kind: "table", entries}}`.
    /// The redundant n, k, m fields are cross-checked against the payload.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(s)?;
        let utilities = match file.utility {
            UtilityFile::Additive { matrix } => UtilityModel::additive(matrix)?,
            UtilityFile::Table { entries } => UtilityModel::table(entries)?,
        };
        let instance = Instance::new(file.group_sizes, utilities)?;
        if file.n != instance.n() || file.k != instance.k() || file.m != instance.m() {
            return Err(Error::InvalidInstance(format!(
                "declared (n={}, k={}, m={}) but payload encodes (n={}, k={}, m={})",
                file.n,
                file.k,
                file.m,
                instance.n(),
                instance.k(),
                instance.m()
            )));
        }
        Ok(instance)
    }

    /// Serializes to the JSON instance format. Parsing the output yields a
    /// bit-identical instance (floats round-trip exactly).
    pub fn to_json_string(&self) -> String {
        let utility = match &self.utilities {
            UtilityModel::Additive { matrix } => UtilityFile::Additive {
                matrix: matrix.clone(),
            },
            UtilityModel::Table { tables } => UtilityFile::Table {
                entries: tables.clone(),
            },
        };
        let file = InstanceFile {
            n: self.n(),
            k: self.k(),
            group_sizes: self.group_sizes.clone(),
            m: self.m(),
            utility,
        };
        serde_json::to_string(&file).expect("instance serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(goods: &[usize]) -> GoodSet {
        goods.iter().copied().collect()
    }

    fn additive(matrix: Vec<Vec<f64>>, sizes: Vec<usize>) -> Instance {
        Instance::new(sizes, UtilityModel::additive(matrix).unwrap()).unwrap()
    }

    fn outcome(inst: &Instance, groups: Vec<Vec<usize>>, bundles: Vec<Vec<usize>>) -> Outcome {
        let partition = GroupPartition::new(
            groups
                .into_iter()
                .map(|g| g.into_iter().collect())
                .collect(),
        )
        .unwrap();
        let allocation = Allocation::new(
            inst.m(),
            bundles
                .into_iter()
                .map(|b| b.into_iter().collect())
                .collect(),
        )
        .unwrap();
        Outcome::new(inst, partition, allocation).unwrap()
    }

    #[test]
    fn utility_of_empty_set_is_zero() {
        let inst = additive(vec![vec![3.0, 1.0, 4.0], vec![1.0, 1.0, 1.0]], vec![1, 1]);
        assert_eq!(inst.utility(1, &GoodSet::new()).unwrap(), 0.0);
        assert_eq!(inst.utility(2, &GoodSet::new()).unwrap(), 0.0);
    }

    #[test]
    fn additive_utility_sums_per_good_values() {
        let inst = additive(vec![vec![3.0, 1.0, 4.0], vec![0.0, 0.0, 0.0]], vec![1, 1]);
        assert_eq!(inst.utility(1, &set(&[1, 3])).unwrap(), 7.0);
    }

    #[test]
    fn table_utility_is_a_lookup() {
        // m=2; masks 00, 01, 10, 11. Flat extension: u({1}) = u({1,2}) = 2.
        let tables = vec![vec![0.0, 2.0, 1.0, 2.0], vec![0.0, 0.0, 0.0, 0.0]];
        let inst = Instance::new(vec![1, 1], UtilityModel::table(tables).unwrap()).unwrap();
        assert_eq!(inst.utility(1, &set(&[1, 2])).unwrap(), 2.0);
        assert_eq!(inst.utility(1, &set(&[1])).unwrap(), 2.0);
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let inst = additive(vec![vec![1.0], vec![1.0]], vec![1, 1]);
        assert!(matches!(
            inst.utility(3, &GoodSet::new()),
            Err(Error::UnknownAgent(3))
        ));
        assert!(matches!(
            inst.utility(1, &set(&[2])),
            Err(Error::UnknownGood(2))
        ));
    }

    #[test]
    fn table_validation_catches_broken_rows() {
        assert!(UtilityModel::table(vec![vec![1.0, 2.0]]).is_err()); // not normalized
        assert!(UtilityModel::table(vec![vec![0.0, 2.0, 1.0, 0.5]]).is_err()); // not monotone
        assert!(UtilityModel::table(vec![vec![0.0, 1.0, 2.0]]).is_err()); // not a power of two
    }

    #[test]
    fn efc_zero_utilities_is_envy_free() {
        let inst = additive(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![1, 1]);
        let out = outcome(&inst, vec![vec![1], vec![2]], vec![vec![1, 2], vec![]]);
        assert!(is_efc(&inst, &out, 0).unwrap());
    }

    #[test]
    fn efc_empty_own_bundle_with_positive_foreign_value_fails() {
        let inst = additive(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1, 1]);
        let out = outcome(&inst, vec![vec![1], vec![2]], vec![vec![1, 2], vec![]]);
        assert!(!is_efc(&inst, &out, 0).unwrap());
        assert!(!is_efc(&inst, &out, 1).unwrap());
        assert!(is_efc(&inst, &out, 2).unwrap());
    }

    #[test]
    fn efc_opposite_preferences_diagonal_outcome_is_envy_free() {
        let inst = additive(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1]);
        let out = outcome(&inst, vec![vec![1], vec![2]], vec![vec![1], vec![2]]);
        assert!(is_efc(&inst, &out, 0).unwrap());
    }

    #[test]
    fn efc_is_monotone_in_c_on_a_fixture() {
        let inst = additive(
            vec![
                vec![5.0, 1.0, 1.0],
                vec![1.0, 5.0, 1.0],
                vec![1.0, 1.0, 5.0],
                vec![2.0, 2.0, 2.0],
            ],
            vec![2, 2],
        );
        let out = outcome(
            &inst,
            vec![vec![1, 2], vec![3, 4]],
            vec![vec![1], vec![2, 3]],
        );
        let mut prev = false;
        for c in 0..4 {
            let now = is_efc(&inst, &out, c).unwrap();
            assert!(!prev || now, "EFc failed after EF{} held", c - 1);
            prev = now;
        }
        assert!(prev);
    }

    #[test]
    fn min_c_envy_examples() {
        // Envy-free outcome -> 0.
        let inst = additive(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1]);
        let out = outcome(&inst, vec![vec![1], vec![2]], vec![vec![1], vec![2]]);
        assert_eq!(min_c_envy(&inst, &out).unwrap(), 0);

        // One good valued 1 by all, given to group 1 -> removing it kills all envy.
        let inst = additive(vec![vec![1.0], vec![1.0]], vec![1, 1]);
        let out = outcome(&inst, vec![vec![1], vec![2]], vec![vec![1], vec![]]);
        assert_eq!(min_c_envy(&inst, &out).unwrap(), 1);

        // Zero utilities -> 0.
        let inst = additive(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![1, 1]);
        let out = outcome(&inst, vec![vec![1], vec![2]], vec![vec![1, 2], vec![]]);
        assert_eq!(min_c_envy(&inst, &out).unwrap(), 0);
    }

    #[test]
    fn min_c_envy_on_tables_exceeds_the_is_efc_cap() {
        // Group 2's agent sees value only in the full 5-good bundle of group 1;
        // all proper subsets are worth 0 to everyone, so a single removal
        // already suffices there, but agent 2 needs all 5 removals... build
        // instead a staircase where each removal drops value by 1.
        let m = 5;
        let staircase: Vec<f64> = (0usize..1 << m)
            .map(|mask| mask.count_ones() as f64)
            .collect();
        let tables = vec![staircase.clone(), staircase];
        let inst = Instance::new(vec![1, 1], UtilityModel::table(tables).unwrap()).unwrap();
        let out = outcome(
            &inst,
            vec![vec![1], vec![2]],
            vec![vec![1, 2, 3, 4, 5], vec![]],
        );
        assert_eq!(min_c_envy(&inst, &out).unwrap(), 5);
        assert!(matches!(
            is_efc(&inst, &out, 5),
            Err(Error::MonotonicCapExceeded(5))
        ));
    }

    #[test]
    fn up_to_one_examples() {
        let inst = additive(vec![vec![9.0, 5.0, 1.0, 2.0], vec![0.0; 4]], vec![1, 1]);
        assert_eq!(up_to_one(&inst, 1, &GoodSet::new()).unwrap(), 0.0);
        // I = {2,3,4} with values (5,1,2): min(1+2, 5+1) = 3.
        assert_eq!(up_to_one(&inst, 1, &set(&[2, 3, 4])).unwrap(), 3.0);
        assert_eq!(up_to_one(&inst, 1, &set(&[3])).unwrap(), 0.0);
        assert!(up_to_one(&inst, 1, &set(&[1, 3])).is_err());
    }

    #[test]
    fn envy_graph_empty_allocation_has_no_edges() {
        let inst = additive(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1]);
        let partition = GroupPartition::new(vec![set(&[1]), set(&[2])]).unwrap();
        let graph = build_envy_graph(&inst, &partition, &Allocation::empty(2, 2)).unwrap();
        assert_eq!(graph.edge_count(), 0);
        assert_eq!(graph.unenvied_groups(), vec![1, 2]);
    }

    #[test]
    fn envy_graph_swapped_goods_has_both_edges() {
        let inst = additive(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1]);
        let partition = GroupPartition::new(vec![set(&[1]), set(&[2])]).unwrap();
        let allocation = Allocation::new(2, vec![set(&[2]), set(&[1])]).unwrap();
        let graph = build_envy_graph(&inst, &partition, &allocation).unwrap();
        assert_eq!(graph.edge_count(), 2);
        assert_eq!(
            graph.edges(),
            &[
                EnvyEdge {
                    from: 1,
                    to: 2,
                    agent: 1
                },
                EnvyEdge {
                    from: 2,
                    to: 1,
                    agent: 2
                }
            ]
        );
        let cycle = graph.find_cycle().unwrap();
        assert_eq!(cycle.len(), 2);
    }

    #[test]
    fn envy_graph_zero_utilities_has_no_edges() {
        let inst = additive(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![1, 1]);
        let partition = GroupPartition::new(vec![set(&[1]), set(&[2])]).unwrap();
        let allocation = Allocation::new(2, vec![set(&[1, 2]), set(&[])]).unwrap();
        let graph = build_envy_graph(&inst, &partition, &allocation).unwrap();
        assert_eq!(graph.edge_count(), 0);
    }

    #[test]
    fn find_cycle_picks_lowest_labels_first() {
        // Parallel edges 1->2 from agents 5 and 3: the cycle must use agent 3.
        let graph = EnvyGraph::from_edges(
            2,
            vec![
                EnvyEdge {
                    from: 1,
                    to: 2,
                    agent: 5,
                },
                EnvyEdge {
                    from: 1,
                    to: 2,
                    agent: 3,
                },
                EnvyEdge {
                    from: 2,
                    to: 1,
                    agent: 9,
                },
            ],
        );
        let cycle = graph.find_cycle().unwrap();
        assert_eq!(
            cycle[0],
            EnvyEdge {
                from: 1,
                to: 2,
                agent: 3
            }
        );
        assert_eq!(
            cycle[1],
            EnvyEdge {
                from: 2,
                to: 1,
                agent: 9
            }
        );
    }

    #[test]
    fn acyclic_graph_has_no_cycle() {
        let graph = EnvyGraph::from_edges(
            3,
            vec![
                EnvyEdge {
                    from: 1,
                    to: 2,
                    agent: 1,
                },
                EnvyEdge {
                    from: 3,
                    to: 2,
                    agent: 4,
                },
            ],
        );
        assert!(graph.is_acyclic());
        assert_eq!(graph.unenvied_groups(), vec![1, 3]);
        assert_eq!(graph.in_degree(2), 2);
    }

    #[test]
    fn allocation_rejects_overlap_and_range() {
        assert!(Allocation::new(3, vec![set(&[1, 2]), set(&[2])]).is_err());
        assert!(Allocation::new(3, vec![set(&[4]), set(&[])]).is_err());
        let a = Allocation::new(3, vec![set(&[1]), set(&[3])]).unwrap();
        assert!(!a.complete());
        let b = Allocation::new(3, vec![set(&[1, 2]), set(&[3])]).unwrap();
        assert!(b.complete());
    }

    #[test]
    fn partition_rejects_overlap_and_gaps() {
        assert!(GroupPartition::new(vec![set(&[1]), set(&[1])]).is_err());
        assert!(GroupPartition::new(vec![set(&[1]), set(&[3])]).is_err());
        let p = GroupPartition::new(vec![set(&[1, 3]), set(&[2])]).unwrap();
        assert_eq!(p.group_of(3), Some(1));
        assert_eq!(p.sizes(), vec![2, 1]);
    }

    #[test]
    fn instance_json_round_trips_bit_exactly() {
        let gnarly = vec![vec![0.1, 1e-300, f64::MAX], vec![5e-324, 0.2, 1.0 / 3.0]];
        let inst = additive(gnarly, vec![1, 1]);
        let text = inst.to_json_string();
        let back = Instance::from_json_str(&text).unwrap();
        if let (UtilityModel::Additive { matrix: a }, UtilityModel::Additive { matrix: b }) =
            (inst.utilities(), back.utilities())
        {
            for (ra, rb) in a.iter().zip(b) {
                for (x, y) in ra.iter().zip(rb) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        } else {
            panic!("model kind changed in round trip");
        }
        assert_eq!(text, back.to_json_string());
    }

    #[test]
    fn instance_json_rejects_inconsistent_headers() {
        let inst = additive(vec![vec![1.0], vec![2.0]], vec![1, 1]);
        let text = inst.to_json_string();
        let broken = text.replace("\"m\":1", "\"m\":2");
        assert!(Instance::from_json_str(&broken).is_err());
    }

    #[test]
    fn table_instance_round_trips() {
        let tables = vec![vec![0.0, 2.0, 1.0, 2.5], vec![0.0, 0.5, 0.25, 0.75]];
        let inst = Instance::new(vec![1, 1], UtilityModel::table(tables).unwrap()).unwrap();
        let back = Instance::from_json_str(&inst.to_json_string()).unwrap();
        assert_eq!(inst, back);
    }
}
