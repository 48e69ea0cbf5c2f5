//! Connected EF1 allocation on a path of goods.
//!
//! Goods 1..m sit on a line. A [`KnifeVector`] of k-1 half-integer or
//! integer knife positions carves the line into k intervals; goods landing
//! exactly on an integer knife stay unallocated. Complete connected
//! allocations are exactly the knife vectors with no integer knife, and
//! [`enumerate_connected_allocations`] walks all of them in lexicographic
//! cut order. [`solve_connected_ef1`] scans that space and, per allocation,
//! asks [`ef1_assignment_feasible`] for a group assignment under which no
//! agent envies any bundle by more than its cheaper endpoint. Such a witness
//! always exists, so exhausting the search signals a bug, not a negative
//! result.
//!
//! [`round_fractional_assignment`] realizes the integrality step used by the
//! assignment argument: any fractional agent-to-group assignment with unit
//! row sums and group-size column sums can be rounded onto its own support
//! by canceling cycles.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::model::{is_efc, Allocation, GoodSet, GroupPartition, Instance, Outcome};

/// Knife positions on the doubled integer grid: entry d encodes position
/// d/2, so valid knives {1/2, 1, 3/2, ..., m+1/2} are d in 1..=2m+1.
/// Positions are nondecreasing; the outer knives 1/2 and m+1/2 are implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnifeVector {
    doubled: Vec<usize>,
}

impl KnifeVector {
    /// Builds a knife vector from doubled positions (d encodes d/2).
    pub fn new(m: usize, doubled: Vec<usize>) -> Result<Self> {
        for &d in &doubled {
            if d < 1 || d > 2 * m + 1 {
                return Err(Error::InvalidArgument(format!(
                    "knife position {}/2 outside [1/2, {}+1/2]",
                    d, m
                )));
            }
        }
        if doubled.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(
                "knife positions must be nondecreasing".into(),
            ));
        }
        Ok(KnifeVector { doubled })
    }

    /// The knife vector with knife j at cut + 1/2, the half-integer gap
    /// between goods `cuts[j]` and `cuts[j] + 1`.
    pub fn from_cuts(m: usize, cuts: &[usize]) -> Result<Self> {
        KnifeVector::new(m, cuts.iter().map(|&c| 2 * c + 1).collect())
    }

    pub fn doubled(&self) -> &[usize] {
        &self.doubled
    }

    pub fn positions(&self) -> Vec<f64> {
        self.doubled.iter().map(|&d| d as f64 / 2.0).collect()
    }

    /// Number of knives sitting exactly on a good.
    pub fn integer_knives(&self) -> usize {
        let mut on_goods: Vec<usize> = self
            .doubled
            .iter()
            .copied()
            .filter(|d| d % 2 == 0)
            .collect();
        on_goods.dedup();
        on_goods.len()
    }
}

/// Interval bundles cut out by the knives: bundle j holds the goods
/// strictly between knife j-1 and knife j (with the implicit outer knives).
/// Goods equal to an integer knife belong to no bundle.
pub fn knife_allocation(m: usize, k: usize, x: &KnifeVector) -> Result<Allocation> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one group".into()));
    }
    if x.doubled.len() != k - 1 {
        return Err(Error::InvalidArgument(format!(
            "knife vector has {} entries, k = {} needs {}",
            x.doubled.len(),
            k,
            k - 1
        )));
    }
    if let Some(&d) = x.doubled.iter().find(|&&d| d > 2 * m + 1) {
        return Err(Error::InvalidArgument(format!(
            "knife position {}/2 beyond m + 1/2 with m = {m}",
            d
        )));
    }
    let mut bundles = vec![GoodSet::new(); k];
    for (j, bundle) in bundles.iter_mut().enumerate() {
        let lo = if j == 0 { 1 } else { x.doubled[j - 1] };
        let hi = if j == k - 1 { 2 * m + 1 } else { x.doubled[j] };
        for y in 1..=m {
            if lo < 2 * y && 2 * y < hi {
                bundle.insert(y);
            }
        }
    }
    Allocation::new(m, bundles)
}

/// Iterator over every complete connected allocation of m goods to k
/// groups, in lexicographic order of the nondecreasing cut tuple
/// (c_1, ..., c_{k-1}), bundle j = goods c_{j-1}+1 ..= c_j.
pub struct ConnectedAllocations {
    m: usize,
    k: usize,
    cuts: Option<Vec<usize>>,
    remaining: Option<u128>,
}

impl ConnectedAllocations {
    fn allocation_for(m: usize, k: usize, cuts: &[usize]) -> Allocation {
        let mut bundles = vec![GoodSet::new(); k];
        let mut prev = 0usize;
        for (j, bundle) in bundles.iter_mut().enumerate() {
            let end = if j + 1 < k { cuts[j] } else { m };
            bundle.extend(prev + 1..=end);
            prev = end;
        }
        Allocation::new(m, bundles).expect("cut intervals are disjoint and in range")
    }

    fn advance(&mut self) {
        let cuts = self.cuts.as_mut().expect("advance only called while live");
        let mut pos = cuts.len();
        loop {
            if pos == 0 {
                self.cuts = None;
                return;
            }
            pos -= 1;
            if cuts[pos] < self.m {
                cuts[pos] += 1;
                let val = cuts[pos];
                for later in cuts[pos + 1..].iter_mut() {
                    *later = val;
                }
                return;
            }
        }
    }
}

impl Iterator for ConnectedAllocations {
    type Item = Allocation;

    fn next(&mut self) -> Option<Allocation> {
        if self.remaining == Some(0) {
            return None;
        }
        let cuts = self.cuts.as_ref()?;
        let out = Self::allocation_for(self.m, self.k, cuts);
        if let Some(r) = self.remaining.as_mut() {
            *r -= 1;
        }
        self.advance();
        Some(out)
    }
}

/// All complete connected allocations, lexicographic by cuts.
pub fn enumerate_connected_allocations(m: usize, k: usize) -> ConnectedAllocations {
    assert!(k >= 1, "need at least one group");
    ConnectedAllocations {
        m,
        k,
        cuts: Some(vec![0; k.saturating_sub(1)]),
        remaining: None,
    }
}

/// Number of complete connected allocations, C(m+k-1, k-1), saturating at
/// u128::MAX.
pub fn connected_allocation_count(m: usize, k: usize) -> u128 {
    binom(m + k - 1, k - 1)
}

fn binom(n: usize, r: usize) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        let Some(mul) = acc.checked_mul((n - i) as u128) else {
            return u128::MAX;
        };
        acc = mul / (i + 1) as u128;
    }
    acc
}

/// The rank-th (0-based) nondecreasing cut tuple in lexicographic order,
/// via the bijection with (k-1)-subsets of {0, ..., m+k-2}.
fn unrank_cuts(mut rank: u128, m: usize, k: usize) -> Vec<usize> {
    let r = k - 1;
    let universe = m + k - 1;
    let mut cuts = Vec::with_capacity(r);
    let mut x = 0usize;
    for slot in 0..r {
        loop {
            let with_x = binom(universe - 1 - x, r - 1 - slot);
            if rank < with_x {
                break;
            }
            rank -= with_x;
            x += 1;
        }
        cuts.push(x - slot); // subtract the staircase offset
        x += 1;
    }
    cuts
}

/// How strong a no-envy certificate the assignment must give each agent
/// against every bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strength {
    /// Value after deleting the bundle's cheaper endpoint. Implies EF1 with
    /// the minimizing endpoint as the removal witness.
    UpToOne,
    /// Literal EF1 floor: the cheapest single-good deletion anywhere in the
    /// bundle.
    Ef1,
}

/// Tries to seat the agents so the connected allocation becomes EF1.
///
/// Agent a is eligible for group i iff u_a(A_i) clears a's threshold, the
/// largest floor any bundle imposes on her; a feasible outcome is a perfect
/// assignment of agents to group seats, found with augmenting paths.
/// Returns the partition if one exists.
pub fn ef1_assignment_feasible(
    instance: &Instance,
    allocation: &Allocation,
    strength: Strength,
) -> Result<Option<GroupPartition>> {
    instance.validate_allocation(allocation)?;
    if !allocation.complete() {
        return Err(Error::InvalidArgument(
            "assignment test needs a complete allocation".into(),
        ));
    }
    if !allocation.bundles().iter().all(is_interval) {
        return Err(Error::InvalidArgument(
            "assignment test needs interval bundles".into(),
        ));
    }
    let (n, k) = (instance.n(), instance.k());

    // values[a0][j] = u_a(A_j); thresholds fold the per-bundle floors.
    let mut values = vec![vec![0.0f64; k]; n];
    for (a0, row) in values.iter_mut().enumerate() {
        for (j, bundle) in allocation.bundles().iter().enumerate() {
            row[j] = instance.eval(a0, bundle.iter().copied());
        }
    }
    let mut thresholds = vec![0.0f64; n];
    for (a0, slot) in thresholds.iter_mut().enumerate() {
        let mut thr = 0.0f64;
        for bundle in allocation.bundles() {
            let floor = match strength {
                Strength::UpToOne => crate::model::up_to_one(instance, a0 + 1, bundle)?,
                Strength::Ef1 => ef1_floor(instance, a0, bundle),
            };
            thr = thr.max(floor);
        }
        *slot = thr;
    }

    let eligible = |a0: usize, j: usize| values[a0][j] >= thresholds[a0];
    Ok(seat_agents(n, instance.group_sizes(), &eligible))
}

/// Smallest value bundle can be left with for agent a0 by one deletion
/// (or none, subsumed by monotonicity).
fn ef1_floor(instance: &Instance, a0: usize, bundle: &GoodSet) -> f64 {
    if bundle.is_empty() {
        return 0.0;
    }
    bundle
        .iter()
        .map(|&g| instance.eval(a0, bundle.iter().copied().filter(move |&h| h != g)))
        .fold(f64::INFINITY, f64::min)
}

fn is_interval(bundle: &GoodSet) -> bool {
    match (bundle.iter().next(), bundle.iter().next_back()) {
        (Some(&lo), Some(&hi)) => hi - lo + 1 == bundle.len(),
        _ => true,
    }
}

/// Capacitated bipartite assignment by Kuhn's augmenting paths over unit
/// seats (group i contributes sizes[i] seats). Deterministic: agents and
/// seats are scanned in ascending order.
fn seat_agents(
    n: usize,
    sizes: &[usize],
    eligible: &dyn Fn(usize, usize) -> bool,
) -> Option<GroupPartition> {
    let seat_group: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(j, &sz)| std::iter::repeat_n(j, sz))
        .collect();
    let seats = seat_group.len();
    let mut seat_agent: Vec<Option<usize>> = vec![None; seats];

    fn try_place(
        a0: usize,
        seat_group: &[usize],
        eligible: &dyn Fn(usize, usize) -> bool,
        seat_agent: &mut [Option<usize>],
        visited: &mut [bool],
    ) -> bool {
        // Free seats first keeps early agents in the lowest groups.
        for s in 0..seat_group.len() {
            if !visited[s] && seat_agent[s].is_none() && eligible(a0, seat_group[s]) {
                visited[s] = true;
                seat_agent[s] = Some(a0);
                return true;
            }
        }
        for s in 0..seat_group.len() {
            if visited[s] || !eligible(a0, seat_group[s]) {
                continue;
            }
            visited[s] = true;
            let sitting = seat_agent[s].expect("occupied seat in the displacement pass");
            if try_place(sitting, seat_group, eligible, seat_agent, visited) {
                seat_agent[s] = Some(a0);
                return true;
            }
        }
        false
    }

    for a0 in 0..n {
        let mut visited = vec![false; seats];
        if !try_place(a0, &seat_group, eligible, &mut seat_agent, &mut visited) {
            return None;
        }
    }

    let mut groups = vec![std::collections::BTreeSet::new(); sizes.len()];
    for (s, agent) in seat_agent.iter().enumerate() {
        groups[seat_group[s]].insert(agent.expect("all seats filled when n agents are placed") + 1);
    }
    Some(GroupPartition::new(groups).expect("seating produces a valid partition"))
}

/// First connected allocation (in lexicographic cut order) admitting a
/// feasible seating at the given strength, as a verified EF1 outcome.
/// Feasible allocations always exist (the up-to-one floors certify one),
/// so running out of candidates is an invariant violation.
pub fn solve_connected(instance: &Instance, strength: Strength) -> Result<Outcome> {
    for allocation in enumerate_connected_allocations(instance.m(), instance.k()) {
        if let Some(partition) = ef1_assignment_feasible(instance, &allocation, strength)? {
            let outcome = Outcome::new(instance, partition, allocation)?;
            if !is_efc(instance, &outcome, 1)? {
                return Err(Error::InvariantViolation(
                    "feasible connected outcome failed the EF1 check".into(),
                ));
            }
            return Ok(outcome);
        }
    }
    Err(Error::InvariantViolation(
        "no connected allocation admitted a feasible assignment".into(),
    ))
}

/// [`solve_connected`] at up-to-one strength, the always-succeeding route.
pub fn solve_connected_ef1(instance: &Instance) -> Result<Outcome> {
    solve_connected(instance, Strength::UpToOne)
}

/// Multi-worker variant: the cut space is split into contiguous rank
/// ranges scanned concurrently; the first success wins, so with more than
/// one worker the returned outcome may differ between runs (every returned
/// outcome is still verified EF1).
pub fn solve_connected_with_workers(
    instance: &Instance,
    strength: Strength,
    workers: usize,
) -> Result<Outcome> {
    if workers == 0 {
        return Err(Error::InvalidArgument("need at least one worker".into()));
    }
    let total = connected_allocation_count(instance.m(), instance.k());
    if workers == 1 || total <= workers as u128 * 4 || total > u64::MAX as u128 {
        return solve_connected(instance, strength);
    }
    let found = AtomicBool::new(false);
    let result: Mutex<Option<Result<Outcome>>> = Mutex::new(None);

    std::thread::scope(|scope| {
        let chunk = total / workers as u128;
        for w in 0..workers {
            let lo = chunk * w as u128;
            let hi = if w + 1 == workers {
                total
            } else {
                chunk * (w as u128 + 1)
            };
            let found = &found;
            let result = &result;
            scope.spawn(move || {
                let mut walker = ConnectedAllocations {
                    m: instance.m(),
                    k: instance.k(),
                    cuts: Some(unrank_cuts(lo, instance.m(), instance.k())),
                    remaining: Some(hi - lo),
                };
                for allocation in walker.by_ref() {
                    if found.load(Ordering::Relaxed) {
                        return;
                    }
                    let feasible = ef1_assignment_feasible(instance, &allocation, strength);
                    match feasible {
                        Ok(Some(partition)) => {
                            if !found.swap(true, Ordering::SeqCst) {
                                let out = Outcome::new(instance, partition, allocation).and_then(
                                    |outcome| {
                                        if is_efc(instance, &outcome, 1)? {
                                            Ok(outcome)
                                        } else {
                                            Err(Error::InvariantViolation(
                                                "feasible connected outcome failed the EF1 check"
                                                    .into(),
                                            ))
                                        }
                                    },
                                );
                                *result.lock().unwrap() = Some(out);
                            }
                            return;
                        }
                        Ok(None) => {}
                        Err(e) => {
                            if !found.swap(true, Ordering::SeqCst) {
                                *result.lock().unwrap() = Some(Err(e));
                            }
                            return;
                        }
                    }
                }
            });
        }
    });

    result.into_inner().unwrap().unwrap_or_else(|| {
        Err(Error::InvariantViolation(
            "no connected allocation admitted a feasible assignment".into(),
        ))
    })
}

/// [`solve_connected_with_workers`] at up-to-one strength.
pub fn solve_connected_ef1_with_workers(instance: &Instance, workers: usize) -> Result<Outcome> {
    solve_connected_with_workers(instance, Strength::UpToOne, workers)
}

/// Fractional seats: weights[a-1][i] is how much of agent a sits in group
/// i+1. Rows must sum to 1; column sums are checked against the group
/// sizes when rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalAssignment {
    weights: Vec<Vec<f64>>,
}

/// Degree slack tolerated on row and column sums.
pub const DEGREE_TOLERANCE: f64 = 1e-9;
/// Weights this close to 0 or 1 count as integral in the support.
pub const SUPPORT_EPSILON: f64 = 1e-12;

impl FractionalAssignment {
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights[0].is_empty() {
            return Err(Error::InvalidArgument("empty weight matrix".into()));
        }
        let k = weights[0].len();
        for (a0, row) in weights.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidArgument(format!(
                    "agent {} has {} weights, expected {k}",
                    a0 + 1,
                    row.len()
                )));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "agent {} has a negative or non-finite weight",
                    a0 + 1
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > DEGREE_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "agent {} weights sum to {sum}, expected 1",
                    a0 + 1
                )));
            }
        }
        Ok(FractionalAssignment { weights })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn k(&self) -> usize {
        self.weights[0].len()
    }
}

/// Rounds a fractional assignment to an integral one on its own support:
/// returns pi with pi[a-1] the 1-based group of agent a, |pi^-1(i)| = n_i,
/// and w[a][pi(a)] > 0 in the input.
///
/// Cycle canceling: while fractional entries remain, walk the support
/// graph (every touched node has at least two fractional edges, so a cycle
/// exists), then shift theta around the cycle with alternating signs,
/// where theta zeroes out the tightest minus-edge. Each step keeps all row
/// and column sums exactly and reduces the fractional edge count, so at
/// most n*k cancellations happen.
pub fn round_fractional_assignment(
    fa: &FractionalAssignment,
    sizes: &[usize],
) -> Result<Vec<usize>> {
    let (n, k) = (fa.n(), fa.k());
    if sizes.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} group sizes for {k} weight columns",
            sizes.len()
        )));
    }
    if sizes.iter().sum::<usize>() != n {
        return Err(Error::InvalidArgument(format!(
            "group sizes sum to {}, expected {n}",
            sizes.iter().sum::<usize>()
        )));
    }
    for (i, &sz) in sizes.iter().enumerate() {
        let col: f64 = (0..n).map(|a0| fa.weights[a0][i]).sum();
        if (col - sz as f64).abs() > DEGREE_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "group {} weights sum to {col}, expected {sz}",
                i + 1
            )));
        }
    }

    let mut w = fa.weights.clone();
    let fractional = |x: f64| x > SUPPORT_EPSILON && x < 1.0 - SUPPORT_EPSILON;

    'cancel: while let Some(start) = (0..n)
        .flat_map(|a0| (0..k).map(move |i| (a0, i)))
        .find(|&(a0, i)| fractional(w[a0][i]))
    {
        // Walk agent -> group -> agent -> ... along fractional edges,
        // never reversing the edge just taken, until some node repeats.
        // nodes[j] and nodes[j+1] are the endpoints of edges[j]; on_agent
        // says which side the walk currently stands on.
        let mut edges: Vec<(usize, usize)> = vec![start];
        let mut agent_seen = vec![usize::MAX; n];
        let mut group_seen = vec![usize::MAX; k];
        agent_seen[start.0] = 0;
        group_seen[start.1] = 1;
        let mut on_agent = false;

        let cycle = loop {
            let &(a0, i) = edges.last().unwrap();
            let (next_edge, landing) = if on_agent {
                // Standing on agent a0, arrived by (a0, i): leave through
                // another fractional group in the row.
                match (0..k).find(|&c| c != i && fractional(w[a0][c])) {
                    Some(c) => ((a0, c), group_seen[c]),
                    None => {
                        // Stray dust: the lone fractional entry in this row
                        // is within the degree tolerance of an integer.
                        w[a0][i] = w[a0][i].round();
                        continue 'cancel;
                    }
                }
            } else {
                // Standing on group i: leave through another fractional
                // agent in the column.
                match (0..n).find(|&r| r != a0 && fractional(w[r][i])) {
                    Some(r) => ((r, i), agent_seen[r]),
                    None => {
                        w[a0][i] = w[a0][i].round();
                        continue 'cancel;
                    }
                }
            };
            if landing != usize::MAX {
                // Closing a cycle: edges[landing..] plus the new edge. The
                // landing node sits on the opposite side of the current
                // one, so the cycle length is even and signs alternate
                // consistently around it.
                let mut cycle = edges.split_off(landing);
                cycle.push(next_edge);
                break cycle;
            }
            let node_index = edges.len() + 1;
            if on_agent {
                group_seen[next_edge.1] = node_index;
            } else {
                agent_seen[next_edge.0] = node_index;
            }
            edges.push(next_edge);
            on_agent = !on_agent;
        };

        debug_assert!(cycle.len() % 2 == 0, "bipartite cycles have even length");
        let theta = cycle
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&(a0, i)| w[a0][i])
            .fold(f64::INFINITY, f64::min);
        for (idx, &(a0, i)) in cycle.iter().enumerate() {
            if idx % 2 == 0 {
                w[a0][i] += theta;
            } else {
                w[a0][i] -= theta;
                if w[a0][i] < SUPPORT_EPSILON {
                    w[a0][i] = 0.0;
                }
            }
        }
    }

    let mut pi = vec![0usize; n];
    let mut counts = vec![0usize; k];
    for a0 in 0..n {
        let i = (0..k)
            .find(|&i| w[a0][i] >= 1.0 - SUPPORT_EPSILON)
            .ok_or_else(|| {
                Error::InvariantViolation(format!(
                    "agent {} has no integral seat after rounding",
                    a0 + 1
                ))
            })?;
        if fa.weights[a0][i] <= 0.0 {
            return Err(Error::InvariantViolation(format!(
                "agent {} rounded onto a zero-weight edge",
                a0 + 1
            )));
        }
        pi[a0] = i + 1;
        counts[i] += 1;
    }
    if counts != sizes {
        return Err(Error::InvariantViolation(format!(
            "rounded group sizes {counts:?} do not match {sizes:?}"
        )));
    }
    Ok(pi)
}
