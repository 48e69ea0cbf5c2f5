//! Generalized envy cycle elimination.
//!
//! Goods are handed out one at a time to a group nobody envies; whenever the
//! envy graph acquires a directed cycle, the agents labeling the cycle's
//! edges rotate into the groups they envy. Rotations keep all bundles and
//! group sizes fixed, strictly shrink the edge set, and preserve EF1, so the
//! procedure always terminates with a complete EF1 outcome.
//!
//! Bundle values are cached in an n x k matrix. Allocating a good updates
//! one column; rotating agents touches no values at all. The envy edge set
//! is rebuilt from the cache after each mutation, which keeps every update
//! within O(nk) value-comparisons. [`SolverState::ops`] counts cache writes,
//! envy comparisons, and cycle-search hops, and is the measure the solver's
//! O(m n^3) scaling is asserted against.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    Allocation, EnvyEdge, EnvyGraph, GoodSet, GroupPartition, Instance, Outcome, UtilityModel,
};

/// One solver mutation. Group and agent ids are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    /// A good was appended to an unenvied group's bundle.
    Allocate {
        good: usize,
        group: usize,
        edges_after: usize,
    },
    /// One simple cycle was resolved: `agents[i]` moved to the group she
    /// envied, namely `groups[(i + 1) % len]`.
    CycleEliminated {
        agents: Vec<usize>,
        groups: Vec<usize>,
        edges_before: usize,
        edges_after: usize,
    },
}

/// Complete record of a solver run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverTrace {
    pub events: Vec<TraceEvent>,
    /// Total mutation count of the run (see [`SolverState::ops`]).
    pub ops: u64,
}

impl SolverTrace {
    /// Checks the structural invariant of the record: within each
    /// cycle-elimination phase the edge count strictly decreases, and
    /// consecutive counts chain together.
    pub fn validate(&self) -> Result<()> {
        let mut prev_after: Option<usize> = None;
        for event in &self.events {
            match event {
                TraceEvent::Allocate { edges_after, .. } => {
                    prev_after = Some(*edges_after);
                }
                TraceEvent::CycleEliminated {
                    edges_before,
                    edges_after,
                    ..
                } => {
                    if edges_after >= edges_before {
                        return Err(Error::InvariantViolation(format!(
                            "cycle elimination did not shrink the envy graph: {edges_before} -> {edges_after}"
                        )));
                    }
                    if let Some(prev) = prev_after {
                        if prev != *edges_before {
                            return Err(Error::InvariantViolation(format!(
                                "trace edge counts do not chain: {prev} then {edges_before}"
                            )));
                        }
                    }
                    prev_after = Some(*edges_after);
                }
            }
        }
        Ok(())
    }
}

/// In-progress run of the algorithm. The partition starts as consecutive
/// blocks (agents 1..n_1 in group 1 and so on) and every bundle empty.
#[derive(Debug, Clone)]
pub struct SolverState<'a> {
    instance: &'a Instance,
    /// agent_group[a-1] = 0-based group of agent a.
    agent_group: Vec<usize>,
    bundles: Vec<GoodSet>,
    /// Bitmask per bundle, maintained only for tabulated utilities.
    masks: Vec<usize>,
    allocated: Vec<bool>,
    /// values[a-1][j] = u_a(bundle j), kept current under every mutation.
    values: Vec<Vec<f64>>,
    edges: Vec<EnvyEdge>,
    trace: SolverTrace,
    ops: u64,
}

impl<'a> SolverState<'a> {
    pub fn new(instance: &'a Instance) -> Self {
        let (n, k) = (instance.n(), instance.k());
        let mut agent_group = vec![0usize; n];
        let mut at = 0;
        for (j, &sz) in instance.group_sizes().iter().enumerate() {
            agent_group[at..at + sz].fill(j);
            at += sz;
        }
        SolverState {
            instance,
            agent_group,
            bundles: vec![GoodSet::new(); k],
            masks: vec![0; k],
            allocated: vec![false; instance.m()],
            values: vec![vec![0.0; k]; n],
            edges: Vec::new(),
            trace: SolverTrace::default(),
            ops: 0,
        }
    }

    pub fn instance(&self) -> &Instance {
        self.instance
    }

    /// Mutation count: cached-value writes, envy comparisons, cycle-search
    /// hops, and agent moves.
    pub fn ops(&self) -> u64 {
        self.ops
    }

    pub fn trace(&self) -> &SolverTrace {
        &self.trace
    }

    pub fn envy_graph(&self) -> EnvyGraph {
        EnvyGraph::from_edges(self.instance.k(), self.edges.clone())
    }

    pub fn partition(&self) -> GroupPartition {
        let k = self.instance.k();
        let mut groups = vec![BTreeSet::new(); k];
        for (a0, &j) in self.agent_group.iter().enumerate() {
            groups[j].insert(a0 + 1);
        }
        GroupPartition::new(groups).expect("solver partition stays valid")
    }

    pub fn allocation(&self) -> Allocation {
        Allocation::new(self.instance.m(), self.bundles.clone())
            .expect("solver allocation stays valid")
    }

    fn rebuild_edges(&mut self) {
        let k = self.instance.k();
        self.edges.clear();
        for (a0, row) in self.values.iter().enumerate() {
            let i = self.agent_group[a0];
            for j in 0..k {
                if j != i {
                    self.ops += 1;
                    if row[j] > row[i] {
                        self.edges.push(EnvyEdge {
                            from: i + 1,
                            to: j + 1,
                            agent: a0 + 1,
                        });
                    }
                }
            }
        }
        self.edges.sort_by_key(|e| (e.from, e.to, e.agent));
    }

    /// In debug builds on tiny instances, every mutation must leave the
    /// partial state EF1.
    fn debug_check_ef1(&self) {
        #[cfg(debug_assertions)]
        {
            if self.instance.n() <= 10 && self.instance.m() <= 10 {
                let ok = crate::model::is_efc_parts(
                    self.instance,
                    &self.partition(),
                    &self.allocation(),
                    1,
                )
                .expect("partial state is well-formed");
                debug_assert!(ok, "partial state lost EF1");
            }
        }
    }

    /// Hands good `g` to the lowest-indexed group with no incoming envy
    /// edge. The graph must be acyclic (run [`Self::eliminate_cycles`]
    /// first) and `g` unallocated.
    pub fn allocate_next_good(&mut self, g: usize) -> Result<()> {
        if g == 0 || g > self.instance.m() {
            return Err(Error::UnknownGood(g));
        }
        if self.allocated[g - 1] {
            return Err(Error::InvalidArgument(format!(
                "good {g} is already allocated"
            )));
        }
        let graph = self.envy_graph();
        if !graph.is_acyclic() {
            return Err(Error::InvariantViolation(
                "allocate_next_good requires an acyclic envy graph".into(),
            ));
        }
        let target = *graph
            .unenvied_groups()
            .first()
            .expect("an acyclic graph has a vertex of in-degree zero")
            - 1;

        self.allocated[g - 1] = true;
        self.bundles[target].insert(g);
        match self.instance.utilities() {
            UtilityModel::Additive { .. } => {
                for a0 in 0..self.instance.n() {
                    self.values[a0][target] += self.instance.good_value(a0, g);
                    self.ops += 1;
                }
            }
            UtilityModel::Table { .. } => {
                self.masks[target] |= 1 << (g - 1);
                for a0 in 0..self.instance.n() {
                    self.values[a0][target] = self.instance.table_value(a0, self.masks[target]);
                    self.ops += 1;
                }
            }
        }
        self.rebuild_edges();
        self.trace.events.push(TraceEvent::Allocate {
            good: g,
            group: target + 1,
            edges_after: self.edges.len(),
        });
        self.debug_check_ef1();
        Ok(())
    }

    /// Resolves one directed cycle if any exists: every agent labeling a
    /// cycle edge moves into the group she envies. Bundle values are
    /// untouched, so moved agents strictly gain and the total edge count
    /// strictly drops. Returns false on an acyclic graph.
    pub fn eliminate_one_cycle(&mut self) -> bool {
        let graph = self.envy_graph();
        let Some(cycle) = graph.find_cycle() else {
            return false;
        };
        self.ops += cycle.len() as u64;
        let edges_before = self.edges.len();
        let agents: Vec<usize> = cycle.iter().map(|e| e.agent).collect();
        let groups: Vec<usize> = cycle.iter().map(|e| e.from).collect();
        for e in &cycle {
            debug_assert!(
                self.values[e.agent - 1][e.to - 1] > self.values[e.agent - 1][e.from - 1],
                "cycle edge without strict envy"
            );
            self.agent_group[e.agent - 1] = e.to - 1;
        }
        self.rebuild_edges();
        let edges_after = self.edges.len();
        assert!(
            edges_after < edges_before,
            "cycle elimination must shrink the envy graph ({edges_before} -> {edges_after})"
        );
        self.trace.events.push(TraceEvent::CycleEliminated {
            agents,
            groups,
            edges_before,
            edges_after,
        });
        self.debug_check_ef1();
        true
    }

    /// Resolves directed cycles until none remain; returns how many.
    pub fn eliminate_cycles(&mut self) -> usize {
        let mut resolved = 0;
        while self.eliminate_one_cycle() {
            resolved += 1;
        }
        resolved
    }

    /// Finishes the run, returning the outcome and its trace.
    pub fn finish(self) -> Result<(Outcome, SolverTrace)> {
        let outcome = Outcome::new(self.instance, self.partition(), self.allocation())?;
        let mut trace = self.trace;
        trace.ops = self.ops;
        Ok((outcome, trace))
    }
}

/// Runs generalized envy cycle elimination to completion and returns an EF1
/// outcome. Goods are processed in ascending id order unless `good_order`
/// supplies a permutation of 1..=m.
pub fn solve_ef1(
    instance: &Instance,
    good_order: Option<&[usize]>,
) -> Result<(Outcome, SolverTrace)> {
    let m = instance.m();
    let order: Vec<usize> = match good_order {
        None => (1..=m).collect(),
        Some(perm) => {
            let mut seen = vec![false; m];
            if perm.len() != m {
                return Err(Error::InvalidArgument(format!(
                    "good order lists {} goods, instance has {m}",
                    perm.len()
                )));
            }
            for &g in perm {
                if g == 0 || g > m {
                    return Err(Error::UnknownGood(g));
                }
                if seen[g - 1] {
                    return Err(Error::InvalidArgument(format!(
                        "good {g} repeats in the good order"
                    )));
                }
                seen[g - 1] = true;
            }
            perm.to_vec()
        }
    };

    let mut state = SolverState::new(instance);
    for g in order {
        state.eliminate_cycles();
        state.allocate_next_good(g)?;
    }
    state.eliminate_cycles();
    let (outcome, trace) = state.finish()?;
    trace.validate()?;
    Ok((outcome, trace))
}
