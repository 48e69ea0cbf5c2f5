//! Brute-force oracles shared by the integration suites.
//!
//! Everything here recomputes definitions from first principles: subset
//! enumeration instead of greedy arguments, full partition/allocation
//! enumeration instead of matching, exact rational arithmetic instead of
//! log-gamma. Oracle answers are the reference the library is judged
//! against, so nothing in this module calls the library's checkers.

#![allow(dead_code)]

use std::collections::BTreeSet;

use groupfair::{Allocation, GoodSet, GroupPartition, Instance, Outcome, UtilityModel};
use num::{BigRational, FromPrimitive, One, ToPrimitive};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn set(items: &[usize]) -> BTreeSet<usize> {
    items.iter().copied().collect()
}

pub fn additive_instance(sizes: &[usize], matrix: Vec<Vec<f64>>) -> Instance {
    Instance::new(sizes.to_vec(), UtilityModel::additive(matrix).unwrap()).unwrap()
}

pub fn table_instance(sizes: &[usize], tables: Vec<Vec<f64>>) -> Instance {
    Instance::new(sizes.to_vec(), UtilityModel::table(tables).unwrap()).unwrap()
}

/// u_a(S) recomputed directly from the raw model data.
pub fn raw_utility(inst: &Instance, agent: usize, goods: &GoodSet) -> f64 {
    match inst.utilities() {
        UtilityModel::Additive { matrix } => goods.iter().map(|&g| matrix[agent - 1][g - 1]).sum(),
        UtilityModel::Table { tables } => {
            let mask: usize = goods.iter().map(|&g| 1usize << (g - 1)).sum();
            tables[agent - 1][mask]
        }
    }
}

/// All ordered partitions of agents 1..=n into groups of the given sizes.
pub fn all_partitions(sizes: &[usize]) -> Vec<Vec<BTreeSet<usize>>> {
    let n: usize = sizes.iter().sum();
    let pool: Vec<usize> = (1..=n).collect();
    let mut out = Vec::new();
    let mut acc: Vec<BTreeSet<usize>> = Vec::new();
    fill(&pool, sizes, &mut acc, &mut out);
    out
}

fn fill(
    pool: &[usize],
    sizes: &[usize],
    acc: &mut Vec<BTreeSet<usize>>,
    out: &mut Vec<Vec<BTreeSet<usize>>>,
) {
    if sizes.is_empty() {
        out.push(acc.clone());
        return;
    }
    for combo in combinations(pool, sizes[0]) {
        let chosen: BTreeSet<usize> = combo.iter().copied().collect();
        let rest: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|a| !chosen.contains(a))
            .collect();
        acc.push(chosen);
        fill(&rest, &sizes[1..], acc, out);
        acc.pop();
    }
}

fn combinations(pool: &[usize], r: usize) -> Vec<Vec<usize>> {
    if r == 0 {
        return vec![Vec::new()];
    }
    if pool.len() < r {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in pool.iter().enumerate() {
        if pool.len() - i < r {
            break;
        }
        for mut tail in combinations(&pool[i + 1..], r - 1) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

/// All complete allocations of goods 1..=m to k groups, in lexicographic
/// order of the good-to-group assignment vector.
pub fn all_allocations(m: usize, k: usize) -> Vec<Vec<GoodSet>> {
    let mut out = Vec::new();
    let mut assign = vec![0usize; m];
    loop {
        let mut bundles = vec![GoodSet::new(); k];
        for (g0, &grp) in assign.iter().enumerate() {
            bundles[grp].insert(g0 + 1);
        }
        out.push(bundles);
        // base-k odometer, least significant digit last
        let mut pos = m;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            assign[pos] += 1;
            if assign[pos] < k {
                break;
            }
            assign[pos] = 0;
        }
    }
}

/// All complete connected allocations: bundles are the intervals between
/// nondecreasing cuts 0 <= c_1 <= ... <= c_{k-1} <= m, bundle j = (c_{j-1}, c_j].
pub fn all_connected_allocations(m: usize, k: usize) -> Vec<Vec<GoodSet>> {
    let mut out = Vec::new();
    let mut cuts = vec![0usize; k - 1];
    loop {
        let mut bundles = vec![GoodSet::new(); k];
        let mut prev = 0usize;
        for j in 0..k {
            let end = if j + 1 < k { cuts[j] } else { m };
            for g in prev + 1..=end {
                bundles[j].insert(g);
            }
            prev = end;
        }
        out.push(bundles);
        let mut pos = k - 1;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if cuts[pos] < m {
                cuts[pos] += 1;
                for later in pos + 1..k - 1 {
                    cuts[later] = cuts[pos];
                }
                break;
            }
        }
    }
}

/// EFc by literal definition: for every agent and foreign bundle, some
/// subset of at most c foreign goods can be deleted so the agent is not
/// worse off. Subsets are enumerated exhaustively by bitmask.
pub fn efc_by_subsets(
    inst: &Instance,
    groups: &[BTreeSet<usize>],
    bundles: &[GoodSet],
    c: usize,
) -> bool {
    for (i, group) in groups.iter().enumerate() {
        for &a in group {
            let own = raw_utility(inst, a, &bundles[i]);
            for (j, other) in bundles.iter().enumerate() {
                if j == i {
                    continue;
                }
                if !some_removal_suffices(inst, a, other, c, own) {
                    return false;
                }
            }
        }
    }
    true
}

fn some_removal_suffices(inst: &Instance, a: usize, other: &GoodSet, c: usize, own: f64) -> bool {
    let items: Vec<usize> = other.iter().copied().collect();
    let t = items.len();
    for mask in 0u64..(1 << t) {
        if (mask.count_ones() as usize) > c {
            continue;
        }
        let rest: GoodSet = items
            .iter()
            .enumerate()
            .filter(|(idx, _)| mask & (1 << idx) == 0)
            .map(|(_, &g)| g)
            .collect();
        if own >= raw_utility(inst, a, &rest) {
            return true;
        }
    }
    false
}

/// Smallest c for which the outcome is EFc, by growing subset search.
pub fn min_c_by_subsets(inst: &Instance, groups: &[BTreeSet<usize>], bundles: &[GoodSet]) -> usize {
    let cap = bundles.iter().map(|b| b.len()).max().unwrap_or(0);
    (0..=cap)
        .find(|&c| efc_by_subsets(inst, groups, bundles, c))
        .expect("EFc holds once c reaches the largest bundle")
}

/// Does any (partition, complete allocation) pair satisfy EFc? Full
/// enumeration; only run this at toy sizes.
pub fn exists_efc(inst: &Instance, c: usize) -> bool {
    let partitions = all_partitions(inst.group_sizes());
    for bundles in all_allocations(inst.m(), inst.k()) {
        for groups in &partitions {
            if efc_by_subsets(inst, groups, &bundles, c) {
                return true;
            }
        }
    }
    false
}

/// Envy-free existence, the c = 0 case.
pub fn exists_ef(inst: &Instance) -> bool {
    exists_efc(inst, 0)
}

/// Does any (partition, connected allocation) pair satisfy EFc?
pub fn exists_connected_efc(inst: &Instance, c: usize) -> bool {
    let partitions = all_partitions(inst.group_sizes());
    for bundles in all_connected_allocations(inst.m(), inst.k()) {
        for groups in &partitions {
            if efc_by_subsets(inst, groups, &bundles, c) {
                return true;
            }
        }
    }
    false
}

/// Exact Pr[multinomial(n; 1/k,...,1/k) lands on the all-equal cell
/// (n/k, ..., n/k)], as a rational converted to f64 at the very end.
/// Requires k | n.
pub fn multinomial_mass_exact(n: usize, k: usize) -> f64 {
    assert!(n.is_multiple_of(k), "equal-cell mass needs k | n");
    let b = n / k;
    // n! / (b!)^k
    let mut coeff = BigRational::one();
    let mut numerator = 1usize;
    for _ in 0..k {
        for d in 1..=b {
            coeff *=
                BigRational::from_usize(numerator).unwrap() / BigRational::from_usize(d).unwrap();
            numerator += 1;
        }
    }
    let kn = BigRational::from_usize(k).unwrap().pow(n as i32);
    (coeff / kn).to_f64().expect("mass fits in f64")
}

/// Random additive matrix with entries in [0, hi).
pub fn random_matrix<R: Rng>(rng: &mut R, n: usize, m: usize, hi: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..m).map(|_| rng.gen_range(0.0..hi)).collect())
        .collect()
}

/// A random integral size-respecting assignment: shuffled agents filled
/// into groups block by block; entry [a][i] is 1.0 iff agent a+1 sits in
/// group i+1.
pub fn random_integral_assignment<R: Rng>(rng: &mut R, sizes: &[usize]) -> Vec<Vec<f64>> {
    let n: usize = sizes.iter().sum();
    let mut agents: Vec<usize> = (0..n).collect();
    agents.shuffle(rng);
    let mut w = vec![vec![0.0; sizes.len()]; n];
    let mut at = 0;
    for (i, &sz) in sizes.iter().enumerate() {
        for &a0 in &agents[at..at + sz] {
            w[a0][i] = 1.0;
        }
        at += sz;
    }
    w
}

/// Convex mixture of up to four random integral assignments: a fractional
/// assignment satisfying both degree constraints by construction.
pub fn random_feasible_weights<R: Rng>(rng: &mut R, sizes: &[usize]) -> Vec<Vec<f64>> {
    let n: usize = sizes.iter().sum();
    let k = sizes.len();
    let comps = rng.gen_range(1..=4usize);
    let raw: Vec<f64> = (0..comps).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w = vec![vec![0.0f64; k]; n];
    for lambda in raw {
        let part = random_integral_assignment(rng, sizes);
        for a0 in 0..n {
            for i in 0..k {
                w[a0][i] += lambda / total * part[a0][i];
            }
        }
    }
    w
}

/// Deterministic random outcome for an instance: shuffled agents split into
/// blocks of the prescribed sizes, each good sent to a uniform group.
pub fn random_outcome(inst: &Instance, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents: Vec<usize> = (1..=inst.n()).collect();
    agents.shuffle(&mut rng);
    let mut groups: Vec<BTreeSet<usize>> = Vec::new();
    let mut at = 0;
    for &sz in inst.group_sizes() {
        groups.push(agents[at..at + sz].iter().copied().collect());
        at += sz;
    }
    let mut bundles = vec![GoodSet::new(); inst.k()];
    for g in 1..=inst.m() {
        bundles[rng.gen_range(0..inst.k())].insert(g);
    }
    Outcome::new(
        inst,
        GroupPartition::new(groups).unwrap(),
        Allocation::new(inst.m(), bundles).unwrap(),
    )
    .unwrap()
}

/// Group sizes for 2..=max_k groups of 1..=max_size agents each.
pub fn arb_sizes(max_k: usize, max_size: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_size, 2..=max_k)
}

/// Per-good values mixing small integers (to provoke exact ties) with
/// continuous draws.
fn arb_value() -> impl Strategy<Value = f64> {
    prop_oneof![(0u8..5).prop_map(f64::from), 0.0..10.0f64]
}

pub fn arb_additive_instance(
    max_k: usize,
    max_size: usize,
    max_m: usize,
) -> impl Strategy<Value = Instance> {
    (arb_sizes(max_k, max_size), 1..=max_m).prop_flat_map(|(sizes, m)| {
        let n: usize = sizes.iter().sum();
        prop::collection::vec(prop::collection::vec(arb_value(), m), n)
            .prop_map(move |matrix| additive_instance(&sizes, matrix))
    })
}

/// Monotone tabulated instance built from non-negative increments over the
/// best single-good-removed subset, so flat spots (increment 0) are common.
pub fn arb_table_instance(
    max_k: usize,
    max_size: usize,
    max_m: usize,
) -> impl Strategy<Value = Instance> {
    (arb_sizes(max_k, max_size), 1..=max_m).prop_flat_map(|(sizes, m)| {
        let n: usize = sizes.iter().sum();
        let inc = prop_oneof![Just(0.0f64), 0.0..1.0f64];
        prop::collection::vec(prop::collection::vec(inc, 1 << m), n).prop_map(move |incs| {
            let tables = incs
                .into_iter()
                .map(|inc_row| {
                    let mut row = vec![0.0f64; 1 << m];
                    let mut masks: Vec<usize> = (1..1usize << m).collect();
                    masks.sort_by_key(|s| s.count_ones());
                    for s in masks {
                        let mut floor = 0.0f64;
                        let mut bits = s;
                        while bits != 0 {
                            let bit = bits & bits.wrapping_neg();
                            floor = floor.max(row[s ^ bit]);
                            bits ^= bit;
                        }
                        row[s] = floor + inc_row[s];
                    }
                    row
                })
                .collect();
            table_instance(&sizes, tables)
        })
    })
}

/// Random normalized monotone table over m goods: subsets gain a random
/// non-negative increment over their best single-good-removed subset, in
/// popcount order, which makes monotonicity hold by construction.
pub fn random_monotone_tables<R: Rng>(rng: &mut R, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut row = vec![0.0f64; 1 << m];
            let mut masks: Vec<usize> = (1..1usize << m).collect();
            masks.sort_by_key(|s| s.count_ones());
            for s in masks {
                let mut floor = 0.0f64;
                let mut bits = s;
                while bits != 0 {
                    let bit = bits & bits.wrapping_neg();
                    floor = floor.max(row[s ^ bit]);
                    bits ^= bit;
                }
                row[s] = floor + rng.gen_range(0.0..1.0);
            }
            row
        })
        .collect()
}
