//! Connected-allocation machinery against enumeration oracles.

mod common;

use common::*;
use groupfair::connected::{
    connected_allocation_count, ef1_assignment_feasible, enumerate_connected_allocations,
    knife_allocation, round_fractional_assignment, solve_connected_ef1,
    solve_connected_ef1_with_workers, FractionalAssignment, KnifeVector, Strength,
};
use groupfair::{is_efc, Outcome};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn enumeration_matches_the_oracle_listing_exactly() {
    for k in 1..=4usize {
        for m in 0..=8usize {
            let want = all_connected_allocations(m, k);
            let got: Vec<_> = enumerate_connected_allocations(m, k).collect();
            assert_eq!(got.len(), want.len(), "count at m={m}, k={k}");
            assert_eq!(
                connected_allocation_count(m, k),
                want.len() as u128,
                "closed form at m={m}, k={k}"
            );
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.bundles(), &w[..], "order diverged at m={m}, k={k}");
            }
        }
    }
}

proptest! {
    // Knife vectors always carve disjoint intervals; the union misses
    // exactly the goods sat on by distinct integer knives.
    #[test]
    fn knife_allocations_are_interval_partitions(
        m in 1usize..=8,
        k in 2usize..=4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut doubled: Vec<usize> =
            (0..k - 1).map(|_| rng.gen_range(1..=2 * m + 1)).collect();
        doubled.sort_unstable();
        let x = KnifeVector::new(m, doubled).unwrap();
        let alloc = knife_allocation(m, k, &x).unwrap();

        let total: usize = alloc.bundles().iter().map(|b| b.len()).sum();
        prop_assert_eq!(total, m - x.integer_knives());
        prop_assert_eq!(alloc.complete(), x.integer_knives() == 0);
        for b in alloc.bundles() {
            if let (Some(&lo), Some(&hi)) = (b.iter().next(), b.iter().next_back()) {
                prop_assert_eq!(hi - lo + 1, b.len(), "bundle not an interval");
            }
        }
    }

    #[test]
    fn connected_solver_handles_tables(inst in arb_table_instance(3, 2, 5)) {
        let outcome = solve_connected_ef1(&inst).unwrap();
        prop_assert!(efc_by_subsets(
            &inst,
            outcome.partition().groups(),
            outcome.allocation().bundles(),
            1,
        ));
    }

    // Whenever the endpoint-removal criterion seats everyone, the literal
    // EF1 criterion must too, and both outcomes pass the checker.
    #[test]
    fn up_to_one_feasibility_implies_ef1_feasibility(
        inst in arb_additive_instance(3, 2, 6),
    ) {
        for allocation in enumerate_connected_allocations(inst.m(), inst.k()) {
            let strong = ef1_assignment_feasible(&inst, &allocation, Strength::UpToOne).unwrap();
            let weak = ef1_assignment_feasible(&inst, &allocation, Strength::Ef1).unwrap();
            if let Some(partition) = &strong {
                prop_assert!(weak.is_some(), "up-to-one seating without an EF1 seating");
                let outcome =
                    Outcome::new(&inst, partition.clone(), allocation.clone()).unwrap();
                prop_assert!(is_efc(&inst, &outcome, 1).unwrap());
            }
            if let Some(partition) = weak {
                let outcome = Outcome::new(&inst, partition, allocation.clone()).unwrap();
                prop_assert!(is_efc(&inst, &outcome, 1).unwrap());
            }
        }
    }

    // A connected EF1 outcome exists per the oracle too; the solver and the
    // oracle must agree that the search space is never empty.
    #[test]
    fn oracle_confirms_connected_ef1_existence(
        inst in arb_additive_instance(2, 3, 5),
    ) {
        prop_assert!(exists_connected_efc(&inst, 1));
        prop_assert!(solve_connected_ef1(&inst).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    // The never-fail contract at desk scale, judged by the subset oracle.
    #[test]
    fn connected_solver_always_succeeds_and_is_ef1(
        inst in arb_additive_instance(3, 3, 7),
    ) {
        let outcome = solve_connected_ef1(&inst).unwrap();
        prop_assert!(efc_by_subsets(
            &inst,
            outcome.partition().groups(),
            outcome.allocation().bundles(),
            1,
        ));
        for b in outcome.allocation().bundles() {
            if let (Some(&lo), Some(&hi)) = (b.iter().next(), b.iter().next_back()) {
                prop_assert_eq!(hi - lo + 1, b.len(), "bundle not an interval");
            }
        }
    }
}

#[test]
fn parallel_and_serial_solvers_both_verify_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for trial in 0..30 {
        let sizes = if trial % 2 == 0 {
            vec![2, 2]
        } else {
            vec![1, 2, 1]
        };
        let n: usize = sizes.iter().sum();
        let m = rng.gen_range(3..=9);
        let inst = additive_instance(&sizes, random_matrix(&mut rng, n, m, 8.0));
        let serial = solve_connected_ef1(&inst).unwrap();
        assert!(efc_by_subsets(
            &inst,
            serial.partition().groups(),
            serial.allocation().bundles(),
            1
        ));
        for workers in [2, 4] {
            let parallel = solve_connected_ef1_with_workers(&inst, workers).unwrap();
            assert!(efc_by_subsets(
                &inst,
                parallel.partition().groups(),
                parallel.allocation().bundles(),
                1,
            ));
        }
    }
}

#[test]
fn rounding_satisfies_both_conditions_on_500_random_mixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for trial in 0..500 {
        let k = rng.gen_range(2..=4usize);
        let sizes: Vec<usize> = (0..k).map(|_| rng.gen_range(1..=3)).collect();
        let weights = random_feasible_weights(&mut rng, &sizes);
        let fa = FractionalAssignment::new(weights.clone()).unwrap();
        let pi = round_fractional_assignment(&fa, &sizes).unwrap();

        let mut counts = vec![0usize; k];
        for (a0, &g) in pi.iter().enumerate() {
            assert!(
                weights[a0][g - 1] > 0.0,
                "trial {trial}: agent {} seated off-support",
                a0 + 1
            );
            counts[g - 1] += 1;
        }
        assert_eq!(counts, sizes, "trial {trial}: group sizes broken");
    }
}

// For small n the rounded assignment must be one of the brute-force valid
// assignments: size-respecting and supported.
#[test]
fn rounding_output_is_among_brute_force_witnesses() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..100 {
        let sizes = vec![2, 1, 2];
        let weights = random_feasible_weights(&mut rng, &sizes);
        let fa = FractionalAssignment::new(weights.clone()).unwrap();
        let pi = round_fractional_assignment(&fa, &sizes).unwrap();

        let witnesses: Vec<Vec<usize>> = all_partitions(&sizes)
            .into_iter()
            .map(|groups| {
                let mut assign = vec![0usize; 5];
                for (i, group) in groups.iter().enumerate() {
                    for &a in group {
                        assign[a - 1] = i + 1;
                    }
                }
                assign
            })
            .filter(|assign| {
                assign
                    .iter()
                    .enumerate()
                    .all(|(a0, &g)| weights[a0][g - 1] > 0.0)
            })
            .collect();
        assert!(
            witnesses.contains(&pi),
            "rounded assignment {pi:?} not among {} brute-force witnesses",
            witnesses.len()
        );
    }
}

#[test]
fn degenerate_fractional_inputs_round_trip() {
    // Already integral: identity.
    let fa = FractionalAssignment::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    assert_eq!(
        round_fractional_assignment(&fa, &[1, 1]).unwrap(),
        vec![2, 1]
    );

    // Dust within tolerance on an otherwise integral matrix still rounds.
    let eps = 5e-10;
    let fa = FractionalAssignment::new(vec![vec![1.0 - eps, eps], vec![eps, 1.0 - eps]]).unwrap();
    let pi = round_fractional_assignment(&fa, &[1, 1]).unwrap();
    assert_eq!(pi, vec![1, 2]);
}
