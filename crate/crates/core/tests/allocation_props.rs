use std::collections::BTreeMap;

use channelpage_core::lp::{
    brute_force_allocation, build_allocation_problem, solve_allocation, solve_allocation_with, verify_allocation,
    AllocationConfig, AllocationStatus, ScoreMatrix, SolveMode,
};
use channelpage_core::model::CategoryId;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Instance {
    scores: ScoreMatrix,
    config: AllocationConfig,
}

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=3, 1usize..=8, 1u32..=3, any::<bool>())
        .prop_flat_map(|(m, n, s, coarse)| {
            let score = if coarse {
                (0u32..=4).prop_map(|q| q as f64 * 0.25).boxed()
            } else {
                (0.0f64..1.0).boxed()
            };
            (
                prop::collection::vec(score, m * n),
                prop::collection::vec(1usize..=3, m),
                0usize..=1,
                prop::collection::vec(0u32..s, n),
                prop::collection::vec(0u32..=3, s as usize),
                1u32..=3,
                prop_oneof![Just(0.0), Just(0.5), Just(2.0), 0.0f64..3.0],
            )
                .prop_map(move |(values, capacities, overflow, cats, thr, bound, penalty)| Instance {
                    scores: ScoreMatrix::new(m, n, values).unwrap(),
                    config: AllocationConfig {
                        capacities,
                        overflow,
                        thresholds: thr.iter().enumerate().map(|(c, &t)| (CategoryId(c as u32), t)).collect(),
                        per_channel_bound: bound,
                        diversity_penalty: penalty,
                        category_of: cats.into_iter().map(CategoryId).collect(),
                    },
                })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn solver_matches_enumeration(inst in instance()) {
        let exact = solve_allocation(&inst.scores, &inst.config).unwrap();
        let oracle = brute_force_allocation(&inst.scores, &inst.config).unwrap();
        match (exact.status, oracle.status) {
            (AllocationStatus::Optimal, AllocationStatus::Optimal) => {
                prop_assert!((exact.objective - oracle.objective).abs() <= 1e-9,
                    "solver {} oracle {}", exact.objective, oracle.objective);
                prop_assert_eq!(&exact.assignment, &oracle.assignment);
            }
            (AllocationStatus::Infeasible(_), AllocationStatus::Infeasible(_)) => {}
            (a, b) => prop_assert!(false, "status mismatch {:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn optimal_outputs_verify_and_fill_channels(inst in instance()) {
        let a = solve_allocation(&inst.scores, &inst.config).unwrap();
        if a.is_optimal() {
            let report = verify_allocation(&a, &inst.scores, &inst.config);
            prop_assert!(report.all_passed(), "{:?}", report);
            for i in 0..inst.config.channels() {
                prop_assert_eq!(a.channel_items(i).len(), inst.config.demand(i));
            }
        }
    }

    #[test]
    fn relaxation_bounds_integral(inst in instance()) {
        let exact = solve_allocation(&inst.scores, &inst.config).unwrap();
        let relaxed = solve_allocation_with(&inst.scores, &inst.config, SolveMode::RelaxationOnly).unwrap();
        if exact.is_optimal() {
            prop_assert_eq!(relaxed.status, AllocationStatus::RelaxationOnly);
            prop_assert!(relaxed.objective >= exact.objective - 1e-9);
        }
    }

    #[test]
    fn total_slack_non_increasing_in_penalty(inst in instance()) {
        let mut previous = f64::INFINITY;
        for penalty in [0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let mut config = inst.config.clone();
            config.diversity_penalty = penalty;
            let a = solve_allocation(&inst.scores, &config).unwrap();
            if !a.is_optimal() {
                return Ok(());
            }
            prop_assert!(a.total_slack() <= previous + 1e-9, "U={} slack {} after {}", penalty, a.total_slack(), previous);
            previous = a.total_slack();
        }
    }
}

fn config(capacities: Vec<usize>, cats: &[u32], thresholds: &[u32], bound: u32, penalty: f64) -> AllocationConfig {
    AllocationConfig {
        capacities,
        overflow: 0,
        thresholds: thresholds
            .iter()
            .enumerate()
            .map(|(c, &t)| (CategoryId(c as u32), t))
            .collect::<BTreeMap<_, _>>(),
        per_channel_bound: bound,
        diversity_penalty: penalty,
        category_of: cats.iter().map(|&c| CategoryId(c)).collect(),
    }
}

#[test]
fn problem_dimensions() {
    let s = ScoreMatrix::from_rows(&[vec![0.5]]).unwrap();
    let p = build_allocation_problem(&s, &config(vec![1], &[0], &[1], 1, 2.0)).unwrap();
    assert_eq!(p.lp.num_vars(), 2);
    assert_eq!(p.lp.constraints.len(), 4);

    let s = ScoreMatrix::from_rows(&[vec![0.1; 4], vec![0.2; 4]]).unwrap();
    let p = build_allocation_problem(&s, &config(vec![1, 1], &[0, 1, 0, 1], &[1, 1], 1, 2.0)).unwrap();
    assert_eq!(p.lp.num_vars(), 10);
    assert_eq!(p.lp.constraints.len(), 12);
    assert_eq!(&p.lp.objective[8..], &[-2.0, -2.0]);
    assert!(p.lp.integer[..8].iter().all(|&f| f));
    assert!(p.lp.integer[8..].iter().all(|&f| !f));
}

#[test]
fn dimension_mismatch_is_an_error() {
    let s = ScoreMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
    assert!(build_allocation_problem(&s, &config(vec![1], &[0], &[1], 1, 2.0)).is_err());
}

#[test]
fn equal_scores_reach_symmetric_value() {
    let s = ScoreMatrix::from_rows(&[vec![0.4; 6], vec![0.4; 6]]).unwrap();
    let a = solve_allocation(&s, &config(vec![2, 1], &[0, 1, 2, 3, 4, 5], &[1; 6], 1, 2.0)).unwrap();
    assert!((a.objective - 3.0 * 0.4).abs() < 1e-12);
}

#[test]
fn zero_thresholds_charge_every_item() {
    // Every shown item overflows its category by one unit at penalty 2.
    let s = ScoreMatrix::from_rows(&[vec![0.9, 0.8, 0.7]]).unwrap();
    let cfg = config(vec![2], &[0, 0, 1], &[0, 0], 2, 2.0);
    let a = solve_allocation(&s, &cfg).unwrap();
    let b = brute_force_allocation(&s, &cfg).unwrap();
    assert!((a.objective - (0.9 + 0.8 - 4.0)).abs() < 1e-12);
    assert_eq!(a.assignment, b.assignment);
    assert_eq!(a.slacks[&CategoryId(0)], 2.0);
}

#[test]
fn oracle_refuses_large_instances() {
    let s = ScoreMatrix::new(3, 12, vec![0.1; 36]).unwrap();
    let cfg = config(vec![1, 1, 1], &[0; 12], &[1], 1, 2.0);
    assert!(brute_force_allocation(&s, &cfg).is_err());
    assert!(solve_allocation(&s, &cfg).unwrap().is_optimal());
}

#[test]
fn infeasible_demand_in_oracle() {
    let s = ScoreMatrix::from_rows(&[vec![0.7]]).unwrap();
    let b = brute_force_allocation(&s, &config(vec![2], &[0], &[1], 1, 2.0)).unwrap();
    assert!(matches!(b.status, AllocationStatus::Infeasible(_)));
}
