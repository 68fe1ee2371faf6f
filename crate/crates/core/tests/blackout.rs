use cpad::blackout::{
    apply_mask, budget, random_stepwise_mask, sequential_block_mask, BlackoutMode, BlackoutSpec,
};
use proptest::prelude::*;

const PCTS: [f64; 6] = [0.02, 0.05, 0.08, 0.10, 0.15, 0.25];

#[test]
fn budgets_are_exact_and_runs_bounded() {
    for &pct in &PCTS {
        let want = budget(6, 100, pct);
        for seed in 0..100 {
            let r = random_stepwise_mask(6, 100, seed as usize % 6, pct, seed).unwrap();
            assert_eq!(r.masked_count(), want, "random pct {pct} seed {seed}");
            let s = sequential_block_mask(6, 100, seed as usize % 6, pct, 10, seed).unwrap();
            assert_eq!(s.masked_count(), want, "sequential pct {pct} seed {seed}");
            assert!(s.longest_run() <= 10, "run {} at pct {pct} seed {seed}", s.longest_run());
        }
    }
}

#[test]
fn quarter_budget_by_arithmetic() {
    assert_eq!(budget(6, 100, 0.25), 125);
    assert_eq!(random_stepwise_mask(6, 100, 0, 0.25, 3).unwrap().masked_count(), 125);
}

#[test]
fn random_slots_are_uniform_over_agents() {
    let mut per_agent = [0usize; 6];
    for seed in 0..1000 {
        let m = random_stepwise_mask(6, 100, 0, 0.1, seed).unwrap();
        for (a, row) in m.grid.iter().enumerate() {
            per_agent[a] += row.iter().filter(|&&b| b).count();
        }
    }
    assert_eq!(per_agent[0], 0);
    let mean = per_agent[1..].iter().sum::<usize>() as f64 / 5.0;
    for &c in &per_agent[1..] {
        assert!((c as f64 - mean).abs() / mean < 0.05, "{per_agent:?}");
    }
}

#[test]
fn zero_and_invalid_pct() {
    for mode in BlackoutMode::ALL {
        let spec = BlackoutSpec {
            mode,
            pct: 0.0,
            max_block: 10,
            seed: 0,
        };
        assert_eq!(spec.mask(6, 50, 2, 9).unwrap().masked_count(), 0);
        for bad in [-0.1, 1.5, f64::NAN] {
            assert!(BlackoutSpec { pct: bad, ..spec }.mask(6, 50, 2, 9).is_err());
        }
    }
}

#[test]
fn empty_mask_keeps_every_agent() {
    let nodes = apply_mask(4, 3, 2, None).unwrap();
    assert_eq!(nodes, vec![vec![2, 0, 1, 3]; 3]);
    let none = cpad::blackout::BlackoutMask::none(4, 3, 2);
    assert_eq!(apply_mask(4, 3, 2, Some(&none)).unwrap(), nodes);
}

#[test]
fn sequential_rejects_impossible_budget() {
    // Two non-ego agents of 10 steps with runs of 1 hold at most 5 each.
    assert!(sequential_block_mask(3, 10, 0, 0.5, 1, 0).is_ok());
    assert!(sequential_block_mask(3, 10, 0, 0.6, 1, 0).is_err());
    assert!(sequential_block_mask(3, 10, 0, 0.1, 0, 0).is_err());
}

proptest! {
    #[test]
    fn masks_respect_contracts(
        n in 2usize..8,
        horizon in 1usize..120,
        ego_pick in 0usize..8,
        pct in 0.0f64..0.5,
        max_block in 1usize..12,
        seed in any::<u64>(),
    ) {
        let ego = ego_pick % n;
        let want = budget(n, horizon, pct);
        let r = random_stepwise_mask(n, horizon, ego, pct, seed).unwrap();
        prop_assert_eq!(r.masked_count(), want);
        prop_assert!(r.grid[ego].iter().all(|&b| !b));

        if let Ok(s) = sequential_block_mask(n, horizon, ego, pct, max_block, seed) {
            prop_assert_eq!(s.masked_count(), want);
            prop_assert!(s.longest_run() <= max_block);
            prop_assert!(s.grid[ego].iter().all(|&b| !b));
            let nodes = apply_mask(n, horizon, ego, Some(&s)).unwrap();
            for (t, present) in nodes.iter().enumerate() {
                prop_assert_eq!(present[0], ego);
                let expect = 1 + (0..n).filter(|&a| a != ego && !s.grid[a][t]).count();
                prop_assert_eq!(present.len(), expect);
            }
        }
    }

    #[test]
    fn masks_are_deterministic(seed in any::<u64>(), pct in 0.0f64..0.3) {
        for mode in BlackoutMode::ALL {
            let spec = BlackoutSpec { mode, pct, max_block: 10, seed: 0 };
            prop_assert_eq!(spec.mask(6, 40, 1, seed).unwrap(), spec.mask(6, 40, 1, seed).unwrap());
        }
    }
}
