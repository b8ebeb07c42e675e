mod common;

use brakesense_core::tracking::{solve_assignment, CostMatrix, GATED};
use common::{brute_force_gated, brute_force_min, random_matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_exhaustive_minimum_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..1000 {
        let m = random_matrix(&mut rng, 7);
        let a = solve_assignment(&CostMatrix::from_rows(&m));
        assert_eq!(a.matches.len(), m.len().min(m[0].len()));
        let expected = brute_force_min(&m);
        let got = a.total_cost(&CostMatrix::from_rows(&m));
        assert!((got - expected).abs() < 1e-9, "{m:?}: {got} vs {expected}");
    }
}

#[test]
fn gated_entries_maximize_matches_then_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        let mut m = random_matrix(&mut rng, 5);
        for row in &mut m {
            for v in row.iter_mut() {
                if rng.random_bool(0.4) {
                    *v = GATED;
                }
            }
        }
        let cost = CostMatrix::from_rows(&m);
        let a = solve_assignment(&cost);
        let (n, best) = brute_force_gated(&m);
        assert_eq!(a.matches.len(), n, "{m:?}");
        assert!((a.total_cost(&cost) - best).abs() < 1e-9, "{m:?}");
        assert!(a.matches.iter().all(|&(r, c)| !cost.is_gated(r, c)));
    }
}

proptest! {
    #[test]
    fn partition_of_rows_and_columns(
        m in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(0.0f64..10.0, c), r))
    ) {
        let a = solve_assignment(&CostMatrix::from_rows(&m));
        let mut rows: Vec<usize> = a.matches.iter().map(|p| p.0).chain(a.unmatched_tracks.iter().copied()).collect();
        let mut cols: Vec<usize> = a.matches.iter().map(|p| p.1).chain(a.unmatched_detections.iter().copied()).collect();
        rows.sort_unstable();
        cols.sort_unstable();
        prop_assert_eq!(rows, (0..m.len()).collect::<Vec<_>>());
        prop_assert_eq!(cols, (0..m[0].len()).collect::<Vec<_>>());
    }

    #[test]
    fn transposing_keeps_the_optimum(
        m in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(0.0f64..10.0, c), r))
    ) {
        let cost = CostMatrix::from_rows(&m);
        let t = cost.transposed();
        let a = solve_assignment(&cost).total_cost(&cost);
        let b = solve_assignment(&t).total_cost(&t);
        prop_assert!((a - b).abs() < 1e-9);
    }
}
