use proptest::prelude::*;

use gpcl::acquisition::{cei, dynamic_xi, score_grid, select_batch, AcquisitionConfig};
use gpcl::gp::{GridRealization, GridSpec};

fn realization() -> impl Strategy<Value = GridRealization> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
        let n = r * c;
        (
            // Coarse values so that ties actually occur.
            prop::collection::vec((0u8..6).prop_map(|v| v as f64 * 0.1), n),
            prop::collection::vec((0u8..4).prop_map(|v| v as f64 * 0.05), n),
        )
            .prop_map(move |(mean, stddev)| GridRealization {
                grid: GridSpec::new(r, c),
                mean,
                stddev,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn cei_is_monotone_in_mean(
        mu in -2.0..2.0f64,
        step in 0.0..1.0f64,
        sigma in 0.0..2.0f64,
        inc in -2.0..2.0f64,
        xi in 0.0..0.5f64,
    ) {
        let lo = cei(mu, sigma, inc, xi);
        prop_assert!(lo >= 0.0);
        prop_assert!(cei(mu + step, sigma, inc, xi) >= lo);
    }

    #[test]
    fn cei_grows_with_sigma_at_zero_improvement(inc in -2.0..2.0f64, xi in 0.0..0.5f64, s in 0.01..2.0f64, ds in 0.01..1.0f64) {
        let mu = inc + xi;
        prop_assert!(cei(mu, s + ds, inc, xi) > cei(mu, s, inc, xi));
    }

    #[test]
    fn cei_ignores_common_shift(mu in -1.0..1.0f64, sigma in 0.01..2.0f64, inc in -1.0..1.0f64, xi in 0.0..0.5f64, shift in -3.0..3.0f64) {
        let a = cei(mu, sigma, inc, xi);
        let b = cei(mu + shift, sigma, inc + shift, xi);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn xi_is_bounded_and_falls_with_confidence(
        batch in prop::collection::vec(0.0..1.0f64, 1..12),
        bump in 0.0..0.5f64,
        xi_max in 0.0..1.0f64,
        c_ref in 0.1..1.0f64,
    ) {
        let cfg = AcquisitionConfig { xi_max, confidence_ref: c_ref, ..Default::default() };
        let xi = dynamic_xi(&batch, &cfg).unwrap();
        prop_assert!((0.0..=xi_max).contains(&xi));
        let higher: Vec<f64> = batch.iter().map(|v| v + bump).collect();
        prop_assert!(dynamic_xi(&higher, &cfg).unwrap() <= xi);
    }

    #[test]
    fn batch_is_a_deterministic_best_first_set(g in realization(), inc in 0.0..0.5f64, xi in 0.0..0.2f64, frac in 0.0..1.0f64) {
        let n = ((g.grid.len() as f64 * frac) as usize).max(1);
        let cells = select_batch(&g, inc, xi, n).unwrap();
        prop_assert_eq!(cells.len(), n);
        prop_assert_eq!(&cells, &select_batch(&g, inc, xi, n).unwrap());
        let mut sorted = cells.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), n);
        let scores = score_grid(&g, inc, xi);
        let worst_taken = cells.iter().map(|&c| scores[c]).fold(f64::INFINITY, f64::min);
        for (i, s) in scores.iter().enumerate() {
            if !cells.contains(&i) {
                prop_assert!(*s <= worst_taken);
            }
        }
        for w in cells.windows(2) {
            prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
        }
    }
}

#[test]
fn oversized_batch_is_rejected() {
    let g = GridRealization {
        grid: GridSpec::new(2, 2),
        mean: vec![0.0; 4],
        stddev: vec![0.1; 4],
    };
    assert!(select_batch(&g, 0.0, 0.0, 5).is_err());
    assert!(select_batch(&g, 0.0, 0.0, 0).unwrap().is_empty());
}
