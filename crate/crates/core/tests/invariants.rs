use proptest::prelude::*;

use dekcast::emd::{decompose, denoise, SiftConfig};
use dekcast::lagsel::{grid_search, OrderGrid};
use dekcast::outlier::{analyze, OutlierConfig};
use dekcast::series::TrafficSeries;
use dekcast::Exec;

fn wave(len: usize, amps: &[f64], offset: f64) -> Vec<f64> {
    (0..len)
        .map(|t| {
            let t = t as f64;
            offset
                + amps
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * (t / (3.0 + 7.0 * i as f64)).sin())
                    .sum::<f64>()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exec_modes_agree_on_outliers(
        len in 80usize..240,
        amps in prop::collection::vec(0.1f64..5.0, 1..4),
        spikes in prop::collection::vec(0usize..80, 1..4),
    ) {
        let mut v = wave(len, &amps, 20.0);
        for s in spikes {
            v[s] += 200.0;
        }
        let s = TrafficSeries::new(0, 300, v).unwrap();
        let cfg = OutlierConfig { k_range: (2, 8), window: 5, ..Default::default() };
        let a = analyze(&s, &cfg, Exec::Sequential).unwrap();
        let b = analyze(&s, &cfg, Exec::Parallel).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn exec_modes_agree_on_grid(len in 120usize..300, amps in prop::collection::vec(0.1f64..5.0, 1..3)) {
        let v = wave(len, &amps, 0.0);
        let grid = OrderGrid { p: (1, 2), q: (1, 2), d: 1 };
        let a = grid_search(&v, &grid, Exec::Sequential).unwrap();
        let b = grid_search(&v, &grid, Exec::Parallel).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn decomposition_reconstructs(len in 64usize..600, amps in prop::collection::vec(0.1f64..5.0, 1..4), offset in -50.0f64..50.0) {
        let v = wave(len, &amps, offset);
        let r = decompose(&v, &SiftConfig::default()).unwrap();
        let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (x, y) in r.reconstruct().iter().zip(&v) {
            prop_assert!((x - y).abs() <= 1e-8 * scale);
        }
        let d = denoise(&v, &SiftConfig::default()).unwrap();
        for ((x, n), y) in d.denoised.iter().zip(&d.noise).zip(&v) {
            prop_assert!((x + n - y).abs() <= 1e-9 * scale);
        }
    }
}
