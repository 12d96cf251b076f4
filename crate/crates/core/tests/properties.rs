use chrono::{TimeZone, Utc};
use ndarray::{Array4, Array5};
use proptest::prelude::*;
use ventus_core::data::{GridSpec, GridStateSequence};
use ventus_core::decomposition::{eemd, recompose, EemdConfig};
use ventus_core::econometrics::{fit_fixed_effects, RegressionSpec, SOLAR, WIND};
use ventus_core::gridcaster::{
    apply_bias_correction, fit_bias_correction, per_key_mse, simple_regression, weighted_loss,
    BoundingBox, ForecastSet, GridGeometry, LossConfig,
};
use ventus_core::ingestion::{
    decode_grid_tensor, encode_grid_tensor, generate_synthetic, SyntheticScenario,
};
use ventus_core::neural::{sample_chain, Scaler};

fn grid_strategy() -> impl Strategy<Value = GridStateSequence> {
    (2usize..5, 1usize..4, 2usize..4, 2usize..4).prop_flat_map(|(nt, nv, ny, nx)| {
        proptest::collection::vec(-1e4f32..1e4, nt * nv * ny * nx).prop_map(move |v| {
            let spec = GridSpec {
                lat0: -34.0,
                dlat: 0.25,
                n_lat: ny,
                lon0: -72.0,
                dlon: 0.5,
                n_lon: nx,
                variables: (0..nv).map(|i| format!("v{i}")).collect(),
                t0: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
                dt: 21600,
            };
            GridStateSequence::new(spec, Array4::from_shape_vec((nt, nv, ny, nx), v).unwrap())
                .unwrap()
        })
    })
}

fn unit_loss(n_lat: usize, n_lon: usize) -> LossConfig {
    LossConfig {
        variables: vec!["a".into(), "b".into()],
        variable_weights: vec![1.0, 1.0],
        inverse_diff_variance: vec![1.0, 1.0],
        wind_magnitude_weight: 0.0,
        wind_power_weight: 0.0,
        grid: Some(GridGeometry {
            lat0: 0.0,
            dlat: 1.0,
            n_lat,
            lon0: 0.0,
            dlon: 1.0,
            n_lon,
        }),
        ..LossConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gt1_round_trip(seq in grid_strategy()) {
        let back = decode_grid_tensor(&encode_grid_tensor(&seq)).unwrap();
        prop_assert_eq!(back, seq);
    }

    #[test]
    fn scaler_inverts(x in proptest::collection::vec(-50.0f64..50.0, 4..40), probe in -100.0f64..100.0) {
        prop_assume!(x.iter().any(|&v| v != x[0]));
        let (_, s) = Scaler::fit_series(&x, "x", 1e9).unwrap();
        prop_assert!((s.unscale(0, s.scale(0, probe)) - probe).abs() <= 1e-9 * probe.abs().max(1.0));
    }

    #[test]
    fn regression_residuals_are_orthogonal(
        pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..50),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let (a, b, ok) = simple_regression(&x, &y);
        let r: Vec<f64> = x.iter().zip(&y).map(|(x, y)| y - a - b * x).collect();
        let scale = y.iter().map(|v| v.abs()).sum::<f64>().max(1.0) * 1e-9;
        prop_assert!(r.iter().sum::<f64>().abs() <= scale);
        if ok {
            prop_assert!(r.iter().zip(&x).map(|(r, x)| r * x).sum::<f64>().abs() <= 10.0 * scale);
        }
    }

    #[test]
    fn bias_correction_never_increases_mse(
        raw in proptest::collection::vec(-5.0f64..5.0, 24),
        noise in proptest::collection::vec(-1.0f64..1.0, 24),
        gain in -2.0f64..2.0,
        shift in -3.0f64..3.0,
    ) {
        // 6 issues, 2 leads, 1 variable, 2 cells.
        let set = |v: Vec<f64>| ForecastSet {
            lead_hours: vec![6, 12],
            variables: vec!["wm".into()],
            cells: vec![0, 5],
            values: Array4::from_shape_vec((6, 2, 1, 2), v).unwrap(),
        };
        let truth: Vec<f64> = raw.iter().zip(&noise).map(|(r, e)| gain * r + shift + e).collect();
        let (raw, truth) = (set(raw), set(truth));
        let corrected = apply_bias_correction(&raw, &fit_bias_correction(&raw, &truth).unwrap()).unwrap();
        let before = per_key_mse(&raw, &truth).unwrap();
        let after = per_key_mse(&corrected, &truth).unwrap();
        for (b, a) in before.iter().zip(after.iter()) {
            prop_assert!(*a <= b * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn loss_is_nonnegative_and_scales_quadratically(
        v in proptest::collection::vec(-3.0f64..3.0, 2 * 2 * 2 * 3 * 4),
        c in 0.1f64..10.0,
    ) {
        let cfg = unit_loss(3, 4);
        let p = Array5::from_shape_vec((2, 2, 2, 3, 4), v).unwrap();
        let t = Array5::zeros(p.raw_dim());
        let base = weighted_loss(p.view(), t.view(), &cfg).unwrap();
        let scaled = weighted_loss(p.mapv(|x| c * x).view(), t.view(), &cfg).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((scaled - c * c * base).abs() <= 1e-12 * scaled.max(1.0));
    }

    #[test]
    fn omega_scales_in_box_error(
        v in proptest::collection::vec(-3.0f64..3.0, 3 * 4),
        omega in 1.0f64..20.0,
    ) {
        let mut cfg = unit_loss(3, 4);
        cfg.variables.truncate(1);
        cfg.variable_weights.truncate(1);
        cfg.inverse_diff_variance.truncate(1);
        cfg.bounding_box = Some(BoundingBox { lat_min: 0.5, lat_max: 2.0, lon_min: 1.0, lon_max: 2.0 });
        let cells = cfg.box_cells();
        let mut p = Array5::zeros((1, 1, 1, 3, 4));
        for &c in &cells {
            p[[0, 0, 0, c / 4, c % 4]] = v[c];
        }
        let t = Array5::zeros(p.raw_dim());
        let base = weighted_loss(p.view(), t.view(), &cfg).unwrap();
        cfg.location_weight = omega;
        let l = weighted_loss(p.view(), t.view(), &cfg).unwrap();
        prop_assert!((l - omega * base).abs() <= 1e-12 * l.max(1.0));
    }

    #[test]
    fn chains_sum_to_the_lead(lead in 1usize..200, seed in any::<u64>()) {
        use rand::SeedableRng;
        let intervals = [6usize, 12, 24, 48];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        match sample_chain(&intervals, lead, &mut rng) {
            Ok(chain) => {
                prop_assert_eq!(chain.iter().sum::<usize>(), lead);
                prop_assert!(chain.iter().all(|k| intervals.contains(k)));
            }
            Err(_) => prop_assert!(lead % 6 != 0),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn eemd_recomposes_exactly(x in proptest::collection::vec(-5.0f64..5.0, 32..200), seed in any::<u64>()) {
        prop_assume!(x.iter().any(|&v| v != x[0]));
        let d = eemd(&x, &EemdConfig { ensemble_size: 8, seed, ..EemdConfig::default() }).unwrap();
        let r = recompose(&d);
        let err: f64 = r.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-8 * norm);
    }

    #[test]
    fn common_rescaling_leaves_slopes_unchanged(seed in 0u64..1000, c in 0.5f64..4.0) {
        let out = generate_synthetic(&SyntheticScenario::new(seed, 24 * 45)).unwrap();
        let spec = RegressionSpec::default();
        let a = fit_fixed_effects(&out.panel, &spec).unwrap();
        let b = fit_fixed_effects(&out.panel.scaled(c).unwrap(), &spec).unwrap();
        for name in [SOLAR, WIND] {
            let (x, y) = (a.coefficient(name).unwrap(), b.coefficient(name).unwrap());
            prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "{} {} vs {}", name, x, y);
        }
    }
}
