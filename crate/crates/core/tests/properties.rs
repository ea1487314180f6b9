use proptest::prelude::*;
use stereo_priors::fields::{rgbxy_guidance, spatial_gradient, DisparityMap, FeatureMap};
use stereo_priors::imageio::{read_pfm, write_pfm};
use stereo_priors::loss::{total_loss, LossWeights};
use stereo_priors::metrics::evaluate;
use stereo_priors::occlusion::{hard_occlusion_oracle, sigmoid, soft_occlusion, soft_occlusion_right, OcclusionConfig};
use stereo_priors::pac::{conv_forward, gaussian_affinity, pac_forward, FilterBank, GradSmoothParams};

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(48)
}

fn map_from(w: usize, h: usize, values: Vec<f64>) -> DisparityMap {
    DisparityMap::from_values(w, h, values).unwrap()
}

/// Width, height and `w * h` values drawn from `range`.
fn grid(range: std::ops::Range<f64>, max_side: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (2..=max_side, 2..=max_side)
        .prop_flat_map(move |(w, h)| (Just(w), Just(h), prop::collection::vec(range.clone(), w * h)))
}

fn integer_rows(width: usize, max_d: i32) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0..=max_d).prop_map(f64::from), width)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn gradient_is_linear(
        (w, h, a_vals) in grid(0.0..20.0, 10),
        seed in 0u64..1000,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let b_vals: Vec<f64> = a_vals.iter().enumerate().map(|(i, v)| (v * 1.7 + (i as f64 + seed as f64) * 0.37) % 11.0).collect();
        let combo: Vec<f64> = a_vals.iter().zip(&b_vals).map(|(x, y)| a * x + b * y).collect();
        // combination may be negative; shift so every pixel stays valid, constants have zero gradient
        let shift = combo.iter().cloned().fold(0.0, f64::min).abs();
        let combo: Vec<f64> = combo.iter().map(|v| v + shift).collect();
        let g1 = spatial_gradient(&map_from(w, h, a_vals)).unwrap();
        let g2 = spatial_gradient(&map_from(w, h, b_vals)).unwrap();
        let g = spatial_gradient(&map_from(w, h, combo)).unwrap();
        for i in 0..w * h {
            prop_assert!((g.dx[i] - (a * g1.dx[i] + b * g2.dx[i])).abs() < 1e-9);
            prop_assert!((g.dy[i] - (a * g1.dy[i] + b * g2.dy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_of_constant_is_zero(w in 2usize..12, h in 2usize..12, c in 0.0f64..100.0) {
        let g = spatial_gradient(&DisparityMap::filled(w, h, c).unwrap()).unwrap();
        prop_assert!(g.dx.iter().chain(&g.dy).all(|v| *v == 0.0));
        prop_assert!(g.valid.iter().all(|v| *v));
    }

    #[test]
    fn xy_channel_is_translation_covariant(w in 2usize..20, h in 1usize..6, s in 1usize..5, scale in 0.1f64..2.0) {
        let image = FeatureMap::zeros(3, w, h).unwrap();
        let f = rgbxy_guidance(&image, scale).unwrap();
        let step = scale / (w - 1) as f64;
        for y in 0..h {
            for x in 0..w.saturating_sub(s) {
                prop_assert!((f.get(3, x + s, y) - f.get(3, x, y) - s as f64 * step).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pac_with_constant_guidance_is_convolution(
        (w, h, v) in grid(-1.0..1.0, 12),
        weights in prop::collection::vec(-1.0f64..1.0, 9),
        bias in -1.0f64..1.0,
        dilation in prop::sample::select(vec![1usize, 2, 4, 8]),
        level in -2.0f64..2.0,
    ) {
        let v = FeatureMap::from_plane(w, h, v).unwrap();
        let f = FeatureMap::new(3, w, h, vec![level; 3 * w * h]).unwrap();
        let bank = FilterBank::new(1, 1, 3, weights, vec![bias]).unwrap();
        let (pac, _) = pac_forward(&v, &f, &bank, dilation).unwrap();
        let conv = conv_forward(&v, &bank, dilation).unwrap();
        for (a, b) in pac.data().iter().zip(conv.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pac_is_affine_in_the_input(
        (w, h, v1) in grid(-1.0..1.0, 10),
        weights in prop::collection::vec(-1.0f64..1.0, 9),
        bias in -1.0f64..1.0,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let v2: Vec<f64> = v1.iter().rev().map(|x| 0.5 - x).collect();
        let guide: Vec<f64> = (0..3 * w * h).map(|i| ((i * 7919) % 97) as f64 / 60.0).collect();
        let f = FeatureMap::new(3, w, h, guide).unwrap();
        let bank = FilterBank::new(1, 1, 3, weights, vec![bias]).unwrap();
        let combo: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| a * x + b * y).collect();
        let run = |v: Vec<f64>| pac_forward(&FeatureMap::from_plane(w, h, v).unwrap(), &f, &bank, 1).unwrap().0.into_data();
        let (o1, o2, o) = (run(v1.clone()), run(v2), run(combo));
        for i in 0..w * h {
            let expected = a * o1[i] + b * o2[i] - (a + b - 1.0) * bias;
            prop_assert!((o[i] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn affinities_lie_in_unit_interval_with_unit_centre(
        (w, h, guide) in (2usize..10, 2usize..10).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(-3.0f64..3.0, 3 * w * h))),
        dilation in 1usize..5,
    ) {
        let v = FeatureMap::from_plane(w, h, vec![1.0; w * h]).unwrap();
        let f = FeatureMap::new(3, w, h, guide).unwrap();
        let (_, cache) = pac_forward(&v, &f, &FilterBank::uniform(3).unwrap(), dilation).unwrap();
        let k = cache.affinities();
        prop_assert!(k.iter().all(|x| (0.0..=1.0).contains(x)));
        for i in 0..w * h {
            prop_assert_eq!(k[i * 9 + 4], 1.0);
        }
    }

    #[test]
    fn distant_features_have_negligible_affinity(
        a in prop::collection::vec(-5.0f64..5.0, 3),
        dir in prop::collection::vec(0.1f64..1.0, 3),
        extra in 0.0f64..20.0,
    ) {
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dist = (30.0f64 + extra).sqrt() + 1e-9;
        let b: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x + d / norm * dist).collect();
        prop_assert!(gaussian_affinity(&a, &b).unwrap() < 1e-6);
    }

    #[test]
    fn soft_values_are_open_unit_interval_and_hard_values_binary(rows in prop::collection::vec(integer_rows(24, 12), 1..4)) {
        let d = stereo_priors::make_disparity_map(&rows, None).unwrap();
        let (soft, _) = soft_occlusion(&d, &OcclusionConfig::default()).unwrap();
        prop_assert!(soft.values.iter().all(|v| *v > 0.0 && *v < 1.0));
        let hard = hard_occlusion_oracle(&d, 0.0);
        prop_assert!(hard.values.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn steep_soft_map_matches_oracle(row in integer_rows(64, 32)) {
        let d = stereo_priors::make_disparity_map(&[row], None).unwrap();
        let cfg = OcclusionConfig { alpha: 50.0, ..Default::default() };
        let (soft, _) = soft_occlusion(&d, &cfg).unwrap();
        prop_assert_eq!(soft.thresholded(0.5).values, hard_occlusion_oracle(&d, 1.0).values);
    }

    #[test]
    fn larger_alpha_moves_values_towards_the_step(row in prop::collection::vec(0.0f64..10.0, 16), a1 in 0.5f64..10.0, extra in 0.0f64..10.0) {
        let d = stereo_priors::make_disparity_map(std::slice::from_ref(&row), None).unwrap();
        let window = OcclusionConfig::default().scan_window(&d);
        let run = |alpha: f64| soft_occlusion(&d, &OcclusionConfig { alpha, d0: 0.5, max_scan: Some(window) }).unwrap().0.values;
        let (lo, hi) = (run(a1), run(a1 + extra));
        for x in 0..16 {
            let m = ((x + 1)..16.min(x + window + 1)).map(|xp| row[xp] - row[x] - (xp - x) as f64).reduce(f64::max);
            let Some(m) = m else { continue };
            if (m - 0.5).abs() < 1e-9 {
                continue;
            }
            let step = if m > 0.5 { 1.0 } else { 0.0 };
            prop_assert!((hi[x] - step).abs() <= (lo[x] - step).abs() + 1e-15);
        }
    }

    #[test]
    fn window_beyond_the_sufficient_length_changes_nothing(row in prop::collection::vec(0.0f64..12.0, 40), grow in 1usize..20) {
        let d = stereo_priors::make_disparity_map(&[row], None).unwrap();
        let d_max = d.max_valid().unwrap();
        let cfg = OcclusionConfig { alpha: 3.0, d0: 0.5, max_scan: Some(d_max.ceil() as usize + 8) };
        let wide = OcclusionConfig { max_scan: cfg.max_scan.map(|w| w + grow), ..cfg };
        // every excluded candidate has a sigmoid argument below -20
        prop_assert!(cfg.alpha * (d_max - cfg.max_scan.unwrap() as f64 - cfg.d0) < -20.0);
        let (a, _) = soft_occlusion(&d, &cfg).unwrap();
        let (b, _) = soft_occlusion(&d, &wide).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= sigmoid(-20.0));
        }
    }

    #[test]
    fn right_view_is_mirrored_left_view(rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 20), 1..4)) {
        let d = stereo_priors::make_disparity_map(&rows, None).unwrap();
        let cfg = OcclusionConfig::default().pinned_for(&[&d]);
        let right = soft_occlusion_right(&d, &cfg).unwrap();
        let (left_of_mirror, _) = soft_occlusion(&d.mirrored(), &cfg).unwrap();
        prop_assert_eq!(right.values, left_of_mirror.mirrored().values);
    }

    #[test]
    fn loss_components_are_weight_independent_and_gradients_add_up(
        (w, h, gt) in grid(0.0..8.0, 9),
        noise_seed in 0u64..500,
        l1 in 0.0f64..5.0,
        l2 in 0.0f64..5.0,
    ) {
        let gt = map_from(w, h, gt);
        let pred: Vec<f64> = gt.values().iter().enumerate()
            .map(|(i, v)| (v + (((i as u64 * 2654435761 + noise_seed) % 1000) as f64 / 500.0 - 1.0)).max(0.0))
            .collect();
        let pred = map_from(w, h, pred);
        let f = FeatureMap::new(3, w, h, (0..3 * w * h).map(|i| (i % 13) as f64 / 13.0).collect()).unwrap();
        let p = GradSmoothParams::default();
        let occ = OcclusionConfig::default();
        let weights = LossWeights { lambda1: l1, lambda2: l2 };
        let a = total_loss(&pred, &gt, &f, &p, &occ, &weights).unwrap();
        let unit = total_loss(&pred, &gt, &f, &p, &occ, &LossWeights::default()).unwrap();
        prop_assert_eq!((a.l_d, a.l_g, a.l_o), (unit.l_d, unit.l_g, unit.l_o));
        prop_assert!(a.l_d >= 0.0 && a.l_g >= 0.0 && a.l_o >= 0.0);
        prop_assert!((a.total - (a.l_d + l1 * a.l_g + l2 * a.l_o)).abs() < 1e-12);
        let [gd, gg, go] = &a.component_grads;
        for i in 0..w * h {
            let sum = gd[i] + l1 * gg[i] + l2 * go[i];
            prop_assert!((a.grad_wrt_disparity[i] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_prediction_pixels_get_zero_gradient(
        (w, h, gt) in grid(0.0..8.0, 9),
        holes in prop::collection::vec(any::<bool>(), 81),
    ) {
        let gt = map_from(w, h, gt);
        let mut values = gt.values().iter().map(|v| v + 0.3).collect::<Vec<_>>();
        let mut valid = vec![true; w * h];
        for i in 0..w * h {
            if holes[i] && i != 0 {
                valid[i] = false;
                values[i] = f64::NAN;
            }
        }
        let pred = DisparityMap::new(w, h, values, valid.clone()).unwrap();
        let f = FeatureMap::new(3, w, h, vec![0.5; 3 * w * h]).unwrap();
        let b = total_loss(&pred, &gt, &f, &GradSmoothParams::default(), &OcclusionConfig::default(), &LossWeights::default()).unwrap();
        prop_assert!(b.total.is_finite());
        for i in 0..w * h {
            if !valid[i] {
                prop_assert_eq!(b.grad_wrt_disparity[i], 0.0);
            }
        }
    }

    #[test]
    fn metrics_are_sign_symmetric(errors in prop::collection::vec(-40i32..=40, 1..50), base in 10u32..40) {
        let gt: Vec<f64> = vec![base as f64; errors.len()];
        let up: Vec<f64> = errors.iter().map(|e| base as f64 + *e as f64 / 8.0).collect();
        let down: Vec<f64> = errors.iter().map(|e| base as f64 - *e as f64 / 8.0).collect();
        let n = errors.len();
        let gt = map_from(n, 1, gt);
        let a = evaluate(&map_from(n, 1, up), &gt, 2.0, None).unwrap();
        let b = evaluate(&map_from(n, 1, down), &gt, 2.0, None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bad_percentage_does_not_increase_with_tau(errors in prop::collection::vec(0.0f64..6.0, 1..50), t1 in 0.0f64..6.0, dt in 0.0f64..3.0) {
        let n = errors.len();
        let gt = map_from(n, 1, vec![20.0; n]);
        let pred = map_from(n, 1, errors.iter().map(|e| 20.0 + e).collect());
        let lo = evaluate(&pred, &gt, t1, None).unwrap().bad_pct;
        let hi = evaluate(&pred, &gt, t1 + dt, None).unwrap().bad_pct;
        prop_assert!(hi <= lo);
    }

    #[test]
    fn metrics_never_read_invalid_pixels(
        values in prop::collection::vec(0.0f64..50.0, 2..60),
        holes in prop::collection::vec(any::<bool>(), 60),
    ) {
        let n = values.len();
        let mut valid: Vec<bool> = (0..n).map(|i| !holes[i]).collect();
        valid[0] = true;
        let poison = |v: &[f64]| -> Vec<f64> { v.iter().zip(&valid).map(|(x, ok)| if *ok { *x } else { f64::NAN }).collect() };
        let gt = DisparityMap::new(n, 1, poison(&values), valid.clone()).unwrap();
        let shifted: Vec<f64> = values.iter().map(|v| v + 1.5).collect();
        let pred = DisparityMap::new(n, 1, poison(&shifted), valid.clone()).unwrap();
        let r = evaluate(&pred, &gt, 2.0, None).unwrap();
        prop_assert!(r.mae.is_finite() && r.bad_pct.is_finite());
        prop_assert_eq!(r.n_valid, valid.iter().filter(|v| **v).count());
    }

    #[test]
    fn pfm_write_read_roundtrip(
        w in 1usize..12,
        h in 1usize..12,
        raw in prop::collection::vec(prop_oneof![8 => (0.0f32..500.0).prop_map(Some), 1 => Just(None)], 144),
    ) {
        let values: Vec<f64> = raw[..w * h].iter().map(|v| v.map_or(f64::INFINITY, f64::from)).collect();
        let d = map_from(w, h, values);
        let bytes = write_pfm(&d);
        let back = read_pfm(&bytes).unwrap();
        prop_assert_eq!(back.valid(), d.valid());
        for i in 0..w * h {
            if d.valid()[i] {
                prop_assert_eq!(back.values()[i].to_bits(), d.values()[i].to_bits());
            }
        }
        prop_assert_eq!(write_pfm(&back), bytes);
    }
}

#[test]
fn parallel_operators_are_bitwise_deterministic_across_pool_sizes() {
    let (w, h) = (37, 23);
    let d = DisparityMap::from_fn(w, h, |x, y| ((x * 31 + y * 17) % 23) as f64 * 0.41).unwrap();
    let v = FeatureMap::from_plane(w, h, d.values().iter().map(|x| x.sin()).collect()).unwrap();
    let f = FeatureMap::from_fn(3, w, h, |c, x, y| ((c + 1) * x + y) as f64 / 40.0).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let occ = soft_occlusion(&d, &OcclusionConfig::default()).unwrap().0.values;
            let pac = pac_forward(&v, &f, &FilterBank::uniform(3).unwrap(), 4)
                .unwrap()
                .0
                .into_data();
            (occ, pac)
        })
    };
    let (o1, p1) = run(1);
    let (o4, p4) = run(4);
    assert!(o1.iter().zip(&o4).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(p1.iter().zip(&p4).all(|(a, b)| a.to_bits() == b.to_bits()));
}
