mod common;

use common::{growth_grid, relative_error, sample_curve};
use droplab::imaging::{
    autofocus, box_blur, detect_persister_latency, fit_growth, focus_measure, gaussian_blur, random_texture,
    read_pgm, synthetic_batch, write_pgm, BatchSpec, FocalStack, GrayImage, GrowthFitConfig, GrowthParams,
    ImagingError,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn texture(seed: u64, w: usize, h: usize) -> GrayImage {
    random_texture(w, h, 0.1, 0.9, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blurring_lowers_focus(seed in any::<u64>(), sigma in 0.5f64..3.0, radius in 1usize..3) {
        let img = texture(seed, 24, 20);
        let sharp = focus_measure(&img).unwrap();
        prop_assert!(focus_measure(&gaussian_blur(&img, sigma)).unwrap() < sharp);
        prop_assert!(focus_measure(&box_blur(&img, radius)).unwrap() < sharp);
    }

    #[test]
    fn focus_ignores_uniform_offsets(seed in any::<u64>(), delta in -0.05f64..0.05) {
        // The texture spans [0.1, 0.9], so the shift never hits the clamp.
        let img = texture(seed, 16, 16);
        let a = focus_measure(&img).unwrap();
        let b = focus_measure(&img.offset(delta)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn pgm_round_trip_is_within_one_level(seed in any::<u64>(), w in 1usize..20, h in 1usize..20, wide in any::<bool>()) {
        let img = texture(seed, w, h);
        let maxval = if wide { 65535 } else { 255 };
        let back = read_pgm(&write_pgm(&img, maxval)).unwrap();
        prop_assert_eq!((back.width(), back.height()), (w, h));
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            prop_assert!((a - b).abs() <= 0.5 / maxval as f64 + 1e-12);
        }
        prop_assert_eq!(write_pgm(&back, maxval), write_pgm(&img, maxval));
    }

    #[test]
    fn random_stacks_focus_on_their_sharp_plane(seed in any::<u64>()) {
        let (stack, best) = FocalStack::random(32, 10, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(autofocus(&stack), best);
    }

    #[test]
    fn noiseless_fits_recover_parameters(r in 0.4f64..3.0, k in 0.1f64..5.0, lag in 0.0f64..5.0) {
        let truth = GrowthParams { r, k, lag };
        let fit = fit_growth(&sample_curve(&truth), &GrowthFitConfig::default()).unwrap();
        prop_assert!(!fit.no_growth);
        prop_assert!(relative_error(fit.params.r, r) < 0.05, "{:?}", fit.params);
        prop_assert!(relative_error(fit.params.k, k) < 0.05, "{:?}", fit.params);
        prop_assert!((fit.params.lag - lag).abs() < 0.05 * lag.max(1.0), "{:?}", fit.params);
    }
}

#[test]
fn grid_fits_are_near_exact() {
    for p in growth_grid() {
        let fit = fit_growth(&sample_curve(&p), &GrowthFitConfig::default()).unwrap();
        assert!(relative_error(fit.params.r, p.r) < 1e-4, "{p:?} -> {:?}", fit.params);
        assert!(relative_error(fit.params.k, p.k) < 1e-4, "{p:?} -> {:?}", fit.params);
        assert!(relative_error(fit.params.lag, p.lag) < 1e-4, "{p:?} -> {:?}", fit.params);
    }
}

#[test]
fn flat_curves_report_no_growth() {
    let flat: Vec<(f64, f64)> = (0..=36).map(|i| (20.0 * i as f64, 0.0)).collect();
    let fit = fit_growth(&flat, &GrowthFitConfig::default()).unwrap();
    assert!(fit.no_growth);
}

#[test]
fn short_scans_are_rejected() {
    let short: Vec<(f64, f64)> = (0..4).map(|i| (20.0 * i as f64, 0.1)).collect();
    assert!(matches!(
        fit_growth(&short, &GrowthFitConfig::default()),
        Err(ImagingError::InsufficientSamples(_))
    ));
}

#[test]
fn latency_needs_three_controls() {
    let p = GrowthParams { r: 1.0, k: 1.0, lag: 2.0 };
    assert!(matches!(
        detect_persister_latency(&[p], &[p, p]),
        Err(ImagingError::InsufficientControls(2))
    ));
}

#[test]
fn batches_flag_only_the_outlier() {
    for seed in 100..105 {
        let batch = synthetic_batch(&BatchSpec::default(), seed);
        let records = batch.process(&GrowthFitConfig::default()).unwrap();
        let flagged: Vec<(usize, usize)> = records.iter().filter(|r| r.flagged).map(|r| (r.plate, r.colony)).collect();
        assert_eq!(flagged, vec![batch.outlier], "seed {seed}");
    }
}
