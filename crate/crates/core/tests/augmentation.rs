use proptest::prelude::*;
use thermocae::augment::{
    augment_one, build_dataset, build_homography, resize, sample_aug, AugmentParams, Dataset, Stages, STAGE_NAMES,
};
use thermocae::{GrayImage, Rng};

fn random_image(w: usize, h: usize, rng: &mut Rng) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.next_f64())
}

#[test]
fn identity_chain_equals_plain_resize() {
    let mut rng = Rng::new(10);
    let params = AugmentParams {
        out_size: 40,
        stages: Stages::none(),
        ..AugmentParams::default()
    };
    for (w, h) in [(40, 40), (64, 48), (160, 120), (23, 57)] {
        let img = random_image(w, h, &mut rng);
        let (out, aug) = augment_one(&img, &params, &mut rng).unwrap();
        let want = resize(&img, 40, 40);
        let diff = out.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-12, "{w}x{h}: {diff}");
        assert_eq!(aug.angle_deg, 0.0);
    }
}

#[test]
fn sampled_parameters_cover_their_ranges() {
    let params = AugmentParams::default();
    let mut rng = Rng::new(11);
    let n = 10_000;
    let draws: Vec<_> = (0..n).map(|_| sample_aug(&params, &mut rng)).collect();

    let check = |name: &str, values: Vec<f64>, (lo, hi): (f64, f64)| {
        assert!(values.iter().all(|v| (lo..=hi).contains(v)), "{name} out of range");
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        // Standard error of a uniform mean is (hi - lo) / sqrt(12 n).
        let se = (hi - lo) / (12.0 * values.len() as f64).sqrt();
        assert!((mean - (lo + hi) / 2.0).abs() < 5.0 * se, "{name} mean {mean}");
        let (min, max) = values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let slack = (hi - lo) * 0.01;
        assert!(min < lo + slack && max > hi - slack, "{name} spans [{min}, {max}]");
    };
    check("rotation", draws.iter().map(|d| d.angle_deg).collect(), params.rotation_deg);
    check("crop", draws.iter().map(|d| d.crop_fraction).collect(), params.crop_fraction);
    check("brightness", draws.iter().map(|d| d.brightness).collect(), params.brightness_delta);
    check("contrast", draws.iter().map(|d| d.contrast).collect(), params.contrast_delta);
    check(
        "perspective",
        draws.iter().flat_map(|d| d.corners.iter().flatten().copied().collect::<Vec<_>>()).collect(),
        params.perspective_scale,
    );
    check("crop center", draws.iter().flat_map(|d| d.crop_center).collect(), (0.0, 1.0));
}

#[test]
fn outputs_stay_in_unit_range() {
    let params = AugmentParams {
        out_size: 24,
        brightness_delta: (-0.5, 0.5),
        contrast_delta: (-0.5, 0.5),
        ..AugmentParams::default()
    };
    let mut rng = Rng::new(12);
    let sources: Vec<GrayImage> = (0..8).map(|_| random_image(40, 30, &mut rng)).collect();
    for i in 0..1000 {
        let (out, _) = augment_one(&sources[i % sources.len()], &params, &mut rng).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn dataset_of_600_originals_has_9000_train_and_1000_val() {
    let mut rng = Rng::new(13);
    let originals: Vec<GrayImage> = (0..600).map(|_| random_image(12, 10, &mut rng)).collect();
    let params = AugmentParams {
        out_size: 8,
        ..AugmentParams::default()
    };
    let ds = build_dataset(&originals, 10_000, &params, 3).unwrap();
    assert_eq!((ds.train.len(), ds.val.len()), (9000, 1000));
    let all: Vec<_> = ds.train.iter().chain(&ds.val).collect();
    assert_eq!(all.iter().filter(|s| s.aug.is_none()).count(), 600);
    let mut seen = vec![false; 600];
    for s in all.iter().filter(|s| s.aug.is_none()) {
        seen[s.source] = true;
    }
    assert!(seen.iter().all(|&b| b));
    assert!(all.iter().all(|s| s.source < 600 && s.image.width() == 8));
}

#[test]
fn dataset_survives_a_save_load_cycle() {
    let mut rng = Rng::new(14);
    let originals: Vec<GrayImage> = (0..5).map(|_| random_image(20, 16, &mut rng)).collect();
    let params = AugmentParams {
        out_size: 12,
        ..AugmentParams::default()
    };
    let ds = build_dataset(&originals, 30, &params, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
}

#[test]
fn datasets_are_reproducible_from_the_seed() {
    let mut rng = Rng::new(15);
    let originals: Vec<GrayImage> = (0..4).map(|_| random_image(20, 16, &mut rng)).collect();
    let params = AugmentParams {
        out_size: 12,
        ..AugmentParams::default()
    };
    let a = build_dataset(&originals, 40, &params, 9).unwrap();
    assert_eq!(a, build_dataset(&originals, 40, &params, 9).unwrap());
    assert_ne!(a, build_dataset(&originals, 40, &params, 10).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn disabled_stage_leaves_its_parameters_at_identity(stage in 0..STAGE_NAMES.len(), seed in any::<u64>()) {
        let mut params = AugmentParams::default();
        params.stages.disable(STAGE_NAMES[stage]).unwrap();
        let aug = sample_aug(&params, &mut Rng::new(seed));
        match STAGE_NAMES[stage] {
            "rotate" => prop_assert_eq!(aug.angle_deg, 0.0),
            "perspective" => prop_assert_eq!(aug.corners, [[0.0; 2]; 4]),
            "crop" => {
                prop_assert_eq!(aug.crop_fraction, 1.0);
                prop_assert_eq!(aug.crop_center, [0.5, 0.5]);
            }
            "color" => prop_assert_eq!((aug.brightness, aug.contrast), (0.0, 0.0)),
            _ => {}
        }
    }

    /// Every sampled chain is invertible and maps the output center inside
    /// the padded canvas around the source.
    #[test]
    fn sampled_chains_are_well_posed(seed in any::<u64>()) {
        let params = AugmentParams::default();
        let aug = sample_aug(&params, &mut Rng::new(seed));
        if let Ok(h) = build_homography(160, 120, &aug, &params) {
            let back = h.inverse().unwrap().inverse().unwrap();
            prop_assert!(back.max_abs_diff(&h.normalized()) < 1e-9);
            let (u, v) = h.apply(64.0, 64.0);
            prop_assert!((-40.0..=200.0).contains(&u) && (-30.0..=150.0).contains(&v), "({u}, {v})");
        }
    }
}
