mod common;

use common::mann_whitney_auc;
use proptest::prelude::*;
use thermocae::detect::{anomaly_map, anomaly_score, export_heatmap, roc_points, Colormap, ScoreMethod};
use thermocae::pnm::Pnm;
use thermocae::{GrayImage, Rng};

/// Scores on a coarse grid so that ties across classes are common.
fn tied_instance(rng: &mut Rng) -> (Vec<f64>, Vec<bool>) {
    let n = 2 + rng.below(60);
    let levels = 1 + rng.below(8);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.4).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
    (scores, labels)
}

#[test]
fn auc_equals_the_pairwise_rank_statistic() {
    let mut rng = Rng::new(20);
    for _ in 0..300 {
        let (scores, labels) = tied_instance(&mut rng);
        let roc = roc_points(&scores, &labels).unwrap();
        let oracle = mann_whitney_auc(&scores, &labels);
        assert!((roc.auc - oracle).abs() <= 1e-12, "{} vs {oracle}", roc.auc);
    }
    for _ in 0..100 {
        let n = 2 + rng.below(100);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.5).collect();
        labels[0] = false;
        labels[n - 1] = true;
        let scores: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let roc = roc_points(&scores, &labels).unwrap();
        assert!((roc.auc - mann_whitney_auc(&scores, &labels)).abs() <= 1e-12);
    }
}

#[test]
fn separation_extremes() {
    let labels = [false, false, false, true, true];
    assert_eq!(roc_points(&[0.1, 0.2, 0.3, 0.4, 0.9], &labels).unwrap().auc, 1.0);
    assert_eq!(roc_points(&[0.9, 0.8, 0.7, 0.4, 0.1], &labels).unwrap().auc, 0.0);
    assert_eq!(roc_points(&[0.3; 5], &labels).unwrap().auc, 0.5);
}

#[test]
fn roc_curve_is_a_monotone_staircase() {
    let mut rng = Rng::new(21);
    for _ in 0..100 {
        let (scores, labels) = tied_instance(&mut rng);
        let roc = roc_points(&scores, &labels).unwrap();
        assert_eq!(roc.points[0], (0.0, 0.0));
        assert_eq!(*roc.points.last().unwrap(), (1.0, 1.0));
        assert!(roc.thresholds[0].is_infinite());
        for w in roc.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        for w in roc.thresholds.windows(2) {
            assert!(w[1] < w[0]);
        }
        let csv = roc.to_csv();
        assert_eq!(csv.lines().count(), roc.points.len() + 1);
    }
}

#[test]
fn heatmaps_are_written_as_portable_images() {
    let dir = tempfile::tempdir().unwrap();
    let img = GrayImage::from_fn(7, 5, |x, y| (x * y) as f64);
    let iron = dir.path().join("a/b/diff.ppm");
    export_heatmap(&img, &iron, Colormap::Iron).unwrap();
    let back = Pnm::read(&iron).unwrap();
    assert_eq!((back.width, back.height, back.channels, back.maxval), (7, 5, 3, 255));
    let gray = dir.path().join("diff.pgm");
    export_heatmap(&img, &gray, Colormap::Gray).unwrap();
    let back = Pnm::read(&gray).unwrap();
    assert_eq!((back.channels, back.samples[0], *back.samples.iter().max().unwrap()), (1, 0, 255));
}

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((-5.0..5.0f64, any::<bool>()), 2..60).prop_map(|mut v| {
        v[0].1 = true;
        v[1].1 = false;
        // Round to create ties.
        v.into_iter().map(|(s, l)| ((s * 4.0).round() / 4.0, l)).unzip()
    })
}

fn map_pair() -> impl Strategy<Value = (GrayImage, GrayImage)> {
    (any::<u64>(), 5usize..20, 5usize..20).prop_map(|(seed, w, h)| {
        let mut rng = Rng::new(seed);
        let a = GrayImage::from_fn(w, h, |_, _| rng.next_f64());
        let b = GrayImage::from_fn(w, h, |x, y| a.get(x, y) + rng.next_f64() * 0.3);
        (a, b)
    })
}

proptest! {
    #[test]
    fn auc_is_invariant_under_increasing_transforms((scores, labels) in labelled_scores()) {
        let base = roc_points(&scores, &labels).unwrap().auc;
        let transforms: [fn(f64) -> f64; 3] = [f64::exp, |s| 3.0 * s - 7.0, |s| s * s * s + s];
        for f in transforms {
            let mapped: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            prop_assert!((roc_points(&mapped, &labels).unwrap().auc - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn flipping_labels_mirrors_the_auc((scores, labels) in labelled_scores()) {
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = roc_points(&scores, &labels).unwrap().auc;
        let b = roc_points(&scores, &flipped).unwrap().auc;
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn larger_maps_never_score_lower((small, large) in map_pair(), k in 1usize..6) {
        for method in [ScoreMethod::SmoothedMax, ScoreMethod::Mean] {
            let k = k.min(small.width()).min(small.height());
            let (s, l) = (anomaly_score(&small, method, k).unwrap(), anomaly_score(&large, method, k).unwrap());
            prop_assert!(l >= s, "{method:?}: {l} < {s}");
        }
    }

    #[test]
    fn anomaly_maps_are_symmetric_and_nonnegative((a, b) in map_pair()) {
        let m = anomaly_map(&a, &b).unwrap();
        prop_assert_eq!(&m, &anomaly_map(&b, &a).unwrap());
        prop_assert!(m.data().iter().all(|&v| v >= 0.0));
        prop_assert!(anomaly_map(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
