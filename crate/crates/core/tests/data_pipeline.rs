use std::path::PathBuf;

use mrae_core::data::{
    cluster_anchors, filter_dataset, filter_small, kmeans_1d, parse_coco, parse_coco_str, size_histogram,
    Annotation, BBox, HistogramBins, SMALL_OBJECT_MAX_AREA,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/six_annotations.json")
}

fn boxed(w: f64, h: f64) -> Annotation {
    Annotation::new(1, 1, BBox { x: 0.0, y: 0.0, w, h }).unwrap()
}

fn sorted_areas(anns: &[Annotation]) -> Vec<f64> {
    let mut a: Vec<f64> = anns.iter().map(|a| a.area).collect();
    a.sort_by(f64::total_cmp);
    a
}

#[test]
fn fixture_filter_keeps_four_below_boundary() {
    let ds = parse_coco(&fixture()).unwrap();
    let typed = ds.typed_annotations().unwrap();
    assert_eq!(sorted_areas(&typed), [50.0, 100.0, 500.0, 1023.0, 1024.0, 2000.0]);

    let kept = filter_small(&typed, SMALL_OBJECT_MAX_AREA);
    assert_eq!(sorted_areas(&kept), [50.0, 100.0, 500.0, 1023.0]);

    let (subset, stats) = filter_dataset(&ds, SMALL_OBJECT_MAX_AREA).unwrap();
    assert_eq!((stats.annotations_retained, stats.annotations_dropped), (4, 2));
    assert_eq!((stats.images_retained, stats.images_dropped), (2, 1));
    assert_eq!(subset.images.iter().map(|i| i.id).collect::<Vec<_>>(), [1, 2]);
}

#[test]
fn boundary_boxes() {
    assert_eq!(filter_small(&[boxed(31.0, 33.0)], 1024.0).len(), 1);
    assert!(filter_small(&[boxed(32.0, 32.0)], 1024.0).is_empty());
}

#[test]
fn zero_max_area_gives_valid_empty_subset() {
    let ds = parse_coco(&fixture()).unwrap();
    let (subset, stats) = filter_dataset(&ds, 0.0).unwrap();
    assert!(subset.annotations.is_empty() && subset.images.is_empty());
    assert_eq!(stats.annotations_dropped, 6);
    let reparsed = parse_coco_str(&subset.to_json_string().unwrap()).unwrap();
    assert_eq!(reparsed, subset);
}

#[test]
fn filtered_subset_round_trips() {
    let ds = parse_coco(&fixture()).unwrap();
    let (subset, _) = filter_dataset(&ds, SMALL_OBJECT_MAX_AREA).unwrap();
    let reparsed = parse_coco_str(&subset.to_json_string().unwrap()).unwrap();
    assert_eq!(reparsed, subset);
    let (again, stats) = filter_dataset(&reparsed, SMALL_OBJECT_MAX_AREA).unwrap();
    assert_eq!(again, subset);
    assert_eq!(stats.annotations_dropped, 0);
    // Unknown keys survive.
    assert_eq!(reparsed.extra["info"]["version"], "1.0");
    assert_eq!(reparsed.annotations[0].extra["iscrowd"], 0);
}

#[test]
fn missing_file_is_io_error() {
    let err = parse_coco(&fixture().with_file_name("absent.json")).unwrap_err();
    assert!(err.to_string().contains("absent.json"), "{err}");
}

#[test]
fn histogram_matches_hand_tally() {
    let typed = parse_coco(&fixture()).unwrap().typed_annotations().unwrap();
    let hist = size_histogram(&typed, HistogramBins { bin_width: 16.0, bins: 4 }).unwrap();
    let mut expected = [[0u64; 4]; 4];
    // (10,10) (5,10) -> (0,0); (20,25) -> (1,1); (31,33) -> (1,2); (32,32) -> (2,2); (40,50) -> (2,3)
    expected[0][0] = 2;
    expected[1][1] = 1;
    expected[1][2] = 1;
    expected[2][2] = 1;
    expected[2][3] = 1;
    for (w, row) in expected.iter().enumerate() {
        for (h, &c) in row.iter().enumerate() {
            assert_eq!(hist.count(w, h), c, "cell ({w},{h})");
        }
    }
}

#[test]
fn four_scale_points_are_their_own_centroids() {
    let anns: Vec<_> = [4.0, 8.0, 16.0, 24.0].iter().map(|&s| boxed(s, s)).collect();
    let fit = cluster_anchors(&anns, 4, 1, 0).unwrap();
    assert_eq!(fit.anchors.scales, [4.0, 8.0, 16.0, 24.0]);
    assert_eq!(fit.anchors.ratios, [1.0]);
}

#[test]
fn equal_ratios_are_flagged() {
    let anns: Vec<_> = (1..=8).map(|s| boxed(s as f64, s as f64)).collect();
    let fit = cluster_anchors(&anns, 4, 3, 0).unwrap();
    assert_eq!(fit.anchors.ratios, [1.0, 1.0, 1.0]);
    assert!(fit.anchors.degenerate && fit.ratio_fit.degenerate && !fit.scale_fit.degenerate);
}

#[test]
fn too_few_annotations_is_an_error() {
    let anns: Vec<_> = (1..=3).map(|s| boxed(s as f64, 2.0)).collect();
    assert!(cluster_anchors(&anns, 4, 3, 0).is_err());
}

fn random_boxes(seed: u64, n: usize) -> Vec<Annotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| boxed(rng.random_range(1.0..40.0), rng.random_range(1.0..40.0))).collect()
}

/// Lloyd's algorithm on sorted scalars with the same initialisation, written
/// independently for comparison.
fn lloyd_oracle(values: &[f64], k: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut c: Vec<f64> = (0..k).map(|j| v[((j as f64 + 0.5) * n as f64 / k as f64).floor() as usize]).collect();
    let assign = |c: &[f64]| -> Vec<usize> {
        v.iter()
            .map(|x| {
                let d: Vec<f64> = c.iter().map(|ci| (x - ci).abs()).collect();
                let m = d.iter().cloned().fold(f64::INFINITY, f64::min);
                d.iter().position(|&di| di == m).unwrap()
            })
            .collect()
    };
    let mut a = assign(&c);
    for _ in 0..100 {
        for (j, cj) in c.iter_mut().enumerate() {
            let members: Vec<f64> = v.iter().zip(&a).filter(|(_, &aj)| aj == j).map(|(x, _)| *x).collect();
            if !members.is_empty() {
                *cj = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        let next = assign(&c);
        if next == a {
            break;
        }
        a = next;
    }
    c.sort_by(f64::total_cmp);
    c
}

#[test]
fn wcss_is_monotone_on_random_boxes() {
    for seed in 0..10 {
        let anns = random_boxes(seed, 200);
        let fit = cluster_anchors(&anns, 4, 3, seed).unwrap();
        assert_eq!(fit.anchors.scales.len(), 4);
        assert_eq!(fit.anchors.ratios.len(), 3);
        for hist in [&fit.scale_fit.wcss_history, &fit.ratio_fit.wcss_history] {
            assert!(!hist.is_empty());
            for w in hist.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{hist:?}");
            }
        }
        assert!(fit.anchors.scales.windows(2).all(|w| w[0] <= w[1]));
        assert!(fit.anchors.scales.iter().chain(&fit.anchors.ratios).all(|&v| v > 0.0));
        assert!(fit.scale_fit.iterations < 100, "assignment did not settle");

        let scales: Vec<f64> = anns.iter().map(Annotation::scale).collect();
        let oracle = lloyd_oracle(&scales, 4);
        for (a, b) in fit.anchors.scales.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{:?} vs {oracle:?}", fit.anchors.scales);
        }
    }
}

proptest! {
    #[test]
    fn filtering_is_idempotent(dims in prop::collection::vec((1.0f64..60.0, 1.0f64..60.0), 0..40), max in 0.0f64..3000.0) {
        let anns: Vec<_> = dims.iter().map(|&(w, h)| boxed(w, h)).collect();
        let once = filter_small(&anns, max);
        prop_assert_eq!(filter_small(&once, max), once.clone());
        prop_assert!(once.iter().all(|a| a.area < max));
    }

    #[test]
    fn kmeans_ignores_input_order(mut values in prop::collection::vec(0.5f64..50.0, 6..60), k in 1usize..5, seed in 0u64..100) {
        let a = kmeans_1d(&values, k, seed).unwrap();
        values.reverse();
        let b = kmeans_1d(&values, k, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
