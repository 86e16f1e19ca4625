mod common;

use std::collections::BTreeMap;

use common::*;
use nalgebra::Vector3;
use sensorcal::calib::{calibrate, CalibrationOptions};
use sensorcal::dataset::{Collection, Dataset, Detection, EdgeRef, Modality, RangeDetection, RgbDetection, SensorSpec};
use sensorcal::eval::{evaluate, pairwise_tables, parse_text_tables, PairwiseReport, TableKind};
use sensorcal::geometry::RigidTransform;
use sensorcal::synth::{cell, Trajectory};
use sensorcal::tree::{Edge, EdgeKind, TransformTree};

fn spec(id: &str, modality: Modality) -> SensorSpec {
    SensorSpec {
        id: id.into(),
        modality,
        data_frame: id.into(),
        calibrated_edge: EdgeRef {
            parent: "world".into(),
            child: id.into(),
        },
        intrinsics: (modality == Modality::Rgb).then(cell::rgb_intrinsics),
        anchored: false,
    }
}

/// Two z-forward cameras 0.2 m apart along x, both looking at a
/// fronto-parallel board centered 2 m ahead; detections are exact.
fn two_camera_rig() -> Dataset {
    let pattern = cell::default_pattern();
    let mut tree = TransformTree::new("world");
    tree.add_edge(Edge::new("world", "cam_a", EdgeKind::Optimized, RigidTransform::identity())).unwrap();
    tree.add_edge(Edge::new(
        "world",
        "cam_b",
        EdgeKind::Optimized,
        RigidTransform::from_translation(Vector3::new(0.2, 0.0, 0.0)),
    ))
    .unwrap();
    let c = pattern.rect().center();
    let board = RigidTransform::from_translation(Vector3::new(0.1 - c.x, -c.y, 2.0));
    tree.set_pattern_pose(0, board);
    let mut ds = Dataset::new(pattern, tree.clone(), vec![spec("cam_a", Modality::Rgb), spec("cam_b", Modality::Rgb)]);
    let mut detections = BTreeMap::new();
    for id in ["cam_a", "cam_b"] {
        let t_sp = tree.chain_to(id).unwrap().inverse().compose(&board);
        let intr = cell::rgb_intrinsics();
        let corners = (0..pattern.corner_count() as u32)
            .map(|k| sensorcal::dataset::Corner {
                id: k,
                pixel: intr.project(&t_sp.transform_point(&pattern.corner(k))).unwrap(),
            })
            .collect();
        detections.insert(
            id.to_string(),
            Detection::Rgb(RgbDetection {
                corners,
                partial: false,
                limits: None,
            }),
        );
    }
    ds.collections.push(Collection {
        id: 0,
        detections,
        raw: BTreeMap::new(),
    });
    ds
}

#[test]
fn lateral_offset_of_five_millimeters_is_one_and_a_half_pixels() {
    let ds = two_camera_rig();
    let exact = pairwise_tables(&ds, &ds.tree).unwrap();
    let rgb = exact.iter().find(|t| t.kind == TableKind::RgbRgb).unwrap();
    assert_eq!(rgb.rows.len(), 1);
    assert!(rgb.rows[0].rms.unwrap() < 1e-9);

    // fx · dx / Z = 600 · 0.005 / 2
    let mut shifted = ds.tree.clone();
    let i = shifted.find_edge("world", "cam_b").unwrap();
    shifted.set_transform(i, RigidTransform::from_translation(Vector3::new(0.205, 0.0, 0.0)));
    let tables = pairwise_tables(&ds, &shifted).unwrap();
    let rgb = tables.iter().find(|t| t.kind == TableKind::RgbRgb).unwrap();
    let row = &rgb.rows[0];
    assert_eq!((row.source.as_str(), row.target.as_str()), ("cam_a", "cam_b"));
    assert_eq!(row.samples, ds.pattern.corner_count());
    assert!((row.rms.unwrap() - 1.5).abs() < 1e-9, "rms {}", row.rms.unwrap());
}

#[test]
fn identical_lidar_clouds_score_zero() {
    let pattern = cell::default_pattern();
    let mut tree = TransformTree::new("world");
    for id in ["l_a", "l_b"] {
        tree.add_edge(Edge::new("world", id, EdgeKind::Optimized, RigidTransform::identity())).unwrap();
    }
    tree.set_pattern_pose(0, RigidTransform::from_translation(Vector3::new(2.0, 0.0, 0.0)));
    let mut ds = Dataset::new(pattern, tree, vec![spec("l_a", Modality::Lidar3d), spec("l_b", Modality::Lidar3d)]);
    let points: Vec<Vector3<f64>> = (0..50).map(|k| Vector3::new(2.0, 0.01 * k as f64, 0.02 * (k % 7) as f64)).collect();
    let det = Detection::Lidar3d(RangeDetection {
        inside: points.clone(),
        boundary: vec![points[0], points[49]],
    });
    ds.collections.push(Collection {
        id: 0,
        detections: [("l_a".to_string(), det.clone()), ("l_b".to_string(), det)].into(),
        raw: BTreeMap::new(),
    });
    let tables = pairwise_tables(&ds, &ds.tree).unwrap();
    let t = tables.iter().find(|t| t.kind == TableKind::LidarLidar).unwrap();
    assert_eq!(t.rows[0].rms, Some(0.0));
    assert_eq!(t.rows[0].samples, 50);
}

#[test]
fn ground_truth_on_noiseless_data() {
    let scene = generate(&noiseless(cell::test_scene(51)));
    let tables = pairwise_tables(&scene.dataset, &scene.ground_truth.tree).unwrap();
    let counts: Vec<(TableKind, usize)> = tables.iter().map(|t| (t.kind, t.rows.len())).collect();
    assert_eq!(
        counts,
        [
            (TableKind::RgbRgb, 3),
            (TableKind::LidarLidar, 3),
            (TableKind::LidarRgb, 9),
            (TableKind::LidarDepth, 3),
            (TableKind::DepthRgb, 3)
        ]
    );
    for t in &tables {
        let vals: Vec<f64> = t.rows.iter().filter_map(|r| r.rms).collect();
        assert!(!vals.is_empty(), "{:?} has no evaluable pair", t.kind);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert_eq!(t.average, Some(mean));
        for v in vals {
            if t.kind == TableKind::LidarLidar {
                // only the scan spacing separates the two sample sets
                assert!((0.0..100.0).contains(&v), "{v} mm");
            } else {
                assert!(v < 1e-6, "{:?}: {v} px", t.kind);
            }
        }
    }
}

#[test]
fn report_text_carries_the_json_values() {
    let train = generate(&small_scene(52, 12));
    let test = generate(&cell::test_scene(1052));
    let result = calibrate(&train.dataset, &train.dataset.tree, &CalibrationOptions::default()).unwrap();
    let report = evaluate(&test.dataset, &result).unwrap();
    assert_eq!(PairwiseReport::from_json_str(&report.to_json_string()).unwrap(), report);

    let parsed = parse_text_tables(&report.render_text());
    let mut expected = Vec::new();
    for t in &report.tables {
        for r in &t.rows {
            expected.push((t.kind.title().to_string(), r.source.clone(), r.target.clone(), r.rms));
        }
        expected.push((t.kind.title().to_string(), "average".into(), String::new(), t.average));
    }
    assert_eq!(parsed.len(), expected.len());
    for (p, e) in parsed.iter().zip(&expected) {
        assert_eq!((&p.0, &p.1, &p.2), (&e.0, &e.1, &e.2));
        match (p.3, e.3) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 5e-7, "{a} vs {b}"),
            (a, b) => assert_eq!(a, b),
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
#[ignore = "the train advantage is a few percent of the run-to-run spread; per-table medians flip with the seed block"]
fn train_metrics_do_not_exceed_held_out_metrics_in_median() {
    let mut train_avg: BTreeMap<TableKind, Vec<f64>> = BTreeMap::new();
    let mut test_avg: BTreeMap<TableKind, Vec<f64>> = BTreeMap::new();
    for seed in 1..=60u64 {
        // held-out data: the same board poses under a fresh noise draw, so
        // scan-spacing effects that depend on geometry cancel out
        let train_cfg = small_scene(60 + seed, 3);
        let train = generate(&train_cfg);
        let mut test_cfg = train_cfg.clone();
        test_cfg.seed = 1060 + seed;
        test_cfg.trajectory = Trajectory::Explicit {
            poses: train.dataset.collections.iter().map(|c| train.ground_truth.tree.pattern_pose(c.id).unwrap()).collect(),
        };
        let test = generate(&test_cfg);
        let result = calibrate(&train.dataset, &train.dataset.tree, &CalibrationOptions::default()).unwrap();
        for (ds, out) in [(&train.dataset, &mut train_avg), (&test.dataset, &mut test_avg)] {
            for t in evaluate(ds, &result).unwrap().tables {
                if let Some(a) = t.average {
                    out.entry(t.kind).or_default().push(a);
                }
            }
        }
    }
    let mut failed = Vec::new();
    for kind in TableKind::ALL {
        let (a, b) = (&train_avg[&kind], &test_avg[&kind]);
        assert!(a.len() >= 10 && b.len() >= 10, "{kind:?}: {} / {} evaluable runs", a.len(), b.len());
        let (ma, mb) = (median(a.clone()), median(b.clone()));
        eprintln!("{kind:?}: train median {ma:.4}, test median {mb:.4}");
        if ma > mb {
            failed.push(kind);
        }
    }
    assert!(failed.is_empty(), "train median above test median for {failed:?}");
}
