mod common;

use common::*;
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensorcal::dataset::{load_dataset, Detection, RangeDetection};
use sensorcal::geometry::RigidTransform;
use sensorcal::labeling::{
    flood_fill_depth, label_dataset, label_lidar, track_seed_depth, track_seed_lidar, DepthLabelConfig, LabelConfig,
    LidarLabelConfig, SeedEntry,
};
use sensorcal::sidecar::{DepthImage, PointCloud};
use sensorcal::synth::lidar::ray_direction;
use sensorcal::synth::{self, GeneratedScene, LidarModel, RawData, Trajectory};

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Rays of the default model hitting a `side`-wide square board facing the
/// sensor at `x = 2`, else a wall at `x = 2.5`. The board occludes the wall.
fn board_and_wall(side: f64) -> (PointCloud, Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let model = LidarModel::default();
    let (mut cloud, mut board, mut wall) = (PointCloud::default(), Vec::new(), Vec::new());
    for ring in 0..model.rings {
        for k in 0..model.azimuth_count() {
            let d = ray_direction(model.ring_elevation(ring), model.azimuth(k));
            if d.x <= 0.0 {
                continue;
            }
            let on_board = d * (2.0 / d.x);
            let on_wall = d * (2.5 / d.x);
            if on_board.y.abs() <= side / 2.0 && on_board.z.abs() <= side / 2.0 {
                board.push(on_board);
                cloud.push(on_board, ring as u16);
            } else if on_wall.y.abs() <= 2.0 && on_wall.z.abs() <= 1.5 {
                wall.push(on_wall);
                cloud.push(on_wall, ring as u16);
            }
        }
    }
    (cloud, board, wall)
}

#[test]
fn board_in_front_of_wall_wins_the_plane_vote() {
    let (cloud, board, wall) = board_and_wall(0.4);
    let mut cfg = LidarLabelConfig::new(Vector3::new(2.0, 0.0, 0.0));
    cfg.crop_radius = 0.6;
    // exhaustive count of each plane's points inside the crop
    let in_crop = |p: &&Vector3<f64>| (*p - cfg.seed).norm() <= cfg.crop_radius;
    let board_in: Vec<Vector3<f64>> = board.iter().filter(in_crop).copied().collect();
    let wall_in = wall.iter().filter(in_crop).count();
    assert!(wall_in >= cfg.min_inliers, "wall must be a real competitor ({wall_in} points)");
    assert!(board_in.len() > wall_in);

    let det = label_lidar(&cloud, &cfg).unwrap().expect("board detected");
    assert_eq!(point_set(&det.inside), point_set(&board_in));
    assert!(point_set(&det.boundary).is_subset(&point_set(&det.inside)));
}

#[test]
fn wall_wins_when_the_board_is_too_small() {
    let (cloud, board, _) = board_and_wall(0.1);
    let mut cfg = LidarLabelConfig::new(Vector3::new(2.0, 0.0, 0.0));
    cfg.crop_radius = 0.6;
    let det = label_lidar(&cloud, &cfg).unwrap().expect("a plane is found");
    assert!(det.inside.iter().all(|p| (p.x - 2.5).abs() < 1e-9));
    assert!(point_set(&det.inside).is_disjoint(&point_set(&board)));
}

#[test]
fn uniform_noise_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let seed = Vector3::new(2.0, 0.5, 0.1);
    let mut cloud = PointCloud::default();
    while cloud.len() < 300 {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() <= 1.0 {
            cloud.push(seed + v * 0.8, rng.random_range(0..16));
        }
    }
    let mut cfg = LidarLabelConfig::new(seed);
    cfg.min_inliers = 50;
    assert!(label_lidar(&cloud, &cfg).unwrap().is_none());
}

/// Noiseless sequence of `steps` board poses seen by `lidar_1` and
/// `depth_1`, each moved 3 cm further along the board's x axis.
fn moving_board(steps: usize) -> GeneratedScene {
    let probe = generate(&noiseless(small_scene(21, 30)));
    let start = probe
        .dataset
        .collections
        .iter()
        .find(|c| c.detections.contains_key("lidar_1") && c.detections.contains_key("depth_1"))
        .expect("a collection seen by lidar_1 and depth_1");
    let p0 = probe.ground_truth.tree.pattern_pose(start.id).unwrap();
    let poses = (0..steps)
        .map(|k| p0.compose(&RigidTransform::from_translation(Vector3::new(0.03 * k as f64, 0.0, 0.0))))
        .collect();
    let mut cfg = noiseless(small_scene(21, 30));
    cfg.trajectory = Trajectory::Explicit { poses };
    let scene = generate(&cfg);
    assert_eq!(scene.dataset.collections.len(), steps);
    scene
}

fn lidar_frame(scene: &GeneratedScene, k: usize) -> (&PointCloud, &RangeDetection) {
    let c = &scene.dataset.collections[k];
    let Some(RawData::Cloud(cloud)) = scene.raw.get(&(c.id, "lidar_1".to_string())) else { panic!("no cloud") };
    let Some(Detection::Lidar3d(det)) = c.detections.get("lidar_1") else { panic!("no lidar label") };
    (cloud, det)
}

fn depth_frame(scene: &GeneratedScene, k: usize) -> (&DepthImage, [u32; 2]) {
    let c = &scene.dataset.collections[k];
    let Some(RawData::Depth(img)) = scene.raw.get(&(c.id, "depth_1".to_string())) else { panic!("no raster") };
    let Some(Detection::Depth(det)) = c.detections.get("depth_1") else { panic!("no depth label") };
    // manual pick: the labeled pixel closest to the label centroid
    let mean = det.inside.iter().map(|l| l.pixel).sum::<Vector2<f64>>() / det.inside.len() as f64;
    let pick = det.inside.iter().min_by(|a, b| (a.pixel - mean).norm().total_cmp(&(b.pixel - mean).norm())).unwrap();
    (img, [pick.pixel.x as u32, pick.pixel.y as u32])
}

#[test]
fn tracked_seed_labels_the_next_frame_like_a_manual_seed() {
    let scene = moving_board(2);

    let (cloud0, truth0) = lidar_frame(&scene, 0);
    let first = label_lidar(cloud0, &LidarLabelConfig::new(centroid(&truth0.inside))).unwrap().unwrap();
    let (cloud1, truth1) = lidar_frame(&scene, 1);
    let tracked = label_lidar(cloud1, &LidarLabelConfig::new(track_seed_lidar(&first).unwrap())).unwrap().unwrap();
    let manual = label_lidar(cloud1, &LidarLabelConfig::new(centroid(&truth1.inside))).unwrap().unwrap();
    assert_eq!(point_set(&tracked.inside), point_set(&manual.inside));
    assert_eq!(point_set(&tracked.boundary), point_set(&manual.boundary));

    let (img0, seed0) = depth_frame(&scene, 0);
    let first = flood_fill_depth(img0, &DepthLabelConfig::new(seed0)).unwrap().unwrap();
    let (img1, seed1) = depth_frame(&scene, 1);
    let tracked = flood_fill_depth(img1, &DepthLabelConfig::new(track_seed_depth(&first).unwrap())).unwrap().unwrap();
    let manual = flood_fill_depth(img1, &DepthLabelConfig::new(seed1)).unwrap().unwrap();
    assert_eq!(tracked, manual);
}

#[test]
fn batch_labeling_tracks_a_sequence_from_one_seed() {
    let scene = moving_board(5);
    let dir = tempfile::tempdir().unwrap();
    scene.write_to(dir.path()).unwrap();
    let (mut ds, _) = load_dataset(&dir.path().join("dataset.json")).unwrap();

    let (_, truth0) = lidar_frame(&scene, 0);
    let (_, pixel0) = depth_frame(&scene, 0);
    let first = ds.collections[0].id;
    let cfg = LabelConfig {
        seeds: vec![
            SeedEntry {
                collection: first,
                sensor: "lidar_1".into(),
                point: Some(centroid(&truth0.inside)),
                pixel: None,
                polygon: None,
            },
            SeedEntry {
                collection: first,
                sensor: "depth_1".into(),
                point: None,
                pixel: Some(pixel0),
                polygon: None,
            },
        ],
        track: true,
        ..LabelConfig::default()
    };
    let summary = label_dataset(&mut ds, &cfg).unwrap();
    assert!(summary.labeled >= 10, "{summary:?}");
    for (k, c) in ds.collections.iter().enumerate() {
        let Some(Detection::Lidar3d(det)) = c.detections.get("lidar_1") else { panic!("lidar_1 lost in collection {k}") };
        let (_, truth) = lidar_frame(&scene, k);
        // sidecars hold f32 coordinates
        let stored = |pts: &[Vector3<f64>]| point_set(&pts.iter().map(|p| p.map(|v| v as f32 as f64)).collect::<Vec<_>>());
        assert_eq!(point_set(&det.inside), stored(&truth.inside), "collection {k}");
        assert_eq!(point_set(&det.boundary), stored(&truth.boundary), "collection {k}");
        assert!(matches!(c.detections.get("depth_1"), Some(Detection::Depth(_))), "depth_1 lost in collection {k}");
    }
}

#[test]
fn tracking_without_a_seed_leaves_sensors_unlabeled() {
    let scene = moving_board(3);
    let dir = tempfile::tempdir().unwrap();
    scene.write_to(dir.path()).unwrap();
    let (mut ds, _) = load_dataset(&dir.path().join("dataset.json")).unwrap();
    let summary = label_dataset(&mut ds, &LabelConfig::default()).unwrap();
    assert_eq!(summary.labeled, 0);
    assert!(summary.unseeded > 0);
    assert!(ds.collections.iter().all(|c| c.detections.values().all(|d| matches!(d, Detection::Rgb(_)))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noiseless_board_clouds_label_exactly(
        x in 1.5..3.0f64, y in -0.6..0.6f64, z in -0.3..0.3f64,
        yaw in -0.6..0.6f64, tilt in -0.4..0.4f64,
    ) {
        let pattern = synth::cell::default_pattern();
        let rect = pattern.rect();
        // board facing the sensor, centered at (x, y, z)
        let facing = RigidTransform::from_axis_angle(Vector3::y(), -std::f64::consts::FRAC_PI_2, Vector3::zeros());
        let turn = RigidTransform::from_axis_angle(Vector3::z(), yaw, Vector3::zeros())
            .compose(&RigidTransform::from_axis_angle(Vector3::y(), tilt, Vector3::zeros()));
        let c = rect.center();
        let pose = RigidTransform::from_translation(Vector3::new(x, y, z))
            .compose(&turn)
            .compose(&facing)
            .compose(&RigidTransform::from_translation(Vector3::new(-c.x, -c.y, 0.0)));
        let cloud = synth::raycast_board(&pose, &RigidTransform::identity(), &rect, &LidarModel::default());
        prop_assume!(cloud.len() >= 40);
        let mut cfg = LidarLabelConfig::new(centroid(&cloud.points));
        cfg.crop_radius = 1.2;
        let det = label_lidar(&cloud, &cfg).unwrap().expect("board detected");
        prop_assert_eq!(point_set(&det.inside), point_set(&cloud.points));
        prop_assert!(point_set(&det.boundary).is_subset(&point_set(&det.inside)));
        let rings: std::collections::BTreeSet<u16> = cloud.rings.iter().copied().collect();
        prop_assert!(det.boundary.len() <= 2 * rings.len() && det.boundary.len() >= rings.len());
    }
}
