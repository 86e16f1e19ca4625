//! The default collaborative cell: three LiDARs, one depth camera and three
//! RGB cameras (two on an overhead gantry, one on a side beam).

use nalgebra::{Matrix3, Vector3};

use super::trajectory::{TargetCounts, Trajectory};
use super::{DetectionRules, NoiseConfig, SceneConfig};
use crate::camera::CameraIntrinsics;
use crate::dataset::{EdgeRef, Modality, SensorSpec};
use crate::geometry::RigidTransform;
use crate::pattern::PatternSpec;
use crate::synth::lidar::LidarModel;
use crate::tree::{Edge, EdgeKind, TransformTree};

/// Cell extent in meters (x, y, height).
pub const CELL_DIMS: [f64; 3] = [4.0, 2.8, 2.29];

/// Point the cell's sensors are aimed at.
const WORK_CENTER: [f64; 3] = [2.0, 1.4, 1.0];

/// Pose of a body frame (`x` forward, `z` up) at `from` looking at `target`.
pub fn look_at(from: Vector3<f64>, target: Vector3<f64>) -> RigidTransform {
    let x = (target - from).normalize();
    let mut y = Vector3::z().cross(&x);
    if y.norm() < 1e-9 {
        y = Vector3::y();
    }
    let y = y.normalize();
    let z = x.cross(&y);
    RigidTransform::new(Matrix3::from_columns(&[x, y, z]), from)
}

/// Body frame (`x` forward, `z` up) → optical frame (`z` forward, `x` right,
/// `y` down).
pub fn optical_from_body() -> RigidTransform {
    RigidTransform::new(
        Matrix3::from_columns(&[-Vector3::y(), -Vector3::z(), Vector3::x()]),
        Vector3::zeros(),
    )
}

pub fn default_pattern() -> PatternSpec {
    PatternSpec::new(11, 8, 0.08, 0.05, 0.05)
}

pub fn rgb_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::pinhole(600.0, 600.0, 320.0, 240.0, 640, 480)
}

pub fn depth_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::pinhole(570.0, 570.0, 319.5, 239.5, 640, 480)
}

fn sensor(id: &str, modality: Modality, data_frame: &str, edge: (&str, &str), intr: Option<CameraIntrinsics>) -> SensorSpec {
    SensorSpec {
        id: id.into(),
        modality,
        data_frame: data_frame.into(),
        calibrated_edge: EdgeRef {
            parent: edge.0.into(),
            child: edge.1.into(),
        },
        intrinsics: intr,
        anchored: false,
    }
}

/// Ground-truth tree and sensor list of the default cell. `lidar_1` is
/// declared first and anchored.
pub fn default_rig() -> (TransformTree, Vec<SensorSpec>) {
    let v = Vector3::new;
    let target = Vector3::from(WORK_CENTER);
    let mut tree = TransformTree::new("world");
    let mut add = |parent: &str, child: &str, kind, t| {
        tree.add_edge(Edge::new(parent, child, kind, t)).expect("default rig edge");
    };
    let gantry = RigidTransform::from_translation(v(2.0, 1.4, 2.2));
    let beam = RigidTransform::from_translation(v(2.0, 2.72, 1.75));
    let mount = RigidTransform::from_translation(v(0.15, 1.3, 1.85));
    add("world", "gantry", EdgeKind::Static, gantry);
    add("world", "beam_1", EdgeKind::Static, beam);
    add("world", "depth_1_mount", EdgeKind::Static, mount);

    let lidars = [v(0.35, 0.35, 1.0), v(3.65, 0.4, 1.1), v(3.1, 2.6, 0.9)];
    for (i, p) in lidars.iter().enumerate() {
        let aim = Vector3::new(target.x, target.y, p.z);
        add("world", &format!("lidar_{}", i + 1), EdgeKind::Optimized, look_at(*p, aim));
    }
    let cams = [("rgb_1", "gantry", gantry, v(0.9, 0.55, 2.2)), ("rgb_2", "gantry", gantry, v(3.1, 0.55, 2.2)), ("rgb_3", "beam_1", beam, v(2.0, 2.72, 1.95))];
    for (id, parent, parent_pose, p) in cams {
        let link = format!("{id}_link");
        add(parent, &link, EdgeKind::Optimized, parent_pose.inverse().compose(&look_at(p, target)));
        add(&link, &format!("{id}_optical"), EdgeKind::Static, optical_from_body());
    }
    let depth_pose = look_at(v(0.2, 1.35, 1.8), target);
    add("depth_1_mount", "depth_1_link", EdgeKind::Optimized, mount.inverse().compose(&depth_pose));
    add("depth_1_link", "depth_1_optical", EdgeKind::Static, optical_from_body());

    let mut sensors = vec![
        sensor("lidar_1", Modality::Lidar3d, "lidar_1", ("world", "lidar_1"), None),
        sensor("lidar_2", Modality::Lidar3d, "lidar_2", ("world", "lidar_2"), None),
        sensor("lidar_3", Modality::Lidar3d, "lidar_3", ("world", "lidar_3"), None),
        sensor("depth_1", Modality::Depth, "depth_1_optical", ("depth_1_mount", "depth_1_link"), Some(depth_intrinsics())),
    ];
    for (id, parent, _, _) in cams {
        sensors.push(sensor(
            id,
            Modality::Rgb,
            &format!("{id}_optical"),
            (parent, &format!("{id}_link")),
            Some(rgb_intrinsics()),
        ));
    }
    sensors[0].anchored = true;
    (tree, sensors)
}

fn scene(seed: u64, target: TargetCounts) -> SceneConfig {
    let (tree, sensors) = default_rig();
    SceneConfig {
        cell: CELL_DIMS,
        pattern: default_pattern(),
        tree,
        sensors,
        lidar: LidarModel::default(),
        noise: NoiseConfig::default(),
        rules: DetectionRules::default(),
        trajectory: Trajectory::Targeted(target),
        perturbation: None,
        emit_raw: true,
        seed,
    }
}

/// Simulated train set: 23 collections, 35 RGB partials, 5 complete.
pub fn default_scene(seed: u64) -> SceneConfig {
    scene(seed, TargetCounts::new(23, Some(35), Some(5)))
}

/// Simulated test set: 17 collections, 26 RGB partials, 4 complete.
pub fn test_scene(seed: u64) -> SceneConfig {
    scene(seed, TargetCounts::new(17, Some(26), Some(4)))
}

/// Counts shaped like the real-data train set: 29 / 61 / 6.
pub fn real_shaped_scene(seed: u64) -> SceneConfig {
    scene(seed, TargetCounts::new(29, Some(61), Some(6)))
}

/// 23 collections, none of them seen by every sensor.
pub fn no_complete_scene(seed: u64) -> SceneConfig {
    scene(seed, TargetCounts::new(23, None, Some(0)))
}
