//! Synthetic calibration cell with known ground truth.
//!
//! A scene is a frame tree of sensors, a board, and a trajectory of board
//! poses. [`generate`] simulates every sensor for every pose and emits a
//! [`Dataset`] whose labels are exact up to the configured noise, plus the
//! [`GroundTruth`] needed to score a calibration.
//!
//! Visibility decisions (in-frame corners, board hits, detection thresholds)
//! are always made on noise-free geometry, so detection counts do not depend
//! on the noise level.

pub mod cell;
pub mod depth;
pub mod lidar;
pub mod trajectory;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::dataset::{
    save_dataset, Collection, Corner, Dataset, DatasetError, DepthDetection, DepthLabel, Detection, Modality, RangeDetection, RgbDetection,
    SensorSpec, StatsReport,
};
use crate::geometry::{exp_so3, RigidTransform};
use crate::pattern::{BoardRect, PatternSpec};
use crate::io::{write_atomic, Provenance};
use crate::sidecar::{write_cloud, write_depth, DepthImage, PointCloud};
use crate::tree::TransformTree;

pub use lidar::{raycast_board, LidarModel};
pub use trajectory::{TargetCounts, Trajectory};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene config at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("trajectory targets not reachable: {0}")]
    Unreachable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Gaussian corner noise per image axis (pixels).
    pub rgb_pixel_sigma: f64,
    /// Gaussian LiDAR range noise along each ray (meters).
    pub range_sigma: f64,
    /// Gaussian depth noise (meters).
    pub depth_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            rgb_pixel_sigma: 0.5,
            range_sigma: 0.008,
            depth_sigma: 0.004,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            rgb_pixel_sigma: 0.0,
            range_sigma: 0.0,
            depth_sigma: 0.0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.rgb_pixel_sigma == 0.0 && self.range_sigma == 0.0 && self.depth_sigma == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionRules {
    /// Minimum board returns for a LiDAR detection.
    pub min_range_points: usize,
    /// Minimum board pixels for a depth detection.
    pub min_depth_pixels: usize,
    /// Cameras only detect the board face up to this viewing angle (radians).
    pub max_view_angle: f64,
    /// Cap on depth inside labels (stride subsampling).
    pub max_depth_inside: usize,
}

impl Default for DetectionRules {
    fn default() -> Self {
        DetectionRules {
            min_range_points: 30,
            min_depth_pixels: 200,
            max_view_angle: 75f64.to_radians(),
            max_depth_inside: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub translation: f64,
    pub rotation: f64,
    pub seed: u64,
}

fn default_cell_dims() -> [f64; 3] {
    cell::CELL_DIMS
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Cell extent `x, y, z` (meters); board centers are drawn inside it.
    #[serde(default = "default_cell_dims")]
    pub cell: [f64; 3],
    pub pattern: PatternSpec,
    /// Ground-truth sensor tree (no pattern edges).
    pub tree: TransformTree,
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub lidar: LidarModel,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub rules: DetectionRules,
    pub trajectory: Trajectory,
    /// When set, the emitted dataset starts from a perturbed tree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
    /// Keep simulated clouds and depth rasters for sidecar output.
    #[serde(default = "yes")]
    pub emit_raw: bool,
    pub seed: u64,
}

impl SceneConfig {
    /// Parses and validates a scene document.
    pub fn from_json_str(text: &str) -> Result<SceneConfig, SceneError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SceneConfig = serde_path_to_error::deserialize(de).map_err(|e| SceneError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        self.pattern.validate().or_else(|m| bad(format!("pattern: {m}")))?;
        self.lidar.validate().or_else(|m| bad(format!("lidar: {m}")))?;
        let n = &self.noise;
        if ![n.rgb_pixel_sigma, n.range_sigma, n.depth_sigma].iter().all(|s| s.is_finite() && *s >= 0.0) {
            return bad("noise sigmas must be finite and non-negative".into());
        }
        if !self.cell.iter().all(|d| d.is_finite() && *d > 0.0) {
            return bad("cell dimensions must be positive".into());
        }
        if self.tree.pattern_collections().next().is_some() {
            return bad("scene tree must not contain pattern edges".into());
        }
        if self.sensors.is_empty() {
            return bad("scene has no sensors".into());
        }
        // reuse the dataset cross-checks on an empty dataset
        let mut probe = Dataset::new(self.pattern, self.tree.clone(), self.sensors.clone());
        probe.validate().map_err(|e| SceneError::Invalid(e.to_string()))?;
        if let Some(p) = &self.perturbation {
            if !(p.translation >= 0.0 && p.rotation >= 0.0) {
                return bad("perturbation magnitudes must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// Raw sensor output of one collection.
#[derive(Debug, Clone, PartialEq)]
pub enum RawData {
    Cloud(PointCloud),
    Depth(DepthImage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stats: StatsReport,
    /// Trajectory poses no sensor could see.
    pub dropped_empty: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub seed: u64,
    /// True sensor tree including one pattern edge per emitted collection.
    pub tree: TransformTree,
    pub manifest: Manifest,
}

pub struct GeneratedScene {
    pub dataset: Dataset,
    pub ground_truth: GroundTruth,
    /// `(collection id, sensor id)` → simulated raw data.
    pub raw: BTreeMap<(u32, String), RawData>,
}

impl GroundTruth {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ground truth serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<GroundTruth, SceneError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| SceneError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

impl GeneratedScene {
    /// Writes `dataset.json`, `ground_truth.json` and the raw sidecars
    /// under `dir`. Every file is written atomically.
    pub fn write_to(&self, dir: &Path) -> Result<(), DatasetError> {
        for ((id, sid), data) in &self.raw {
            let c = self.dataset.collection(*id).expect("raw data belongs to a collection");
            let rel = c.raw.get(sid).expect("raw data has a reference");
            let path = dir.join(rel);
            match data {
                RawData::Cloud(cloud) => write_cloud(&path, cloud)?,
                RawData::Depth(img) => write_depth(&path, img)?,
            }
        }
        let gt_path = dir.join("ground_truth.json");
        write_atomic(&gt_path, self.ground_truth.to_json_string().as_bytes()).map_err(|source| DatasetError::Io {
            path: gt_path.display().to_string(),
            source,
        })?;
        save_dataset(&self.dataset, &dir.join("dataset.json"))
    }
}

/// Result of simulating all sensors for one board pose.
pub(crate) struct CollectionSim {
    pub detections: BTreeMap<String, Detection>,
    pub raw: BTreeMap<String, RawData>,
}

fn gaussian(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite positive sigma"))
}

fn project_limits(intr: &CameraIntrinsics, t_sp: &RigidTransform, pattern: &PatternSpec) -> Option<Vec<[f64; 2]>> {
    pattern
        .boundary_samples()
        .iter()
        .map(|q| {
            let p = t_sp.transform_point(q);
            (p.z > 1e-3).then(|| intr.project(&p).ok()).flatten().map(|uv| [uv.x, uv.y])
        })
        .collect()
}

fn simulate_rgb(
    intr: &CameraIntrinsics,
    t_sp: &RigidTransform,
    pattern: &PatternSpec,
    rules: &DetectionRules,
    noise: Option<(&Normal<f64>, &mut ChaCha8Rng)>,
    labels: bool,
) -> Option<RgbDetection> {
    let cam_in_pattern = t_sp.inverse().translation;
    if !(cam_in_pattern.z > 0.0) || cam_in_pattern.z / cam_in_pattern.norm() < rules.max_view_angle.cos() {
        return None;
    }
    let mut corners: Vec<Corner> = pattern
        .corner_points()
        .iter()
        .enumerate()
        .filter_map(|(id, q)| {
            let p = t_sp.transform_point(q);
            if p.z < 0.1 {
                return None;
            }
            let uv = intr.project(&p).ok()?;
            intr.contains(&uv).then_some(Corner { id: id as u32, pixel: uv })
        })
        .collect();
    if corners.len() < pattern.min_detected_corners() {
        return None;
    }
    if let Some((dist, rng)) = noise {
        for c in &mut corners {
            c.pixel += Vector2::new(dist.sample(rng), dist.sample(rng));
        }
    }
    Some(RgbDetection {
        partial: corners.len() < pattern.corner_count(),
        corners,
        limits: if labels { project_limits(intr, t_sp, pattern) } else { None },
    })
}

fn simulate_lidar(
    model: &LidarModel,
    t_sp: &RigidTransform,
    rect: &BoardRect,
    rules: &DetectionRules,
    noise: Option<(&Normal<f64>, &mut ChaCha8Rng)>,
) -> Option<(RangeDetection, PointCloud)> {
    if lidar::crosses_seam(t_sp, rect, model) {
        return None;
    }
    let rings = lidar::grid_hits(t_sp, rect, model);
    let total: usize = rings.iter().map(Vec::len).sum();
    if total < rules.min_range_points || rings.iter().filter(|r| !r.is_empty()).count() < 2 {
        return None;
    }
    let mut cloud = PointCloud::default();
    let mut boundary_idx = Vec::new();
    for hits in rings.iter().filter(|r| !r.is_empty()) {
        let ring = hits[0].ring;
        let el = model.ring_elevation(ring);
        let first = hits[0].column;
        let last = hits[hits.len() - 1].column;
        let lo = lidar::edge_return(t_sp, rect, model, el, model.azimuth(first - 1), model.azimuth(first));
        let hi = lidar::edge_return(t_sp, rect, model, el, model.azimuth(last + 1), model.azimuth(last));
        if let Some((_, p)) = lo {
            boundary_idx.push(cloud.len());
            cloud.push(p, ring as u16);
        }
        for h in hits {
            cloud.push(h.point, ring as u16);
        }
        if let Some((_, p)) = hi {
            boundary_idx.push(cloud.len());
            cloud.push(p, ring as u16);
        }
    }
    if let Some((dist, rng)) = noise {
        for p in &mut cloud.points {
            let r = p.norm();
            *p *= (r + dist.sample(rng)) / r;
        }
    }
    let det = RangeDetection {
        inside: cloud.points.clone(),
        boundary: boundary_idx.iter().map(|&i| cloud.points[i]).collect(),
    };
    Some((det, cloud))
}

fn simulate_depth(
    intr: &CameraIntrinsics,
    t_sp: &RigidTransform,
    pattern: &PatternSpec,
    rules: &DetectionRules,
    noise: Option<(&Normal<f64>, &mut ChaCha8Rng)>,
    labels: bool,
) -> Option<(DepthDetection, DepthImage)> {
    let rect = pattern.rect();
    let render = depth::render_depth(intr, t_sp, &rect, labels);
    if render.pixels.len() < rules.min_depth_pixels || render.boundary.len() < 3 {
        return None;
    }
    let mut image = render.image;
    let mut pixel_depth: Vec<f64> = render.pixels.iter().map(|p| p.2).collect();
    let mut boundary_depth: Vec<f64> = render.boundary.iter().map(|b| b.2).collect();
    if let Some((dist, rng)) = noise {
        for (d, &(x, y, _)) in pixel_depth.iter_mut().zip(&render.pixels) {
            *d += dist.sample(rng);
            image.set(x, y, *d as f32);
        }
        for d in &mut boundary_depth {
            *d += dist.sample(rng);
        }
    }
    let stride = render.pixels.len().div_ceil(rules.max_depth_inside);
    let inside = render
        .pixels
        .iter()
        .zip(&pixel_depth)
        .step_by(stride)
        .map(|(&(x, y, _), &d)| DepthLabel {
            pixel: Vector2::new(x as f64, y as f64),
            depth: d,
        })
        .collect();
    let boundary = render
        .boundary
        .iter()
        .zip(&boundary_depth)
        .map(|(&(u, v, _), &d)| DepthLabel {
            pixel: Vector2::new(u, v),
            depth: d,
        })
        .collect();
    let det = DepthDetection {
        inside,
        boundary,
        limits: if labels { project_limits(intr, t_sp, pattern) } else { None },
    };
    Some((det, image))
}

/// How much of a collection to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SimMode {
    /// Detection presence and partial flags only; labels are incomplete.
    Visibility,
    /// Full labels with noise drawn from `(seed, stream)`.
    Full { seed: u64, stream: u64 },
}

/// Simulates every sensor for one board pose.
pub(crate) fn simulate_collection(
    cfg: &SceneConfig,
    sensor_poses: &[RigidTransform],
    pattern_pose: &RigidTransform,
    mode: SimMode,
) -> CollectionSim {
    let (labels, noise_seed) = match mode {
        SimMode::Visibility => (false, None),
        SimMode::Full { seed, stream } => (true, Some((seed, stream))),
    };
    let mut rng = noise_seed.map(|(seed, stream)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    });
    let (rgb_n, range_n, depth_n) = (
        gaussian(cfg.noise.rgb_pixel_sigma),
        gaussian(cfg.noise.range_sigma),
        gaussian(cfg.noise.depth_sigma),
    );
    let rect = cfg.pattern.rect();
    let keep_raw = noise_seed.is_some() && cfg.emit_raw;
    let mut sim = CollectionSim {
        detections: BTreeMap::new(),
        raw: BTreeMap::new(),
    };
    for (sensor, pose) in cfg.sensors.iter().zip(sensor_poses) {
        let t_sp = pose.inverse().compose(pattern_pose);
        let pick = |n: &Option<Normal<f64>>, rng: &mut Option<ChaCha8Rng>| -> Option<(Normal<f64>, ChaCha8Rng)> {
            // noise streams advance per sensor only when noise is enabled
            match (n, rng.as_mut()) {
                (Some(d), Some(r)) => Some((*d, ChaCha8Rng::seed_from_u64(r.random()))),
                _ => None,
            }
        };
        match sensor.modality {
            Modality::Rgb => {
                let intr = sensor.intrinsics.as_ref().expect("validated");
                let mut noise = pick(&rgb_n, &mut rng);
                let n = noise.as_mut().map(|(d, r)| (&*d, r));
                if let Some(det) = simulate_rgb(intr, &t_sp, &cfg.pattern, &cfg.rules, n, labels) {
                    sim.detections.insert(sensor.id.clone(), Detection::Rgb(det));
                }
            }
            Modality::Lidar3d => {
                let mut noise = pick(&range_n, &mut rng);
                let n = noise.as_mut().map(|(d, r)| (&*d, r));
                if let Some((det, cloud)) = simulate_lidar(&cfg.lidar, &t_sp, &rect, &cfg.rules, n) {
                    sim.detections.insert(sensor.id.clone(), Detection::Lidar3d(det));
                    if keep_raw {
                        sim.raw.insert(sensor.id.clone(), RawData::Cloud(cloud));
                    }
                }
            }
            Modality::Depth => {
                let intr = sensor.intrinsics.as_ref().expect("validated");
                let mut noise = pick(&depth_n, &mut rng);
                let n = noise.as_mut().map(|(d, r)| (&*d, r));
                if let Some((det, img)) = simulate_depth(intr, &t_sp, &cfg.pattern, &cfg.rules, n, labels) {
                    sim.detections.insert(sensor.id.clone(), Detection::Depth(det));
                    if keep_raw {
                        sim.raw.insert(sensor.id.clone(), RawData::Depth(img));
                    }
                }
            }
        }
    }
    sim
}

pub(crate) fn sensor_poses(cfg: &SceneConfig) -> Vec<RigidTransform> {
    cfg.sensors
        .iter()
        .map(|s| cfg.tree.chain_to(&s.data_frame).expect("validated data frame"))
        .collect()
}

/// Relative sidecar path used for one raw record.
pub fn raw_file_name(collection: u32, sensor: &str, modality: Modality) -> String {
    let ext = match modality {
        Modality::Lidar3d => "cloud",
        Modality::Depth => "depth",
        Modality::Rgb => "img",
    };
    format!("raw/c{collection:03}_{sensor}.{ext}")
}

/// Simulates the scene. Deterministic for a fixed config (including seed).
pub fn generate(cfg: &SceneConfig) -> Result<GeneratedScene, SceneError> {
    cfg.validate()?;
    let poses = sensor_poses(cfg);
    let board_poses = match &cfg.trajectory {
        Trajectory::Explicit { poses } => poses.clone(),
        Trajectory::Targeted(target) => trajectory::select_poses(cfg, &poses, target)?,
    };
    let sims: Vec<CollectionSim> = board_poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let mode = SimMode::Full {
                seed: cfg.seed,
                stream: i as u64 + 1,
            };
            simulate_collection(cfg, &poses, pose, mode)
        })
        .collect();

    let mut dataset = Dataset::new(cfg.pattern, cfg.tree.clone(), cfg.sensors.clone());
    let mut gt_tree = cfg.tree.clone();
    let mut raw = BTreeMap::new();
    let mut dropped_empty = 0;
    for (i, (sim, pose)) in sims.into_iter().zip(&board_poses).enumerate() {
        let id = i as u32;
        if sim.detections.is_empty() {
            dropped_empty += 1;
            continue;
        }
        gt_tree.set_pattern_pose(id, *pose);
        let mut refs = BTreeMap::new();
        for (sid, data) in sim.raw {
            let modality = dataset.sensor(&sid).expect("scene sensor").modality;
            refs.insert(sid.clone(), raw_file_name(id, &sid, modality));
            raw.insert((id, sid), data);
        }
        dataset.collections.push(Collection {
            id,
            detections: sim.detections,
            raw: refs,
        });
    }
    if dropped_empty > 0 {
        log::warn!("{dropped_empty} board pose(s) produced no detection and were dropped");
    }
    if let Some(p) = &cfg.perturbation {
        dataset.tree = perturb_initial(&cfg.tree, &cfg.sensors, p.translation, p.rotation, p.seed);
    }
    dataset
        .meta
        .insert("generator".into(), serde_json::json!({ "seed": cfg.seed, "noise": cfg.noise }));
    dataset.validate().map_err(|e| SceneError::Invalid(format!("generated dataset failed validation: {e}")))?;
    let ground_truth = GroundTruth {
        provenance: None,
        seed: cfg.seed,
        tree: gt_tree,
        manifest: Manifest {
            stats: dataset.stats(),
            dropped_empty,
        },
    };
    Ok(GeneratedScene {
        dataset,
        ground_truth,
        raw,
    })
}

/// Edges that calibration would move: calibrated edges of non-anchored
/// sensors, minus any edge an anchored sensor calibrates. Sorted.
pub fn free_edges(tree: &TransformTree, sensors: &[SensorSpec]) -> Vec<usize> {
    let find = |s: &SensorSpec| tree.find_edge(&s.calibrated_edge.parent, &s.calibrated_edge.child);
    let anchored: Vec<usize> = sensors.iter().filter(|s| s.anchored).filter_map(find).collect();
    let mut edges: Vec<usize> = sensors
        .iter()
        .filter(|s| !s.anchored)
        .filter_map(find)
        .filter(|e| !anchored.contains(e))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Perturbs every free calibrated edge by exactly `trans` meters in a random
/// direction and `rot` radians about a random axis (`R' = ΔR·R`,
/// `t' = t + δ`). Pattern edges are removed; anchored edges are untouched.
pub fn perturb_initial(tree: &TransformTree, sensors: &[SensorSpec], trans: f64, rot: f64, seed: u64) -> TransformTree {
    let mut out = tree.without_patterns();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in free_edges(&out, sensors) {
        let dir = Vector3::from(UnitSphere.sample(&mut rng));
        let axis = Vector3::from(UnitSphere.sample(&mut rng));
        let t = out.edge(e).transform;
        let rotation = exp_so3(&(axis * rot)) * t.rotation;
        out.set_transform(e, RigidTransform::new(rotation, t.translation + dir * trans));
    }
    out
}
