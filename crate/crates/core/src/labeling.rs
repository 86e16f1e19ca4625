//! Semi-automatic range labeling: LiDAR plane search around a seed and
//! depth-image region growing, with seeds tracked from frame to frame.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DepthDetection, DepthLabel, Detection, Modality, RangeDetection};
use crate::plane::{centroid, Plane};
use crate::sidecar::{read_cloud, read_depth, DepthImage, PointCloud, SidecarError};

/// Three-point hypotheses closer than this to collinear are redrawn.
const COLLINEAR_TOL: f64 = 1e-9;
/// Redraws allowed per iteration before the iteration is spent anyway.
const MAX_REDRAWS: usize = 64;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("invalid label config: {0}")]
    Config(String),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("seed pixel ({0}, {1}) is outside the image or has no valid depth")]
    InvalidSeed(u32, u32),
    #[error("seed pixel ({0}, {1}) is outside the constraint polygon")]
    SeedOutsidePolygon(u32, u32),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
    #[error("collection {collection}, sensor {sensor}: {message}")]
    Dataset {
        collection: u32,
        sensor: String,
        message: String,
    },
}

fn default_crop_radius() -> f64 {
    0.8
}
fn default_ransac_threshold() -> f64 {
    0.02
}
fn default_ransac_iters() -> usize {
    200
}
fn default_min_inliers() -> usize {
    30
}
fn default_depth_jump() -> f64 {
    0.02
}
fn default_max_inside() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarLabelConfig {
    /// Sensor-frame point near the board center.
    pub seed: Vector3<f64>,
    #[serde(default = "default_crop_radius")]
    pub crop_radius: f64,
    #[serde(default = "default_ransac_threshold")]
    pub ransac_threshold: f64,
    #[serde(default = "default_ransac_iters")]
    pub ransac_iters: usize,
    #[serde(default = "default_min_inliers")]
    pub min_inliers: usize,
    /// Seed of the hypothesis sampler.
    #[serde(default)]
    pub rng_seed: u64,
}

impl LidarLabelConfig {
    pub fn new(seed: Vector3<f64>) -> Self {
        LidarLabelConfig {
            seed,
            crop_radius: default_crop_radius(),
            ransac_threshold: default_ransac_threshold(),
            ransac_iters: default_ransac_iters(),
            min_inliers: default_min_inliers(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        if !self.seed.iter().all(|v| v.is_finite()) {
            return Err(LabelError::Config("seed must be finite".into()));
        }
        if !(self.crop_radius > 0.0 && self.crop_radius.is_finite()) {
            return Err(LabelError::Config("crop_radius must be positive".into()));
        }
        if !(self.ransac_threshold > 0.0 && self.ransac_threshold.is_finite()) {
            return Err(LabelError::Config("ransac_threshold must be positive".into()));
        }
        if self.ransac_iters == 0 {
            return Err(LabelError::Config("ransac_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthLabelConfig {
    pub seed_pixel: [u32; 2],
    #[serde(default = "default_depth_jump")]
    pub depth_jump: f64,
    #[serde(default = "default_max_inside")]
    pub max_inside_points: usize,
    /// Pixel polygon the fill may not leave.
    #[serde(default)]
    pub polygon: Option<Vec<[f64; 2]>>,
}

impl DepthLabelConfig {
    pub fn new(seed_pixel: [u32; 2]) -> Self {
        DepthLabelConfig {
            seed_pixel,
            depth_jump: default_depth_jump(),
            max_inside_points: default_max_inside(),
            polygon: None,
        }
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        if !(self.depth_jump > 0.0 && self.depth_jump.is_finite()) {
            return Err(LabelError::Config("depth_jump must be positive".into()));
        }
        if self.max_inside_points < 4 {
            return Err(LabelError::Config("max_inside_points must be at least 4".into()));
        }
        if let Some(poly) = &self.polygon {
            if poly.len() < 3 || poly.iter().flatten().any(|v| !v.is_finite()) {
                return Err(LabelError::Config("polygon needs at least 3 finite vertices".into()));
            }
        }
        Ok(())
    }
}

/// Best plane hypothesis found by [`ransac_plane`].
#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub plane: Plane,
    /// Indices into the input points, ascending.
    pub inliers: Vec<usize>,
}

/// Plane RANSAC over three-point hypotheses. The first hypothesis with the
/// highest inlier count wins; the hypothesis sequence depends only on
/// `rng_seed` and the points, not on the threshold.
pub fn ransac_plane(points: &[Vector3<f64>], threshold: f64, iters: usize, rng_seed: u64) -> Option<RansacFit> {
    if points.len() < 3 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = points.len();
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..iters {
        let mut plane = None;
        for _ in 0..MAX_REDRAWS {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let k = rng.random_range(0..n);
            if i == j || j == k || i == k {
                continue;
            }
            plane = Plane::from_points(&points[i], &points[j], &points[k], COLLINEAR_TOL);
            if plane.is_some() {
                break;
            }
        }
        let Some(plane) = plane else { continue };
        let count = points.iter().filter(|p| plane.signed_distance(p).abs() <= threshold).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, plane));
        }
    }
    let (_, plane) = best?;
    let inliers = (0..n).filter(|&i| plane.signed_distance(&points[i]).abs() <= threshold).collect();
    Some(RansacFit { plane, inliers })
}

/// Labels the board in a LiDAR cloud. `Ok(None)` means no detection: an
/// empty crop, no plane, or fewer than `min_inliers` inliers.
pub fn label_lidar(cloud: &PointCloud, cfg: &LidarLabelConfig) -> Result<Option<RangeDetection>, LabelError> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(LabelError::EmptyCloud);
    }
    let crop: Vec<usize> = (0..cloud.len())
        .filter(|&i| (cloud.points[i] - cfg.seed).norm() <= cfg.crop_radius)
        .collect();
    let pts: Vec<Vector3<f64>> = crop.iter().map(|&i| cloud.points[i]).collect();
    let Some(fit) = ransac_plane(&pts, cfg.ransac_threshold, cfg.ransac_iters, cfg.rng_seed) else {
        return Ok(None);
    };
    if fit.inliers.len() < cfg.min_inliers.max(1) {
        return Ok(None);
    }
    // per ring: (min azimuth, index), (max azimuth, index)
    type Extreme = (f64, usize);
    let mut extremes: BTreeMap<u16, (Extreme, Extreme)> = BTreeMap::new();
    for &k in &fit.inliers {
        let p = pts[k];
        let az = p.y.atan2(p.x);
        let e = extremes.entry(cloud.rings[crop[k]]).or_insert(((az, k), (az, k)));
        if az < e.0 .0 {
            e.0 = (az, k);
        }
        if az > e.1 .0 {
            e.1 = (az, k);
        }
    }
    let mut boundary = Vec::new();
    for ((_, lo), (_, hi)) in extremes.values() {
        boundary.push(pts[*lo]);
        if hi != lo {
            boundary.push(pts[*hi]);
        }
    }
    Ok(Some(RangeDetection {
        inside: fit.inliers.iter().map(|&k| pts[k]).collect(),
        boundary,
    }))
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Neighbour visit order of the region grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillOrder {
    BreadthFirst,
    DepthFirst,
}

/// Row-major mask of the 4-connected region grown from the seed. A pixel
/// joins when its depth is valid, within `depth_jump` of the neighbour it is
/// reached from, and inside the polygon if one is given.
pub fn fill_mask(img: &DepthImage, cfg: &DepthLabelConfig, order: FillOrder) -> Result<Vec<bool>, LabelError> {
    cfg.validate()?;
    let [sx, sy] = cfg.seed_pixel;
    if !img.is_valid(sx, sy) {
        return Err(LabelError::InvalidSeed(sx, sy));
    }
    let allowed = |x: u32, y: u32| {
        cfg.polygon
            .as_deref()
            .is_none_or(|poly| point_in_polygon([x as f64, y as f64], poly))
    };
    if !allowed(sx, sy) {
        return Err(LabelError::SeedOutsidePolygon(sx, sy));
    }
    let mut mask = vec![false; img.data.len()];
    let mut queue = VecDeque::from([(sx, sy)]);
    mask[img.index(sx, sy)] = true;
    loop {
        let next = match order {
            FillOrder::BreadthFirst => queue.pop_front(),
            FillOrder::DepthFirst => queue.pop_back(),
        };
        let Some((x, y)) = next else { break };
        let d = img.get(x, y) as f64;
        for (nx, ny) in neighbours(img, x, y) {
            let i = img.index(nx, ny);
            if mask[i] || !img.is_valid(nx, ny) {
                continue;
            }
            if (img.get(nx, ny) as f64 - d).abs() <= cfg.depth_jump && allowed(nx, ny) {
                mask[i] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    Ok(mask)
}

fn neighbours(img: &DepthImage, x: u32, y: u32) -> impl Iterator<Item = (u32, u32)> {
    let (w, h) = (img.width, img.height);
    [
        (x > 0).then(|| (x.wrapping_sub(1), y)),
        (x + 1 < w).then_some((x + 1, y)),
        (y > 0).then(|| (x, y.wrapping_sub(1))),
        (y + 1 < h).then_some((x, y + 1)),
    ]
    .into_iter()
    .flatten()
}

/// Labels the board in a depth image by region growing. Inside points are
/// the filled pixels, row-major, stride-subsampled to `max_inside_points`;
/// boundary points are filled pixels with an unfilled in-image 4-neighbour.
/// `Ok(None)` when the region is the seed alone.
pub fn flood_fill_depth(img: &DepthImage, cfg: &DepthLabelConfig) -> Result<Option<DepthDetection>, LabelError> {
    let mask = fill_mask(img, cfg, FillOrder::BreadthFirst)?;
    let label = |x: u32, y: u32| DepthLabel {
        pixel: Vector2::new(x as f64, y as f64),
        depth: img.get(x, y) as f64,
    };
    let mut filled = Vec::new();
    let mut boundary = Vec::new();
    for y in 0..img.height {
        for x in 0..img.width {
            if !mask[img.index(x, y)] {
                continue;
            }
            filled.push((x, y));
            if neighbours(img, x, y).any(|(nx, ny)| !mask[img.index(nx, ny)]) {
                boundary.push(label(x, y));
            }
        }
    }
    if filled.len() < 2 {
        return Ok(None);
    }
    let stride = filled.len().div_ceil(cfg.max_inside_points);
    Ok(Some(DepthDetection {
        inside: filled.iter().step_by(stride).map(|&(x, y)| label(x, y)).collect(),
        boundary,
        limits: None,
    }))
}

/// 3D centroid of the inside points of a LiDAR label.
pub fn track_seed_lidar(prev: &RangeDetection) -> Option<Vector3<f64>> {
    centroid(&prev.inside)
}

/// Pixel centroid of the inside points of a depth label, rounded to the
/// nearest pixel.
pub fn track_seed_depth(prev: &DepthDetection) -> Option<[u32; 2]> {
    if prev.inside.is_empty() {
        return None;
    }
    let c = prev.inside.iter().map(|l| l.pixel).sum::<Vector2<f64>>() / prev.inside.len() as f64;
    Some([c.x.round().max(0.0) as u32, c.y.round().max(0.0) as u32])
}

/// Manual seed for one (collection, sensor) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedEntry {
    pub collection: u32,
    pub sensor: String,
    /// LiDAR seed in the sensor frame.
    #[serde(default)]
    pub point: Option<Vector3<f64>>,
    /// Depth seed pixel.
    #[serde(default)]
    pub pixel: Option<[u32; 2]>,
    #[serde(default)]
    pub polygon: Option<Vec<[f64; 2]>>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarDefaults {
    #[serde(default = "default_crop_radius")]
    pub crop_radius: f64,
    #[serde(default = "default_ransac_threshold")]
    pub ransac_threshold: f64,
    #[serde(default = "default_ransac_iters")]
    pub ransac_iters: usize,
    #[serde(default = "default_min_inliers")]
    pub min_inliers: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for LidarDefaults {
    fn default() -> Self {
        LidarDefaults {
            crop_radius: default_crop_radius(),
            ransac_threshold: default_ransac_threshold(),
            ransac_iters: default_ransac_iters(),
            min_inliers: default_min_inliers(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthDefaults {
    #[serde(default = "default_depth_jump")]
    pub depth_jump: f64,
    #[serde(default = "default_max_inside")]
    pub max_inside_points: usize,
}

impl Default for DepthDefaults {
    fn default() -> Self {
        DepthDefaults {
            depth_jump: default_depth_jump(),
            max_inside_points: default_max_inside(),
        }
    }
}

/// Batch labeling document: shared parameters plus manual seeds. With
/// `track` on, a sensor without a manual seed in some collection reuses the
/// centroid of its label in the previous collection.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    #[serde(default)]
    pub lidar: LidarDefaults,
    #[serde(default)]
    pub depth: DepthDefaults,
    #[serde(default)]
    pub seeds: Vec<SeedEntry>,
    #[serde(default = "default_true")]
    pub track: bool,
}

impl LabelConfig {
    pub fn from_json_str(s: &str) -> Result<LabelConfig, LabelError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: LabelConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| LabelError::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        self.lidar_config(Vector3::zeros()).validate()?;
        self.depth_config([0, 0], None).validate()?;
        for s in &self.seeds {
            match (&s.point, &s.pixel) {
                (Some(p), None) if p.iter().all(|v| v.is_finite()) => {}
                (None, Some(_)) => {}
                _ => {
                    return Err(LabelError::Config(format!(
                        "seed for collection {} sensor {} needs exactly one finite `point` or `pixel`",
                        s.collection, s.sensor
                    )))
                }
            }
        }
        Ok(())
    }

    fn lidar_config(&self, seed: Vector3<f64>) -> LidarLabelConfig {
        let d = &self.lidar;
        LidarLabelConfig {
            seed,
            crop_radius: d.crop_radius,
            ransac_threshold: d.ransac_threshold,
            ransac_iters: d.ransac_iters,
            min_inliers: d.min_inliers,
            rng_seed: d.rng_seed,
        }
    }

    fn depth_config(&self, seed: [u32; 2], polygon: Option<Vec<[f64; 2]>>) -> DepthLabelConfig {
        DepthLabelConfig {
            seed_pixel: seed,
            depth_jump: self.depth.depth_jump,
            max_inside_points: self.depth.max_inside_points,
            polygon,
        }
    }
}

/// Summary of a batch labeling run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub labeled: usize,
    pub rejected: usize,
    pub unseeded: usize,
}

/// Relabels every LiDAR and depth detection of `dataset` from its raw
/// sidecars, replacing existing range labels. Collections left without any
/// detection are kept empty here and dropped by validation on save/load.
pub fn label_dataset(dataset: &mut Dataset, cfg: &LabelConfig) -> Result<LabelSummary, LabelError> {
    cfg.validate()?;
    let mut summary = LabelSummary::default();
    let range_sensors: Vec<(String, Modality)> = dataset
        .sensors
        .iter()
        .filter(|s| s.modality != Modality::Rgb)
        .map(|s| (s.id.clone(), s.modality))
        .collect();
    for (sensor, modality) in range_sensors {
        let mut prev: Option<Detection> = None;
        for ci in 0..dataset.collections.len() {
            let cid = dataset.collections[ci].id;
            let manual = cfg.seeds.iter().find(|s| s.collection == cid && s.sensor == sensor);
            let raw = dataset.raw_path(&dataset.collections[ci], &sensor);
            let fail = |message: String| LabelError::Dataset {
                collection: cid,
                sensor: sensor.clone(),
                message,
            };
            let detection = match (modality, raw) {
                (_, None) => None,
                (Modality::Lidar3d, Some(rel)) => {
                    let seed = match manual {
                        Some(m) => Some(m.point.ok_or_else(|| fail("LiDAR seed needs `point`".into()))?),
                        None if cfg.track => match &prev {
                            Some(Detection::Lidar3d(d)) => track_seed_lidar(d),
                            _ => None,
                        },
                        None => None,
                    };
                    match seed {
                        None => {
                            summary.unseeded += 1;
                            None
                        }
                        Some(seed) => {
                            let cloud = read_cloud(&rel)?;
                            if cloud.is_empty() {
                                None
                            } else {
                                label_lidar(&cloud, &cfg.lidar_config(seed))?.map(Detection::Lidar3d)
                            }
                        }
                    }
                }
                (_, Some(rel)) => {
                    let seed = match manual {
                        Some(m) => {
                            let px = m.pixel.ok_or_else(|| fail("depth seed needs `pixel`".into()))?;
                            Some((px, m.polygon.clone()))
                        }
                        None if cfg.track => match &prev {
                            Some(Detection::Depth(d)) => track_seed_depth(d).map(|p| (p, None)),
                            _ => None,
                        },
                        None => None,
                    };
                    match seed {
                        None => {
                            summary.unseeded += 1;
                            None
                        }
                        Some((px, polygon)) => {
                            let img = read_depth(&rel)?;
                            match flood_fill_depth(&img, &cfg.depth_config(px, polygon)) {
                                Ok(d) => d.map(Detection::Depth),
                                // a tracked seed that left the board is a lost track, not an error
                                Err(LabelError::InvalidSeed(..) | LabelError::SeedOutsidePolygon(..)) if manual.is_none() => None,
                                Err(e) => return Err(e),
                            }
                        }
                    }
                }
            };
            let coll = &mut dataset.collections[ci];
            match &detection {
                Some(d) => {
                    summary.labeled += 1;
                    coll.detections.insert(sensor.clone(), d.clone());
                }
                None => {
                    if coll.raw.contains_key(&sensor) {
                        summary.rejected += usize::from(prev.is_some() || manual.is_some());
                    }
                    coll.detections.remove(&sensor);
                }
            }
            prev = detection;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect_image(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32, depth: f32) -> DepthImage {
        let mut img = DepthImage::new_invalid(w, h);
        for y in y0..=y1 {
            for x in x0..=x1 {
                img.set(x, y, depth);
            }
        }
        img
    }

    #[test]
    fn constant_rectangle_fills_exactly() {
        let img = rect_image(40, 30, 5, 7, 24, 19, 1.5);
        let det = flood_fill_depth(&img, &DepthLabelConfig::new([10, 10])).unwrap().unwrap();
        assert_eq!(det.inside.len(), 20 * 13);
        let mut perimeter: Vec<(u32, u32)> = Vec::new();
        for y in 7..=19 {
            for x in 5..=24 {
                if x == 5 || x == 24 || y == 7 || y == 19 {
                    perimeter.push((x, y));
                }
            }
        }
        let got: Vec<(u32, u32)> = det.boundary.iter().map(|l| (l.pixel.x as u32, l.pixel.y as u32)).collect();
        assert_eq!(got, perimeter);
    }

    #[test]
    fn fill_stops_at_depth_step() {
        let mut img = rect_image(30, 20, 0, 0, 29, 19, 2.0);
        for y in 0..20 {
            for x in 15..30 {
                img.set(x, y, 2.05);
            }
        }
        let det = flood_fill_depth(&img, &DepthLabelConfig::new([3, 3])).unwrap().unwrap();
        assert_eq!(det.inside.len(), 15 * 20);
        assert!(det.inside.iter().all(|l| l.pixel.x < 15.0));
    }

    #[test]
    fn polygon_confines_fill() {
        let img = rect_image(50, 40, 0, 0, 49, 39, 1.0);
        let mut cfg = DepthLabelConfig::new([20, 20]);
        cfg.polygon = Some(vec![[10.5, 10.5], [30.5, 10.5], [30.5, 25.5], [10.5, 25.5]]);
        let det = flood_fill_depth(&img, &cfg).unwrap().unwrap();
        assert_eq!(det.inside.len(), 20 * 15);
        assert!(det.inside.iter().all(|l| (11.0..=30.0).contains(&l.pixel.x) && (11.0..=25.0).contains(&l.pixel.y)));
    }

    #[test]
    fn invalid_and_isolated_seeds() {
        let img = rect_image(10, 10, 4, 4, 4, 4, 1.0);
        assert!(matches!(
            flood_fill_depth(&img, &DepthLabelConfig::new([0, 0])),
            Err(LabelError::InvalidSeed(0, 0))
        ));
        assert!(matches!(
            flood_fill_depth(&img, &DepthLabelConfig::new([40, 0])),
            Err(LabelError::InvalidSeed(40, 0))
        ));
        assert!(flood_fill_depth(&img, &DepthLabelConfig::new([4, 4])).unwrap().is_none());
    }

    #[test]
    fn inside_is_subsampled_by_stride() {
        let img = rect_image(100, 100, 0, 0, 99, 99, 1.0);
        let det = flood_fill_depth(&img, &DepthLabelConfig::new([50, 50])).unwrap().unwrap();
        // 10000 pixels, stride 20
        assert_eq!(det.inside.len(), 500);
        assert_eq!(det.inside[1].pixel, Vector2::new(20.0, 0.0));
    }

    #[test]
    fn track_seed_of_symmetric_region_is_its_center() {
        let img = rect_image(40, 30, 10, 10, 20, 16, 1.0);
        let det = flood_fill_depth(&img, &DepthLabelConfig::new([12, 12])).unwrap().unwrap();
        assert_eq!(track_seed_depth(&det), Some([15, 13]));
        let single = RangeDetection {
            inside: vec![Vector3::new(1.0, 2.0, 3.0)],
            boundary: vec![],
        };
        assert_eq!(track_seed_lidar(&single), Some(Vector3::new(1.0, 2.0, 3.0)));
    }

    #[test]
    fn polygon_parity() {
        let square = [[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]];
        assert!(point_in_polygon([2.0, 2.0], &square));
        assert!(!point_in_polygon([5.0, 2.0], &square));
        // concave "C"
        let c = [[0.0, 0.0], [3.0, 0.0], [3.0, 1.0], [1.0, 1.0], [1.0, 2.0], [3.0, 2.0], [3.0, 3.0], [0.0, 3.0]];
        assert!(point_in_polygon([0.5, 1.5], &c));
        assert!(!point_in_polygon([2.0, 1.5], &c));
    }

    #[test]
    fn ransac_finds_exact_plane() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vector3::new(2.0, i as f64 * 0.05, j as f64 * 0.05));
            }
        }
        pts.push(Vector3::new(2.5, 0.1, 0.1));
        let fit = ransac_plane(&pts, 1e-6, 50, 3).unwrap();
        assert_eq!(fit.inliers, (0..100).collect::<Vec<_>>());
        assert!((fit.plane.normal.x.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn label_config_document() {
        let doc = r#"{"lidar": {"crop_radius": 0.6}, "seeds": [{"collection": 0, "sensor": "lidar_1", "point": [2.0, 0.0, 0.0]}]}"#;
        let cfg = LabelConfig::from_json_str(doc).unwrap();
        assert_eq!(cfg.lidar.crop_radius, 0.6);
        assert!(cfg.track);
        let bad = r#"{"seeds": [{"collection": 0, "sensor": "d", "point": [1,2,3], "pixel": [1,2]}]}"#;
        assert!(LabelConfig::from_json_str(bad).is_err());
        assert!(LabelConfig::from_json_str(r#"{"lidar": {"crop_radius": -1}}"#).is_err());
        assert!(LabelConfig::from_json_str(r#"{"extra": 1}"#).is_err());
    }

    fn random_image() -> impl Strategy<Value = DepthImage> {
        (4u32..20, 4u32..20).prop_flat_map(|(w, h)| {
            prop::collection::vec(prop_oneof![Just(f32::NAN), 1.0f32..1.1], (w * h) as usize)
                .prop_map(move |data| DepthImage { width: w, height: h, data })
        })
    }

    proptest! {
        #[test]
        fn fill_is_order_independent(img in random_image(), sx in 0u32..20, sy in 0u32..20) {
            let cfg = DepthLabelConfig { seed_pixel: [sx % img.width, sy % img.height], depth_jump: 0.03, max_inside_points: 4, polygon: None };
            let bfs = fill_mask(&img, &cfg, FillOrder::BreadthFirst);
            let dfs = fill_mask(&img, &cfg, FillOrder::DepthFirst);
            match (bfs, dfs) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "orders disagree on seed validity"),
            }
        }

        #[test]
        fn ransac_inliers_monotone_in_threshold(
            pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 5..60),
            t in 0.001f64..0.5,
            seed in 0u64..1000,
        ) {
            let pts: Vec<Vector3<f64>> = pts.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect();
            let a = ransac_plane(&pts, t, 30, seed).map_or(0, |f| f.inliers.len());
            let b = ransac_plane(&pts, 2.0 * t, 30, seed).map_or(0, |f| f.inliers.len());
            prop_assert!(a <= b);
        }
    }
}
