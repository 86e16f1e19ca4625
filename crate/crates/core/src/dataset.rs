//! Versioned on-disk dataset: pattern, frame tree, sensors and collections of
//! labeled detections.
//!
//! The document is JSON; bulk sensor data (point clouds, depth rasters) lives
//! in binary sidecars referenced by relative path from `raw`. Residuals only
//! need the labels, so sidecars are optional for calibration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Component, Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::io::write_atomic;
use crate::pattern::PatternSpec;
use crate::plane::fit_plane;
use crate::sidecar::SidecarError;
use crate::tree::{EdgeKind, TransformTree};

pub const DATASET_VERSION: u32 = 1;

/// Boundary labels further than this from the plane of the inside labels are
/// rejected as inconsistent.
pub const PLANE_NEIGHBORHOOD_TOL: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid dataset at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("unsupported dataset version {0} (supported: {DATASET_VERSION})")]
    Version(u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> DatasetError {
    DatasetError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Depth,
    Lidar3d,
}

impl Modality {
    pub fn is_image(self) -> bool {
        matches!(self, Modality::Rgb | Modality::Depth)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
            Modality::Lidar3d => "lidar3d",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRef {
    pub parent: String,
    pub child: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub id: String,
    pub modality: Modality,
    pub data_frame: String,
    pub calibrated_edge: EdgeRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
    #[serde(default)]
    pub anchored: bool,
}

/// One detected corner, serialized as `[id, u, v]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64, f64)", into = "(u32, f64, f64)")]
pub struct Corner {
    pub id: u32,
    pub pixel: Vector2<f64>,
}

impl From<(u32, f64, f64)> for Corner {
    fn from((id, u, v): (u32, f64, f64)) -> Self {
        Corner {
            id,
            pixel: Vector2::new(u, v),
        }
    }
}

impl From<Corner> for (u32, f64, f64) {
    fn from(c: Corner) -> Self {
        (c.id, c.pixel.x, c.pixel.y)
    }
}

/// Depth-image label, serialized as `[u, v, depth]`. Pixel coordinates may be
/// sub-pixel; `depth` is the metric `Z` used for back-projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct DepthLabel {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

impl From<[f64; 3]> for DepthLabel {
    fn from([u, v, depth]: [f64; 3]) -> Self {
        DepthLabel {
            pixel: Vector2::new(u, v),
            depth,
        }
    }
}

impl From<DepthLabel> for [f64; 3] {
    fn from(l: DepthLabel) -> Self {
        [l.pixel.x, l.pixel.y, l.depth]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgbDetection {
    pub corners: Vec<Corner>,
    pub partial: bool,
    /// Closed polygon (pixels) of the physical board outline, used by the
    /// range-to-image metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeDetection {
    pub inside: Vec<Vector3<f64>>,
    pub boundary: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthDetection {
    pub inside: Vec<DepthLabel>,
    pub boundary: Vec<DepthLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Detection {
    Rgb(RgbDetection),
    Lidar3d(RangeDetection),
    Depth(DepthDetection),
}

impl Detection {
    pub fn modality(&self) -> Modality {
        match self {
            Detection::Rgb(_) => Modality::Rgb,
            Detection::Lidar3d(_) => Modality::Lidar3d,
            Detection::Depth(_) => Modality::Depth,
        }
    }

    pub fn limits(&self) -> Option<&[[f64; 2]]> {
        match self {
            Detection::Rgb(d) => d.limits.as_deref(),
            Detection::Depth(d) => d.limits.as_deref(),
            Detection::Lidar3d(_) => None,
        }
    }
}

fn skip_null_detections<'de, D>(de: D) -> Result<BTreeMap<String, Detection>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw: BTreeMap<String, Option<Detection>> = BTreeMap::deserialize(de)?;
    Ok(raw.into_iter().filter_map(|(k, v)| v.map(|d| (k, d))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Collection {
    pub id: u32,
    /// Sensor id → detection. Absent or `null` means the sensor did not see
    /// the pattern.
    #[serde(default, deserialize_with = "skip_null_detections")]
    pub detections: BTreeMap<String, Detection>,
    /// Sensor id → sidecar path relative to the dataset document.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub raw: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub version: u32,
    pub pattern: PatternSpec,
    pub tree: TransformTree,
    pub sensors: Vec<SensorSpec>,
    pub collections: Vec<Collection>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
    /// Directory the document was loaded from; sidecar paths resolve here.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dropped_empty: usize,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorStats {
    pub id: String,
    pub modality: Modality,
    pub detections: usize,
    pub partials: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub collections: usize,
    pub rgb_partials: usize,
    pub complete: usize,
    pub sensors: Vec<SensorStats>,
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>13} {:>14} {:>11}", "# collections", "# RGB partials", "# complete")?;
        writeln!(f, "{:>13} {:>14} {:>11}", self.collections, self.rgb_partials, self.complete)?;
        writeln!(f)?;
        writeln!(f, "{:<12} {:<8} {:>10} {:>8}", "sensor", "modality", "detections", "partial")?;
        for s in &self.sensors {
            writeln!(
                f,
                "{:<12} {:<8} {:>10} {:>8}",
                s.id, s.modality, s.detections, s.partials
            )?;
        }
        Ok(())
    }
}

impl Dataset {
    pub fn new(pattern: PatternSpec, tree: TransformTree, sensors: Vec<SensorSpec>) -> Self {
        Dataset {
            version: DATASET_VERSION,
            pattern,
            tree,
            sensors,
            collections: Vec::new(),
            meta: BTreeMap::new(),
            base_dir: None,
        }
    }

    /// Parses and validates a dataset document.
    pub fn from_json_str(text: &str) -> Result<(Dataset, LoadReport), DatasetError> {
        let probe: VersionProbe = serde_json::from_str(text).map_err(|e| DatasetError::Schema {
            path: "version".into(),
            message: e.to_string(),
        })?;
        if probe.version != DATASET_VERSION {
            return Err(DatasetError::Version(probe.version));
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut ds: Dataset = serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let report = ds.validate()?;
        Ok((ds, report))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serialization cannot fail")
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.id == id)
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.id == id)
    }

    pub fn collection(&self, id: u32) -> Option<&Collection> {
        self.collections.iter().find(|c| c.id == id)
    }

    pub fn is_complete(&self, c: &Collection) -> bool {
        self.sensors.iter().all(|s| c.detections.contains_key(&s.id))
    }

    /// Resolves a `raw` reference against the dataset directory.
    pub fn raw_path(&self, collection: &Collection, sensor: &str) -> Option<PathBuf> {
        let rel = collection.raw.get(sensor)?;
        Some(match &self.base_dir {
            Some(dir) => dir.join(rel),
            None => PathBuf::from(rel),
        })
    }

    /// Checks every cross-reference and label invariant, sorts collections by
    /// id and drops collections without detections.
    pub fn validate(&mut self) -> Result<LoadReport, DatasetError> {
        self.pattern.validate().map_err(|m| invalid("pattern", m))?;
        self.validate_sensors()?;
        let mut seen = BTreeSet::new();
        for (ci, c) in self.collections.iter().enumerate() {
            if !seen.insert(c.id) {
                return Err(invalid(format!("collections[{ci}].id"), format!("duplicate collection id {}", c.id)));
            }
            self.validate_collection(ci, c)?;
        }
        let before = self.collections.len();
        self.collections.retain(|c| !c.detections.is_empty());
        let dropped_empty = before - self.collections.len();
        if dropped_empty > 0 {
            log::warn!("dropped {dropped_empty} collection(s) without detections");
        }
        self.collections.sort_by_key(|c| c.id);
        Ok(LoadReport { dropped_empty })
    }

    fn validate_sensors(&self) -> Result<(), DatasetError> {
        let mut ids = BTreeSet::new();
        for (si, s) in self.sensors.iter().enumerate() {
            let path = |f: &str| format!("sensors[{si}].{f}");
            if s.id.is_empty() || !ids.insert(s.id.as_str()) {
                return Err(invalid(path("id"), format!("empty or duplicate sensor id `{}`", s.id)));
            }
            if !self.tree.contains_frame(&s.data_frame) {
                return Err(invalid(path("data_frame"), format!("unknown frame `{}`", s.data_frame)));
            }
            let chain = self
                .tree
                .path_edges(&s.data_frame)
                .map_err(|e| invalid(path("data_frame"), e.to_string()))?;
            let EdgeRef { parent, child } = &s.calibrated_edge;
            let edge = self
                .tree
                .find_edge(parent, child)
                .ok_or_else(|| invalid(path("calibrated_edge"), format!("no edge `{parent}` -> `{child}`")))?;
            if !chain.contains(&edge) {
                return Err(invalid(
                    path("calibrated_edge"),
                    format!("edge `{parent}` -> `{child}` is not on the chain from the root to `{}`", s.data_frame),
                ));
            }
            if self.tree.edge(edge).kind != EdgeKind::Optimized {
                return Err(invalid(path("calibrated_edge"), "calibrated edge must have kind `optimized`"));
            }
            let optimized: Vec<usize> = chain
                .iter()
                .copied()
                .filter(|&i| self.tree.edge(i).kind == EdgeKind::Optimized)
                .collect();
            if optimized != [edge] {
                return Err(invalid(
                    path("calibrated_edge"),
                    format!("chain to `{}` must hold exactly one optimized edge, found {}", s.data_frame, optimized.len()),
                ));
            }
            if s.modality.is_image() {
                let intr = s
                    .intrinsics
                    .as_ref()
                    .ok_or_else(|| invalid(path("intrinsics"), format!("{} sensor requires intrinsics", s.modality)))?;
                intr.validate().map_err(|m| invalid(path("intrinsics"), m))?;
            }
        }
        Ok(())
    }

    fn validate_collection(&self, ci: usize, c: &Collection) -> Result<(), DatasetError> {
        for (sid, rel) in &c.raw {
            let path = format!("collections[{ci}].raw.{sid}");
            if self.sensor(sid).is_none() {
                return Err(invalid(path, format!("unknown sensor `{sid}`")));
            }
            let p = Path::new(rel);
            if rel.is_empty() || p.components().any(|k| !matches!(k, Component::Normal(_) | Component::CurDir)) {
                return Err(invalid(path, "sidecar path must be relative and stay below the dataset directory"));
            }
        }
        for (sid, det) in &c.detections {
            let path = format!("collections[{ci}].detections.{sid}");
            let sensor = self
                .sensor(sid)
                .ok_or_else(|| invalid(&path, format!("unknown sensor `{sid}`")))?;
            if det.modality() != sensor.modality {
                return Err(invalid(
                    &path,
                    format!("{} detection for {} sensor", det.modality(), sensor.modality),
                ));
            }
            match det {
                Detection::Rgb(d) => self.validate_rgb(&path, d)?,
                Detection::Lidar3d(d) => validate_range(&path, &d.inside, &d.boundary)?,
                Detection::Depth(d) => {
                    let intr = sensor.intrinsics.as_ref().expect("validated above");
                    let lift = |(k, l): (usize, &DepthLabel), field: &str| {
                        let ok = l.depth.is_finite()
                            && l.depth > 0.0
                            && l.pixel.iter().all(|v| v.is_finite())
                            && l.pixel.x >= 0.0
                            && l.pixel.y >= 0.0
                            && l.pixel.x <= intr.width as f64
                            && l.pixel.y <= intr.height as f64;
                        if !ok {
                            return Err(invalid(format!("{path}.{field}[{k}]"), "label outside the image or with invalid depth"));
                        }
                        Ok(intr.backproject_unchecked(l.pixel.x, l.pixel.y, l.depth))
                    };
                    let inside = d.inside.iter().enumerate().map(|x| lift(x, "inside")).collect::<Result<Vec<_>, _>>()?;
                    let boundary = d.boundary.iter().enumerate().map(|x| lift(x, "boundary")).collect::<Result<Vec<_>, _>>()?;
                    validate_range(&path, &inside, &boundary)?;
                    validate_limits(&path, d.limits.as_deref())?;
                }
            }
        }
        Ok(())
    }

    fn validate_rgb(&self, path: &str, d: &RgbDetection) -> Result<(), DatasetError> {
        let n = self.pattern.corner_count();
        let mut ids = BTreeSet::new();
        for (k, c) in d.corners.iter().enumerate() {
            if c.id as usize >= n || !ids.insert(c.id) {
                return Err(invalid(format!("{path}.corners[{k}]"), format!("corner id {} out of range or duplicated", c.id)));
            }
            if !c.pixel.iter().all(|v| v.is_finite()) {
                return Err(invalid(format!("{path}.corners[{k}]"), "non-finite pixel"));
            }
        }
        let min = self.pattern.min_detected_corners();
        if d.corners.len() < min {
            return Err(invalid(
                format!("{path}.corners"),
                format!("{} corners is below the detection threshold of {min}", d.corners.len()),
            ));
        }
        if d.partial != (d.corners.len() < n) {
            return Err(invalid(format!("{path}.partial"), "flag disagrees with the number of corners"));
        }
        validate_limits(path, d.limits.as_deref())
    }

    pub fn stats(&self) -> StatsReport {
        let sensors = self
            .sensors
            .iter()
            .map(|s| {
                let mut detections = 0;
                let mut partials = 0;
                for c in &self.collections {
                    if let Some(d) = c.detections.get(&s.id) {
                        detections += 1;
                        if matches!(d, Detection::Rgb(r) if r.partial) {
                            partials += 1;
                        }
                    }
                }
                SensorStats {
                    id: s.id.clone(),
                    modality: s.modality,
                    detections,
                    partials,
                }
            })
            .collect::<Vec<_>>();
        StatsReport {
            collections: self.collections.len(),
            rgb_partials: sensors.iter().map(|s| s.partials).sum(),
            complete: self.collections.iter().filter(|c| self.is_complete(c)).count(),
            sensors,
        }
    }
}

fn validate_range(path: &str, inside: &[Vector3<f64>], boundary: &[Vector3<f64>]) -> Result<(), DatasetError> {
    if inside.is_empty() || boundary.is_empty() {
        return Err(invalid(path, "range detection needs inside and boundary labels"));
    }
    if !inside.iter().chain(boundary).all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(invalid(path, "non-finite point"));
    }
    if let Some(plane) = fit_plane(inside) {
        if let Some(k) = boundary
            .iter()
            .position(|b| plane.signed_distance(b).abs() > PLANE_NEIGHBORHOOD_TOL)
        {
            return Err(invalid(
                format!("{path}.boundary[{k}]"),
                format!("boundary point further than {PLANE_NEIGHBORHOOD_TOL} m from the plane of the inside points"),
            ));
        }
    }
    Ok(())
}

fn validate_limits(path: &str, limits: Option<&[[f64; 2]]>) -> Result<(), DatasetError> {
    match limits {
        Some(poly) if poly.len() < 3 || !poly.iter().flatten().all(|v| v.is_finite()) => {
            Err(invalid(format!("{path}.limits"), "polygon needs at least 3 finite vertices"))
        }
        _ => Ok(()),
    }
}

pub fn load_dataset(path: &Path) -> Result<(Dataset, LoadReport), DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (mut ds, report) = Dataset::from_json_str(&text)?;
    ds.base_dir = path.parent().map(Path::to_path_buf);
    Ok((ds, report))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    write_atomic(path, ds.to_json_string().as_bytes()).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::tree::Edge;

    fn minimal() -> Dataset {
        let mut tree = TransformTree::new("world");
        tree.add_edge(Edge::new("world", "cam", EdgeKind::Optimized, RigidTransform::identity()))
            .unwrap();
        let pattern = PatternSpec::new(3, 3, 0.1, 0.05, 0.05);
        let sensor = SensorSpec {
            id: "rgb_1".into(),
            modality: Modality::Rgb,
            data_frame: "cam".into(),
            calibrated_edge: EdgeRef {
                parent: "world".into(),
                child: "cam".into(),
            },
            intrinsics: Some(CameraIntrinsics::pinhole(600.0, 600.0, 320.0, 240.0, 640, 480)),
            anchored: false,
        };
        let mut ds = Dataset::new(pattern, tree, vec![sensor]);
        let corners = (0..9).map(|i| Corner::from((i, 100.0 + i as f64, 200.5))).collect();
        ds.collections.push(Collection {
            id: 0,
            detections: BTreeMap::from([(
                "rgb_1".to_owned(),
                Detection::Rgb(RgbDetection {
                    corners,
                    partial: false,
                    limits: None,
                }),
            )]),
            raw: BTreeMap::new(),
        });
        ds
    }

    #[test]
    fn minimal_dataset_loads_complete() {
        let text = minimal().to_json_string();
        let (ds, report) = Dataset::from_json_str(&text).unwrap();
        assert_eq!(report.dropped_empty, 0);
        assert!(ds.is_complete(&ds.collections[0]));
        let stats = ds.stats();
        assert_eq!((stats.collections, stats.complete, stats.rgb_partials), (1, 1, 0));
        assert_eq!(ds, minimal());
    }

    #[test]
    fn empty_collections_are_dropped() {
        let mut ds = minimal();
        ds.collections.push(Collection {
            id: 7,
            detections: BTreeMap::new(),
            raw: BTreeMap::new(),
        });
        let text = ds.to_json_string().replace("\"detections\": {}", "\"detections\": {\"rgb_1\": null}");
        let (ds, report) = Dataset::from_json_str(&text).unwrap();
        assert_eq!(report.dropped_empty, 1);
        assert_eq!(ds.collections.len(), 1);
    }

    #[test]
    fn schema_errors_carry_field_paths() {
        let text = minimal().to_json_string().replace("\"rgb\"", "\"thermal\"");
        match Dataset::from_json_str(&text) {
            Err(DatasetError::Schema { path, message }) => {
                assert!(path.starts_with("sensors[0]"), "{path}");
                assert!(message.contains("thermal"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = minimal().to_json_string().replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(Dataset::from_json_str(&text), Err(DatasetError::Version(2))));
    }

    #[test]
    fn cycle_in_tree_is_rejected() {
        let text = minimal().to_json_string().replace(
            "\"edges\": [",
            "\"edges\": [{\"parent\": \"a\", \"child\": \"b\", \"kind\": \"static\", \"transform\": {\"rotation\": [[1,0,0],[0,1,0],[0,0,1]], \"translation\": [0,0,0]}}, {\"parent\": \"b\", \"child\": \"a\", \"kind\": \"static\", \"transform\": {\"rotation\": [[1,0,0],[0,1,0],[0,0,1]], \"translation\": [0,0,0]}},",
        );
        match Dataset::from_json_str(&text) {
            Err(DatasetError::Schema { path, .. }) => assert_eq!(path, "tree"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn off_chain_or_static_calibrated_edge_is_rejected() {
        let mut ds = minimal();
        ds.tree
            .add_edge(Edge::new("world", "other", EdgeKind::Optimized, RigidTransform::identity()))
            .unwrap();
        ds.sensors[0].calibrated_edge.child = "other".into();
        let err = Dataset::from_json_str(&ds.to_json_string()).unwrap_err();
        assert!(err.to_string().contains("not on the chain"), "{err}");

        let mut ds = minimal();
        ds.tree.add_edge(Edge::new("cam", "optical", EdgeKind::Optimized, RigidTransform::identity())).unwrap();
        ds.sensors[0].data_frame = "optical".into();
        let err = Dataset::from_json_str(&ds.to_json_string()).unwrap_err();
        assert!(err.to_string().contains("exactly one optimized"), "{err}");
    }

    #[test]
    fn rgb_label_rules() {
        // 9 corners -> threshold 3
        let mut ds = minimal();
        if let Detection::Rgb(d) = ds.collections[0].detections.get_mut("rgb_1").unwrap() {
            d.corners.truncate(2);
            d.partial = true;
        }
        assert!(Dataset::from_json_str(&ds.to_json_string()).unwrap_err().to_string().contains("threshold"));
        if let Detection::Rgb(d) = ds.collections[0].detections.get_mut("rgb_1").unwrap() {
            d.corners.push(Corner::from((1, 0.0, 0.0)));
        }
        assert!(Dataset::from_json_str(&ds.to_json_string()).unwrap_err().to_string().contains("duplicated"));
        if let Detection::Rgb(d) = ds.collections[0].detections.get_mut("rgb_1").unwrap() {
            d.corners[2].id = 9;
        }
        assert!(Dataset::from_json_str(&ds.to_json_string()).is_err());
        if let Detection::Rgb(d) = ds.collections[0].detections.get_mut("rgb_1").unwrap() {
            d.corners[2].id = 5;
        }
        assert!(Dataset::from_json_str(&ds.to_json_string()).is_ok());
    }

    #[test]
    fn sidecar_paths_must_stay_local() {
        let mut ds = minimal();
        ds.collections[0].raw.insert("rgb_1".into(), "../secret".into());
        assert!(Dataset::from_json_str(&ds.to_json_string()).is_err());
        ds.collections[0].raw.insert("rgb_1".into(), "/etc/passwd".into());
        assert!(Dataset::from_json_str(&ds.to_json_string()).is_err());
        ds.collections[0].raw.insert("rgb_1".into(), "raw/c0_rgb_1.png".into());
        assert!(Dataset::from_json_str(&ds.to_json_string()).is_ok());
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        save_dataset(&minimal(), &p).unwrap();
        let (mut back, _) = load_dataset(&p).unwrap();
        assert_eq!(back.base_dir.as_deref(), Some(dir.path()));
        back.base_dir = None;
        assert_eq!(back, minimal());
    }
}
