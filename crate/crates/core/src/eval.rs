//! Pairwise calibration metrics on a held-out dataset.
//!
//! Sensor poses come from a calibration result; board poses of the test
//! collections are re-estimated with those sensors frozen. Five tables are
//! produced:
//!
//! | table        | metric                                                    | unit |
//! |--------------|-----------------------------------------------------------|------|
//! | RGB-RGB      | source corners lifted onto the board, reprojected in target | px   |
//! | LiDAR-LiDAR  | target point → nearest transformed source point            | mm   |
//! | LiDAR-RGB    | source boundary points → target board outline              | px   |
//! | LiDAR-depth  | same, into the depth image                                 | px   |
//! | depth-RGB    | depth boundary labels → RGB board outline                   | px   |
//!
//! Every value is a root mean square over all samples of all co-detecting
//! collections.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{calibrate, CalibError, CalibrationOptions, CalibrationResult, Status};
use crate::dataset::{Dataset, Detection, Modality};
use crate::geometry::RigidTransform;
use crate::io::Provenance;
use crate::residuals::depth_points;
use crate::tree::{TransformTree, TreeError};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error("tree: {0}")]
    Tree(#[from] TreeError),
    #[error("report document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    RgbRgb,
    LidarLidar,
    LidarRgb,
    LidarDepth,
    DepthRgb,
}

impl TableKind {
    pub const ALL: [TableKind; 5] = [
        TableKind::RgbRgb,
        TableKind::LidarLidar,
        TableKind::LidarRgb,
        TableKind::LidarDepth,
        TableKind::DepthRgb,
    ];

    pub fn title(self) -> &'static str {
        match self {
            TableKind::RgbRgb => "RGB-RGB",
            TableKind::LidarLidar => "LiDAR-LiDAR",
            TableKind::LidarRgb => "LiDAR-RGB",
            TableKind::LidarDepth => "LiDAR-depth",
            TableKind::DepthRgb => "depth-RGB",
        }
    }

    pub fn unit(self) -> Unit {
        match self {
            TableKind::LidarLidar => Unit::Millimeters,
            _ => Unit::Pixels,
        }
    }

    fn modalities(self) -> (Modality, Modality) {
        match self {
            TableKind::RgbRgb => (Modality::Rgb, Modality::Rgb),
            TableKind::LidarLidar => (Modality::Lidar3d, Modality::Lidar3d),
            TableKind::LidarRgb => (Modality::Lidar3d, Modality::Rgb),
            TableKind::LidarDepth => (Modality::Lidar3d, Modality::Depth),
            TableKind::DepthRgb => (Modality::Depth, Modality::Rgb),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Pixels,
    Millimeters,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Pixels => "pixels",
            Unit::Millimeters => "millimeters",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRow {
    pub source: String,
    pub target: String,
    /// `None` when the pair could not be evaluated; see `note`.
    pub rms: Option<f64>,
    pub samples: usize,
    /// Projected points dropped because they were behind the target camera.
    #[serde(default)]
    pub behind_camera: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairTable {
    pub kind: TableKind,
    pub unit: Unit,
    pub rows: Vec<PairRow>,
    /// Mean of the evaluable row values.
    pub average: Option<f64>,
}

impl PairTable {
    fn new(kind: TableKind, rows: Vec<PairRow>) -> Self {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.rms).collect();
        let average = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        PairTable {
            kind,
            unit: kind.unit(),
            rows,
            average,
        }
    }
}

/// Outcome of re-estimating the test board poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Refinement {
    pub status: Status,
    pub iterations: usize,
    pub final_cost: f64,
    pub skipped_collections: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairwiseReport {
    pub version: u32,
    pub provenance: Provenance,
    pub refinement: Refinement,
    pub tables: Vec<PairTable>,
}

impl PairwiseReport {
    pub fn table(&self, kind: TableKind) -> Option<&PairTable> {
        self.tables.iter().find(|t| t.kind == kind)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<PairwiseReport, EvalError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let r: PairwiseReport = serde_path_to_error::deserialize(de)
            .map_err(|e| EvalError::Document(format!("{}: {}", e.path(), e.inner())))?;
        if r.version != REPORT_VERSION {
            return Err(EvalError::Document(format!("unsupported report version {}", r.version)));
        }
        Ok(r)
    }

    /// Plain-text tables; values are printed with six decimals.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            let _ = writeln!(out, "{} ({})", t.kind.title(), t.unit);
            let _ = writeln!(out, "  {:<16} {:<16} {:>14} {:>9}", "source", "target", "rms", "samples");
            let mut notes = Vec::new();
            for r in &t.rows {
                let value = match r.rms {
                    Some(v) => format!("{v:.6}"),
                    None => {
                        notes.push(r);
                        format!("n/a [{}]", notes.len())
                    }
                };
                let _ = writeln!(out, "  {:<16} {:<16} {:>14} {:>9}", r.source, r.target, value, r.samples);
            }
            let avg = t.average.map_or("n/a".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(out, "  {:<16} {:<16} {:>14}", "average", "", avg);
            for (i, r) in notes.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "  [{}] {} -> {}: {}",
                    i + 1,
                    r.source,
                    r.target,
                    r.note.as_deref().unwrap_or("not evaluable")
                );
            }
            out.push('\n');
        }
        out
    }
}

/// Reads the values back out of [`PairwiseReport::render_text`]:
/// `(table title, source, target, value)`; the average row has source
/// `average` and an empty target.
pub fn parse_text_tables(text: &str) -> Vec<(String, String, String, Option<f64>)> {
    let mut out = Vec::new();
    let mut title = String::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        if !line.starts_with(' ') {
            title = line.split(" (").next().unwrap_or_default().to_string();
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["source", ..] => {}
            [first, ..] if first.starts_with('[') => {}
            ["average", v] => out.push((title.clone(), "average".into(), String::new(), v.parse().ok())),
            [s, t, v, _samples] => out.push((title.clone(), s.to_string(), t.to_string(), v.parse().ok())),
            [s, t, "n/a", _note, _samples] => out.push((title.clone(), s.to_string(), t.to_string(), None)),
            _ => {}
        }
    }
    out
}

fn rms(sum_sq: f64, n: usize) -> f64 {
    (sum_sq / n as f64).sqrt()
}

/// Distance from `p` to the closed polyline through `vertices`.
pub fn distance_to_closed_polyline(p: &Vector2<f64>, vertices: &[Vector2<f64>]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            let ab = b - a;
            let len2 = ab.norm_squared();
            let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            (p - (a + ab * t)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

struct PairContext<'a> {
    dataset: &'a Dataset,
    tree: &'a TransformTree,
}

impl PairContext<'_> {
    fn pose(&self, sensor: &str) -> Result<RigidTransform, TreeError> {
        let s = self.dataset.sensor(sensor).expect("known sensor");
        self.tree.chain_to(&s.data_frame)
    }

    /// (sum of squares, samples, behind camera, co-detecting collections,
    /// collections lacking an outline)
    fn accumulate(&self, kind: TableKind, src: &str, dst: &str) -> Result<(f64, usize, usize, usize, usize), TreeError> {
        let (t_rs, t_rd) = (self.pose(src)?, self.pose(dst)?);
        let t_ds = t_rd.inverse().compose(&t_rs);
        let src_spec = self.dataset.sensor(src).expect("known sensor");
        let dst_spec = self.dataset.sensor(dst).expect("known sensor");
        let (mut sum, mut n, mut behind, mut co, mut no_outline) = (0.0, 0usize, 0usize, 0usize, 0usize);
        for c in &self.dataset.collections {
            let (Some(ds), Some(dd)) = (c.detections.get(src), c.detections.get(dst)) else { continue };
            co += 1;
            match kind {
                TableKind::RgbRgb => {
                    let (Detection::Rgb(a), Detection::Rgb(b)) = (ds, dd) else { continue };
                    let Ok(pattern) = self.tree.pattern_pose(c.id) else { continue };
                    let ki = src_spec.intrinsics.as_ref().expect("rgb intrinsics");
                    let kj = dst_spec.intrinsics.as_ref().expect("rgb intrinsics");
                    // board plane in the source frame
                    let t_sp = t_rs.inverse().compose(&pattern);
                    let normal = t_sp.rotation.column(2).into_owned();
                    let offset = normal.dot(&t_sp.translation);
                    let dst_px: BTreeMap<u32, Vector2<f64>> = b.corners.iter().map(|k| (k.id, k.pixel)).collect();
                    for k in &a.corners {
                        let Some(target) = dst_px.get(&k.id) else { continue };
                        let ray = ki.unproject(&k.pixel);
                        let denom = normal.dot(&ray);
                        if denom.abs() < 1e-12 {
                            continue;
                        }
                        let lifted = ray * (offset / denom);
                        match kj.project(&t_ds.transform_point(&lifted)) {
                            Ok(uv) => {
                                sum += (uv - target).norm_squared();
                                n += 1;
                            }
                            Err(_) => behind += 1,
                        }
                    }
                }
                TableKind::LidarLidar => {
                    let (Detection::Lidar3d(a), Detection::Lidar3d(b)) = (ds, dd) else { continue };
                    let moved: Vec<Vector3<f64>> = a.inside.iter().map(|p| t_ds.transform_point(p)).collect();
                    if moved.is_empty() {
                        continue;
                    }
                    for q in &b.inside {
                        let d2 = moved.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
                        sum += d2 * 1e6;
                        n += 1;
                    }
                }
                _ => {
                    let boundary = match ds {
                        Detection::Lidar3d(a) => a.boundary.clone(),
                        Detection::Depth(a) => depth_points(&a.boundary, src_spec.intrinsics.as_ref().expect("depth intrinsics")),
                        Detection::Rgb(_) => continue,
                    };
                    let Some(limits) = dd.limits() else {
                        no_outline += 1;
                        continue;
                    };
                    let outline: Vec<Vector2<f64>> = limits.iter().map(|v| Vector2::new(v[0], v[1])).collect();
                    if outline.len() < 2 {
                        no_outline += 1;
                        continue;
                    }
                    let kj = dst_spec.intrinsics.as_ref().expect("image intrinsics");
                    for p in &boundary {
                        match kj.project(&t_ds.transform_point(p)) {
                            Ok(uv) => {
                                let d = distance_to_closed_polyline(&uv, &outline);
                                sum += d * d;
                                n += 1;
                            }
                            Err(_) => behind += 1,
                        }
                    }
                }
            }
        }
        Ok((sum, n, behind, co, no_outline))
    }
}

/// All five tables for a dataset whose tree holds sensor poses and board
/// poses for every collection to be used.
pub fn pairwise_tables(dataset: &Dataset, tree: &TransformTree) -> Result<Vec<PairTable>, EvalError> {
    let ctx = PairContext { dataset, tree };
    let ids = |m: Modality| -> Vec<&str> {
        dataset
            .sensors
            .iter()
            .filter(|s| s.modality == m)
            .map(|s| s.id.as_str())
            .collect()
    };
    let mut jobs: Vec<(TableKind, &str, &str)> = Vec::new();
    for kind in TableKind::ALL {
        let (ms, md) = kind.modalities();
        let (a, b) = (ids(ms), ids(md));
        for (i, s) in a.iter().enumerate() {
            for (j, d) in b.iter().enumerate() {
                // same-modality tables list each unordered pair once
                if ms == md && j <= i {
                    continue;
                }
                jobs.push((kind, s, d));
            }
        }
    }
    let rows: Vec<(TableKind, PairRow)> = jobs
        .par_iter()
        .map(|&(kind, s, d)| {
            let (sum, n, behind, co, no_outline) = ctx.accumulate(kind, s, d)?;
            let note = if co == 0 {
                Some("no collection where both sensors detect the pattern".to_string())
            } else if n == 0 && no_outline > 0 {
                Some("target detections carry no board outline".to_string())
            } else if n == 0 {
                Some("no usable samples".to_string())
            } else {
                None
            };
            Ok((
                kind,
                PairRow {
                    source: s.to_string(),
                    target: d.to_string(),
                    rms: (n > 0).then(|| rms(sum, n)),
                    samples: n,
                    behind_camera: behind,
                    note,
                },
            ))
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(TableKind::ALL
        .iter()
        .map(|&k| PairTable::new(k, rows.iter().filter(|(rk, _)| *rk == k).map(|(_, r)| r.clone()).collect()))
        .collect())
}

/// Evaluates a calibration result on a held-out dataset: board poses of the
/// test collections are refined with all sensors frozen at the result's
/// poses, then every table is computed.
pub fn evaluate(test: &Dataset, result: &CalibrationResult) -> Result<PairwiseReport, EvalError> {
    let mut opts: CalibrationOptions = serde_json::from_value(result.provenance.options.clone()).unwrap_or_default();
    opts.freeze_sensors = true;
    let refined = calibrate(test, &result.sensor_tree(), &opts)?;
    let tables = pairwise_tables(test, &refined.tree)?;
    Ok(PairwiseReport {
        version: REPORT_VERSION,
        provenance: Provenance::new(&opts, test.meta.get("generator").and_then(|g| g.get("seed")).and_then(|s| s.as_u64())),
        refinement: Refinement {
            status: refined.status,
            iterations: refined.iterations,
            final_cost: refined.final_cost,
            skipped_collections: refined.skipped_collections,
        },
        tables,
    })
}
