//! Sensor-to-pattern error terms.
//!
//! Every term compares a detection with the board placed at its current
//! pose estimate, expressed in the sensor frame (`t_sp` maps pattern
//! coordinates into the sensor frame):
//!
//! * RGB reprojection: pixel distance between a detected corner and the
//!   projection of the matching pattern corner.
//! * Range orthogonal: signed distance of an inside point to the board plane
//!   (`z` in pattern coordinates).
//! * Range longitudinal: in-plane (`xy`) distance of a boundary point to the
//!   board perimeter.
//!
//! Depth labels are back-projected to 3D first and then treated like LiDAR
//! points. Values are unsquared; the solver squares them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::dataset::{Corner, Dataset, DepthLabel, Detection};
use crate::geometry::RigidTransform;
use crate::pattern::{BoardRect, PatternSpec};
use crate::tree::{TransformTree, TreeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    RgbReprojection,
    RangeOrthogonal,
    RangeLongitudinal,
}

impl ResidualKind {
    pub fn is_range(self) -> bool {
        !matches!(self, ResidualKind::RgbReprojection)
    }
}

/// Per-modality scale applied to residual entries before squaring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    /// Per pixel.
    pub rgb: f64,
    /// Per meter.
    pub range: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { rgb: 1.0, range: 100.0 }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [("rgb", self.rgb), ("range", self.range)] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(format!("weight `{name}` must be positive and finite, got {w}"));
            }
        }
        Ok(())
    }

    pub fn of(&self, kind: ResidualKind) -> f64 {
        if kind.is_range() {
            self.range
        } else {
            self.rgb
        }
    }
}

impl FromStr for Weights {
    type Err = String;

    /// Parses `rgb=1.0,range=100`; omitted keys keep their defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut w = Weights::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| format!("weight `{}` is not a number: `{value}`", key.trim()))?;
            match key.trim() {
                "rgb" => w.rgb = v,
                "range" => w.range = v,
                other => return Err(format!("unknown weight `{other}` (expected rgb or range)")),
            }
        }
        w.validate()?;
        Ok(w)
    }
}

impl fmt::Display for Weights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rgb={},range={}", self.rgb, self.range)
    }
}

/// How the longitudinal distance to the perimeter is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongitudinalMode {
    /// Exact distance to the rectangle outline.
    #[default]
    Perimeter,
    /// Minimum over the pattern's sampled perimeter points.
    NearestSample,
}

/// Residual values of one (collection, sensor, kind) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub collection: u32,
    pub sensor: String,
    pub kind: ResidualKind,
    pub values: Vec<f64>,
}

/// Pixel offset `detected − projected` of one corner, or `None` when the
/// pattern corner is behind the camera.
#[inline]
pub fn corner_offset(
    corner: &Vector3<f64>,
    pixel: &Vector2<f64>,
    t_sp: &RigidTransform,
    intr: &CameraIntrinsics,
) -> Option<Vector2<f64>> {
    let p = t_sp.transform_point(corner);
    intr.project(&p).ok().map(|uv| pixel - uv)
}

/// RGB reprojection error per detected corner (pixels), and the number of
/// corners skipped because they fell behind the camera.
pub fn rgb_residual(
    corners: &[Corner],
    t_sp: &RigidTransform,
    intr: &CameraIntrinsics,
    pattern: &PatternSpec,
) -> (Vec<f64>, usize) {
    let mut behind = 0;
    let values = corners
        .iter()
        .filter_map(|c| {
            let d = corner_offset(&pattern.corner(c.id), &c.pixel, t_sp, intr);
            behind += usize::from(d.is_none());
            d.map(|d| d.norm())
        })
        .collect();
    (values, behind)
}

/// Signed distance (meters) of each sensor-frame point to the board plane.
pub fn range_orthogonal(points: &[Vector3<f64>], t_sp: &RigidTransform) -> Vec<f64> {
    let t_ps = t_sp.inverse();
    points.iter().map(|p| t_ps.transform_point(p).z).collect()
}

/// Signed in-plane distance to the board outline: negative inside, positive
/// outside for [`LongitudinalMode::Perimeter`]; the non-negative nearest
/// sample distance for [`LongitudinalMode::NearestSample`].
#[inline]
pub fn longitudinal_distance(xy: &Vector2<f64>, rect: &BoardRect, samples: &[Vector3<f64>], mode: LongitudinalMode) -> f64 {
    match mode {
        LongitudinalMode::Perimeter => rect.signed_distance(xy),
        LongitudinalMode::NearestSample => samples
            .iter()
            .map(|q| (q.xy() - xy).norm())
            .fold(f64::INFINITY, f64::min),
    }
}

/// Unsigned in-plane distance (meters) of each boundary point to the board
/// perimeter.
pub fn range_longitudinal(
    points: &[Vector3<f64>],
    t_sp: &RigidTransform,
    pattern: &PatternSpec,
    mode: LongitudinalMode,
) -> Vec<f64> {
    let t_ps = t_sp.inverse();
    let rect = pattern.rect();
    let samples = match mode {
        LongitudinalMode::Perimeter => Vec::new(),
        LongitudinalMode::NearestSample => pattern.boundary_samples(),
    };
    points
        .iter()
        .map(|p| longitudinal_distance(&t_ps.transform_point(p).xy(), &rect, &samples, mode).abs())
        .collect()
}

/// Depth labels lifted to the camera frame (`Z` along the optical axis).
pub fn depth_points(labels: &[DepthLabel], intr: &CameraIntrinsics) -> Vec<Vector3<f64>> {
    labels
        .iter()
        .map(|l| intr.backproject_unchecked(l.pixel.x, l.pixel.y, l.depth))
        .collect()
}

/// All residual blocks of a dataset for one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assembled {
    pub blocks: Vec<ResidualBlock>,
    /// RGB corners skipped because they were behind the camera.
    pub behind_camera: usize,
}

impl Assembled {
    /// Concatenated residual vector in block order.
    pub fn values(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.values.iter().copied()).collect()
    }

    /// `Σ (w·e)²` over all entries.
    pub fn cost(&self, weights: &Weights) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let w = weights.of(b.kind);
                b.values.iter().map(|v| (w * v) * (w * v)).sum::<f64>()
            })
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.values.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Evaluates every detection against the tree's sensor chains and pattern
/// poses. Blocks are ordered by collection id, sensor id, then kind
/// (orthogonal before longitudinal).
pub fn assemble(dataset: &Dataset, tree: &TransformTree, mode: LongitudinalMode) -> Result<Assembled, TreeError> {
    let mut blocks = Vec::new();
    let mut behind_camera = 0;
    for c in &dataset.collections {
        for (sid, det) in &c.detections {
            let Some(sensor) = dataset.sensor(sid) else { continue };
            let t_sp = tree.sensor_to_pattern(&sensor.data_frame, c.id)?;
            let block = |kind, values| ResidualBlock {
                collection: c.id,
                sensor: sid.clone(),
                kind,
                values,
            };
            let (inside, boundary) = match det {
                Detection::Rgb(d) => {
                    let intr = sensor.intrinsics.as_ref().expect("validated rgb intrinsics");
                    let (values, behind) = rgb_residual(&d.corners, &t_sp, intr, &dataset.pattern);
                    behind_camera += behind;
                    blocks.push(block(ResidualKind::RgbReprojection, values));
                    continue;
                }
                Detection::Lidar3d(d) => (d.inside.clone(), d.boundary.clone()),
                Detection::Depth(d) => {
                    let intr = sensor.intrinsics.as_ref().expect("validated depth intrinsics");
                    (depth_points(&d.inside, intr), depth_points(&d.boundary, intr))
                }
            };
            blocks.push(block(ResidualKind::RangeOrthogonal, range_orthogonal(&inside, &t_sp)));
            blocks.push(block(
                ResidualKind::RangeLongitudinal,
                range_longitudinal(&boundary, &t_sp, &dataset.pattern, mode),
            ));
        }
    }
    Ok(Assembled { blocks, behind_camera })
}
