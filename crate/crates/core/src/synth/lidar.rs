//! Ring LiDAR model and board raycasting.

use std::f64::consts::{PI, TAU};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::RigidTransform;
use crate::pattern::BoardRect;
use crate::sidecar::PointCloud;

fn default_max_range() -> f64 {
    60.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarModel {
    pub rings: u32,
    /// Lowest and highest ring elevation (radians), rings evenly spaced.
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub azimuth_step: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
}

impl Default for LidarModel {
    /// 16 rings over ±15°, 0.2° azimuth resolution.
    fn default() -> Self {
        LidarModel {
            rings: 16,
            elevation_min: (-15.0f64).to_radians(),
            elevation_max: 15.0f64.to_radians(),
            azimuth_step: 0.2f64.to_radians(),
            max_range: default_max_range(),
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.rings < 4 {
            return Err(format!("lidar needs at least 4 rings, got {}", self.rings));
        }
        if !(self.azimuth_step > 0.0 && self.azimuth_step < PI) {
            return Err(format!("azimuth_step must be in (0, π), got {}", self.azimuth_step));
        }
        let lim = PI / 2.0;
        if !(self.elevation_min > -lim && self.elevation_max < lim && self.elevation_min < self.elevation_max) {
            return Err("elevations must satisfy -π/2 < min < max < π/2".into());
        }
        if !(self.max_range > 0.0) {
            return Err("max_range must be positive".into());
        }
        Ok(())
    }

    pub fn azimuth_count(&self) -> i64 {
        (TAU / self.azimuth_step).round().max(1.0) as i64
    }

    pub fn ring_elevation(&self, ring: u32) -> f64 {
        let span = self.elevation_max - self.elevation_min;
        self.elevation_min + span * ring as f64 / (self.rings - 1) as f64
    }

    /// Grid azimuth of column `k` (taken modulo the column count), in `[-π, π)`.
    pub fn azimuth(&self, k: i64) -> f64 {
        let n = self.azimuth_count();
        -PI + k.rem_euclid(n) as f64 * (TAU / n as f64)
    }
}

pub fn ray_direction(elevation: f64, azimuth: f64) -> Vector3<f64> {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vector3::new(ce * ca, ce * sa, se)
}

/// Intersection of a ray from the sensor origin with the board.
/// `board` is the pose of the pattern in the sensor frame.
pub(crate) fn hit_board(board: &RigidTransform, rect: &BoardRect, dir: &Vector3<f64>, max_range: f64) -> Option<f64> {
    let n = board.rotation.column(2).into_owned();
    let denom = n.dot(dir);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = n.dot(&board.translation) / denom;
    if !(t > 0.0 && t <= max_range) {
        return None;
    }
    let local = board.rotation.transpose() * (dir * t - board.translation);
    rect.contains(&Vector2::new(local.x, local.y)).then_some(t)
}

/// Board returns on the ring × azimuth grid, in the sensor frame.
///
/// `pattern_pose` and `sensor_pose` are both expressed in the same (world)
/// frame. Rays parallel to the board, behind the sensor or beyond
/// `max_range` produce no return.
pub fn raycast_board(
    pattern_pose: &RigidTransform,
    sensor_pose: &RigidTransform,
    rect: &BoardRect,
    model: &LidarModel,
) -> PointCloud {
    let board = sensor_pose.inverse().compose(pattern_pose);
    let mut cloud = PointCloud::default();
    for hit in grid_hits(&board, rect, model).into_iter().flatten() {
        cloud.push(hit.point, hit.ring as u16);
    }
    cloud
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GridHit {
    pub ring: u32,
    pub column: i64,
    pub point: Vector3<f64>,
}

/// Azimuth columns worth testing: the span of the board corners plus a
/// guard band, or the full circle when the board surrounds the sensor.
/// Returns `(first, last, wraps)`.
fn column_span(board: &RigidTransform, rect: &BoardRect, model: &LidarModel) -> (i64, i64, bool) {
    let n = model.azimuth_count();
    let full = (0, n - 1, false);
    let corners: Vec<Vector2<f64>> = rect
        .corners()
        .iter()
        .map(|c| board.transform_point(&Vector3::new(c.x, c.y, 0.0)).xy())
        .collect();
    // origin inside (or on) the projected quad: every azimuth may hit
    let crosses: Vec<f64> = (0..4)
        .map(|k| {
            let a = corners[k];
            (corners[(k + 1) % 4] - a).perp(&(-a))
        })
        .collect();
    let eps = 1e-12;
    if crosses.iter().all(|&c| c >= -eps) || crosses.iter().all(|&c| c <= eps) {
        return full;
    }
    let center = corners.iter().sum::<Vector2<f64>>() / 4.0;
    let a0 = center.y.atan2(center.x);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in &corners {
        let d = (c.y.atan2(c.x) - a0 + PI).rem_euclid(TAU) - PI;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if hi - lo >= PI {
        return full;
    }
    let step = TAU / n as f64;
    let first = ((a0 + lo + PI) / step).floor() as i64 - 2;
    let last = ((a0 + hi + PI) / step).ceil() as i64 + 2;
    if last - first + 1 >= n {
        return full;
    }
    let wraps = first < 0 || last >= n;
    (first, last, wraps)
}

/// Grid hits grouped per ring, each ring sorted by column.
pub(crate) fn grid_hits(board: &RigidTransform, rect: &BoardRect, model: &LidarModel) -> Vec<Vec<GridHit>> {
    let (first, last, _) = column_span(board, rect, model);
    (0..model.rings)
        .map(|ring| {
            let el = model.ring_elevation(ring);
            (first..=last)
                .filter_map(|column| {
                    let dir = ray_direction(el, model.azimuth(column));
                    hit_board(board, rect, &dir, model.max_range).map(|range| GridHit {
                        ring,
                        column,
                        point: dir * range,
                    })
                })
                .collect()
        })
        .collect()
}

/// True when the culled column span crosses the ±π azimuth seam, where
/// per-ring extreme azimuths no longer coincide with board edges.
pub(crate) fn crosses_seam(board: &RigidTransform, rect: &BoardRect, model: &LidarModel) -> bool {
    let (first, last, wraps) = column_span(board, rect, model);
    wraps || (first == 0 && last == model.azimuth_count() - 1)
}

/// Exact board-edge crossing on a ring between a missing and a hitting
/// azimuth, approached from the hitting side.
pub(crate) fn edge_return(
    board: &RigidTransform,
    rect: &BoardRect,
    model: &LidarModel,
    elevation: f64,
    miss_az: f64,
    hit_az: f64,
) -> Option<(f64, Vector3<f64>)> {
    let hits = |az: f64| hit_board(board, rect, &ray_direction(elevation, az), model.max_range);
    if hits(miss_az).is_some() {
        return None;
    }
    let (mut miss, mut hit) = (miss_az, hit_az);
    let mut best = (hit, hits(hit)?);
    for _ in 0..80 {
        let mid = 0.5 * (miss + hit);
        if mid == miss || mid == hit {
            break;
        }
        match hits(mid) {
            Some(t) => {
                hit = mid;
                best = (mid, t);
            }
            None => miss = mid,
        }
    }
    let (az, t) = best;
    Some((az, ray_direction(elevation, az) * t))
}
