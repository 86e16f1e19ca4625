//! Initial pattern poses from single-sensor detections.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, Rotation3, Vector2, Vector3};
use rayon::prelude::*;

use super::lm::{solve, LmOptions};
use super::problem::{Problem, ProblemOptions};
use super::{Anchor, CalibError};
use crate::camera::CameraIntrinsics;
use crate::dataset::{Collection, Corner, Dataset, Detection};
use crate::geometry::{exp_so3, RigidTransform};
use crate::pattern::PatternSpec;
use crate::plane::fit_plane;
use crate::residuals::{depth_points, Weights};
use crate::tree::TransformTree;

/// In-plane rotations tried for range-only starts (the board is symmetric
/// under a half turn, so these cover every orientation).
const RANGE_SPIN_STARTS: usize = 6;

fn hartley(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector2<f64>>() / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply(h: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Plane-to-image homography by normalized DLT. Needs four or more points,
/// no three of the first four collinear.
pub fn homography(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let (ts, td) = (hartley(src), hartley(dst));
    // at least 9 rows so the SVD always exposes the null vector
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let (s, d) = (apply(&ts, s), apply(&td, d));
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = vt.row(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let out = td.try_inverse()? * hn * ts;
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// `t_sp` from detected corners via the plane homography, before refinement.
pub fn homography_pose(corners: &[Corner], intr: &CameraIntrinsics, pattern: &PatternSpec) -> Option<RigidTransform> {
    let src: Vec<Vector2<f64>> = corners.iter().map(|c| pattern.corner(c.id).xy()).collect();
    let dst: Vec<Vector2<f64>> = corners.iter().map(|c| intr.unproject(&c.pixel).xy()).collect();
    let h = homography(&src, &dst)?;
    let (h1, h2, h3) = (h.column(0).into_owned(), h.column(1).into_owned(), h.column(2).into_owned());
    let mut s = 2.0 / (h1.norm() + h2.norm());
    if (s * h3).z < 0.0 {
        s = -s;
    }
    let (r1, r2, t) = (h1 * s, h2 * s, h3 * s);
    let m = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    let r = Rotation3::from_matrix_unchecked(r).into_inner();
    t.iter().all(|v| v.is_finite()).then(|| RigidTransform::new(r, t))
}

fn cross2(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull, counter-clockwise, by monotone chain.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross2(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Unit axis of the first side, center, extent along that axis, extent across.
pub type AreaRect = (Vector2<f64>, Vector2<f64>, f64, f64);

/// Minimum-area enclosing rectangle.
pub fn min_area_rect(points: &[Vector2<f64>]) -> Option<AreaRect> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, AreaRect)> = None;
    for i in 0..hull.len() {
        let e = hull[(i + 1) % hull.len()] - hull[i];
        if e.norm() == 0.0 {
            continue;
        }
        let u = e.normalize();
        let v = Vector2::new(-u.y, u.x);
        let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
        for p in &hull {
            let q = Vector2::new(p.dot(&u), p.dot(&v));
            lo = lo.inf(&q);
            hi = hi.sup(&q);
        }
        let ext = hi - lo;
        let area = ext.x * ext.y;
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let mid = (lo + hi) / 2.0;
            best = Some((area, (u, u * mid.x + v * mid.y, ext.x, ext.y)));
        }
    }
    best.map(|(_, r)| r)
}

/// `t_sp` from range labels in the sensor frame: plane fit for the normal
/// (facing the sensor), minimum-area rectangle of the labels for the
/// in-plane pose.
pub fn plane_rect_pose(inside: &[Vector3<f64>], boundary: &[Vector3<f64>], pattern: &PatternSpec) -> Option<RigidTransform> {
    let plane = fit_plane(inside)?.oriented_towards(&Vector3::zeros());
    let n = plane.normal;
    let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (seed - n * n.dot(&seed)).normalize();
    let e2 = n.cross(&e1);
    let origin = n * plane.offset;
    let local: Vec<Vector2<f64>> = inside
        .iter()
        .chain(boundary)
        .map(|p| Vector2::new((p - origin).dot(&e1), (p - origin).dot(&e2)))
        .collect();
    let (u, center, a, b) = min_area_rect(&local)?;
    let rect = pattern.rect();
    let axis2 = if (a >= b) == (rect.width() >= rect.height()) {
        u
    } else {
        Vector2::new(-u.y, u.x)
    };
    let x = e1 * axis2.x + e2 * axis2.y;
    let r = Matrix3::from_columns(&[x, n.cross(&x), n]);
    let c3 = origin + e1 * center.x + e2 * center.y;
    let rc = rect.center();
    Some(RigidTransform::new(r, c3 - r * Vector3::new(rc.x, rc.y, 0.0)))
}

fn single_detection(dataset: &Dataset, collection: &Collection, sensor: &str) -> Dataset {
    sub_collection(dataset, collection, |s| s == sensor)
}

fn sub_collection(dataset: &Dataset, collection: &Collection, keep: impl Fn(&str) -> bool) -> Dataset {
    let mut ds = Dataset::new(dataset.pattern, dataset.tree.clone(), dataset.sensors.clone());
    ds.collections.push(Collection {
        id: collection.id,
        detections: collection
            .detections
            .iter()
            .filter(|(s, _)| keep(s))
            .map(|(s, d)| (s.clone(), d.clone()))
            .collect(),
        raw: BTreeMap::new(),
    });
    ds
}

/// Refines the pattern pose of one collection against one detection with
/// the sensors frozen. Returns the pose and its cost.
fn refine(
    single: &Dataset,
    tree: &TransformTree,
    collection: u32,
    start: RigidTransform,
    weights: Weights,
) -> Result<(RigidTransform, f64), CalibError> {
    let mut t = tree.clone();
    t.set_pattern_pose(collection, start);
    let opts = ProblemOptions {
        anchor: Anchor::None,
        weights,
        freeze_sensors: true,
        ..ProblemOptions::default()
    };
    let problem = Problem::new(single, &t, &opts)?;
    let lm = LmOptions {
        max_iters: 100,
        ..LmOptions::default()
    };
    let rep = solve(&problem, &problem.initial_params(), &lm);
    let pose = problem.unpack(&rep.x).pattern_pose(collection).expect("packed pattern");
    Ok((pose, rep.final_cost))
}

/// Which detection seeds a collection: RGB (most corners) first, then
/// depth, then LiDAR (most points).
fn seed_order(c: &Collection) -> Vec<String> {
    let rank = |d: &Detection| {
        let (tier, size) = match d {
            Detection::Rgb(r) => (0, r.corners.len()),
            Detection::Depth(r) => (1, r.inside.len()),
            Detection::Lidar3d(r) => (2, r.inside.len()),
        };
        (tier, usize::MAX - size)
    };
    let mut ids: Vec<(&String, &Detection)> = c.detections.iter().collect();
    ids.sort_by_key(|(_, d)| rank(d));
    ids.into_iter().map(|(s, _)| s.clone()).collect()
}

fn init_collection(
    dataset: &Dataset,
    tree: &TransformTree,
    c: &Collection,
    weights: Weights,
) -> Result<Option<(String, RigidTransform)>, CalibError> {
    for sid in seed_order(c) {
        let sensor = dataset.sensor(&sid).expect("validated sensor");
        let t_rs = tree.chain_to(&sensor.data_frame).map_err(|e| CalibError::Tree(e.to_string()))?;
        let single = single_detection(dataset, c, &sid);
        match &c.detections[&sid] {
            Detection::Rgb(d) => {
                let intr = sensor.intrinsics.as_ref().expect("validated intrinsics");
                let Some(t_sp) = homography_pose(&d.corners, intr, &dataset.pattern) else { continue };
                let (pose, _) = refine(&single, tree, c.id, t_rs.compose(&t_sp), weights)?;
                return Ok(Some((sid, pose)));
            }
            det => {
                let (inside, boundary) = match det {
                    Detection::Lidar3d(d) => (d.inside.clone(), d.boundary.clone()),
                    Detection::Depth(d) => {
                        let intr = sensor.intrinsics.as_ref().expect("validated intrinsics");
                        (depth_points(&d.inside, intr), depth_points(&d.boundary, intr))
                    }
                    Detection::Rgb(_) => unreachable!(),
                };
                let Some(t_sp) = plane_rect_pose(&inside, &boundary, &dataset.pattern) else { continue };
                let about_center =
                    |k: usize| spin_about_center(&dataset.pattern, k as f64 * std::f64::consts::PI / RANGE_SPIN_STARTS as f64);
                let mut best: Option<(RigidTransform, f64)> = None;
                for k in 0..RANGE_SPIN_STARTS {
                    let start = t_rs.compose(&t_sp).compose(&about_center(k));
                    let (pose, cost) = refine(&single, tree, c.id, start, weights)?;
                    if best.as_ref().is_none_or(|(_, b)| cost < *b) {
                        best = Some((pose, cost));
                    }
                }
                return Ok(best.map(|(p, _)| (sid, p)));
            }
        }
    }
    Ok(None)
}

fn spin_about_center(pattern: &PatternSpec, angle: f64) -> RigidTransform {
    let rc = pattern.rect().center();
    let spin = exp_so3(&(Vector3::z() * angle));
    let c = Vector3::new(rc.x, rc.y, 0.0);
    RigidTransform::new(spin, c - spin * c)
}

/// Range data cannot tell a board from itself turned a quarter turn about
/// its center when only part of it is seen, so a range-only collection can
/// settle on the wrong in-plane orientation. For every collection without an
/// RGB detection, refines the quarter-turned pose against all of the
/// collection's detections with the sensors of `solved` frozen, and returns
/// the collections where that fits strictly better.
pub fn quarter_turn_fixes(dataset: &Dataset, solved: &TransformTree, weights: Weights) -> Result<Vec<(u32, RigidTransform)>, CalibError> {
    let found: Vec<Option<(u32, RigidTransform)>> = dataset
        .collections
        .par_iter()
        .filter(|c| !c.detections.values().any(|d| matches!(d, Detection::Rgb(_))))
        .map(|c| {
            let sub = sub_collection(dataset, c, |_| true);
            let current = solved.pattern_pose(c.id).map_err(|e| CalibError::Tree(e.to_string()))?;
            let (_, kept) = refine(&sub, solved, c.id, current, weights)?;
            let turned = current.compose(&spin_about_center(&dataset.pattern, std::f64::consts::FRAC_PI_2));
            let (pose, cost) = refine(&sub, solved, c.id, turned, weights)?;
            Ok((cost < kept).then_some((c.id, pose)))
        })
        .collect::<Result<_, CalibError>>()?;
    Ok(found.into_iter().flatten().collect())
}

/// Initial pattern poses produced by [`initialize_pattern_poses`].
#[derive(Debug, Clone, PartialEq)]
pub struct InitReport {
    pub poses: BTreeMap<u32, RigidTransform>,
    /// Sensor whose detection seeded each pose.
    pub sources: BTreeMap<u32, String>,
    /// Collections no detection could seed.
    pub skipped: Vec<u32>,
}

/// Estimates a root-frame pattern pose for every collection from a single
/// detection, using the sensor poses of `tree`.
pub fn initialize_pattern_poses(dataset: &Dataset, tree: &TransformTree, weights: Weights) -> Result<InitReport, CalibError> {
    let found: Vec<(u32, Option<(String, RigidTransform)>)> = dataset
        .collections
        .par_iter()
        .map(|c| init_collection(dataset, tree, c, weights).map(|r| (c.id, r)))
        .collect::<Result<_, _>>()?;
    let mut report = InitReport {
        poses: BTreeMap::new(),
        sources: BTreeMap::new(),
        skipped: Vec::new(),
    };
    for (id, r) in found {
        match r {
            Some((sid, pose)) => {
                report.poses.insert(id, pose);
                report.sources.insert(id, sid);
            }
            None => {
                log::warn!("collection {id}: no detection yields an initial pattern pose; excluded");
                report.skipped.push(id);
            }
        }
    }
    Ok(report)
}
