//! Depth-camera rendering of the board.

use nalgebra::{Vector2, Vector3};

use crate::camera::CameraIntrinsics;
use crate::geometry::RigidTransform;
use crate::pattern::BoardRect;
use crate::sidecar::DepthImage;

pub(crate) const MIN_DEPTH: f64 = 0.2;
pub(crate) const MAX_DEPTH: f64 = 10.0;

/// Board depth `Z` seen through continuous pixel `(u, v)`, or `None` if the
/// ray misses the board. `board` is the pattern pose in the camera frame.
pub(crate) fn board_depth(intr: &CameraIntrinsics, board: &RigidTransform, rect: &BoardRect, u: f64, v: f64) -> Option<f64> {
    let ray = Vector3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    let n = board.rotation.column(2).into_owned();
    let denom = n.dot(&ray);
    if denom.abs() < 1e-12 {
        return None;
    }
    let z = n.dot(&board.translation) / denom;
    if !(z > 0.0) {
        return None;
    }
    let local = board.rotation.transpose() * (ray * z - board.translation);
    rect.contains(&Vector2::new(local.x, local.y)).then_some(z)
}

/// Noise-free board raster plus sub-pixel boundary samples.
pub(crate) struct DepthRender {
    pub image: DepthImage,
    /// Exact depth of every board pixel, row-major order.
    pub pixels: Vec<(u32, u32, f64)>,
    /// `(u, v, Z)` on the board edge between a board pixel and an in-image
    /// neighbour that misses the board.
    pub boundary: Vec<(f64, f64, f64)>,
}

fn pixel_window(intr: &CameraIntrinsics, board: &RigidTransform, rect: &BoardRect) -> (u32, u32, u32, u32) {
    let full = (0, 0, intr.width - 1, intr.height - 1);
    let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in rect.corners() {
        let p = board.transform_point(&Vector3::new(c.x, c.y, 0.0));
        if p.z <= 1e-6 {
            return full;
        }
        let uv = Vector2::new(intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy);
        lo = lo.inf(&uv);
        hi = hi.sup(&uv);
    }
    let clamp = |v: f64, max: u32| v.clamp(0.0, max as f64) as u32;
    (
        clamp(lo.x.floor() - 2.0, intr.width - 1),
        clamp(lo.y.floor() - 2.0, intr.height - 1),
        clamp(hi.x.ceil() + 2.0, intr.width - 1),
        clamp(hi.y.ceil() + 2.0, intr.height - 1),
    )
}

/// Renders the board into a depth raster (pixel centers at integer
/// coordinates, NaN off the board). Depth is taken as undistorted.
/// With `exact_boundary == false` boundary entries are the board pixel
/// centers themselves (one per qualifying neighbour), which is enough to
/// count them.
pub(crate) fn render_depth(intr: &CameraIntrinsics, board: &RigidTransform, rect: &BoardRect, exact_boundary: bool) -> DepthRender {
    let mut image = DepthImage::new_invalid(intr.width, intr.height);
    let mut pixels = Vec::new();
    let (x0, y0, x1, y1) = pixel_window(intr, board, rect);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if let Some(z) = board_depth(intr, board, rect, x as f64, y as f64) {
                if (MIN_DEPTH..=MAX_DEPTH).contains(&z) {
                    image.set(x, y, z as f32);
                    pixels.push((x, y, z));
                }
            }
        }
    }
    let mut boundary = Vec::new();
    for &(x, y, _) in &pixels {
        let neighbours = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)];
        for (dx, dy) in neighbours {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= intr.width as i64 || ny >= intr.height as i64 {
                continue;
            }
            if image.is_valid(nx as u32, ny as u32) {
                continue;
            }
            let at = |s: f64| (x as f64 + dx as f64 * s, y as f64 + dy as f64 * s);
            let (nu, nv) = at(1.0);
            // neighbour is off only because of the depth range, not the board edge
            if board_depth(intr, board, rect, nu, nv).is_some() {
                continue;
            }
            if !exact_boundary {
                boundary.push((x as f64, y as f64, f64::NAN));
                continue;
            }
            let (mut hit, mut miss) = (0.0f64, 1.0f64);
            for _ in 0..80 {
                let mid = 0.5 * (hit + miss);
                if mid == hit || mid == miss {
                    break;
                }
                let (u, v) = at(mid);
                if board_depth(intr, board, rect, u, v).is_some() {
                    hit = mid;
                } else {
                    miss = mid;
                }
            }
            let (u, v) = at(hit);
            if let Some(z) = board_depth(intr, board, rect, u, v) {
                boundary.push((u, v, z));
            }
        }
    }
    DepthRender {
        image,
        pixels,
        boundary,
    }
}
