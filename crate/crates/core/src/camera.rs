//! Pinhole camera with 5-term Brown–Conrady distortion, plus the depth
//! back-projection used for depth-camera labels.
//!
//! Depth back-projection ignores distortion: depth rasters are assumed to be
//! rectified before labeling.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ProjectionError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid depth value {0}")]
    InvalidDepth(f64),
    #[error("pixel ({0}, {1}) is outside the image")]
    OutOfBounds(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// `k1, k2, p1, p2, k3`
    #[serde(default)]
    pub distortion: [f64; 5],
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            distortion: [0.0; 5],
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.distortion.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err("non-finite intrinsic value".into());
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            ));
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        self.distortion.iter().any(|&k| k != 0.0)
    }

    pub fn contains(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0 && uv.y >= 0.0 && uv.x < self.width as f64 && uv.y < self.height as f64
    }

    /// Applies the distortion polynomial to normalized coordinates.
    pub fn distort(&self, xn: &Vector2<f64>) -> Vector2<f64> {
        let [k1, k2, p1, p2, k3] = self.distortion;
        let (x, y) = (xn.x, xn.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        Vector2::new(
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    /// Fixed-point inversion of [`distort`](Self::distort).
    pub fn undistort(&self, xd: &Vector2<f64>) -> Vector2<f64> {
        if !self.has_distortion() {
            return *xd;
        }
        let mut x = *xd;
        for _ in 0..50 {
            let err = self.distort(&x) - xd;
            x -= err;
            if err.amax() < 1e-15 {
                break;
            }
        }
        x
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, ProjectionError> {
        if !(p.z > 0.0) {
            return Err(ProjectionError::BehindCamera(p.z));
        }
        let xn = Vector2::new(p.x / p.z, p.y / p.z);
        let xd = self.distort(&xn);
        Ok(Vector2::new(self.fx * xd.x + self.cx, self.fy * xd.y + self.cy))
    }

    /// Viewing ray (z = 1) through a pixel, distortion removed.
    pub fn unproject(&self, uv: &Vector2<f64>) -> Vector3<f64> {
        let xd = Vector2::new((uv.x - self.cx) / self.fx, (uv.y - self.cy) / self.fy);
        let xn = self.undistort(&xd);
        Vector3::new(xn.x, xn.y, 1.0)
    }

    /// `X = (x − cx)/fx · Z`, `Y = (y − cy)/fy · Z`, `Z = depth`.
    pub fn backproject_depth(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>, ProjectionError> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(ProjectionError::InvalidDepth(depth));
        }
        if !self.contains(pixel) {
            return Err(ProjectionError::OutOfBounds(pixel.x, pixel.y));
        }
        Ok(self.backproject_unchecked(pixel.x, pixel.y, depth))
    }

    #[inline]
    pub fn backproject_unchecked(&self, x: f64, y: f64, depth: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx * depth, (y - self.cy) / self.fy * depth, depth)
    }
}
