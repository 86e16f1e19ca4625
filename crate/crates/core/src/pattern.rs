//! Calibration board geometry in its own frame.
//!
//! Origin at the first inner corner, `x` along rows, `y` along columns and `z`
//! out of the board face. The physical board extends beyond the corner grid by
//! `border_width` / `border_height` on each side.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub const DEFAULT_BOUNDARY_STEP: f64 = 0.01;

fn default_step() -> f64 {
    DEFAULT_BOUNDARY_STEP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub nx: u32,
    pub ny: u32,
    pub square: f64,
    pub border_width: f64,
    pub border_height: f64,
    #[serde(default = "default_step")]
    pub boundary_sample_step: f64,
}

/// Axis-aligned extent of the physical board in the pattern frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardRect {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl BoardRect {
    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Vector2<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Corners counter-clockwise starting at `min`.
    pub fn corners(&self) -> [Vector2<f64>; 4] {
        [
            self.min,
            Vector2::new(self.max.x, self.min.y),
            self.max,
            Vector2::new(self.min.x, self.max.y),
        ]
    }

    /// Signed distance to the perimeter: negative inside, positive outside.
    /// Its magnitude is the distance to the nearest perimeter point.
    pub fn signed_distance(&self, p: &Vector2<f64>) -> f64 {
        let c = self.center();
        let half = (self.max - self.min) * 0.5;
        let dx = (p.x - c.x).abs() - half.x;
        let dy = (p.y - c.y).abs() - half.y;
        if dx > 0.0 || dy > 0.0 {
            Vector2::new(dx.max(0.0), dy.max(0.0)).norm()
        } else {
            dx.max(dy)
        }
    }
}

impl PatternSpec {
    pub fn new(nx: u32, ny: u32, square: f64, border_width: f64, border_height: f64) -> Self {
        PatternSpec {
            nx,
            ny,
            square,
            border_width,
            border_height,
            boundary_sample_step: DEFAULT_BOUNDARY_STEP,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.nx < 2 || self.ny < 2 {
            return Err(format!("corner grid must be at least 2x2, got {}x{}", self.nx, self.ny));
        }
        if !(self.square.is_finite() && self.square > 0.0) {
            return Err(format!("square size must be positive, got {}", self.square));
        }
        if !(self.border_width.is_finite() && self.border_width >= 0.0)
            || !(self.border_height.is_finite() && self.border_height >= 0.0)
        {
            return Err("borders must be finite and non-negative".into());
        }
        if !(self.boundary_sample_step > 0.0 && self.boundary_sample_step <= self.square) {
            return Err(format!(
                "boundary_sample_step must be in (0, square], got {}",
                self.boundary_sample_step
            ));
        }
        Ok(())
    }

    pub fn corner_count(&self) -> usize {
        (self.nx * self.ny) as usize
    }

    /// Minimum number of corners for a valid RGB detection (25 % of the grid).
    pub fn min_detected_corners(&self) -> usize {
        self.corner_count().div_ceil(4)
    }

    pub fn corner(&self, id: u32) -> Vector3<f64> {
        let i = id % self.nx;
        let j = id / self.nx;
        Vector3::new(i as f64 * self.square, j as f64 * self.square, 0.0)
    }

    /// Inner corners, row-major; index = corner id.
    pub fn corner_points(&self) -> Vec<Vector3<f64>> {
        (0..self.nx * self.ny).map(|id| self.corner(id)).collect()
    }

    pub fn rect(&self) -> BoardRect {
        BoardRect {
            min: Vector2::new(-self.border_width, -self.border_height),
            max: Vector2::new(
                (self.nx - 1) as f64 * self.square + self.border_width,
                (self.ny - 1) as f64 * self.square + self.border_height,
            ),
        }
    }

    /// Perimeter samples every `boundary_sample_step` (rounded so each side is
    /// split evenly), counter-clockwise, rectangle corners always included.
    pub fn boundary_samples(&self) -> Vec<Vector3<f64>> {
        sample_perimeter(&self.rect(), self.boundary_sample_step)
    }
}

pub fn sample_perimeter(rect: &BoardRect, step: f64) -> Vec<Vector3<f64>> {
    let corners = rect.corners();
    let mut out = Vec::new();
    for k in 0..4 {
        let a = corners[k];
        let b = corners[(k + 1) % 4];
        let len = (b - a).norm();
        let n = ((len / step) - 1e-9).ceil().max(1.0) as usize;
        for s in 0..n {
            let p = a + (b - a) * (s as f64 / n as f64);
            out.push(Vector3::new(p.x, p.y, 0.0));
        }
    }
    out
}
