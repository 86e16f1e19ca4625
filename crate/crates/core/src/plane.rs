//! Planes in 3D: least-squares fit and three-point hypotheses.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

/// Plane `normal · x = offset` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Plane through three points; `None` if they are collinear within `tol`.
    pub fn from_points(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, tol: f64) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if !(len > tol) {
            return None;
        }
        let normal = n / len;
        Some(Plane {
            normal,
            offset: normal.dot(a),
        })
    }

    /// Flips the normal so that `viewpoint` lies on the positive side.
    pub fn oriented_towards(self, viewpoint: &Vector3<f64>) -> Plane {
        if self.signed_distance(viewpoint) < 0.0 {
            Plane {
                normal: -self.normal,
                offset: -self.offset,
            }
        } else {
            self
        }
    }
}

pub fn centroid(points: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if points.is_empty() {
        return None;
    }
    Some(points.iter().sum::<Vector3<f64>>() / points.len() as f64)
}

/// Total least-squares plane through the centroid. Needs three points that
/// are not collinear.
pub fn fit_plane(points: &[Vector3<f64>]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let c = centroid(points)?;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // second-smallest eigenvalue vanishes for collinear input
    if !(eig.eigenvalues[order[1]] > 1e-18 * (1.0 + eig.eigenvalues[order[2]])) {
        return None;
    }
    let normal: Vector3<f64> = eig.eigenvectors.column(order[0]).normalize();
    Some(Plane {
        normal,
        offset: normal.dot(&c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_tilted_plane() {
        let n = Vector3::new(0.3, -0.2, 1.0).normalize();
        let u = n.cross(&Vector3::x()).normalize();
        let v = n.cross(&u);
        let pts: Vec<_> = (0..50)
            .map(|k| {
                let (a, b) = ((k % 7) as f64 * 0.1, (k / 7) as f64 * 0.13);
                n * 2.0 + u * a + v * b
            })
            .collect();
        let p = fit_plane(&pts).unwrap().oriented_towards(&(n * 10.0));
        assert!((p.normal - n).norm() < 1e-12);
        assert!((p.offset - 2.0).abs() < 1e-12);
        for q in &pts {
            assert!(p.signed_distance(q).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(1.0, 1.0, 1.0);
        let c = Vector3::new(2.0, 2.0, 2.0);
        assert!(Plane::from_points(&a, &b, &c, 1e-9).is_none());
        assert!(fit_plane(&[a, b, c]).is_none());
        assert!(fit_plane(&[a, b]).is_none());
        let p = Plane::from_points(&a, &Vector3::x(), &Vector3::y(), 1e-9).unwrap();
        assert_eq!(p.normal, Vector3::z());
    }
}
