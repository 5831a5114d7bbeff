//! Z-axis rotations and equal-angle view sets.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// The `N` view angles `2π(j-1)/N`, `j = 1..N`, in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    angles: Vec<f64>,
}

impl ViewSet {
    pub fn equal_angle(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("view count must be at least 1".into()));
        }
        let angles = (0..n).map(|j| TAU * j as f64 / n as f64).collect();
        Ok(Self { angles })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn rotations(&self) -> impl Iterator<Item = Rotation> + '_ {
        self.angles.iter().map(|&a| Rotation::about_z(a))
    }
}

pub fn view_angles(n: usize) -> Result<ViewSet> {
    ViewSet::equal_angle(n)
}

/// Rotation about the world z-axis.
///
/// Applied to a column vector, `about_z(θ)` maps `(x, y, z)` to
/// `(x cosθ + y sinθ, -x sinθ + y cosθ, z)`, i.e. it turns the scene
/// clockwise by `θ` when viewed from above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn about_z(theta: f64) -> Self {
        let (s, c) = libm::sincos(theta);
        Self {
            m: [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }

    /// Matrix product `self * other`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Rotation { m }
    }

    pub fn transpose(&self) -> Rotation {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[j][i];
            }
        }
        Rotation { m }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest entry-wise deviation between two matrices.
    pub fn max_abs_diff(&self, other: &Rotation) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max(libm::fabs(self.m[i][j] - other.m[i][j]));
            }
        }
        d
    }
}

pub fn rotation_matrix(theta: f64) -> Rotation {
    Rotation::about_z(theta)
}

pub fn rotate_points(r: &Rotation, points: &[Point3]) -> Vec<Point3> {
    points.iter().map(|&p| r.apply(p)).collect()
}

/// Box center of an object as seen from the view at angle `theta`.
pub fn rotate_center(center: Point3, theta: f64) -> Point3 {
    Rotation::about_z(theta).apply(center)
}

pub fn distance(a: Point3, b: Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn close(a: Point3, b: Point3, tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn four_views_are_quarter_turns() {
        let v = view_angles(4).unwrap();
        assert_eq!(v.angles(), &[0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]);
        assert_eq!(view_angles(1).unwrap().angles(), &[0.0]);
        let eight = view_angles(8).unwrap();
        for w in eight.angles().windows(2) {
            assert!((w[1] - w[0] - FRAC_PI_4).abs() < 1e-15);
        }
        assert!(view_angles(0).is_err());
    }

    #[test]
    fn zero_angle_is_identity() {
        assert_eq!(rotation_matrix(0.0), Rotation::IDENTITY);
    }

    #[test]
    fn quarter_turn_sends_x_to_minus_y() {
        let p = rotation_matrix(FRAC_PI_2).apply([1.0, 0.0, 0.0]);
        assert!(close(p, [0.0, -1.0, 0.0], 1e-15));
    }

    #[test]
    fn half_turn_of_center() {
        assert!(close(rotate_center([2.0, 0.0, 1.0], PI), [-2.0, 0.0, 1.0], 1e-15));
        assert_eq!(rotate_center([2.0, 3.0, 1.0], 0.0), [2.0, 3.0, 1.0]);
    }

    #[test]
    fn inverse_pair_composes_to_identity() {
        let r = rotation_matrix(0.7).compose(&rotation_matrix(-0.7));
        assert!(r.max_abs_diff(&Rotation::IDENTITY) < 1e-12);
    }

    #[test]
    fn four_quarter_turns_return_home() {
        let pts = [[1.0, 2.0, 3.0], [-0.5, 0.25, 0.0]];
        let r = rotation_matrix(FRAC_PI_2);
        let mut cur = pts.to_vec();
        for _ in 0..4 {
            cur = rotate_points(&r, &cur);
        }
        for (a, b) in cur.iter().zip(&pts) {
            assert!(close(*a, *b, 1e-9));
        }
    }
}
