//! Small fixed-size linear algebra for the plane.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// A point (or vector) in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product.
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.x / n, self.y / n)
    }

    /// Counter-clockwise rotation by a right angle.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn dist(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn sup_dist(self, other: Self) -> f64 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for PlanePoint {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for PlanePoint {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for PlanePoint {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

impl Mul<PlanePoint> for f64 {
    type Output = PlanePoint;
    fn mul(self, p: PlanePoint) -> PlanePoint {
        PlanePoint::new(self * p.x, self * p.y)
    }
}

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    pub fn from_columns(c0: PlanePoint, c1: PlanePoint) -> Self {
        Self::new(c0.x, c1.x, c0.y, c1.y)
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn apply(&self, v: PlanePoint) -> PlanePoint {
        PlanePoint::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Mat2::new(
            self.m[1][1] / d,
            -self.m[0][1] / d,
            -self.m[1][0] / d,
            self.m[0][0] / d,
        ))
    }

    pub fn column(&self, j: usize) -> PlanePoint {
        PlanePoint::new(self.m[0][j], self.m[1][j])
    }

    /// Eigenvalues as complex numbers, ordered by increasing modulus.
    pub fn eigenvalues(&self) -> [num_complex::Complex64; 2] {
        use num_complex::Complex64;
        let tr = self.trace();
        let det = self.det();
        let disc = tr * tr / 4.0 - det;
        let (e0, e1) = if disc >= 0.0 {
            // Larger-modulus root first, smaller by Vieta to avoid cancellation.
            let sign = if tr < 0.0 { -1.0 } else { 1.0 };
            let big = tr / 2.0 + sign * disc.sqrt();
            let small = if big != 0.0 { det / big } else { 0.0 };
            (Complex64::new(small, 0.0), Complex64::new(big, 0.0))
        } else {
            let im = (-disc).sqrt();
            (Complex64::new(tr / 2.0, -im), Complex64::new(tr / 2.0, im))
        };
        if e0.norm() <= e1.norm() {
            [e0, e1]
        } else {
            [e1, e0]
        }
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let mut r = [[0.0; 2]; 2];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j];
            }
        }
        Mat2 { m: r }
    }
}

/// Axis-aligned closed rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn contains(&self, p: PlanePoint) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn center(&self) -> PlanePoint {
        PlanePoint::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Grow by `margin` on every side.
    pub fn dilate(&self, margin: f64) -> Rect {
        Rect::new(
            self.x_min - margin,
            self.x_max + margin,
            self.y_min - margin,
            self.y_max + margin,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_real_and_complex() {
        let m = Mat2::new(0.0, 1.0, -0.05, 4.0);
        let [l, s] = m.eigenvalues();
        assert!((l.re * s.re - 0.05).abs() < 1e-15);
        assert!((l.re + s.re - 4.0).abs() < 1e-14);
        let rot = Mat2::new(0.0, -1.0, 1.0, 0.0);
        let [e0, e1] = rot.eigenvalues();
        assert!((e0.norm() - 1.0).abs() < 1e-15 && (e1.im + e0.im).abs() < 1e-15);
        let neg = Mat2::new(0.0, 1.0, 0.3, -2.0);
        let [a, b] = neg.eigenvalues();
        assert!((a.re * b.re + 0.3).abs() < 1e-14 && (a.re + b.re + 2.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_roundtrip() {
        let m = Mat2::new(1.0, 2.0, 3.0, 5.0);
        let p = m * m.inverse().unwrap();
        assert!((p.m[0][0] - 1.0).abs() < 1e-14 && p.m[0][1].abs() < 1e-14);
        assert!(Mat2::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
    }
}
