//! The quadratic family `(x, y) -> (y, a - b x + y^2)`, its inverse, differential and fixed points.

use crate::error::{Error, Result};
use crate::geom::{Mat2, PlanePoint};
use serde::{Deserialize, Serialize};

/// Parameter pair: `a` unfolds the tangency, `b` is the Jacobian determinant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub a: f64,
    pub b: f64,
}

impl Params {
    pub const fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn with_a(self, a: f64) -> Self {
        Self { a, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RootSign {
    Plus,
    Minus,
}

/// A fixed point together with its eigendata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleData {
    pub point: PlanePoint,
    /// Smaller-modulus eigenvalue.
    pub lambda: f64,
    /// Larger-modulus eigenvalue.
    pub sigma: f64,
    pub v_s: PlanePoint,
    pub v_u: PlanePoint,
    pub sign: RootSign,
}

#[inline]
pub fn apply(p: Params, z: PlanePoint) -> PlanePoint {
    PlanePoint::new(z.y, p.a - p.b * z.x + z.y * z.y)
}

pub fn apply_inverse(p: Params, z: PlanePoint) -> Result<PlanePoint> {
    if p.b == 0.0 {
        return Err(Error::NonInvertible);
    }
    Ok(inverse_unchecked(p, z))
}

/// Inverse without the `b != 0` guard, for hot loops whose callers already checked it.
#[inline]
pub fn inverse_unchecked(p: Params, z: PlanePoint) -> PlanePoint {
    PlanePoint::new((p.a + z.x * z.x - z.y) / p.b, z.x)
}

#[inline]
pub fn jacobian(p: Params, z: PlanePoint) -> Mat2 {
    Mat2::new(0.0, 1.0, -p.b, 2.0 * z.y)
}

/// Forward orbit of length `n` (the point itself excluded).
pub fn iterate(p: Params, mut z: PlanePoint, n: usize) -> PlanePoint {
    for _ in 0..n {
        z = apply(p, z);
    }
    z
}

fn eigendata(p: Params, y: f64, sign: RootSign) -> Option<SaddleData> {
    let disc = y * y - p.b;
    if disc < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let big = if y >= 0.0 { y + root } else { y - root };
    let small = if big != 0.0 { p.b / big } else { 0.0 };
    let eigvec = |mu: f64| PlanePoint::new(1.0, mu).normalized();
    Some(SaddleData {
        point: PlanePoint::new(y, y),
        lambda: small,
        sigma: big,
        v_s: eigvec(small),
        v_u: eigvec(big),
        sign,
    })
}

/// Fixed points `(y, y)` with `y = (1 + b ± sqrt((1+b)^2 - 4a)) / 2`, plus root first.
///
/// A root whose eigenvalues form a complex pair carries no saddle data and is left out.
pub fn fixed_points(p: Params) -> Result<Vec<SaddleData>> {
    let disc = (1.0 + p.b).powi(2) - 4.0 * p.a;
    if disc < 0.0 {
        return Err(Error::NoRealFixedPoints { discriminant: disc });
    }
    let r = disc.sqrt();
    let y_plus = 0.5 * (1.0 + p.b + r);
    // y_minus via Vieta when it would cancel: y+ * y- = a.
    let y_minus = if y_plus != 0.0 && (1.0 + p.b) > 0.0 {
        p.a / y_plus
    } else {
        0.5 * (1.0 + p.b - r)
    };
    Ok([(y_plus, RootSign::Plus), (y_minus, RootSign::Minus)]
        .into_iter()
        .filter_map(|(y, s)| eigendata(p, y, s))
        .collect())
}

/// The saddle used throughout: the plus root.
pub fn plus_saddle(p: Params) -> Result<SaddleData> {
    fixed_points(p)?
        .into_iter()
        .find(|s| s.sign == RootSign::Plus)
        .ok_or_else(|| Error::Degenerate("plus fixed point has complex eigenvalues".into()))
}

pub fn is_dissipative_saddle(s: &SaddleData) -> bool {
    let l = s.lambda.abs();
    let g = s.sigma.abs();
    0.0 < l && l < 1.0 && 1.0 < g && l * g < 1.0
}

/// The classical form `(x, y) -> (1 - a x^2 + y, b x)`.
pub fn classical_apply(a: f64, b: f64, z: PlanePoint) -> PlanePoint {
    PlanePoint::new(1.0 - a * z.x * z.x + z.y, b * z.x)
}

/// Carries a point of the classical family with parameters `(a, b)` to the
/// conjugate point of the family above with parameters `(-a, -b)`.
pub fn conjugate_from_original(a_orig: f64, b_orig: f64, z: PlanePoint) -> Result<(Params, PlanePoint)> {
    if a_orig == 0.0 || b_orig == 0.0 {
        return Err(Error::DegenerateConjugacy { a: a_orig, b: b_orig });
    }
    let w = PlanePoint::new(-a_orig * z.y / b_orig, -a_orig * z.x);
    Ok((Params::new(-a_orig, -b_orig), w))
}
