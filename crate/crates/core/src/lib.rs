//! Numerical laboratory for the quadratic Hénon family near its homoclinic tangency at `(a, b) = (-2, 0)`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cantor;
pub mod census;
pub mod error;
pub mod geom;
pub mod henon;
pub mod horseshoe;
pub mod io;
pub mod manifold;
pub mod par;
pub mod renorm;
pub mod tangency;

pub use error::{Error, Result};
pub use geom::{Mat2, PlanePoint, Rect};
pub use henon::{Params, SaddleData};
pub use par::Exec;
