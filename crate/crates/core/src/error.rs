use thiserror::Error;

/// Every failure the laboratory can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("map is not invertible at b = 0")]
    NonInvertible,
    #[error("no real fixed points: discriminant {discriminant} < 0")]
    NoRealFixedPoints { discriminant: f64 },
    #[error("coordinate change undefined for a = {a}, b = {b}")]
    DegenerateConjugacy { a: f64, b: f64 },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("small divisor at order {order}: |{value:e}|")]
    SmallDivisor { order: usize, value: f64 },
    #[error("orbit left the escape radius {radius}")]
    BlowUp { radius: f64 },
    #[error("stable arc folds at x = {x}")]
    NotAGraph { x: f64 },
    #[error("arclength {at} outside [{lo}, {hi}]")]
    OutOfRange { at: f64, lo: f64, hi: f64 },
    #[error("maximum of the split function sits on the window boundary (t = {t})")]
    NoInteriorMax { t: f64 },
    #[error("Newton diverged after {iterations} iterations, last iterate {last}")]
    NewtonDiverged { iterations: usize, last: f64 },
    #[error("curve is not a graph over the comparison window")]
    NotGraphLike,
    #[error("renormalization frame unavailable: {0}")]
    FrameUnavailable(String),
    #[error("no admissible return time up to {w_max}")]
    NoReturn { w_max: usize },
    #[error("return pieces cannot be separated from the tangency point")]
    TangencyInside,
    #[error("interval widths reached the resolution floor at level {level}")]
    ResolutionExhausted { level: usize },
    #[error("approximation level too coarse for a geometric decision")]
    LevelTooCoarse,
    #[error("thickness product exceeds one on linked hulls but the sets are disjoint")]
    GapLemmaViolation,
    #[error("no real fixed point of the limit family for a_bar = {0} > 1/4")]
    NoRealFixedPoint(f64),
    #[error("return orbit not found within {budget} iterations")]
    ReturnNotFound { budget: usize },
    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),
    #[error("point left the renormalization box")]
    EscapedBox,
}

pub type Result<T> = std::result::Result<T, Error>;
