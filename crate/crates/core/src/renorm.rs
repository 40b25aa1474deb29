//! Renormalized return maps near a homoclinic tangency and the closed forms of their limit family.
//!
//! A frame conjugates the return map `φ^T` on a small box to renormalized coordinates by an affine
//! change of variables, and reparametrizes `a` affinely in the renormalized parameter. The target
//! is `ψ(x, y) = (y, y² + ā)`. The return map is encoded by the sign itinerary of its periodic
//! orbits, so the same machinery runs on the limit family itself (`b = 0`, return time one).

use crate::error::{Error, Result};
use crate::geom::{Mat2, PlanePoint, Rect};
use crate::henon::{self, Params};
use crate::par::Exec;
use crate::tangency::{TangencyRecord, VelocityGapReport};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Iterates leaving this radius count as escaped.
pub const ESCAPE_RADIUS: f64 = 1.0e3;

/// Transition steps of a return outside the neighborhood of the saddle.
pub const TRANSITION_STEPS: usize = 3;

/// Renormalized parameters at which frames are anchored and fitted.
pub const DEFAULT_A_BAR_WINDOW: (f64, f64) = (-2.1, -1.9);

pub fn default_box() -> Rect {
    Rect::new(-3.0, 3.0, -3.0, 3.0)
}

#[inline]
pub fn limit_family_eval(a_bar: f64, z: PlanePoint) -> PlanePoint {
    PlanePoint::new(z.y, z.y * z.y + a_bar)
}

#[inline]
pub fn limit_family_jacobian(z: PlanePoint) -> Mat2 {
    Mat2::new(0.0, 1.0, 0.0, 2.0 * z.y)
}

/// Closed-form facts about the limit family at one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitFamilyData {
    pub a_bar: f64,
    pub fixed_point: PlanePoint,
    pub endpoint: PlanePoint,
    pub slope_fixed: f64,
    pub slope_endpoint: f64,
}

/// Fixed point `(y₁, y₁)` with `y₁ = (1 + √(1 − 4ā))/2`, the endpoint `(ā, ā² + ā)` and their ā-slopes.
///
/// At `ā = 1/4` the fixed-point slope is `-∞`.
pub fn limit_family_data(a_bar: f64) -> Result<LimitFamilyData> {
    if !(a_bar <= 0.25) {
        return Err(Error::NoRealFixedPoint(a_bar));
    }
    let root = (1.0 - 4.0 * a_bar).sqrt();
    let y1 = 0.5 * (1.0 + root);
    Ok(LimitFamilyData {
        a_bar,
        fixed_point: PlanePoint::new(y1, y1),
        endpoint: PlanePoint::new(a_bar, a_bar * a_bar + a_bar),
        slope_fixed: if root == 0.0 { f64::NEG_INFINITY } else { -1.0 / root },
        slope_endpoint: 2.0 * a_bar + 1.0,
    })
}

/// `z ↦ offset + linear · z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinePlane {
    pub offset: PlanePoint,
    pub linear: Mat2,
}

impl AffinePlane {
    pub const IDENTITY: AffinePlane = AffinePlane {
        offset: PlanePoint::new(0.0, 0.0),
        linear: Mat2::IDENTITY,
    };

    pub fn apply(&self, z: PlanePoint) -> PlanePoint {
        self.offset + self.linear.apply(z)
    }

    pub fn inverse(&self) -> Option<AffinePlane> {
        let inv = self.linear.inverse()?;
        Some(AffinePlane {
            offset: -inv.apply(self.offset),
            linear: inv,
        })
    }
}

/// `t ↦ offset + slope · t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineLine {
    pub offset: f64,
    pub slope: f64,
}

impl AffineLine {
    pub fn apply(&self, t: f64) -> f64 {
        self.offset + self.slope * t
    }
}

/// A return map `φ_{a,b}^T` together with the sign itineraries of its two anchoring periodic orbits.
///
/// Orbits are stored by their `y`-coordinates; point `i` of the orbit is `(y[i-1], y[i])`. The
/// first entry is the point inside the renormalization box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSystem {
    pub b: f64,
    pub return_time: usize,
    pub saddle_itinerary: Vec<i8>,
    pub flip_itinerary: Vec<i8>,
}

impl ReturnSystem {
    /// Returns that pass `n` times near the saddle: signs `[±, -, +ⁿ, -]`.
    pub fn henon_return(b: f64, n: usize) -> Self {
        let body = std::iter::once(-1)
            .chain(std::iter::repeat_n(1, n))
            .chain(std::iter::once(-1));
        let with_head = |head: i8| std::iter::once(head).chain(body.clone()).collect::<Vec<_>>();
        Self {
            b,
            return_time: n + TRANSITION_STEPS,
            saddle_itinerary: with_head(1),
            flip_itinerary: with_head(-1),
        }
    }

    /// The limit family as a return system: `b = 0`, one step, fixed points `y₁ > 0 > y₂`.
    pub fn limit_family() -> Self {
        Self {
            b: 0.0,
            return_time: 1,
            saddle_itinerary: vec![1],
            flip_itinerary: vec![-1],
        }
    }

    pub fn apply(&self, a: f64, z: PlanePoint) -> Option<PlanePoint> {
        let p = Params::new(a, self.b);
        let mut z = z;
        for _ in 0..self.return_time {
            z = henon::apply(p, z);
            if !(z.x.abs() <= ESCAPE_RADIUS && z.y.abs() <= ESCAPE_RADIUS) {
                return None;
            }
        }
        Some(z)
    }

    /// Differential of the return along the orbit of `z`.
    pub fn jacobian(&self, a: f64, z: PlanePoint) -> Mat2 {
        let p = Params::new(a, self.b);
        let mut m = Mat2::IDENTITY;
        let mut z = z;
        for _ in 0..self.return_time {
            m = henon::jacobian(p, z) * m;
            z = henon::apply(p, z);
        }
        m
    }

    /// Periodic orbit with the given itinerary, by inverse-branch shooting and Newton.
    fn shoot(&self, a: f64, signs: &[i8]) -> Option<Vec<f64>> {
        let t = signs.len();
        let mut y: Vec<f64> = signs.iter().map(|&s| if s > 0 { 1.8 } else { -1.5 }).collect();
        y[0] = 0.0;
        for _ in 0..400 {
            for i in 0..t {
                let next = y[(i + 1) % t];
                let prev = y[(i + t - 1) % t];
                let mut arg = next - a + self.b * prev;
                if arg < 0.0 {
                    if i != 0 {
                        return None;
                    }
                    arg = 0.0;
                }
                y[i] = f64::from(signs[i]) * arg.sqrt();
            }
        }
        let y = self.orbit_newton(a, y)?;
        let consistent = signs.iter().zip(&y).skip(1).all(|(&s, &v)| f64::from(s) * v > 0.0);
        consistent.then_some(y)
    }

    /// Newton on `y_{i+1} - a + b y_{i-1} - y_i² = 0` around the cycle.
    fn orbit_newton(&self, a: f64, mut y: Vec<f64>) -> Option<Vec<f64>> {
        let t = y.len();
        let residual = |y: &[f64]| -> DVector<f64> {
            DVector::from_fn(t, |i, _| y[(i + 1) % t] - a + self.b * y[(i + t - 1) % t] - y[i] * y[i])
        };
        for _ in 0..50 {
            let f = residual(&y);
            let mut jac = DMatrix::zeros(t, t);
            for i in 0..t {
                jac[(i, (i + 1) % t)] += 1.0;
                jac[(i, (i + t - 1) % t)] += self.b;
                jac[(i, i)] -= 2.0 * y[i];
            }
            let step = jac.lu().solve(&(-f))?;
            for (v, d) in y.iter_mut().zip(step.iter()) {
                *v += d;
            }
            if step.amax() < 1e-15 * (1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                break;
            }
        }
        let ok = residual(&y).amax() < 1e-11 && y.iter().all(|v| v.is_finite());
        ok.then_some(y)
    }

    /// Continues an orbit from `a_from` to `a_to` in equal steps.
    fn continue_orbit(&self, a_from: f64, a_to: f64, y: &[f64], steps: usize) -> Option<Vec<f64>> {
        let mut y = y.to_vec();
        for k in 1..=steps {
            let a = a_from + (a_to - a_from) * k as f64 / steps as f64;
            y = self.orbit_newton(a, y)?;
        }
        Some(y)
    }

    fn orbit_matrix(&self, y: &[f64]) -> Mat2 {
        let t = y.len();
        let mut m = Mat2::IDENTITY;
        for k in 0..t {
            m = Mat2::new(0.0, 1.0, -self.b, 2.0 * y[k]) * m;
        }
        m
    }

    /// Renormalized parameter read off the leading multiplier `μ` of an orbit: `(1 - (μ - 1)²)/4`.
    fn a_bar_of(&self, y: &[f64]) -> f64 {
        let mu = self.orbit_matrix(y).eigenvalues()[1];
        if mu.im != 0.0 {
            return f64::NAN;
        }
        let m = mu.re - 1.0;
        0.25 * (1.0 - m * m)
    }
}

fn box_point(y: &[f64]) -> PlanePoint {
    PlanePoint::new(y[y.len() - 1], y[0])
}

/// Unit eigenvector of a real eigenvalue of `m`.
fn eigenvector(m: &Mat2, ev: f64) -> PlanePoint {
    let [[a, b], [c, d]] = m.m;
    let v1 = PlanePoint::new(b, ev - a);
    let v2 = PlanePoint::new(ev - d, c);
    let v = if v1.norm() >= v2.norm() { v1 } else { v2 };
    if v.norm() == 0.0 {
        PlanePoint::new(1.0, 0.0)
    } else {
        v.normalized()
    }
}

/// Fitted conjugacy between a return map and the limit family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormFrame {
    pub n: usize,
    pub return_time: usize,
    pub affine_in: AffinePlane,
    /// Quadratic shear applied before `affine_in`: `(x, y) ↦ (x + shear·y², y)`. Zero for a purely affine frame.
    pub shear: f64,
    pub affine_param: AffineLine,
    #[serde(rename = "box")]
    pub domain: Rect,
    pub source_tangency: Option<TangencyRecord>,
    pub system: ReturnSystem,
    pub a_bar_window: (f64, f64),
    /// Sup-norm residual reached by the fit on its own sample grid.
    pub fit_residual: f64,
    /// Box points of the two anchoring orbits at the centre of the window.
    pub anchors: [PlanePoint; 2],
}

/// Residuals of a frame against the limit family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub residual_c0: f64,
    pub residual_c1: f64,
    pub sample_count: usize,
}

/// Knobs of the frame fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub a_bar_window: (f64, f64),
    /// Sample points per axis of the fitting grid.
    pub fit_grid: usize,
    /// Weight of the rows pinning the anchoring orbits to `(2, 2)` and `(-1, -1)`.
    pub anchor_weight: f64,
    pub lm_iterations: usize,
    /// Reweighting rounds that push the least-squares fit towards the sup-norm optimum.
    pub minimax_rounds: usize,
    /// Points of the parameter scan used to seed the anchoring orbits.
    pub seed_samples: usize,
    /// Also fit a quadratic shear, scanning these starting values.
    pub shear_starts: Option<[f64; 2]>,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            a_bar_window: DEFAULT_A_BAR_WINDOW,
            fit_grid: 9,
            anchor_weight: 1000.0,
            lm_iterations: 200,
            minimax_rounds: 25,
            seed_samples: 4000,
            shear_starts: None,
        }
    }
}

/// Frame for `n` passages near the saddle of the tangency in `record`.
pub fn build_frame(record: &TangencyRecord, n: usize, domain: Rect) -> Result<RenormFrame> {
    build_frame_with(record, n, domain, &FrameConfig::default())
}

pub fn build_frame_with(record: &TangencyRecord, n: usize, domain: Rect, cfg: &FrameConfig) -> Result<RenormFrame> {
    if !record.is_generic() {
        return Err(Error::FrameUnavailable("tangency is not generic".into()));
    }
    let system = ReturnSystem::henon_return(record.params.b, n);
    // Returns exist on the side of the curve where the tangency has unfolded into two transverse crossings.
    let a0 = record.params.a;
    let scan: Vec<f64> = (0..cfg.seed_samples)
        .map(|k| {
            let u = k as f64 / (cfg.seed_samples - 1) as f64;
            a0 + 1e-7 * (2.0e6f64).powf(u)
        })
        .collect();
    let mut frame = fit_system(&system, &scan, domain, cfg)?;
    frame.n = n;
    frame.source_tangency = Some(record.clone());
    Ok(frame)
}

/// Runs the frame construction on the limit family itself; the result is the identity frame.
pub fn build_limit_frame(domain: Rect, cfg: &FrameConfig) -> Result<RenormFrame> {
    let system = ReturnSystem::limit_family();
    let scan: Vec<f64> = (0..cfg.seed_samples)
        .map(|k| -2.5 + 2.0 * k as f64 / (cfg.seed_samples - 1) as f64)
        .collect();
    fit_system(&system, &scan, domain, cfg)
}

struct Anchors {
    saddle: Vec<f64>,
    flip: Vec<f64>,
    param: AffineLine,
}

fn seed(system: &ReturnSystem, scan: &[f64], a_bar_low: f64) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    scan.iter().find_map(|&a| {
        let p = system.shoot(a, &system.saddle_itinerary)?;
        let q = system.shoot(a, &system.flip_itinerary)?;
        (system.a_bar_of(&p) < a_bar_low).then_some((a, p, q))
    })
}

/// Secant in `a` on `ā(a) = target`, continuing the orbit through each step.
fn solve_a_bar(system: &ReturnSystem, target: f64, a_start: f64, y_start: &[f64]) -> Result<(f64, Vec<f64>)> {
    let f = |y: &[f64]| system.a_bar_of(y) - target;
    let mut a1 = a_start;
    let mut f1 = f(y_start);
    let mut a2 = a_start + 1e-9 * a_start.abs().max(1.0);
    let mut y2 = system
        .orbit_newton(a2, y_start.to_vec())
        .ok_or_else(|| Error::IllConditioned("orbit lost at the first secant step".into()))?;
    let mut f2 = f(&y2);
    for _ in 0..200 {
        if f2.abs() < 1e-13 {
            return Ok((a2, y2));
        }
        if f2 == f1 || !f2.is_finite() || (a2 - a1).abs() <= 4.0 * f64::EPSILON * a2.abs() {
            break;
        }
        let mut a3 = a2 - f2 * (a2 - a1) / (f2 - f1);
        let mut y3 = system.orbit_newton(a3, y2.clone());
        let mut halvings = 0;
        while y3.is_none() && halvings < 60 {
            a3 = 0.5 * (a2 + a3);
            y3 = system.orbit_newton(a3, y2.clone());
            halvings += 1;
        }
        let Some(y3) = y3 else { break };
        (a1, f1) = (a2, f2);
        a2 = a3;
        y2 = y3;
        f2 = f(&y2);
    }
    // Steep parameter maps cannot resolve ā below the spacing of doubles in `a`.
    if f2.abs() < 1e-6 {
        return Ok((a2, y2));
    }
    Err(Error::IllConditioned(format!(
        "renormalized parameter {target} not reached"
    )))
}

fn anchors(system: &ReturnSystem, scan: &[f64], window: (f64, f64)) -> Result<Anchors> {
    let (lo, hi) = window;
    let mid = 0.5 * (lo + hi);
    let (a_seed, p_seed, q_seed) = seed(system, scan, lo).ok_or(Error::ReturnNotFound {
        budget: system.return_time,
    })?;
    let (a_mid, p_mid) = solve_a_bar(system, mid, a_seed, &p_seed)?;
    let (a_lo, _) = solve_a_bar(system, lo, a_mid, &p_mid)?;
    let (a_hi, _) = solve_a_bar(system, hi, a_mid, &p_mid)?;
    let q_mid = system
        .continue_orbit(a_seed, a_mid, &q_seed, 50)
        .ok_or_else(|| Error::IllConditioned("flip orbit lost during continuation".into()))?;
    let slope = (a_hi - a_lo) / (hi - lo);
    if !(slope.is_finite() && slope != 0.0) {
        return Err(Error::IllConditioned("parameter map is degenerate".into()));
    }
    Ok(Anchors {
        saddle: p_mid,
        flip: q_mid,
        param: AffineLine {
            offset: a_mid - slope * mid,
            slope,
        },
    })
}

/// Frame sending `(2, 2)` and `(-1, -1)` to the two orbits, with the contracting column along the
/// strong stable direction and `(1, 4)` mapped onto the unstable direction.
fn anchored_frame(system: &ReturnSystem, anchors: &Anchors) -> Result<AffinePlane> {
    let p = box_point(&anchors.saddle);
    let q = box_point(&anchors.flip);
    let m = system.orbit_matrix(&anchors.saddle);
    let [ev_s, ev_u] = m.eigenvalues();
    if ev_u.im != 0.0 {
        return Err(Error::IllConditioned(
            "complex multipliers at the anchoring orbit".into(),
        ));
    }
    let e_s = eigenvector(&m, ev_s.re);
    let e_u = eigenvector(&m, ev_u.re);
    let span = (1.0 / 3.0) * (p - q);
    let denom = 3.0 * e_s.cross(e_u);
    if denom.abs() < 1e-14 {
        return Err(Error::IllConditioned(
            "stable and unstable directions are parallel".into(),
        ));
    }
    let alpha = 4.0 * span.cross(e_u) / denom;
    let col0 = alpha * e_s;
    let col1 = span - col0;
    let linear = Mat2::from_columns(col0, col1);
    if linear.det() == 0.0 || !linear.det().is_finite() {
        return Err(Error::IllConditioned("anchored frame is singular".into()));
    }
    Ok(AffinePlane {
        offset: (1.0 / 3.0) * (p + 2.0 * q),
        linear,
    })
}

fn grid(domain: &Rect, per_axis: usize) -> Vec<PlanePoint> {
    let lin = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (per_axis - 1) as f64;
    (0..per_axis)
        .flat_map(|i| (0..per_axis).map(move |j| (i, j)))
        .map(|(i, j)| PlanePoint::new(lin(domain.x_min, domain.x_max, i), lin(domain.y_min, domain.y_max, j)))
        .collect()
}

fn window_values(window: (f64, f64)) -> [f64; 3] {
    [window.0, 0.5 * (window.0 + window.1), window.1]
}

/// Affine map preceded by the shear `(x, y) ↦ (x + shear·y², y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Chart {
    affine: AffinePlane,
    inverse: AffinePlane,
    shear: f64,
}

impl Chart {
    fn new(affine: AffinePlane, shear: f64) -> Option<Self> {
        Some(Self {
            inverse: affine.inverse()?,
            affine,
            shear,
        })
    }

    fn physical_point(&self, z: PlanePoint) -> PlanePoint {
        self.affine.apply(PlanePoint::new(z.x + self.shear * z.y * z.y, z.y))
    }

    fn chart_point(&self, w: PlanePoint) -> PlanePoint {
        let u = self.inverse.apply(w);
        PlanePoint::new(u.x - self.shear * u.y * u.y, u.y)
    }

    /// Differential of `chart_point ∘ g ∘ physical_point` at `z`, where `g` has differential `dg`.
    fn conjugate_jacobian(&self, z: PlanePoint, w: PlanePoint, dg: Mat2) -> Mat2 {
        let u = self.inverse.apply(w);
        let out = Mat2::new(1.0, -2.0 * self.shear * u.y, 0.0, 1.0) * self.inverse.linear;
        let inn = self.affine.linear * Mat2::new(1.0, 2.0 * self.shear * z.y, 0.0, 1.0);
        out * dg * inn
    }
}

struct FitProblem<'a> {
    system: &'a ReturnSystem,
    param: AffineLine,
    samples: Vec<(f64, PlanePoint)>,
    anchors: [PlanePoint; 2],
    anchor_weight: f64,
    base: [f64; 7],
    scale: [f64; 7],
    dims: usize,
}

const CLIP: f64 = 1.0e3;

impl FitProblem<'_> {
    fn chart(&self, u: &[f64]) -> Option<Chart> {
        let v: Vec<f64> = (0..7)
            .map(|k| self.base[k] + u.get(k).copied().unwrap_or(0.0) * self.scale[k])
            .collect();
        Chart::new(
            AffinePlane {
                offset: PlanePoint::new(v[0], v[1]),
                linear: Mat2::new(v[2], v[3], v[4], v[5]),
            },
            v[6],
        )
    }

    /// Sample residuals (two per sample), then the weighted anchor rows.
    fn residuals(&self, u: &[f64], weights: Option<&[f64]>) -> DVector<f64> {
        let n = 2 * self.samples.len() + 4;
        let mut out = DVector::zeros(n);
        let Some(chart) = self.chart(u) else {
            out.fill(CLIP);
            return out;
        };
        for (k, &(ab, z)) in self.samples.iter().enumerate() {
            let target = limit_family_eval(ab, z);
            let d = match self.system.apply(self.param.apply(ab), chart.physical_point(z)) {
                Some(w) => chart.chart_point(w) - target,
                None => PlanePoint::new(CLIP, CLIP),
            };
            let w = weights.map_or(1.0, |w| w[k].sqrt());
            out[2 * k] = w * d.x.clamp(-CLIP, CLIP);
            out[2 * k + 1] = w * d.y.clamp(-CLIP, CLIP);
        }
        let targets = [PlanePoint::new(2.0, 2.0), PlanePoint::new(-1.0, -1.0)];
        for (j, (anchor, target)) in self.anchors.iter().zip(targets).enumerate() {
            let d = chart.chart_point(*anchor) - target;
            out[n - 4 + 2 * j] = self.anchor_weight * d.x.clamp(-CLIP, CLIP);
            out[n - 3 + 2 * j] = self.anchor_weight * d.y.clamp(-CLIP, CLIP);
        }
        out
    }

    fn sample_sup(&self, u: &[f64]) -> f64 {
        let r = self.residuals(u, None);
        r.rows(0, 2 * self.samples.len()).amax()
    }

    /// Levenberg–Marquardt with a forward-difference Jacobian.
    fn levenberg_marquardt(&self, start: &[f64], weights: Option<&[f64]>, iterations: usize) -> Vec<f64> {
        let d = self.dims;
        let mut u = start.to_vec();
        let mut r = self.residuals(&u, weights);
        let mut cost = r.norm_squared();
        let mut damping = 1e-3;
        for _ in 0..iterations {
            if cost < 1e-28 {
                break;
            }
            let mut jac = DMatrix::zeros(r.len(), d);
            for k in 0..d {
                let h = 1e-7 * u[k].abs().max(1.0);
                let mut up = u.clone();
                up[k] += h;
                let rk = self.residuals(&up, weights);
                jac.set_column(k, &((rk - &r) / h));
            }
            let jt = jac.transpose();
            let jtj = &jt * &jac;
            let g = &jt * &r;
            let mut improved = false;
            for _ in 0..30 {
                let mut a = jtj.clone();
                for k in 0..d {
                    a[(k, k)] += damping * jtj[(k, k)].max(1e-12);
                }
                let Some(step) = a.lu().solve(&(-&g)) else {
                    damping *= 10.0;
                    continue;
                };
                let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
                let rt = self.residuals(&trial, weights);
                let ct = rt.norm_squared();
                if ct < cost {
                    let small = step.amax() < 1e-15 * (1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                    let rel = (cost - ct) / cost;
                    u = trial;
                    r = rt;
                    cost = ct;
                    damping = (damping * 0.3).max(1e-12);
                    improved = !(small || rel < 1e-15);
                    break;
                }
                damping *= 10.0;
            }
            if !improved {
                break;
            }
        }
        u
    }

    /// Least squares, then Lawson reweighting towards the sup-norm fit. Returns the best point and its sup.
    fn minimax(&self, start: Vec<f64>, cfg: &FrameConfig) -> (Vec<f64>, f64) {
        let mut best_u = start.clone();
        let mut best = self.sample_sup(&start);
        if best <= 1e-14 {
            return (best_u, best);
        }
        let mut u = self.levenberg_marquardt(&start, None, cfg.lm_iterations);
        let sup = self.sample_sup(&u);
        if sup < best {
            best = sup;
            best_u = u.clone();
        }
        let m = self.samples.len();
        let mut weights = vec![1.0 / m as f64; m];
        for _ in 0..cfg.minimax_rounds {
            u = self.levenberg_marquardt(&u, Some(&weights), cfg.lm_iterations);
            let r = self.residuals(&u, None);
            let sup = r.rows(0, 2 * m).amax();
            if sup < best {
                best = sup;
                best_u = u.clone();
            }
            let mut total = 0.0;
            for (k, w) in weights.iter_mut().enumerate() {
                *w *= r[2 * k].abs().max(r[2 * k + 1].abs()) + 1e-300;
                total += *w;
            }
            if !(total > 0.0 && total.is_finite()) {
                break;
            }
            weights.iter_mut().for_each(|w| *w /= total);
        }
        (best_u, best)
    }
}

fn fit_system(system: &ReturnSystem, scan: &[f64], domain: Rect, cfg: &FrameConfig) -> Result<RenormFrame> {
    let anchors = anchors(system, scan, cfg.a_bar_window)?;
    let init = anchored_frame(system, &anchors)?;
    let a_bars = window_values(cfg.a_bar_window);
    let samples: Vec<(f64, PlanePoint)> = a_bars
        .iter()
        .flat_map(|&ab| grid(&domain, cfg.fit_grid).into_iter().map(move |z| (ab, z)))
        .collect();
    let l = init.linear.m;
    let base = [init.offset.x, init.offset.y, l[0][0], l[0][1], l[1][0], l[1][1], 0.0];
    let mut scale = base.map(|v| v.abs() + 1e-14);
    scale[6] = 1.0;
    let anchor_points = [box_point(&anchors.saddle), box_point(&anchors.flip)];
    let mut problem = FitProblem {
        system,
        param: anchors.param,
        samples,
        anchors: anchor_points,
        anchor_weight: cfg.anchor_weight,
        base,
        scale,
        dims: 6,
    };
    let (mut best_u, mut best) = problem.minimax(vec![0.0; 6], cfg);
    if let Some([lo, hi]) = cfg.shear_starts {
        problem.dims = 7;
        let starts = 9;
        for k in 0..starts {
            let s0 = lo + (hi - lo) * k as f64 / (starts - 1) as f64;
            let mut start = best_u.clone();
            start.resize(7, 0.0);
            start[6] = s0;
            let (u, sup) = problem.minimax(start, cfg);
            if sup < best {
                best = sup;
                best_u = u;
            }
        }
    }
    let chart = problem
        .chart(&best_u)
        .ok_or_else(|| Error::IllConditioned("fitted frame is singular".into()))?;
    Ok(RenormFrame {
        n: system.return_time.saturating_sub(TRANSITION_STEPS),
        return_time: system.return_time,
        affine_in: chart.affine,
        shear: chart.shear,
        affine_param: anchors.param,
        domain,
        source_tangency: None,
        system: system.clone(),
        a_bar_window: cfg.a_bar_window,
        fit_residual: best,
        anchors: anchor_points,
    })
}

impl RenormFrame {
    /// Points farther than this outside the box are rejected.
    pub fn validity_margin(&self) -> f64 {
        0.05 * self.domain.width().max(self.domain.height())
    }

    pub fn physical_parameter(&self, a_bar: f64) -> f64 {
        self.affine_param.apply(a_bar)
    }

    fn chart(&self) -> Result<Chart> {
        Chart::new(self.affine_in, self.shear).ok_or_else(|| Error::IllConditioned("frame is singular".into()))
    }

    /// Renormalized coordinates to the plane.
    pub fn physical_point(&self, z: PlanePoint) -> Result<PlanePoint> {
        Ok(self.chart()?.physical_point(z))
    }
}

/// Conjugated return map in renormalized coordinates.
pub fn renormalized_return_map(frame: &RenormFrame, a_bar: f64, z: PlanePoint) -> Result<PlanePoint> {
    if !frame.domain.dilate(frame.validity_margin()).contains(z) {
        return Err(Error::EscapedBox);
    }
    let chart = frame.chart()?;
    let w = frame
        .system
        .apply(frame.physical_parameter(a_bar), chart.physical_point(z))
        .ok_or(Error::EscapedBox)?;
    Ok(chart.chart_point(w))
}

/// Exact differential of the renormalized return map.
pub fn renormalized_jacobian(frame: &RenormFrame, a_bar: f64, z: PlanePoint) -> Result<Mat2> {
    let chart = frame.chart()?;
    let a = frame.physical_parameter(a_bar);
    let zp = chart.physical_point(z);
    let w = frame.system.apply(a, zp).ok_or(Error::EscapedBox)?;
    Ok(chart.conjugate_jacobian(z, w, frame.system.jacobian(a, zp)))
}

/// C⁰ and finite-difference C¹ sup-residuals against the limit family.
///
/// The grid has `g × g` points per window parameter with `3 g² ≥ max(samples, 256)`. A sample whose
/// orbit escapes makes both residuals infinite.
pub fn quadratic_fit_residual(frame: &RenormFrame, samples: usize) -> FitReport {
    let per_axis = (((samples.max(256) as f64) / 3.0).sqrt().ceil() as usize).max(2);
    let a_bars = window_values(frame.a_bar_window);
    let pts = grid(&frame.domain, per_axis);
    let h = 1e-5 * frame.domain.width().max(frame.domain.height());
    let mut c0 = 0.0f64;
    let mut c1 = 0.0f64;
    for &ab in &a_bars {
        for &z in &pts {
            let Ok(w) = renormalized_return_map(frame, ab, z) else {
                return FitReport {
                    n: frame.n,
                    residual_c0: f64::INFINITY,
                    residual_c1: f64::INFINITY,
                    sample_count: a_bars.len() * pts.len(),
                };
            };
            c0 = c0.max(w.sup_dist(limit_family_eval(ab, z)));
            let target = limit_family_jacobian(z);
            for (col, e) in [PlanePoint::new(h, 0.0), PlanePoint::new(0.0, h)]
                .into_iter()
                .enumerate()
            {
                let fd = match (
                    renormalized_return_map(frame, ab, z + e),
                    renormalized_return_map(frame, ab, z - e),
                ) {
                    (Ok(p), Ok(m)) => (1.0 / (2.0 * h)) * (p - m),
                    _ => PlanePoint::new(f64::INFINITY, f64::INFINITY),
                };
                c1 = c1.max(fd.sup_dist(target.column(col)));
            }
        }
    }
    FitReport {
        n: frame.n,
        residual_c0: c0,
        residual_c1: c1,
        sample_count: a_bars.len() * pts.len(),
    }
}

/// A fixed point of the renormalized map with its multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenormalizedSaddle {
    pub a_bar: f64,
    pub point: PlanePoint,
    pub multipliers: [f64; 2],
    pub is_saddle: bool,
    pub iterations: usize,
}

/// Newton on `R(z) = z` from `guess`.
pub fn renormalized_fixed_point(frame: &RenormFrame, a_bar: f64, guess: PlanePoint) -> Result<RenormalizedSaddle> {
    let residual = |z: PlanePoint| renormalized_return_map(frame, a_bar, z).map(|w| w - z);
    let mut z = guess;
    let mut g = residual(z)?;
    let mut iterations = 0;
    while iterations < 60 {
        iterations += 1;
        let j = renormalized_jacobian(frame, a_bar, z)?;
        let shifted = Mat2::new(j.m[0][0] - 1.0, j.m[0][1], j.m[1][0], j.m[1][1] - 1.0);
        let Some(inv) = shifted.inverse() else { break };
        let step = inv.apply(g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = z - t * step;
            if let Ok(gt) = residual(trial) {
                if gt.norm() < g.norm() {
                    accepted = Some((trial, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((zn, gn)) = accepted else { break };
        z = zn;
        g = gn;
        if (t * step).norm() < 1e-14 * (1.0 + z.norm()) {
            break;
        }
    }
    if !(z.is_finite() && g.norm() <= 1e-6 * (1.0 + z.norm())) {
        return Err(Error::NewtonDiverged {
            iterations,
            last: g.norm(),
        });
    }
    let j = renormalized_jacobian(frame, a_bar, z)?;
    let [s, u] = j.eigenvalues();
    let real = s.im == 0.0 && u.im == 0.0;
    Ok(RenormalizedSaddle {
        a_bar,
        point: z,
        multipliers: [s.re, u.re],
        is_saddle: real && s.norm() < 1.0 && u.norm() > 1.0,
        iterations,
    })
}

/// Finite-difference ā-slopes of the renormalized fixed point and of the endpoint `R²(0, 0)`.
pub fn frame_leaf_slopes(frame: &RenormFrame, a_bar: f64) -> Result<VelocityGapReport> {
    let h = 1e-4;
    let guess = limit_family_data(a_bar)
        .map(|d| d.fixed_point)
        .unwrap_or(PlanePoint::new(2.0, 2.0));
    let fixed = |ab: f64| renormalized_fixed_point(frame, ab, guess).map(|s| s.point.y);
    let endpoint = |ab: f64| -> Result<f64> {
        let v1 = renormalized_return_map(frame, ab, PlanePoint::new(0.0, 0.0))?;
        Ok(renormalized_return_map(frame, ab, v1)?.y)
    };
    let slope_stable = (fixed(a_bar + h)? - fixed(a_bar - h)?) / (2.0 * h);
    let slope_unstable = (endpoint(a_bar + h)? - endpoint(a_bar - h)?) / (2.0 * h);
    Ok(VelocityGapReport::new(a_bar, slope_stable, slope_unstable))
}

/// Frame and report for one `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFit {
    pub frame: RenormFrame,
    pub report: FitReport,
}

/// Fits frames for every `n` independently.
pub fn fit_frames(
    record: &TangencyRecord,
    ns: &[usize],
    domain: Rect,
    cfg: &FrameConfig,
    samples: usize,
    exec: Exec,
) -> Vec<Result<FrameFit>> {
    exec.map(ns, |&n| {
        let frame = build_frame_with(record, n, domain, cfg)?;
        let report = quadratic_fit_residual(&frame, samples);
        Ok(FrameFit { frame, report })
    })
}

/// The first `count` values of `n ≤ n_max` that admit a frame, with their fits.
pub fn first_admissible(
    record: &TangencyRecord,
    count: usize,
    n_max: usize,
    domain: Rect,
    cfg: &FrameConfig,
    samples: usize,
    exec: Exec,
) -> Result<Vec<FrameFit>> {
    let ns: Vec<usize> = (1..=n_max).collect();
    let fits = fit_frames(record, &ns, domain, cfg, samples, exec);
    let ok: Vec<FrameFit> = fits.into_iter().filter_map(|f| f.ok()).take(count).collect();
    if ok.len() < count {
        return Err(Error::ReturnNotFound {
            budget: n_max + TRANSITION_STEPS,
        });
    }
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limit_family_examples() {
        let p = limit_family_eval(-2.0, PlanePoint::new(2.0, 2.0));
        assert_eq!(p, PlanePoint::new(2.0, 2.0));
        assert_eq!(
            limit_family_eval(0.0, PlanePoint::new(0.0, 0.0)),
            PlanePoint::new(0.0, 0.0)
        );
        assert_eq!(
            limit_family_eval(-2.0, PlanePoint::new(0.0, -2.0)),
            PlanePoint::new(-2.0, 2.0)
        );
    }

    #[test]
    fn limit_family_closed_forms() {
        let d = limit_family_data(-2.0).unwrap();
        assert_eq!(d.fixed_point, PlanePoint::new(2.0, 2.0));
        assert!((d.slope_fixed + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.slope_endpoint, -3.0);
        assert_eq!(d.endpoint, PlanePoint::new(-2.0, 2.0));
        let d = limit_family_data(0.0).unwrap();
        assert_eq!(d.fixed_point, PlanePoint::new(1.0, 1.0));
        assert_eq!(d.slope_fixed, -1.0);
        assert_eq!(d.slope_endpoint, 1.0);
        let d = limit_family_data(0.25).unwrap();
        assert_eq!(d.slope_fixed, f64::NEG_INFINITY);
        assert_eq!(d.fixed_point, PlanePoint::new(0.5, 0.5));
        assert!(matches!(limit_family_data(0.3), Err(Error::NoRealFixedPoint(_))));
        assert!(matches!(limit_family_data(f64::NAN), Err(Error::NoRealFixedPoint(_))));
    }

    #[test]
    fn closed_forms_match_differences() {
        for &ab in &[-2.3, -2.0, -1.5, -0.7, 0.0, 0.2] {
            let d = limit_family_data(ab).unwrap();
            // The fixed point solves y = y² + ā, so its implicit slope is 1/(1 - 2y).
            let y1 = d.fixed_point.y;
            assert!((y1 * y1 + ab - y1).abs() < 1e-14);
            assert!((d.slope_fixed - 1.0 / (1.0 - 2.0 * y1)).abs() < 1e-12);
            let h = 1e-6;
            let e = |a: f64| limit_family_data(a).unwrap().endpoint.y;
            let fd = (e(ab + h) - e(ab - h)) / (2.0 * h);
            assert!((fd - d.slope_endpoint).abs() < 1e-8);
            let v = limit_family_eval(ab, limit_family_eval(ab, PlanePoint::new(0.0, 0.0)));
            assert_eq!(v, d.endpoint);
        }
    }

    #[test]
    fn limit_frame_is_identity() {
        let frame = build_limit_frame(default_box(), &FrameConfig::default()).unwrap();
        let l = frame.affine_in.linear.m;
        assert!((l[0][0] - 1.0).abs() < 1e-10 && (l[1][1] - 1.0).abs() < 1e-10);
        assert!(l[0][1].abs() < 1e-10 && l[1][0].abs() < 1e-10);
        assert!(frame.affine_in.offset.norm() < 1e-10);
        assert!((frame.affine_param.slope - 1.0).abs() < 1e-10);
        assert!(frame.affine_param.offset.abs() < 1e-10);
        let rep = quadratic_fit_residual(&frame, 256);
        assert!(rep.residual_c0 <= 1e-10, "{rep:?}");
        assert!(rep.residual_c1 <= 1e-6, "{rep:?}");
        assert!(rep.sample_count >= 256);
    }

    #[test]
    fn limit_frame_fixed_point_and_slopes() {
        let frame = build_limit_frame(default_box(), &FrameConfig::default()).unwrap();
        let s = renormalized_fixed_point(&frame, -2.0, PlanePoint::new(2.1, 1.9)).unwrap();
        assert!(s.point.dist(PlanePoint::new(2.0, 2.0)) < 1e-12);
        assert!(s.is_saddle);
        let g = frame_leaf_slopes(&frame, -2.0).unwrap();
        assert!((g.slope_stable + 1.0 / 3.0).abs() < 1e-6);
        assert!((g.slope_unstable + 3.0).abs() < 1e-6);
        assert!((g.gap - 8.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn far_points_escape() {
        let frame = build_limit_frame(default_box(), &FrameConfig::default()).unwrap();
        assert_eq!(
            renormalized_return_map(&frame, -2.0, PlanePoint::new(50.0, 0.0)),
            Err(Error::EscapedBox)
        );
    }

    #[test]
    fn perturbed_frame_residuals_scale() {
        let mut frame = build_limit_frame(default_box(), &FrameConfig::default()).unwrap();
        let mut last = (0.0, 0.0);
        for (k, eps) in [1e-4, 2e-4].into_iter().enumerate() {
            frame.affine_in.offset = PlanePoint::new(0.0, eps);
            let rep = quadratic_fit_residual(&frame, 300);
            assert!(rep.residual_c0 > 0.0 && rep.residual_c1 >= 0.0);
            // A shift along y changes both the value and the slope of the image by O(eps).
            assert!(rep.residual_c1 >= rep.residual_c0 / 10.0);
            if k == 1 {
                assert!((rep.residual_c0 / last.0 - 2.0).abs() < 0.05);
            }
            last = (rep.residual_c0, rep.residual_c1);
        }
    }

    #[test]
    fn henon_itineraries() {
        let s = ReturnSystem::henon_return(0.05, 3);
        assert_eq!(s.return_time, 6);
        assert_eq!(s.saddle_itinerary, vec![1, -1, 1, 1, 1, -1]);
        assert_eq!(s.flip_itinerary, vec![-1, -1, 1, 1, 1, -1]);
    }

    #[test]
    fn shooting_finds_limit_fixed_points() {
        let s = ReturnSystem::limit_family();
        let p = s.shoot(-2.0, &s.saddle_itinerary).unwrap();
        let q = s.shoot(-2.0, &s.flip_itinerary).unwrap();
        assert!((p[0] - 2.0).abs() < 1e-14 && (q[0] + 1.0).abs() < 1e-14);
        assert!((s.a_bar_of(&p) + 2.0).abs() < 1e-13);
        assert!((s.a_bar_of(&q) + 2.0).abs() < 1e-13);
    }

    #[test]
    fn henon_frame_pins_the_saddle() {
        let rec = crate::tangency::solve_tangency_curve(&[0.05], -2.0, 1e-12)
            .remove(0)
            .unwrap();
        let frame = build_frame(&rec, 2, default_box()).unwrap();
        assert_eq!(frame.return_time, 5);
        assert!(frame.fit_residual.is_finite());
        let s = renormalized_fixed_point(&frame, -2.0, PlanePoint::new(2.0, 2.0)).unwrap();
        assert!(s.is_saddle);
        assert!(s.point.dist(PlanePoint::new(2.0, 2.0)) < 1e-3);
        assert!((s.multipliers[1] - 4.0).abs() < 1e-3);
        let mid = frame.physical_parameter(-2.0);
        // Frame parameters approach the tangency from above, gaining a factor of about 4 per step.
        let next = build_frame(&rec, 3, default_box()).unwrap().physical_parameter(-2.0);
        assert!(mid > next && next > rec.params.a);
        assert!((mid - rec.params.a) / (next - rec.params.a) > 3.0);
    }

    #[test]
    fn sheared_chart_round_trips() {
        let affine = AffinePlane {
            offset: PlanePoint::new(0.3, -0.2),
            linear: Mat2::new(2.0, 0.5, -0.1, 1.5),
        };
        let chart = Chart::new(affine, 0.7).unwrap();
        let z = PlanePoint::new(-1.2, 0.9);
        assert!(chart.chart_point(chart.physical_point(z)).dist(z) < 1e-14);
    }
}
