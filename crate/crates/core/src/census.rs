//! Periodic orbits, Lyapunov exponents, attractor heuristics and parameter sweeps at fixed `b`.

use crate::error::{Error, Result};
use crate::geom::{Mat2, PlanePoint, Rect};
use crate::henon::{self, Params};
use crate::io::f17;
use crate::manifold::{self, ManifoldKind};
use crate::par::Exec;
use crate::tangency;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub const ESCAPE_RADIUS: f64 = 10.0;
pub const CHAOS_THRESHOLD: f64 = 0.05;
pub const HYPERBOLIC_MARGIN: f64 = 1e-8;
pub const DEDUP_TOLERANCE: f64 = 1e-6;
pub const MAX_PERIOD: usize = 64;
pub const MIN_VALID_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitKind {
    Sink,
    Saddle,
    Source,
    Nonhyperbolic,
}

impl OrbitKind {
    fn classify(multipliers: &[Complex64; 2]) -> Self {
        let lo = multipliers[0].norm().min(multipliers[1].norm());
        let hi = multipliers[0].norm().max(multipliers[1].norm());
        if hi < 1.0 - HYPERBOLIC_MARGIN {
            OrbitKind::Sink
        } else if lo > 1.0 + HYPERBOLIC_MARGIN {
            OrbitKind::Source
        } else if lo < 1.0 - HYPERBOLIC_MARGIN && hi > 1.0 + HYPERBOLIC_MARGIN {
            OrbitKind::Saddle
        } else {
            OrbitKind::Nonhyperbolic
        }
    }
}

/// A periodic cycle listed from its lexicographically smallest point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub period: usize,
    pub points: Vec<PlanePoint>,
    /// Eigenvalues of the Jacobian product around the cycle, by increasing modulus.
    pub multipliers: [Complex64; 2],
    pub kind: OrbitKind,
}

impl PeriodicOrbit {
    /// Relative defect `|m1 m2 - b^period| / |b|^period`.
    pub fn determinant_defect(&self, b: f64) -> f64 {
        let target = b.powi(self.period as i32);
        let prod = self.multipliers[0] * self.multipliers[1];
        (prod - Complex64::new(target, 0.0)).norm() / target.abs()
    }

    /// Largest step mismatch `|apply(z_i) - z_{i+1}|` around the cycle.
    pub fn closure_defect(&self, p: Params) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| henon::apply(p, self.points[i]).sup_dist(self.points[(i + 1) % n]))
            .fold(0.0, f64::max)
    }

    pub fn largest_modulus(&self) -> f64 {
        self.multipliers[1].norm()
    }

    fn cycle_distance(&self, other: &PeriodicOrbit) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|shift| {
                (0..n)
                    .map(|i| self.points[i].sup_dist(other.points[(i + shift) % n]))
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Where Newton's method is started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStrategy {
    /// Points per side of the square seed grid.
    pub grid: usize,
    pub half_width: f64,
    /// Forward images of a point just off each saddle along its unstable direction.
    pub unstable_images: usize,
    pub extra: Vec<PlanePoint>,
}

impl Default for SeedStrategy {
    fn default() -> Self {
        Self {
            grid: 32,
            half_width: 3.0,
            unstable_images: 64,
            extra: Vec::new(),
        }
    }
}

impl SeedStrategy {
    pub fn seeds(&self, p: Params) -> Vec<PlanePoint> {
        let mut out = Vec::with_capacity(self.grid * self.grid + self.extra.len());
        let n = self.grid.max(1);
        let coord = |i: usize| {
            if n == 1 {
                0.0
            } else {
                -self.half_width + 2.0 * self.half_width * (i as f64 / (n - 1) as f64)
            }
        };
        for i in 0..n {
            for j in 0..n {
                out.push(PlanePoint::new(coord(i), coord(j)));
            }
        }
        if let Ok(fixed) = henon::fixed_points(p) {
            for s in fixed {
                out.push(s.point);
                for sign in [-1.0, 1.0] {
                    let mut z = s.point + (sign * 1e-3) * s.v_u;
                    for _ in 0..self.unstable_images {
                        z = henon::apply(p, z);
                        if !inside(z) {
                            break;
                        }
                        out.push(z);
                    }
                }
            }
        }
        out.extend(self.extra.iter().copied());
        out
    }
}

fn inside(z: PlanePoint) -> bool {
    z.is_finite() && z.x.abs() < ESCAPE_RADIUS && z.y.abs() < ESCAPE_RADIUS
}

/// Damped Newton on `phi^period(z) - z` from one seed.
fn shoot(p: Params, seed: PlanePoint, period: usize) -> Option<PlanePoint> {
    let residual = |z: PlanePoint| -> Option<(PlanePoint, Mat2)> {
        let mut w = z;
        let mut m = Mat2::IDENTITY;
        for _ in 0..period {
            m = henon::jacobian(p, w) * m;
            w = henon::apply(p, w);
            if !inside(w) {
                return None;
            }
        }
        Some((w - z, m))
    };
    let mut z = seed;
    let (mut g, mut m) = residual(z)?;
    for _ in 0..50 {
        let jac = Mat2::new(m.m[0][0] - 1.0, m.m[0][1], m.m[1][0], m.m[1][1] - 1.0);
        let step = jac.inverse()?.apply(g);
        if !step.is_finite() {
            return None;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial = z - t * step;
            if let Some((g2, m2)) = residual(trial) {
                if g2.norm() < g.norm() {
                    z = trial;
                    g = g2;
                    m = m2;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted || g.norm() <= 1e-12 * (1.0 + z.norm()) {
            break;
        }
    }
    (g.norm() <= 1e-6).then_some(z)
}

/// Newton on the cyclic second-order recurrence `y_{i+1} = a - b y_{i-1} + y_i^2`.
///
/// Returns the cycle's points `(y_{i-1}, y_i)`.
fn polish(p: Params, start: PlanePoint, period: usize) -> Option<Vec<PlanePoint>> {
    let n = period;
    let mut y = DVector::zeros(n);
    let mut z = start;
    for i in 0..n {
        y[i] = z.y;
        z = henon::apply(p, z);
    }
    let eval = |y: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(n, |i, _| y[(i + 1) % n] - p.a + p.b * y[(i + n - 1) % n] - y[i] * y[i])
    };
    let mut f = eval(&y);
    for _ in 0..20 {
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            jac[(i, (i + 1) % n)] += 1.0;
            jac[(i, (i + n - 1) % n)] += p.b;
            jac[(i, i)] -= 2.0 * y[i];
        }
        let step = jac.lu().solve(&f)?;
        y -= &step;
        f = eval(&y);
        if step.amax() <= 1e-15 * (1.0 + y.amax()) {
            break;
        }
    }
    let scale = 1.0 + y.amax() * y.amax();
    if !y.iter().all(|v| v.is_finite()) || f.amax() > 1e-12 * scale {
        return None;
    }
    Some((0..n).map(|i| PlanePoint::new(y[(i + n - 1) % n], y[i])).collect())
}

/// Power iteration around the cycle with per-step renormalization.
fn dominant_multiplier(jacs: &[Mat2], forward: bool) -> f64 {
    let mut v = PlanePoint::new(0.6, 0.8);
    let mut mu = 0.0;
    for _ in 0..400 {
        let start = v;
        let mut log_scale = 0.0;
        let step = |m: &Mat2, v: PlanePoint| -> PlanePoint {
            if forward {
                m.apply(v)
            } else {
                m.inverse().map(|inv| inv.apply(v)).unwrap_or(v)
            }
        };
        let mut apply_one = |m: &Mat2| {
            v = step(m, v);
            let r = v.norm();
            log_scale += r.ln();
            v = (1.0 / r) * v;
        };
        if forward {
            jacs.iter().for_each(&mut apply_one);
        } else {
            jacs.iter().rev().for_each(&mut apply_one);
        }
        let sign = if v.dot(start) < 0.0 { -1.0 } else { 1.0 };
        let next = sign * log_scale.exp();
        let settled = (v.dot(start).abs() - 1.0).abs() < 1e-15 && (next - mu).abs() <= 1e-14 * next.abs();
        mu = next;
        if settled {
            break;
        }
    }
    mu
}

fn multipliers(p: Params, points: &[PlanePoint]) -> [Complex64; 2] {
    let jacs: Vec<Mat2> = points.iter().map(|z| henon::jacobian(p, *z)).collect();
    let product = jacs.iter().fold(Mat2::IDENTITY, |acc, j| *j * acc);
    let direct = product.eigenvalues();
    let largest = product.m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let det_scale = points.len() as f64 * f64::EPSILON * largest * largest;
    let conditioned = det_scale <= 1e-10 * product.det().abs().max(f64::MIN_POSITIVE);
    if direct[0].im != 0.0 || conditioned {
        return direct;
    }
    let big = dominant_multiplier(&jacs, true);
    let small = 1.0 / dominant_multiplier(&jacs, false);
    let (lo, hi) = if small.abs() <= big.abs() {
        (small, big)
    } else {
        (big, small)
    };
    [Complex64::new(lo, 0.0), Complex64::new(hi, 0.0)]
}

fn canonical(points: Vec<PlanePoint>) -> Vec<PlanePoint> {
    let start = (0..points.len())
        .min_by(|&i, &j| {
            let (u, v) = (points[i], points[j]);
            u.x.total_cmp(&v.x).then(u.y.total_cmp(&v.y))
        })
        .unwrap_or(0);
    let n = points.len();
    (0..n).map(|i| points[(start + i) % n]).collect()
}

fn minimal_period(points: &[PlanePoint]) -> usize {
    let n = points.len();
    (1..n)
        .filter(|d| n.is_multiple_of(*d))
        .find(|&d| points[d].sup_dist(points[0]) <= DEDUP_TOLERANCE)
        .unwrap_or(n)
}

/// Assembles a verified orbit of exact minimal period `period` from an approximate cycle point.
pub fn refine_orbit(p: Params, start: PlanePoint, period: usize) -> Option<PeriodicOrbit> {
    let points = polish(p, start, period)?;
    if minimal_period(&points) != period {
        return None;
    }
    let points = canonical(points);
    let multipliers = multipliers(p, &points);
    Some(PeriodicOrbit {
        period,
        kind: OrbitKind::classify(&multipliers),
        points,
        multipliers,
    })
}

fn merge_orbits(orbits: &mut Vec<PeriodicOrbit>, found: impl IntoIterator<Item = PeriodicOrbit>) {
    for orbit in found {
        let duplicate = orbits
            .iter()
            .any(|o| o.period == orbit.period && o.cycle_distance(&orbit) <= DEDUP_TOLERANCE);
        if !duplicate {
            orbits.push(orbit);
        }
    }
}

fn sort_orbits(orbits: &mut [PeriodicOrbit]) {
    orbits.sort_by(|u, v| {
        u.period
            .cmp(&v.period)
            .then(u.points[0].x.total_cmp(&v.points[0].x))
            .then(u.points[0].y.total_cmp(&v.points[0].y))
    });
}

/// Newton search for cycles of period `1..=max_period`, deduplicated up to rotation.
pub fn find_periodic_orbits(p: Params, max_period: usize, seeds: &SeedStrategy) -> Vec<PeriodicOrbit> {
    find_periodic_orbits_with(p, max_period, seeds, Exec::Parallel)
}

pub fn find_periodic_orbits_with(p: Params, max_period: usize, seeds: &SeedStrategy, exec: Exec) -> Vec<PeriodicOrbit> {
    if p.b == 0.0 || max_period == 0 || max_period > MAX_PERIOD {
        return Vec::new();
    }
    let starts = seeds.seeds(p);
    let mut orbits = Vec::new();
    for period in 1..=max_period {
        let found = exec.map(&starts, |&z| {
            shoot(p, z, period).and_then(|c| refine_orbit(p, c, period))
        });
        merge_orbits(&mut orbits, found.into_iter().flatten());
    }
    sort_orbits(&mut orbits);
    orbits
}

/// Largest Lyapunov exponent along one forward orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub params: Params,
    /// Mean log growth per iterate; meaningless when `escaped` is set.
    pub exponent: f64,
    pub transient: usize,
    pub iterations: usize,
    pub seed_point: PlanePoint,
    pub escaped: bool,
}

impl LyapunovReport {
    pub fn is_valid(&self) -> bool {
        !self.escaped && self.iterations >= MIN_VALID_ITERATIONS && self.exponent.is_finite()
    }
}

pub fn lyapunov_exponent(p: Params, seed: PlanePoint, transient: usize, iterations: usize) -> LyapunovReport {
    let mut report = LyapunovReport {
        params: p,
        exponent: f64::NAN,
        transient,
        iterations,
        seed_point: seed,
        escaped: false,
    };
    let mut z = seed;
    for _ in 0..transient {
        z = henon::apply(p, z);
        if !inside(z) {
            report.escaped = true;
            return report;
        }
    }
    let mut v = PlanePoint::new(1.0, 0.0);
    let mut sum = 0.0;
    for k in 0..iterations {
        v = henon::jacobian(p, z).apply(v);
        z = henon::apply(p, z);
        let r = v.norm();
        sum += r.ln();
        v = (1.0 / r) * v;
        if !inside(z) || r == 0.0 {
            report.escaped = true;
            report.exponent = sum / (k + 1) as f64;
            return report;
        }
    }
    report.exponent = sum / iterations.max(1) as f64;
    report
}

/// A convex polygon `U` together with the iterate count `k` for which `phi^k(U)` lands inside `U`.
///
/// The union of `U, phi(U), ..., phi^{k-1}(U)` is then forward invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrappingRegion {
    pub polygon: Vec<PlanePoint>,
    pub bounding_box: Rect,
    pub steps: usize,
    pub margin: f64,
    pub boundary_samples: usize,
}

impl TrappingRegion {
    pub fn contains(&self, z: PlanePoint) -> bool {
        convex_contains(&self.polygon, z)
    }
}

/// Proxy certificate: trapping region, a saddle inside it and a positive exponent.
/// Density of the orbit is not checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorCertificate {
    pub region: TrappingRegion,
    pub saddle: PlanePoint,
    pub report: LyapunovReport,
}

fn convex_hull(mut pts: Vec<PlanePoint>) -> Vec<PlanePoint> {
    pts.sort_by(|u, v| u.x.total_cmp(&v.x).then(u.y.total_cmp(&v.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: PlanePoint, a: PlanePoint, b: PlanePoint| (a - o).cross(b - o);
    let mut hull: Vec<PlanePoint> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let base = hull.len();
        let iter: Box<dyn Iterator<Item = &PlanePoint>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &q in iter {
            while hull.len() >= base + 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

/// Point location in a counter-clockwise convex polygon by bisection over the fan from vertex 0.
fn convex_contains(poly: &[PlanePoint], z: PlanePoint) -> bool {
    let n = poly.len();
    if n < 3 || !z.is_finite() {
        return false;
    }
    let o = poly[0];
    let side = |a: PlanePoint, b: PlanePoint| (b - a).cross(z - a);
    if side(o, poly[1]) < 0.0 || side(o, poly[n - 1]) > 0.0 {
        return false;
    }
    let (mut lo, mut hi) = (1, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if side(o, poly[mid]) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    side(poly[lo], poly[lo + 1]) >= 0.0
}

fn dilate_polygon(hull: &[PlanePoint], margin: f64) -> Vec<PlanePoint> {
    let sum = hull.iter().fold(PlanePoint::default(), |acc, &q| acc + q);
    let c = (1.0 / hull.len() as f64) * sum;
    hull.iter()
        .map(|&q| {
            let d = q - c;
            c + (1.0 + margin / d.norm()) * d
        })
        .collect()
}

fn trapping_region(p: Params, start: PlanePoint) -> Option<TrappingRegion> {
    const ORBIT: usize = 20_000;
    const PER_EDGE: usize = 16;
    let mut z = start;
    let mut orbit = Vec::with_capacity(ORBIT);
    for _ in 0..ORBIT {
        z = henon::apply(p, z);
        if !inside(z) {
            return None;
        }
        orbit.push(z);
    }
    let hull = convex_hull(orbit);
    if hull.len() < 3 {
        return None;
    }
    for margin in [0.01, 0.005, 0.002] {
        let polygon = dilate_polygon(&hull, margin);
        let n = polygon.len();
        let boundary: Vec<PlanePoint> = (0..n)
            .flat_map(|i| {
                let (u, v) = (polygon[i], polygon[(i + 1) % n]);
                (0..PER_EDGE).map(move |k| u + (k as f64 / PER_EDGE as f64) * (v - u))
            })
            .collect();
        let mut images = boundary.clone();
        for steps in 1..=12 {
            images.iter_mut().for_each(|w| *w = henon::apply(p, *w));
            if images.iter().all(|&w| convex_contains(&polygon, w)) {
                let (mut lo, mut hi) = (polygon[0], polygon[0]);
                for q in &polygon {
                    lo = PlanePoint::new(lo.x.min(q.x), lo.y.min(q.y));
                    hi = PlanePoint::new(hi.x.max(q.x), hi.y.max(q.y));
                }
                return Some(TrappingRegion {
                    bounding_box: Rect::new(lo.x, hi.x, lo.y, hi.y),
                    polygon,
                    steps,
                    margin,
                    boundary_samples: boundary.len(),
                });
            }
        }
    }
    None
}

fn attractor_seeds(p: Params) -> Vec<PlanePoint> {
    let mut seeds = vec![PlanePoint::new(0.1, 0.1)];
    if let Ok(fixed) = henon::fixed_points(p) {
        for s in fixed {
            seeds.push(s.point + 1e-3 * s.v_u);
            seeds.push(s.point - 1e-3 * s.v_u);
        }
    }
    let n = 8;
    for i in 0..n {
        for j in 0..n {
            let c = |k: usize| -3.0 + 6.0 * (k as f64 + 0.5) / n as f64;
            seeds.push(PlanePoint::new(c(i), c(j)));
        }
    }
    seeds
}

/// Heuristic strange-attractor test with the default transient and orbit length.
pub fn detect_strange_attractor(p: Params) -> Option<AttractorCertificate> {
    let cfg = CensusConfig::default();
    let report = attractor_seeds(p)
        .into_iter()
        .map(|s| lyapunov_exponent(p, s, cfg.transient, cfg.iterations))
        .find(|r| !r.escaped)?;
    if !(report.is_valid() && report.exponent > CHAOS_THRESHOLD) {
        return None;
    }
    let start = henon::iterate(p, report.seed_point, report.transient);
    let region = trapping_region(p, start)?;
    let saddle_inside = |z: PlanePoint| region.contains(z);
    let saddle = henon::fixed_points(p)
        .ok()
        .into_iter()
        .flatten()
        .filter(|s| s.lambda.abs() < 1.0 && s.sigma.abs() > 1.0)
        .map(|s| s.point)
        .find(|&z| saddle_inside(z))
        .or_else(|| {
            find_periodic_orbits(p, 2, &SeedStrategy::default())
                .into_iter()
                .filter(|o| o.kind == OrbitKind::Saddle)
                .map(|o| o.points[0])
                .find(|&z| saddle_inside(z))
        })?;
    Some(AttractorCertificate { region, saddle, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Sinks,
    ChaoticAttractor,
    Escape,
    Undetermined,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Sinks => "sinks",
            Classification::ChaoticAttractor => "chaotic_attractor",
            Classification::Escape => "escape",
            Classification::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub a: f64,
    pub b: f64,
    /// One entry per distinct sink, ascending.
    pub sink_periods: Vec<usize>,
    pub lyapunov: Option<f64>,
    pub tangency_gap: Option<f64>,
    pub classification: Classification,
}

impl SweepRecord {
    pub const CSV_HEADER: &'static str = "a,b,classification,sink_periods,lyapunov,tangency_gap";

    pub fn csv_row(&self) -> String {
        let periods = self
            .sink_periods
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let opt = |v: Option<f64>| v.map(f17).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            f17(self.a),
            f17(self.b),
            self.classification.as_str(),
            periods,
            opt(self.lyapunov),
            opt(self.tangency_gap)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub points: usize,
    pub sink_fraction: f64,
    pub chaotic_fraction: f64,
    pub escape_fraction: f64,
    pub max_sinks_at_one_parameter: usize,
}

impl SweepSummary {
    pub fn from_records(records: &[SweepRecord]) -> Self {
        let n = records.len();
        let frac = |c: Classification| {
            if n == 0 {
                0.0
            } else {
                records.iter().filter(|r| r.classification == c).count() as f64 / n as f64
            }
        };
        Self {
            points: n,
            sink_fraction: frac(Classification::Sinks),
            chaotic_fraction: frac(Classification::ChaoticAttractor),
            escape_fraction: frac(Classification::Escape),
            max_sinks_at_one_parameter: records.iter().map(|r| r.sink_periods.len()).max().unwrap_or(0),
        }
    }
}

/// Per-parameter controls of the census.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusConfig {
    pub transient: usize,
    pub iterations: usize,
    /// Points per side of the forward-iteration seed grid over `[-3, 3]^2`.
    pub basin_grid: usize,
    pub newton_seeds: SeedStrategy,
    pub tangency_gap: bool,
}

impl Default for CensusConfig {
    fn default() -> Self {
        Self {
            transient: 10_000,
            iterations: 1_000_000,
            basin_grid: 24,
            newton_seeds: SeedStrategy {
                grid: 16,
                ..SeedStrategy::default()
            },
            tangency_gap: true,
        }
    }
}

/// Classification of one parameter together with the orbits it rests on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusPoint {
    pub record: SweepRecord,
    pub orbits: Vec<PeriodicOrbit>,
}

/// Sampled test of whether the unstable manifold of the plus saddle enters the basin of a sink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasinContact {
    pub period: usize,
    pub meets: bool,
    /// Samples on each branch of a fundamental domain of the local unstable manifold.
    pub samples_per_branch: usize,
    pub iterations: usize,
    pub hits: usize,
}

pub fn basin_meets_unstable(
    p: Params,
    sink: &PeriodicOrbit,
    samples_per_branch: usize,
    iterations: usize,
) -> Result<BasinContact> {
    let saddle = henon::plus_saddle(p)?;
    let chart = manifold::local_manifold_chart(p, &saddle, ManifoldKind::Unstable, manifold::DEFAULT_DEGREE)?;
    let sigma = chart.multiplier.abs();
    let radius = chart.domain_radius;
    let n = samples_per_branch.max(1);
    let mut hits = 0;
    for sign in [-1.0, 1.0] {
        for k in 0..n {
            let s = sign * radius * sigma.powf(-(k as f64 + 0.5) / n as f64);
            let mut z = chart.eval(s);
            for _ in 0..iterations {
                z = henon::apply(p, z);
                if !inside(z) {
                    break;
                }
                if sink.points.iter().any(|q| q.sup_dist(z) <= 1e-6) {
                    hits += 1;
                    break;
                }
            }
        }
    }
    Ok(BasinContact {
        period: sink.period,
        meets: hits > 0,
        samples_per_branch: n,
        iterations,
        hits,
    })
}

/// Detects a cycle of period at most `max_period` that the orbit of `z` has settled on.
fn settled_cycle(p: Params, z: PlanePoint, max_period: usize) -> Option<(PlanePoint, usize)> {
    let mut w = z;
    for period in 1..=max_period {
        w = henon::apply(p, w);
        if w.sup_dist(z) <= 1e-7 {
            return Some((z, period));
        }
    }
    None
}

pub fn census_point(p: Params, max_period: usize, cfg: &CensusConfig) -> CensusPoint {
    let mut sinks: Vec<PeriodicOrbit> = Vec::new();
    let mut chaotic_start = None;
    let n = cfg.basin_grid.max(1);
    let mut starts: Vec<PlanePoint> = (0..n * n)
        .map(|k| {
            let c = |i: usize| -3.0 + 6.0 * (i as f64 + 0.5) / n as f64;
            PlanePoint::new(c(k / n), c(k % n))
        })
        .collect();
    starts.extend(attractor_seeds(p));
    for seed in starts {
        let mut z = seed;
        let mut alive = true;
        for _ in 0..cfg.transient {
            z = henon::apply(p, z);
            if !inside(z) {
                alive = false;
                break;
            }
        }
        if !alive {
            continue;
        }
        match settled_cycle(p, z, max_period.min(MAX_PERIOD)) {
            Some((c, period)) => {
                if let Some(o) = refine_orbit(p, c, period).filter(|o| o.kind == OrbitKind::Sink) {
                    merge_orbits(&mut sinks, [o]);
                }
            }
            None => {
                chaotic_start.get_or_insert(seed);
            }
        }
    }
    let newton = find_periodic_orbits_with(p, max_period, &cfg.newton_seeds, Exec::Sequential);
    merge_orbits(&mut sinks, newton.into_iter().filter(|o| o.kind == OrbitKind::Sink));
    sort_orbits(&mut sinks);

    let report = chaotic_start.map(|s| lyapunov_exponent(p, s, cfg.transient, cfg.iterations));
    let lyapunov = report.filter(|r| !r.escaped).map(|r| r.exponent);
    let tangency_gap = if cfg.tangency_gap {
        tangency::split_function_h(p).ok()
    } else {
        None
    };
    let classification = if !sinks.is_empty() {
        Classification::Sinks
    } else if report.is_some_and(|r| r.is_valid() && r.exponent > CHAOS_THRESHOLD) {
        Classification::ChaoticAttractor
    } else if report.is_none() || report.is_some_and(|r| r.escaped) {
        Classification::Escape
    } else {
        Classification::Undetermined
    };
    CensusPoint {
        record: SweepRecord {
            a: p.a,
            b: p.b,
            sink_periods: sinks.iter().map(|o| o.period).collect(),
            lyapunov,
            tangency_gap,
            classification,
        },
        orbits: sinks,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusSweep {
    pub points: Vec<CensusPoint>,
    pub summary: SweepSummary,
}

impl CensusSweep {
    pub fn records(&self) -> Vec<SweepRecord> {
        self.points.iter().map(|c| c.record.clone()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SweepRecord::CSV_HEADER);
        out.push('\n');
        for c in &self.points {
            out.push_str(&c.record.csv_row());
            out.push('\n');
        }
        out
    }
}

/// The `i`-th of `grid` equally spaced values; coincides exactly across grids `g` and `2g - 1`.
pub fn grid_value(interval: (f64, f64), grid: usize, i: usize) -> f64 {
    if grid <= 1 {
        return interval.0;
    }
    interval.0 + (interval.1 - interval.0) * (i as f64 / (grid - 1) as f64)
}

pub fn sink_census_sweep(b: f64, a_interval: (f64, f64), grid: usize, max_period: usize) -> Result<CensusSweep> {
    sink_census_sweep_with(
        b,
        a_interval,
        grid,
        max_period,
        &CensusConfig::default(),
        Exec::Parallel,
    )
}

pub fn sink_census_sweep_with(
    b: f64,
    a_interval: (f64, f64),
    grid: usize,
    max_period: usize,
    cfg: &CensusConfig,
    exec: Exec,
) -> Result<CensusSweep> {
    if b == 0.0 {
        return Err(Error::NonInvertible);
    }
    if max_period == 0 || max_period > MAX_PERIOD {
        return Err(Error::Degenerate(format!(
            "max_period {max_period} outside 1..={MAX_PERIOD}"
        )));
    }
    if grid == 0 || !(a_interval.0 <= a_interval.1) {
        return Err(Error::Degenerate("empty parameter grid".into()));
    }
    let points = exec.map_range(grid, |i| {
        census_point(Params::new(grid_value(a_interval, grid, i), b), max_period, cfg)
    });
    let records: Vec<SweepRecord> = points.iter().map(|c| c.record.clone()).collect();
    Ok(CensusSweep {
        summary: SweepSummary::from_records(&records),
        points,
    })
}
