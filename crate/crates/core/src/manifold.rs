//! Stable and unstable manifolds of the plus saddle.
//!
//! Local charts solve the conjugacy equation `phi(P(s)) = P(mu s)` order by order. Global arcs
//! are obtained by pushing the chart through the map (unstable) or its inverse (stable), carrying
//! first and second derivatives along so tangents and curvatures are exact up to roundoff.

use crate::error::{Error, Result};
use crate::geom::{PlanePoint, Rect};
use crate::henon::{self, Params, SaddleData};
use crate::io::csv_row;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    Stable,
    Unstable,
}

/// A point on a parametrized curve with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub p: PlanePoint,
    pub d1: PlanePoint,
    pub d2: PlanePoint,
}

impl Jet {
    pub fn tangent(&self) -> PlanePoint {
        self.d1.normalized()
    }

    /// Signed curvature with respect to increasing parameter.
    pub fn curvature(&self) -> f64 {
        self.d1.cross(self.d2) / self.d1.norm().powi(3)
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }

    fn forward(self, p: Params) -> Jet {
        let Jet { p: z, d1, d2 } = self;
        Jet {
            p: henon::apply(p, z),
            d1: PlanePoint::new(d1.y, -p.b * d1.x + 2.0 * z.y * d1.y),
            d2: PlanePoint::new(d2.y, -p.b * d2.x + 2.0 * z.y * d2.y + 2.0 * d1.y * d1.y),
        }
    }

    fn backward(self, p: Params) -> Jet {
        let Jet { p: z, d1, d2 } = self;
        Jet {
            p: henon::inverse_unchecked(p, z),
            d1: PlanePoint::new((2.0 * z.x * d1.x - d1.y) / p.b, d1.x),
            d2: PlanePoint::new((2.0 * z.x * d2.x + 2.0 * d1.x * d1.x - d2.y) / p.b, d2.x),
        }
    }
}

/// Polynomial parametrization of a local invariant manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalChart {
    pub center: PlanePoint,
    pub coeffs: Vec<PlanePoint>,
    pub kind: ManifoldKind,
    pub multiplier: f64,
    pub domain_radius: f64,
}

impl LocalChart {
    pub fn eval(&self, s: f64) -> PlanePoint {
        self.jet(s).p
    }

    pub fn jet(&self, s: f64) -> Jet {
        let mut p = PlanePoint::default();
        let mut d1 = PlanePoint::default();
        let mut d2 = PlanePoint::default();
        for c in self.coeffs.iter().rev() {
            d2 = s * d2 + 2.0 * d1;
            d1 = s * d1 + p;
            p = s * p + *c;
        }
        Jet { p, d1, d2 }
    }

    /// Largest conjugacy defect over `samples` evenly spaced parameters in `[-r, r]`.
    pub fn residual(&self, p: Params, r: f64, samples: usize) -> f64 {
        let n = samples.max(2);
        (0..n)
            .map(|i| {
                let s = -r + 2.0 * r * i as f64 / (n - 1) as f64;
                henon::apply(p, self.eval(s)).dist(self.eval(self.multiplier * s))
            })
            .fold(0.0, f64::max)
    }
}

/// Residual target for the domain radius search.
pub const CHART_TOLERANCE: f64 = 1e-10;

pub fn local_manifold_chart(p: Params, s: &SaddleData, kind: ManifoldKind, degree: usize) -> Result<LocalChart> {
    let mu = match kind {
        ManifoldKind::Stable => s.lambda,
        ManifoldKind::Unstable => s.sigma,
    };
    if kind == ManifoldKind::Stable && (p.b == 0.0 || mu == 0.0) {
        return Err(Error::Degenerate(
            "stable chart at b = 0: the stable set is the horizontal line".into(),
        ));
    }
    let y0 = s.point.y;
    let mut xs = vec![y0, 1.0];
    let mut ys = vec![y0, mu];
    for k in 2..=degree.max(1) {
        let conv: f64 = (1..k).map(|i| ys[i] * ys[k - i]).sum();
        let m = mu.powi(k as i32);
        let det = m * m - 2.0 * y0 * m + p.b;
        if det.abs() < 1e-13 * (1.0 + m * m) {
            return Err(Error::SmallDivisor { order: k, value: det });
        }
        let xk = conv / det;
        xs.push(xk);
        ys.push(m * xk);
    }
    let coeffs: Vec<PlanePoint> = xs
        .into_iter()
        .zip(ys)
        .take(degree.max(1) + 1)
        .map(|(x, y)| PlanePoint::new(x, y))
        .collect();
    let mut chart = LocalChart {
        center: s.point,
        coeffs,
        kind,
        multiplier: mu,
        domain_radius: 0.0,
    };
    let mut r = 1.0;
    while r > 1e-8 {
        if chart.residual(p, r, 64) <= CHART_TOLERANCE {
            chart.domain_radius = r;
            return Ok(chart);
        }
        r *= 0.8;
    }
    Err(Error::Degenerate("no chart radius meets the residual target".into()))
}

/// Global parametrization of one invariant manifold of the plus saddle.
///
/// The unstable branch is `W(s) = phi^n(P(s / sigma^n))`, the stable one
/// `V(s) = phi^{-m}(Q(lambda^m s))`, with `n`, `m` the smallest counts that bring the
/// argument inside the chart radius.
#[derive(Debug, Clone)]
pub struct GlobalBranch {
    pub params: Params,
    pub saddle: SaddleData,
    pub chart: LocalChart,
    eval_radius: f64,
}

pub const DEFAULT_DEGREE: usize = 30;

impl GlobalBranch {
    pub fn new(p: Params, kind: ManifoldKind, degree: usize) -> Result<Self> {
        let saddle = henon::plus_saddle(p)?;
        let chart = local_manifold_chart(p, &saddle, kind, degree)?;
        Ok(Self::from_chart(p, saddle, chart))
    }

    pub fn from_chart(p: Params, saddle: SaddleData, chart: LocalChart) -> Self {
        let eval_radius = 0.5 * chart.domain_radius;
        Self {
            params: p,
            saddle,
            chart,
            eval_radius,
        }
    }

    pub fn unstable(p: Params) -> Result<Self> {
        Self::new(p, ManifoldKind::Unstable, DEFAULT_DEGREE)
    }

    pub fn stable(p: Params) -> Result<Self> {
        Self::new(p, ManifoldKind::Stable, DEFAULT_DEGREE)
    }

    pub fn kind(&self) -> ManifoldKind {
        self.chart.kind
    }

    pub fn eval_radius(&self) -> f64 {
        self.eval_radius
    }

    pub fn point(&self, s: f64) -> PlanePoint {
        self.jet(s).p
    }

    pub fn jet(&self, s: f64) -> Jet {
        let mu = self.chart.multiplier;
        let mut u = s;
        let mut scale = 1.0;
        let mut steps = 0;
        match self.chart.kind {
            ManifoldKind::Unstable => {
                while u.abs() > self.eval_radius && steps < 400 {
                    u /= mu;
                    scale /= mu;
                    steps += 1;
                }
            }
            ManifoldKind::Stable => {
                while u.abs() > self.eval_radius && steps < 400 {
                    u *= mu;
                    scale *= mu;
                    steps += 1;
                }
            }
        }
        let local = self.chart.jet(u);
        let mut j = Jet {
            p: local.p,
            d1: scale * local.d1,
            d2: (scale * scale) * local.d2,
        };
        for _ in 0..steps {
            j = match self.chart.kind {
                ManifoldKind::Unstable => j.forward(self.params),
                ManifoldKind::Stable => j.backward(self.params),
            };
        }
        j
    }

    /// Parameter interval covered by one fundamental domain on the given side.
    pub fn fundamental_domain(&self, side: f64) -> (f64, f64) {
        let r = self.eval_radius * side.signum();
        match self.chart.kind {
            ManifoldKind::Unstable => (r / self.chart.multiplier.abs(), r),
            ManifoldKind::Stable => (r * self.chart.multiplier.abs(), r),
        }
    }
}

/// An oriented polyline with per-node tangent, curvature and cumulative arclength.
///
/// `params` holds the generating parameter of each node (the manifold parameter for grown arcs,
/// the arclength for curves built from bare nodes).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveSegment {
    pub nodes: Vec<PlanePoint>,
    pub tangents: Vec<PlanePoint>,
    pub curvatures: Vec<f64>,
    pub arclength: Vec<f64>,
    pub params: Vec<f64>,
}

fn cumulative_length(nodes: &[PlanePoint]) -> Vec<f64> {
    let mut out = Vec::with_capacity(nodes.len());
    let mut acc = 0.0;
    for (i, n) in nodes.iter().enumerate() {
        if i > 0 {
            acc += n.dist(nodes[i - 1]);
        }
        out.push(acc);
    }
    out
}

impl CurveSegment {
    /// Builds a segment from nodes alone; tangents and curvatures come from local quadratic fits.
    pub fn from_nodes(nodes: Vec<PlanePoint>) -> Self {
        let arclength = cumulative_length(&nodes);
        let mut seg = CurveSegment {
            params: arclength.clone(),
            tangents: vec![PlanePoint::default(); nodes.len()],
            curvatures: vec![0.0; nodes.len()],
            nodes,
            arclength,
        };
        for i in 0..seg.nodes.len() {
            if let Ok((t, k)) = fit_at(&seg, i, seg.arclength[i]) {
                seg.tangents[i] = t;
                seg.curvatures[i] = k;
            }
        }
        seg
    }

    /// Builds a segment from exact jets; `orientation` is +1 when nodes follow increasing parameter.
    pub fn from_jets(params: Vec<f64>, jets: &[Jet], orientation: f64) -> Self {
        let nodes: Vec<PlanePoint> = jets.iter().map(|j| j.p).collect();
        let tangents = jets.iter().map(|j| orientation * j.tangent()).collect();
        let curvatures = jets.iter().map(|j| orientation * j.curvature()).collect();
        CurveSegment {
            arclength: cumulative_length(&nodes),
            nodes,
            tangents,
            curvatures,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.arclength.last().copied().unwrap_or(0.0)
    }

    /// Linear interpolation of the polyline at an arclength position.
    pub fn point_at(&self, at: f64) -> Result<PlanePoint> {
        let i = self.locate(at)?;
        let (s0, s1) = (self.arclength[i], self.arclength[i + 1]);
        let t = if s1 > s0 { (at - s0) / (s1 - s0) } else { 0.0 };
        Ok(self.nodes[i] + t * (self.nodes[i + 1] - self.nodes[i]))
    }

    fn locate(&self, at: f64) -> Result<usize> {
        let hi = self.total_length();
        if self.len() < 2 || !(0.0..=hi).contains(&at) {
            return Err(Error::OutOfRange { at, lo: 0.0, hi });
        }
        let i = self.arclength.partition_point(|&s| s <= at);
        Ok(i.clamp(1, self.len() - 1) - 1)
    }

    /// Largest and smallest consecutive node spacing.
    pub fn spacing_range(&self) -> (f64, f64) {
        self.nodes
            .windows(2)
            .map(|w| w[0].dist(w[1]))
            .fold((f64::INFINITY, 0.0), |(lo, hi), d| (lo.min(d), hi.max(d)))
    }

    /// CSV with columns `s, x, y, tx, ty, kappa`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,x,y,tx,ty,kappa\n");
        for i in 0..self.len() {
            let (n, t) = (self.nodes[i], self.tangents[i]);
            out.push_str(&csv_row(&[self.arclength[i], n.x, n.y, t.x, t.y, self.curvatures[i]]));
            out.push('\n');
        }
        out
    }
}

/// Half-width of the node window used by the quadratic fit.
const FIT_HALF_WINDOW: usize = 5;

fn fit_at(c: &CurveSegment, center: usize, at: f64) -> Result<(PlanePoint, f64)> {
    let n = c.len();
    if n < 3 {
        return Err(Error::OutOfRange {
            at,
            lo: 0.0,
            hi: c.total_length(),
        });
    }
    let lo = center.saturating_sub(FIT_HALF_WINDOW).min(n - 3);
    let hi = (center + FIT_HALF_WINDOW + 1).min(n).max(lo + 3);
    let mut m = [[0.0; 3]; 3];
    let mut rx = [0.0; 3];
    let mut ry = [0.0; 3];
    for i in lo..hi {
        let u = c.arclength[i] - at;
        let basis = [1.0, u, u * u];
        for r in 0..3 {
            for k in 0..3 {
                m[r][k] += basis[r] * basis[k];
            }
            rx[r] += basis[r] * c.nodes[i].x;
            ry[r] += basis[r] * c.nodes[i].y;
        }
    }
    let cx = solve3(m, rx).ok_or(Error::NotGraphLike)?;
    let cy = solve3(m, ry).ok_or(Error::NotGraphLike)?;
    let v = PlanePoint::new(cx[1], cy[1]);
    let acc = PlanePoint::new(2.0 * cx[2], 2.0 * cy[2]);
    Ok((v.normalized(), v.cross(acc) / v.norm().powi(3)))
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
pub(crate) fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (r[row] - s) / m[row][row];
    }
    Some(x)
}

/// Tangent and signed curvature from a windowed least-squares quadratic fit in arclength.
pub fn curve_derivatives(c: &CurveSegment, at_arclength: f64) -> Result<(PlanePoint, f64)> {
    let i = c.locate(at_arclength)?;
    let nearest = if at_arclength - c.arclength[i] <= c.arclength[i + 1] - at_arclength {
        i
    } else {
        i + 1
    };
    fit_at(c, nearest, at_arclength)
}

/// Resolution and escape controls for manifold growth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConfig {
    pub h_min: f64,
    pub h_max: f64,
    pub escape_radius: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            h_min: 1e-5,
            h_max: 1e-3,
            escape_radius: 10.0,
        }
    }
}

type Poly = Vec<(f64, PlanePoint)>;

/// Chord sagitta allowed relative to the chord length before a segment is split.
const SAGITTA_RATIO: f64 = 0.01;

fn refine(branch: &GlobalBranch, poly: &Poly, cfg: &GrowthConfig) -> Poly {
    let mut out: Poly = Vec::with_capacity(poly.len());
    for w in poly.windows(2) {
        if out.is_empty() {
            out.push(w[0]);
        }
        let mut stack = vec![w[1]];
        let mut left = w[0];
        while let Some(right) = stack.last().copied() {
            let gap = left.1.dist(right.1);
            let ds = right.0 - left.0;
            let splittable = ds.abs() > 1e-15 * right.0.abs().max(1e-300) && stack.len() < 64 && gap > 2.0 * cfg.h_min;
            let mid = if splittable {
                let sm = left.0 + 0.5 * ds;
                Some((sm, branch.point(sm)))
            } else {
                None
            };
            let bend = mid
                .map(|m| m.1.dist(0.5 * (left.1 + right.1)) > SAGITTA_RATIO * gap)
                .unwrap_or(false);
            match mid {
                Some(m) if gap > cfg.h_max || bend => stack.push(m),
                _ => {
                    out.push(right);
                    left = right;
                    stack.pop();
                }
            }
        }
    }
    if out.is_empty() {
        out.extend(poly.iter().copied());
    }
    out
}

/// Arcs of the unstable manifold: the fundamental domain on each side and its first
/// `iterations` forward images, clipped to `trim` and resampled by arclength.
///
/// Parts of the arc that leave the escape radius are cut; `BlowUp` is reported only when the
/// fundamental domain itself is not contained in the escape disc.
pub fn grow_unstable(
    p: Params,
    chart: &LocalChart,
    iterations: usize,
    trim: Rect,
    cfg: &GrowthConfig,
) -> Result<Vec<CurveSegment>> {
    if chart.kind != ManifoldKind::Unstable {
        return Err(Error::Degenerate("grow_unstable needs an unstable chart".into()));
    }
    let saddle = henon::plus_saddle(p)?;
    let branch = GlobalBranch::from_chart(p, saddle, chart.clone());
    let mut out = Vec::new();
    for side in [-1.0, 1.0] {
        let arcs = grow_side(&branch, side, iterations, cfg)?;
        for piece in clip(&arcs, trim) {
            if let Some(seg) = resample(&branch, &piece, cfg) {
                out.push(seg);
            }
        }
    }
    Ok(out)
}

fn grow_side(branch: &GlobalBranch, side: f64, iterations: usize, cfg: &GrowthConfig) -> Result<Vec<Poly>> {
    let (s0, s1) = branch.fundamental_domain(side);
    let inside = |z: PlanePoint| z.is_finite() && z.norm() <= cfg.escape_radius;
    let seed: Poly = (0..=16)
        .map(|i| {
            let s = s0 + (s1 - s0) * i as f64 / 16.0;
            (s, branch.point(s))
        })
        .collect();
    if !seed.iter().all(|(_, z)| inside(*z)) {
        return Err(Error::BlowUp {
            radius: cfg.escape_radius,
        });
    }
    let sigma = branch.chart.multiplier;
    let mut all = vec![refine(branch, &seed, cfg)];
    let mut current = all.clone();
    for _ in 0..iterations {
        let mut next = Vec::new();
        for poly in &current {
            let mut run: Poly = Vec::new();
            for &(s, z) in poly {
                let img = henon::apply(branch.params, z);
                if inside(img) {
                    run.push((s * sigma, img));
                } else if run.len() > 1 {
                    next.push(std::mem::take(&mut run));
                } else {
                    run.clear();
                }
            }
            if run.len() > 1 {
                next.push(run);
            }
        }
        current = next.iter().map(|p| refine(branch, p, cfg)).collect();
        all.extend(current.iter().cloned());
    }
    Ok(all)
}

fn clip(arcs: &[Poly], trim: Rect) -> Vec<Poly> {
    let mut pieces = Vec::new();
    for poly in arcs {
        let mut run: Poly = Vec::new();
        for &node in poly {
            if trim.contains(node.1) {
                run.push(node);
            } else if !run.is_empty() {
                pieces.push(std::mem::take(&mut run));
            }
        }
        if !run.is_empty() {
            pieces.push(run);
        }
    }
    pieces
}

/// Largest tangent turn between consecutive resampled nodes.
const TURN_PER_STEP: f64 = 0.04;

fn resample(branch: &GlobalBranch, piece: &Poly, cfg: &GrowthConfig) -> Option<CurveSegment> {
    if piece.len() < 2 {
        return None;
    }
    let pts: Vec<PlanePoint> = piece.iter().map(|n| n.1).collect();
    let cum = cumulative_length(&pts);
    let total = *cum.last()?;
    if total < cfg.h_min {
        return None;
    }
    let param_at = |target: f64| {
        let i = cum.partition_point(|&c| c <= target).clamp(1, cum.len() - 1) - 1;
        let t = if cum[i + 1] > cum[i] {
            (target - cum[i]) / (cum[i + 1] - cum[i])
        } else {
            0.0
        };
        piece[i].0 + t * (piece[i + 1].0 - piece[i].0)
    };
    let mut params = vec![piece[0].0];
    let mut pos = 0.0;
    let min_step = 2.0 * cfg.h_min;
    loop {
        let here = branch.jet(*params.last()?);
        let mut step = (TURN_PER_STEP / here.curvature().abs()).clamp(min_step, 0.5 * cfg.h_max);
        if pos + step >= total - 0.5 * cfg.h_min {
            params.push(piece[piece.len() - 1].0);
            break;
        }
        let mut next = param_at(pos + step);
        while step > min_step {
            let turn = branch.jet(next).d1.normalized().dist(here.d1.normalized());
            if turn <= 1.5 * TURN_PER_STEP {
                break;
            }
            step = (0.5 * step).max(min_step);
            next = param_at(pos + step);
        }
        pos += step;
        params.push(next);
    }
    let mut jets: Vec<Jet> = Vec::with_capacity(params.len());
    let mut kept = Vec::with_capacity(params.len());
    for (k, &s) in params.iter().enumerate() {
        let j = branch.jet(s);
        let last = k + 1 == params.len();
        if let Some(prev) = jets.last() {
            if j.p.dist(prev.p) < cfg.h_min {
                if !last || jets.len() < 2 {
                    continue;
                }
                jets.pop();
                kept.pop();
            }
        }
        jets.push(j);
        kept.push(s);
    }
    let params = kept;
    let orientation = if params[params.len() - 1] >= params[0] {
        1.0
    } else {
        -1.0
    };
    Some(CurveSegment::from_jets(params, &jets, orientation))
}

/// Sampled graph `y = eta(x)` of the local stable manifold over `[-5/2, 5/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFunction {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl GraphFunction {
    pub fn max_abs_d1(&self) -> f64 {
        self.d1.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_d2(&self) -> f64 {
        self.d2.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Neighbourhood of the tangency point `(-2, 2)` that grown arcs are clipped to by default.
pub const DEFAULT_TRIM: Rect = Rect::new(-2.3, -1.7, 1.7, 2.3);

pub const GRAPH_X_MIN: f64 = -2.5;
pub const GRAPH_X_MAX: f64 = 2.5;
/// Parameters the stable graph construction is validated for.
pub const VALIDATED_A: (f64, f64) = (-2.3, -1.7);
pub const VALIDATED_B: f64 = 0.12;

/// Exact evaluator of the stable graph: `eta(x)`, `eta'(x)`, `eta''(x)`.
#[derive(Debug, Clone)]
pub struct StableGraph {
    branch: Option<GlobalBranch>,
    y0: f64,
    /// Parameter bracket `[lo, hi]` whose image covers the graph window.
    bracket: (f64, f64),
}

impl StableGraph {
    pub fn new(p: Params) -> Result<Self> {
        if !(VALIDATED_A.0..=VALIDATED_A.1).contains(&p.a) || p.b.abs() > VALIDATED_B {
            return Err(Error::Degenerate(format!(
                "stable graph requested outside the validated window at (a, b) = ({}, {})",
                p.a, p.b
            )));
        }
        let saddle = henon::plus_saddle(p)?;
        if p.b == 0.0 {
            return Ok(Self {
                branch: None,
                y0: saddle.point.y,
                bracket: (0.0, 0.0),
            });
        }
        let branch = GlobalBranch::stable(p)?;
        let step = 0.01;
        let walk = |dir: f64, target: f64| -> Result<f64> {
            let mut s = 0.0;
            for _ in 0..20_000 {
                let j = branch.jet(s);
                if !(j.d1.x > 0.0) {
                    return Err(Error::NotAGraph { x: j.p.x });
                }
                if (j.p.x - target) * dir >= 0.0 {
                    return Ok(s);
                }
                s += dir * step;
            }
            Err(Error::NotAGraph { x: target })
        };
        let lo = walk(-1.0, GRAPH_X_MIN - 0.05)?;
        let hi = walk(1.0, GRAPH_X_MAX + 0.05)?;
        Ok(Self {
            branch: Some(branch),
            y0: saddle.point.y,
            bracket: (lo, hi),
        })
    }

    /// Manifold parameter of the graph point above `x`.
    pub fn param_at(&self, x: f64) -> Option<f64> {
        let branch = self.branch.as_ref()?;
        let (mut lo, mut hi) = self.bracket;
        let mut s = (lo + hi) * 0.5;
        for _ in 0..200 {
            let j = branch.jet(s);
            let f = j.p.x - x;
            if f.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let newton = s - f / j.d1.x;
            s = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-16 * (1.0 + s.abs()) {
                break;
            }
        }
        Some(s)
    }

    /// `(eta, eta', eta'')` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        match &self.branch {
            None => (self.y0, 0.0, 0.0),
            Some(branch) => {
                let s = self.param_at(x).unwrap_or(0.0);
                let j = branch.jet(s);
                let d1 = j.d1.y / j.d1.x;
                let d2 = (j.d2.y * j.d1.x - j.d1.y * j.d2.x) / j.d1.x.powi(3);
                (j.p.y, d1, d2)
            }
        }
    }

    pub fn branch(&self) -> Option<&GlobalBranch> {
        self.branch.as_ref()
    }

    /// Stable segment over the graph window as a curve in the plane.
    pub fn segment(&self, samples: usize) -> CurveSegment {
        let n = samples.max(3);
        let xs: Vec<f64> = (0..n)
            .map(|i| GRAPH_X_MIN + (GRAPH_X_MAX - GRAPH_X_MIN) * i as f64 / (n - 1) as f64)
            .collect();
        let jets: Vec<Jet> = xs
            .iter()
            .map(|&x| {
                let (y, d1, d2) = self.eval(x);
                Jet {
                    p: PlanePoint::new(x, y),
                    d1: PlanePoint::new(1.0, d1),
                    d2: PlanePoint::new(0.0, d2),
                }
            })
            .collect();
        CurveSegment::from_jets(xs, &jets, 1.0)
    }
}

/// The stable graph sampled on `samples` evenly spaced points of `[-5/2, 5/2]`.
pub fn extract_stable_graph(p: Params) -> Result<GraphFunction> {
    extract_stable_graph_with(p, 1001)
}

pub fn extract_stable_graph_with(p: Params, samples: usize) -> Result<GraphFunction> {
    let g = StableGraph::new(p)?;
    let n = samples.max(2);
    let mut out = GraphFunction {
        xs: Vec::with_capacity(n),
        ys: Vec::with_capacity(n),
        d1: Vec::with_capacity(n),
        d2: Vec::with_capacity(n),
    };
    for i in 0..n {
        let x = GRAPH_X_MIN + (GRAPH_X_MAX - GRAPH_X_MIN) * i as f64 / (n - 1) as f64;
        let (y, d1, d2) = g.eval(x);
        out.xs.push(x);
        out.ys.push(y);
        out.d1.push(d1);
        out.d2.push(d2);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chart(a: f64, b: f64, kind: ManifoldKind, degree: usize) -> Result<LocalChart> {
        let p = Params::new(a, b);
        local_manifold_chart(p, &henon::plus_saddle(p).unwrap(), kind, degree)
    }

    #[test]
    fn unstable_chart_at_b0_lies_on_parabola() {
        let c = chart(-2.0, 0.0, ManifoldKind::Unstable, 20).unwrap();
        for i in 0..=50 {
            let s = -c.domain_radius + 2.0 * c.domain_radius * i as f64 / 50.0;
            let z = c.eval(s);
            assert!((z.y - (z.x * z.x - 2.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn stable_chart_degenerate_at_b0() {
        assert!(matches!(
            chart(-2.0, 0.0, ManifoldKind::Stable, 10),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn chart_residual_and_tangent() {
        let p = Params::new(-2.0, 0.05);
        let s = henon::plus_saddle(p).unwrap();
        for kind in [ManifoldKind::Unstable, ManifoldKind::Stable] {
            let c = local_manifold_chart(p, &s, kind, 10).unwrap();
            assert!(c.residual(p, c.domain_radius, 64) <= 1e-9);
            assert_eq!(c.eval(0.0), s.point);
            let v = if kind == ManifoldKind::Stable { s.v_s } else { s.v_u };
            assert!(c.jet(0.0).d1.cross(v).abs() < 1e-14);
        }
    }

    #[test]
    fn doubling_degree_does_not_hurt() {
        let p = Params::new(-2.05, 0.04);
        let s = henon::plus_saddle(p).unwrap();
        for kind in [ManifoldKind::Unstable, ManifoldKind::Stable] {
            let c10 = local_manifold_chart(p, &s, kind, 10).unwrap();
            let c20 = local_manifold_chart(p, &s, kind, 20).unwrap();
            let r = c10.domain_radius;
            assert!(c20.residual(p, r, 64) <= 2.0 * c10.residual(p, r, 64) + 1e-15);
        }
    }

    #[test]
    fn global_jets_match_finite_differences() {
        let p = Params::new(-2.0, 0.05);
        for branch in [GlobalBranch::unstable(p).unwrap(), GlobalBranch::stable(p).unwrap()] {
            for s in [-3.0, -0.7, 0.4, 1.9] {
                let h = 1e-5;
                let j = branch.jet(s);
                let fd = (1.0 / (2.0 * h)) * (branch.point(s + h) - branch.point(s - h));
                assert!((fd - j.d1).norm() < 1e-6 * (1.0 + j.d1.norm()), "{s}");
                let fd2 = (1.0 / (h * h)) * (branch.point(s + h) - 2.0 * branch.point(s) + branch.point(s - h));
                assert!((fd2 - j.d2).norm() < 1e-3 * (1.0 + j.d2.norm()), "{s}");
            }
        }
    }

    #[test]
    fn grown_arc_on_parabola_at_b0() {
        let p = Params::new(-2.0, 0.0);
        let c = chart(-2.0, 0.0, ManifoldKind::Unstable, DEFAULT_DEGREE).unwrap();
        let trim = DEFAULT_TRIM;
        let segs = grow_unstable(p, &c, 8, trim, &GrowthConfig::default()).unwrap();
        assert!(!segs.is_empty());
        for seg in &segs {
            for z in &seg.nodes {
                assert!((z.y - (z.x * z.x - 2.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_iterations_is_the_fundamental_domain() {
        let p = Params::new(-2.0, 0.05);
        let c = chart(-2.0, 0.05, ManifoldKind::Unstable, 20).unwrap();
        let big = Rect::new(-10.0, 10.0, -10.0, 10.0);
        let segs = grow_unstable(p, &c, 0, big, &GrowthConfig::default()).unwrap();
        assert_eq!(segs.len(), 2);
        for seg in &segs {
            for (s, z) in seg.params.iter().zip(&seg.nodes) {
                assert!(s.abs() <= c.domain_radius);
                assert!(c.eval(*s).dist(*z) < 1e-14);
            }
        }
    }

    #[test]
    fn resampling_contract() {
        let p = Params::new(-2.0, 0.05);
        let c = chart(-2.0, 0.05, ManifoldKind::Unstable, DEFAULT_DEGREE).unwrap();
        let cfg = GrowthConfig::default();
        let trim = Rect::new(-3.0, 3.0, -3.0, 3.0);
        let branch = GlobalBranch::from_chart(p, henon::plus_saddle(p).unwrap(), c.clone());
        for seg in grow_unstable(p, &c, 5, trim, &cfg).unwrap() {
            if seg.total_length() < cfg.h_max {
                continue;
            }
            let (lo, hi) = seg.spacing_range();
            assert!(lo >= cfg.h_min && hi <= cfg.h_max, "{lo} {hi}");
            for i in 1..seg.len() {
                let resolvable = TURN_PER_STEP / (2.0 * cfg.h_min);
                let (s0, s1) = (seg.params[i - 1], seg.params[i]);
                let sharpest = (0..=64)
                    .map(|k| branch.jet(s0 + (s1 - s0) * k as f64 / 64.0).curvature().abs())
                    .fold(0.0, f64::max);
                if sharpest > resolvable {
                    continue;
                }
                let fd = (seg.nodes[i] - seg.nodes[i - 1]).normalized();
                let t = (0.5 * (seg.tangents[i] + seg.tangents[i - 1])).normalized();
                assert!(
                    (fd - t).norm() < 0.05,
                    "{} {:?} {:?} {:?} {:?} {:?}",
                    i,
                    fd,
                    seg.tangents[i - 1],
                    seg.tangents[i],
                    seg.params[i - 1],
                    seg.params[i]
                );
            }
        }
    }

    #[test]
    fn grown_arc_near_parabola_at_small_b() {
        let p = Params::new(-2.0, 0.05);
        let c = chart(-2.0, 0.05, ManifoldKind::Unstable, DEFAULT_DEGREE).unwrap();
        let trim = DEFAULT_TRIM;
        let segs = grow_unstable(p, &c, 8, trim, &GrowthConfig::default()).unwrap();
        assert!(!segs.is_empty());
        for seg in &segs {
            for z in &seg.nodes {
                let dist = if z.y >= -2.0 {
                    (z.x.abs() - (z.y + 2.0).sqrt()).abs()
                } else {
                    f64::INFINITY
                };
                assert!(dist.min((z.y - (z.x * z.x - 2.0)).abs()) <= 0.1);
            }
        }
    }

    #[test]
    fn stable_graph_examples() {
        let g = extract_stable_graph(Params::new(-2.0, 0.0)).unwrap();
        assert!(g.ys.iter().all(|&y| y == 2.0));
        assert_eq!(g.max_abs_d1(), 0.0);
        for b in [0.02, -0.02] {
            let g = extract_stable_graph(Params::new(-2.0, b)).unwrap();
            assert!(g.max_abs_d1() <= 0.05 && g.max_abs_d2() <= 0.05, "{b}");
            let h = extract_stable_graph(Params::new(-2.0, b / 2.0)).unwrap();
            let ratio = h.max_abs_d1() / g.max_abs_d1();
            assert!((0.35..0.65).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn stable_graph_points_are_invariant() {
        let p = Params::new(-2.0, 0.05);
        let g = StableGraph::new(p).unwrap();
        let saddle = henon::plus_saddle(p).unwrap();
        for x in [-2.5, -1.0, 0.0, 1.3, 2.5] {
            let (y, _, _) = g.eval(x);
            let mut z = PlanePoint::new(x, y);
            for _ in 0..12 {
                z = henon::apply(p, z);
            }
            assert!(z.dist(saddle.point) < 1e-8, "{x} {z:?}");
        }
    }

    #[test]
    fn eta_slope_decays_with_b() {
        let slopes: Vec<f64> = [0.08, 0.04, 0.02, 0.01]
            .iter()
            .map(|&b| extract_stable_graph(Params::new(-2.0, b)).unwrap().max_abs_d1())
            .collect();
        assert!(slopes.windows(2).all(|w| w[1] < w[0]), "{slopes:?}");
    }

    #[test]
    fn derivative_fit_examples() {
        let line = CurveSegment::from_nodes((0..100).map(|i| PlanePoint::new(i as f64 * 1e-2, 0.5)).collect());
        let (t, k) = curve_derivatives(&line, 0.3).unwrap();
        assert!(k.abs() < 1e-9 && (t.x - 1.0).abs() < 1e-12);
        let circle = CurveSegment::from_nodes(
            (0..6284)
                .map(|i| PlanePoint::new((i as f64 * 1e-3).cos(), (i as f64 * 1e-3).sin()))
                .collect(),
        );
        let (_, k) = curve_derivatives(&circle, 2.0).unwrap();
        assert!((k - 1.0).abs() < 1e-4);
        let parabola = CurveSegment::from_nodes(
            (-1000..=1000)
                .map(|i| {
                    let x = i as f64 * 1e-3;
                    PlanePoint::new(x, x * x)
                })
                .collect(),
        );
        let mid = parabola.arclength[1000];
        let (t, k) = curve_derivatives(&parabola, mid).unwrap();
        assert!((k - 2.0).abs() < 1e-4 && t.y.abs() < 1e-6);
        assert!(matches!(
            curve_derivatives(&parabola, -1.0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn csv_header() {
        let seg = CurveSegment::from_nodes(vec![
            PlanePoint::new(0.0, 0.0),
            PlanePoint::new(1.0, 0.0),
            PlanePoint::new(2.0, 0.0),
        ]);
        let csv = seg.to_csv();
        assert!(csv.starts_with("s,x,y,tx,ty,kappa\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn charts_meet_residual_invariant(a in -2.1f64..-1.9, b in prop_oneof![-0.08f64..-0.005, 0.005f64..0.08]) {
            let p = Params::new(a, b);
            let s = henon::plus_saddle(p).unwrap();
            for kind in [ManifoldKind::Unstable, ManifoldKind::Stable] {
                let c = local_manifold_chart(p, &s, kind, 20).unwrap();
                prop_assert!(c.residual(p, c.domain_radius, 64) <= 1e-9);
            }
        }

        #[test]
        fn b0_arc_on_parabola(a in -2.1f64..-1.95) {
            let p = Params::new(a, 0.0);
            let c = chart(a, 0.0, ManifoldKind::Unstable, DEFAULT_DEGREE).unwrap();
            let segs = grow_unstable(p, &c, 6, Rect::new(-3.0, 3.0, -3.0, 3.0), &GrowthConfig::default()).unwrap();
            for seg in &segs {
                for z in &seg.nodes {
                    prop_assert!((z.y - (z.x * z.x + a)).abs() < 1e-6);
                }
            }
        }
    }
}
