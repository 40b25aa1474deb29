//! The outer horseshoe: a thin tube around the stable segment, the strips of it that
//! return under an even power of the map, a crossing certificate and the Cantor slice
//! cut out on the stable segment.

use serde::{Deserialize, Serialize};

use crate::cantor::{IntervalSet, NestedCantor, ThicknessReport};
use crate::error::{Error, Result};
use crate::geom::{Mat2, PlanePoint};
use crate::henon::{self, Params};
use crate::manifold::{CurveSegment, StableGraph, GRAPH_X_MAX, GRAPH_X_MIN};
use crate::par::Exec;
use crate::tangency::{theta_profile_with, SplitFunction, ThetaConfig};

/// A return map together with its differential.
pub trait ReturnMap: Sync {
    /// Image and differential, or `None` once the orbit leaves the working region.
    fn eval(&self, z: PlanePoint) -> Option<(PlanePoint, Mat2)>;

    fn image(&self, z: PlanePoint) -> Option<PlanePoint> {
        self.eval(z).map(|(w, _)| w)
    }
}

/// The curve the tube is built around, a graph `y = eta(x)` over a window.
pub trait Carrier: Sync {
    fn range(&self) -> (f64, f64);
    /// `(eta, eta')` at `x`.
    fn eval(&self, x: f64) -> (f64, f64);
}

const ESCAPE: f64 = 10.0;

/// `steps`-fold iterate of the quadratic family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HenonReturn {
    pub params: Params,
    pub steps: usize,
}

impl ReturnMap for HenonReturn {
    fn eval(&self, z: PlanePoint) -> Option<(PlanePoint, Mat2)> {
        let mut z = z;
        let mut m = Mat2::IDENTITY;
        for _ in 0..self.steps {
            m = henon::jacobian(self.params, z) * m;
            z = henon::apply(self.params, z);
            if !(z.x.abs() < ESCAPE && z.y.abs() < ESCAPE) {
                return None;
            }
        }
        Some((z, m))
    }

    fn image(&self, z: PlanePoint) -> Option<PlanePoint> {
        let mut z = z;
        for _ in 0..self.steps {
            z = henon::apply(self.params, z);
            if !(z.x.abs() < ESCAPE && z.y.abs() < ESCAPE) {
                return None;
            }
        }
        Some(z)
    }
}

/// Piecewise-affine two-branch horseshoe on `[0, 1] x [-1/2, 1/2]` around the carrier `y = 0`.
///
/// The lower and upper strips of height `contraction` are stretched across the square and
/// squeezed horizontally into `[0, c]` and `[1 - c, 1]`; the middle strip leaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineHorseshoe {
    pub contraction: f64,
}

impl AffineHorseshoe {
    pub fn carrier(&self) -> FlatCarrier {
        FlatCarrier {
            height: 0.0,
            range: (0.0, 1.0),
        }
    }

    /// Tube settings matching the unit square.
    pub fn config(&self) -> HorseshoeConfig {
        HorseshoeConfig {
            half_thickness: 0.5,
            x_range: (0.0, 1.0),
            columns: 41,
            rows: 40,
            homoclinic_center: PlanePoint::new(1.0 - self.contraction / 2.0, 0.0),
            homoclinic_radius: 0.5 * self.contraction,
            ..HorseshoeConfig::default()
        }
    }

    pub fn fixed_point(&self) -> PlanePoint {
        PlanePoint::new(0.0, -0.5)
    }
}

impl ReturnMap for AffineHorseshoe {
    fn eval(&self, z: PlanePoint) -> Option<(PlanePoint, Mat2)> {
        let c = self.contraction;
        let d = Mat2::new(c, 0.0, 0.0, 1.0 / c);
        if z.y <= -0.5 + c {
            Some((PlanePoint::new(c * z.x, (z.y + 0.5) / c - 0.5), d))
        } else if z.y >= 0.5 - c {
            Some((PlanePoint::new(1.0 - c + c * z.x, (z.y - 0.5 + c) / c - 0.5), d))
        } else {
            Some((PlanePoint::new(z.x, 5.0), d))
        }
    }
}

/// Horizontal carrier line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatCarrier {
    pub height: f64,
    pub range: (f64, f64),
}

impl Carrier for FlatCarrier {
    fn range(&self) -> (f64, f64) {
        self.range
    }

    fn eval(&self, _x: f64) -> (f64, f64) {
        (self.height, 0.0)
    }
}

/// The stable graph tabulated on a uniform grid and interpolated by cubic Hermite pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct StableTable {
    lo: f64,
    step: f64,
    eta: Vec<f64>,
    slope: Vec<f64>,
}

impl StableTable {
    pub fn new(p: Params, range: (f64, f64), nodes: usize, exec: Exec) -> Result<Self> {
        if !(range.0 >= GRAPH_X_MIN && range.1 <= GRAPH_X_MAX && range.0 < range.1) {
            return Err(Error::Degenerate(format!(
                "tube window [{}, {}] outside the stable graph window",
                range.0, range.1
            )));
        }
        let graph = StableGraph::new(p)?;
        let n = nodes.max(2);
        let step = (range.1 - range.0) / (n - 1) as f64;
        let values = exec.map_range(n, |i| graph.eval(range.0 + step * i as f64));
        Ok(Self {
            lo: range.0,
            step,
            eta: values.iter().map(|v| v.0).collect(),
            slope: values.iter().map(|v| v.1).collect(),
        })
    }
}

impl Carrier for StableTable {
    fn range(&self) -> (f64, f64) {
        (self.lo, self.lo + self.step * (self.eta.len() - 1) as f64)
    }

    fn eval(&self, x: f64) -> (f64, f64) {
        let last = self.eta.len() - 2;
        let u = ((x - self.lo) / self.step).clamp(0.0, (last + 1) as f64);
        let i = (u.floor() as usize).min(last);
        let t = u - i as f64;
        let h = self.step;
        let (y0, y1) = (self.eta[i], self.eta[i + 1]);
        let (m0, m1) = (self.slope[i] * h, self.slope[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let y =
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1;
        let dy = (6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1;
        (y, dy / h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeConfig {
    /// Half-thickness of the tube around the carrier.
    pub half_thickness: f64,
    pub x_range: (f64, f64),
    pub columns: usize,
    /// Initial samples per column before adaptive refinement.
    pub rows: usize,
    /// Sample cap per column; exceeding it ends the search.
    pub column_budget: usize,
    pub w_max: usize,
    pub homoclinic_center: PlanePoint,
    pub homoclinic_radius: f64,
    /// Minimal distance between a piece and the tangency point.
    pub tangency_margin: f64,
    pub cone_slope: f64,
    /// Parameter offsets tried, largest first, when recording the validity radius.
    pub validity_radii: Vec<f64>,
    pub table_nodes: usize,
}

impl Default for HorseshoeConfig {
    fn default() -> Self {
        Self {
            half_thickness: 0.02,
            x_range: (GRAPH_X_MIN, GRAPH_X_MAX),
            columns: 400,
            rows: 40,
            column_budget: 1 << 20,
            w_max: 40,
            homoclinic_center: PlanePoint::new(-2.0, 2.0),
            homoclinic_radius: 0.25,
            tangency_margin: 1e-3,
            cone_slope: 0.5,
            validity_radii: vec![1e-3, 1e-4, 1e-5],
            table_nodes: 4001,
        }
    }
}

/// Which boundary of the tube an image point sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Top,
    Left,
    Right,
    Interior,
}

/// One returning interval of one column of the tube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnHit {
    pub column: usize,
    pub x: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub sides: [Side; 2],
    /// Point of the interval mapped onto the carrier.
    pub leaf_y: f64,
    pub leaf_slope: f64,
    /// Abscissa of the image of the leaf point.
    pub trace_x: f64,
    /// Derivative of `x -> trace_x` along the leaf.
    pub contraction: f64,
}

impl ColumnHit {
    /// The interval is stretched from the bottom of the tube to its top.
    pub fn crosses(&self) -> bool {
        matches!(self.sides, [Side::Bottom, Side::Top] | [Side::Top, Side::Bottom])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// A four-sided region bounded by curves: bottom, right, top, left in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvilinearRect {
    pub corners: [PlanePoint; 4],
    pub edge_curves: [CurveSegment; 4],
    pub orientation: Orientation,
}

impl CurvilinearRect {
    fn from_edges(edges: [Vec<PlanePoint>; 4], orientation: Orientation) -> Self {
        let corners = [edges[0][0], edges[1][0], edges[2][0], edges[3][0]];
        Self {
            corners,
            edge_curves: edges.map(CurveSegment::from_nodes),
            orientation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverCertificate {
    pub params: Option<Params>,
    pub w: usize,
    pub half_thickness: f64,
    pub x_range: (f64, f64),
    /// The two returning components inside the tube, the first one holding the saddle.
    pub pieces: Vec<CurvilinearRect>,
    /// Their preimages: thin strips running along the tube.
    pub preimages: Vec<CurvilinearRect>,
    pub crossing_matrix: Vec<Vec<bool>>,
    pub cone_margin: f64,
    /// Where each piece meets the carrier.
    pub carrier_points: Vec<PlanePoint>,
    pub tangency_point: Option<PlanePoint>,
    /// Further crossing components found at the same return time and left unused.
    pub extra_components: usize,
    pub validity_radius: f64,
    pub strips: Vec<Vec<ColumnHit>>,
}

impl CoverCertificate {
    pub fn is_full_shift(&self) -> bool {
        self.crossing_matrix.len() == 2
            && self
                .crossing_matrix
                .iter()
                .all(|r| r.len() == 2 && r.iter().all(|&c| c))
    }
}

struct Tube<'a, C: Carrier> {
    carrier: &'a C,
    half: f64,
    range: (f64, f64),
}

impl<C: Carrier> Tube<'_, C> {
    fn offset(&self, z: PlanePoint) -> f64 {
        z.y - self.carrier.eval(z.x.clamp(self.range.0, self.range.1)).0
    }

    fn contains(&self, z: PlanePoint) -> bool {
        z.x >= self.range.0 && z.x <= self.range.1 && self.offset(z).abs() <= self.half
    }

    /// Sup-type distance to the tube, zero inside.
    fn distance(&self, z: PlanePoint) -> f64 {
        (self.range.0 - z.x)
            .max(z.x - self.range.1)
            .max(self.offset(z).abs() - self.half)
            .max(0.0)
    }

    fn side(&self, z: PlanePoint) -> Side {
        let g = self.offset(z);
        let cands = [
            ((g + self.half).abs(), Side::Bottom),
            ((g - self.half).abs(), Side::Top),
            ((z.x - self.range.0).abs(), Side::Left),
            ((z.x - self.range.1).abs(), Side::Right),
        ];
        let (d, side) = cands
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap_or((f64::INFINITY, Side::Interior));
        if d <= 1e-7 * self.half.max(1e-3) {
            side
        } else {
            Side::Interior
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    y: f64,
    image: Option<PlanePoint>,
}

fn scan_column<M: ReturnMap, C: Carrier>(
    map: &M,
    tube: &Tube<'_, C>,
    cfg: &HorseshoeConfig,
    column: usize,
    x: f64,
) -> Option<Vec<ColumnHit>> {
    let (eta, _) = tube.carrier.eval(x);
    let (lo, hi) = (eta - tube.half, eta + tube.half);
    let at = |y: f64| Sample {
        y,
        image: map.image(PlanePoint::new(x, y)),
    };
    let rows = cfg.rows.max(2);
    let mut pending: Vec<Sample> = (0..=rows)
        .rev()
        .map(|k| at(lo + (hi - lo) * k as f64 / rows as f64))
        .collect();
    let mut samples = vec![pending.pop()?];
    let split = |a: &Sample, b: &Sample| -> bool {
        if b.y - a.y <= 4.0 * f64::EPSILON * (1.0 + a.y.abs()) {
            return false;
        }
        match (a.image, b.image) {
            (None, None) => false,
            (Some(z), None) | (None, Some(z)) => tube.distance(z) < 1.0,
            (Some(za), Some(zb)) => za.dist(zb) > 0.5 * tube.half + 0.5 * tube.distance(za).min(tube.distance(zb)),
        }
    };
    while let Some(next) = pending.last().copied() {
        let cur = samples[samples.len() - 1];
        if split(&cur, &next) {
            pending.push(at(0.5 * (cur.y + next.y)));
        } else {
            samples.push(next);
            pending.pop();
        }
        if samples.len() + pending.len() > cfg.column_budget {
            return None;
        }
    }

    let inside: Vec<bool> = samples
        .iter()
        .map(|s| s.image.is_some_and(|z| tube.contains(z)))
        .collect();
    let in_at = |y: f64| map.image(PlanePoint::new(x, y)).is_some_and(|z| tube.contains(z));
    let boundary = |mut out_y: f64, mut in_y: f64| -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (out_y + in_y);
            if mid == out_y || mid == in_y {
                break;
            }
            if in_at(mid) {
                in_y = mid;
            } else {
                out_y = mid;
            }
        }
        in_y
    };
    let mut hits = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if !inside[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < samples.len() && inside[j + 1] {
            j += 1;
        }
        let y_lo = if i == 0 {
            samples[0].y
        } else {
            boundary(samples[i - 1].y, samples[i].y)
        };
        let y_hi = if j + 1 == samples.len() {
            samples[j].y
        } else {
            boundary(samples[j + 1].y, samples[j].y)
        };
        if let Some(hit) = leaf_hit(map, tube, column, x, y_lo, y_hi) {
            hits.push(hit);
        }
        i = j + 1;
    }
    Some(hits)
}

/// Locates the point of `[y_lo, y_hi]` mapped onto the carrier and records the leaf data there.
fn leaf_hit<M: ReturnMap, C: Carrier>(
    map: &M,
    tube: &Tube<'_, C>,
    column: usize,
    x: f64,
    y_lo: f64,
    y_hi: f64,
) -> Option<ColumnHit> {
    let g = |y: f64| map.image(PlanePoint::new(x, y)).map(|z| tube.offset(z));
    let (g_lo, g_hi) = (g(y_lo)?, g(y_hi)?);
    if g_lo * g_hi > 0.0 {
        return None;
    }
    let (mut a, mut b) = (y_lo, y_hi);
    let rising = g_hi > g_lo;
    let mut y = 0.5 * (a + b);
    for _ in 0..200 {
        let (z, jac) = map.eval(PlanePoint::new(x, y))?;
        let (eta, eta1) = tube.carrier.eval(z.x);
        let gy = z.y - eta;
        let dgy = jac.m[1][1] - eta1 * jac.m[0][1];
        if (gy > 0.0) == rising {
            b = y;
        } else {
            a = y;
        }
        let newton = y - gy / dgy;
        let next = if newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if next == y || b - a <= 2.0 * f64::EPSILON * y.abs().max(1e-300) {
            break;
        }
        y = next;
    }
    let (z, jac) = map.eval(PlanePoint::new(x, y))?;
    let (_, eta1) = tube.carrier.eval(z.x);
    let gx = jac.m[1][0] - eta1 * jac.m[0][0];
    let gy = jac.m[1][1] - eta1 * jac.m[0][1];
    let sides = [
        map.image(PlanePoint::new(x, y_lo))
            .map_or(Side::Interior, |z| tube.side(z)),
        map.image(PlanePoint::new(x, y_hi))
            .map_or(Side::Interior, |z| tube.side(z)),
    ];
    Some(ColumnHit {
        column,
        x,
        y_lo,
        y_hi,
        sides,
        leaf_y: y,
        leaf_slope: -gx / gy,
        trace_x: z.x,
        contraction: jac.det() / gy,
    })
}

fn columns(cfg: &HorseshoeConfig) -> Vec<f64> {
    let n = cfg.columns.max(2);
    let (lo, hi) = cfg.x_range;
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Chains column hits into strips across neighbouring columns.
fn link_strips(per_column: Vec<Vec<ColumnHit>>, dx: f64) -> Vec<Vec<ColumnHit>> {
    let mut strips: Vec<Vec<ColumnHit>> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    for (c, hits) in per_column.into_iter().enumerate() {
        let mut next_open = Vec::new();
        let mut taken = vec![false; open.len()];
        for h in hits {
            let linked = open
                .iter()
                .enumerate()
                .filter(|(k, _)| !taken[*k])
                .filter_map(|(k, &s)| {
                    let last = strips[s].last()?;
                    let tol =
                        2.0 * last.contraction.abs().max(h.contraction.abs()) * dx + 1e-9 * (1.0 + h.trace_x.abs());
                    let d = (last.trace_x - h.trace_x).abs();
                    (last.column + 1 == c && d <= tol).then_some((k, s, d))
                })
                .min_by(|a, b| a.2.total_cmp(&b.2));
            match linked {
                Some((k, s, _)) => {
                    taken[k] = true;
                    strips[s].push(h);
                    next_open.push(s);
                }
                None => {
                    strips.push(vec![h]);
                    next_open.push(strips.len() - 1);
                }
            }
        }
        open = next_open;
    }
    strips
}

fn is_full(strip: &[ColumnHit], n_columns: usize) -> bool {
    strip.len() == n_columns && strip.iter().all(ColumnHit::crosses)
}

fn trace_range(strip: &[ColumnHit]) -> (f64, f64) {
    strip.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| {
        (lo.min(h.trace_x), hi.max(h.trace_x))
    })
}

/// All strips of the tube that return into it under `map`.
pub fn return_strips<M: ReturnMap, C: Carrier>(
    map: &M,
    carrier: &C,
    cfg: &HorseshoeConfig,
    exec: Exec,
) -> Option<Vec<Vec<ColumnHit>>> {
    let tube = Tube {
        carrier,
        half: cfg.half_thickness,
        range: cfg.x_range,
    };
    let xs = columns(cfg);
    let per_column = exec.map_range(xs.len(), |c| scan_column(map, &tube, cfg, c, xs[c]));
    let per_column: Option<Vec<_>> = per_column.into_iter().collect();
    let dx = (cfg.x_range.1 - cfg.x_range.0) / (xs.len() - 1) as f64;
    Some(link_strips(per_column?, dx))
}

/// Outcome of the search at one return time.
enum Selection {
    Found { strips: [Vec<ColumnHit>; 2], extra: usize },
    Missing,
    Blocked,
}

fn select<C: Carrier>(
    strips: Vec<Vec<ColumnHit>>,
    carrier: &C,
    cfg: &HorseshoeConfig,
    anchor: PlanePoint,
    tangency: Option<PlanePoint>,
) -> Selection {
    let n = cfg.columns.max(2);
    let full: Vec<Vec<ColumnHit>> = strips.into_iter().filter(|s| is_full(s, n)).collect();
    let Some(home) = full.iter().position(|s| {
        let (lo, hi) = trace_range(s);
        let tol = 1e-9 * (1.0 + anchor.x.abs());
        anchor.x >= lo - tol && anchor.x <= hi + tol
    }) else {
        return Selection::Missing;
    };
    let point = |s: &[ColumnHit]| {
        let (lo, hi) = trace_range(s);
        let x = 0.5 * (lo + hi);
        PlanePoint::new(x, carrier.eval(x).0)
    };
    let candidates: Vec<usize> = (0..full.len())
        .filter(|&k| k != home && point(&full[k]).dist(cfg.homoclinic_center) <= cfg.homoclinic_radius)
        .collect();
    if candidates.is_empty() {
        return Selection::Missing;
    }
    let tube = Tube {
        carrier,
        half: cfg.half_thickness,
        range: cfg.x_range,
    };
    let separated = |k: &usize| match tangency {
        Some(q) => !tube.contains(q) || point(&full[*k]).dist(q) > cfg.tangency_margin,
        None => true,
    };
    let score = |k: usize| match tangency {
        Some(q) => -point(&full[k]).dist(q),
        None => point(&full[k]).dist(cfg.homoclinic_center),
    };
    let Some(partner) = candidates
        .iter()
        .copied()
        .filter(separated)
        .min_by(|&a, &b| score(a).total_cmp(&score(b)))
    else {
        return Selection::Blocked;
    };
    let extra = full.len() - 2;
    let mut full = full;
    let (first, second) = if home < partner {
        let b = full.swap_remove(partner);
        (full.swap_remove(home), b)
    } else {
        let a = full.swap_remove(home);
        (a, full.swap_remove(partner))
    };
    Selection::Found {
        strips: [first, second],
        extra,
    }
}

fn crossing_matrix(strips: &[Vec<ColumnHit>], cfg: &HorseshoeConfig) -> Vec<Vec<bool>> {
    let n = cfg.columns.max(2);
    let xs = columns(cfg);
    strips
        .iter()
        .map(|si| {
            let (lo, hi) = trace_range(si);
            let x = 0.5 * (lo + hi);
            let inside = x >= cfg.x_range.0 && x <= cfg.x_range.1;
            let col = xs.partition_point(|&c| c < x).min(n - 1);
            strips
                .iter()
                .map(|sj| inside && is_full(si, n) && is_full(sj, n) && sj.iter().any(|h| h.column == col))
                .collect()
        })
        .collect()
}

fn cone_margin<M: ReturnMap>(map: &M, strips: &[Vec<ColumnHit>], slope: f64) -> f64 {
    let mut margin = f64::INFINITY;
    for h in strips.iter().flatten() {
        let Some((_, jac)) = map.eval(PlanePoint::new(h.x, h.leaf_y)) else {
            return f64::NEG_INFINITY;
        };
        let Some(inv) = jac.inverse() else {
            return f64::NEG_INFINITY;
        };
        for s in [slope, -slope] {
            let u = jac.apply(PlanePoint::new(s, 1.0));
            margin = margin.min(slope - (u.x / u.y).abs());
            let v = inv.apply(PlanePoint::new(1.0, s));
            margin = margin.min(slope - (v.y / v.x).abs());
        }
    }
    margin
}

fn rects<M: ReturnMap>(map: &M, strip: &[ColumnHit]) -> (CurvilinearRect, CurvilinearRect) {
    let vertical = |h: &ColumnHit, up: bool| -> Vec<PlanePoint> {
        let k = 16;
        (0..=k)
            .map(|i| {
                let t = if up { i } else { k - i } as f64 / k as f64;
                PlanePoint::new(h.x, h.y_lo + t * (h.y_hi - h.y_lo))
            })
            .collect()
    };
    let first = &strip[0];
    let last = &strip[strip.len() - 1];
    let domain = [
        strip.iter().map(|h| PlanePoint::new(h.x, h.y_lo)).collect::<Vec<_>>(),
        vertical(last, true),
        strip.iter().rev().map(|h| PlanePoint::new(h.x, h.y_hi)).collect(),
        vertical(first, false),
    ];
    let image = domain
        .clone()
        .map(|edge| edge.into_iter().filter_map(|z| map.image(z)).collect::<Vec<_>>());
    (
        CurvilinearRect::from_edges(image, Orientation::Vertical),
        CurvilinearRect::from_edges(domain, Orientation::Horizontal),
    )
}

/// Certificate for a generic return map at a fixed return time.
pub fn certify<M: ReturnMap, C: Carrier>(
    map: &M,
    carrier: &C,
    cfg: &HorseshoeConfig,
    anchor: PlanePoint,
    tangency: Option<PlanePoint>,
    w: usize,
    exec: Exec,
) -> Result<CoverCertificate> {
    let strips = return_strips(map, carrier, cfg, exec).ok_or(Error::NoReturn { w_max: w })?;
    match select(strips, carrier, cfg, anchor, tangency) {
        Selection::Missing => Err(Error::NoReturn { w_max: w }),
        Selection::Blocked => Err(Error::TangencyInside),
        Selection::Found { strips, extra } => {
            let (pieces, preimages): (Vec<_>, Vec<_>) = strips.iter().map(|s| rects(map, s)).unzip();
            let carrier_points = strips
                .iter()
                .map(|s| {
                    let (lo, hi) = trace_range(s);
                    let x = 0.5 * (lo + hi);
                    PlanePoint::new(x, carrier.eval(x).0)
                })
                .collect();
            Ok(CoverCertificate {
                params: None,
                w,
                half_thickness: cfg.half_thickness,
                x_range: cfg.x_range,
                pieces,
                preimages,
                crossing_matrix: crossing_matrix(&strips, cfg),
                cone_margin: cone_margin(map, &strips, cfg.cone_slope),
                carrier_points,
                tangency_point: tangency,
                extra_components: extra,
                validity_radius: 0.0,
                strips: strips.into(),
            })
        }
    }
}

/// The fold point of the first image of the fold arc, when the split function is available.
pub fn tangency_point(p: Params) -> Option<PlanePoint> {
    let f = SplitFunction::new(p, ThetaConfig::default()).ok()?;
    let prof = theta_profile_with(&f).ok()?;
    let (z, _, _) = f.arc.zeta(prof.t_star);
    Some(PlanePoint::new(z, p.a - p.b * prof.t_star + z * z))
}

pub fn build_return_boxes(p: Params, thickness_of_r: f64, w_max: usize) -> Result<CoverCertificate> {
    let cfg = HorseshoeConfig {
        half_thickness: thickness_of_r,
        w_max,
        ..HorseshoeConfig::default()
    };
    build_return_boxes_with(p, &cfg, Exec::default())
}

/// Smallest even return time with a saddle piece and a separated homoclinic piece.
pub fn build_return_boxes_with(p: Params, cfg: &HorseshoeConfig, exec: Exec) -> Result<CoverCertificate> {
    if p.b == 0.0 {
        return Err(Error::NonInvertible);
    }
    let carrier = StableTable::new(p, cfg.x_range, cfg.table_nodes, exec)?;
    let saddle = henon::plus_saddle(p)?.point;
    let reachable = columns(&HorseshoeConfig {
        columns: 2001,
        ..cfg.clone()
    })
    .into_iter()
    .any(|x| {
        let z = PlanePoint::new(x, carrier.eval(x).0);
        z.dist(cfg.homoclinic_center) <= cfg.homoclinic_radius + cfg.half_thickness
    });
    if !reachable {
        return Err(Error::NoReturn { w_max: cfg.w_max });
    }
    let q = tangency_point(p);
    let mut w = 2;
    while w <= cfg.w_max {
        let map = HenonReturn { params: p, steps: w };
        match certify(&map, &carrier, cfg, saddle, q, w, exec) {
            Ok(mut cert) => {
                cert.params = Some(p);
                cert.validity_radius = validity_radius(p, cfg, &cert, exec);
                return Ok(cert);
            }
            Err(Error::NoReturn { .. }) => {}
            Err(e) => return Err(e),
        }
        if return_strips(
            &map,
            &carrier,
            &HorseshoeConfig {
                columns: 2,
                ..cfg.clone()
            },
            exec,
        )
        .is_none()
        {
            return Err(Error::NoReturn { w_max: w });
        }
        w += 2;
    }
    Err(Error::NoReturn { w_max: cfg.w_max })
}

/// Largest probed parameter offset at which both neighbours keep the return time and matrix.
fn validity_radius(p: Params, cfg: &HorseshoeConfig, cert: &CoverCertificate, exec: Exec) -> f64 {
    for &r in &cfg.validity_radii {
        let same = [-r, r].into_iter().all(|da| {
            let q = p.with_a(p.a + da);
            let Ok(carrier) = StableTable::new(q, cfg.x_range, cfg.table_nodes, exec) else {
                return false;
            };
            let Ok(saddle) = henon::plus_saddle(q) else {
                return false;
            };
            let map = HenonReturn {
                params: q,
                steps: cert.w,
            };
            certify(&map, &carrier, cfg, saddle.point, tangency_point(q), cert.w, exec)
                .is_ok_and(|c| c.crossing_matrix == cert.crossing_matrix)
        });
        if same {
            return r;
        }
    }
    0.0
}

/// Level-`k` approximation of the Cantor slice cut out on the carrier; it has `2^k` intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CantorApproximation {
    pub level: u32,
    /// Arclength positions along the carrier, rendered in doubles.
    pub intervals: IntervalSet,
    pub carrier: CurveSegment,
    /// Set when neighbouring intervals collapse in the double rendering.
    pub merged: bool,
    /// Interval count of the exact nested representation.
    pub interval_count: usize,
    pub tree: NestedCantor,
}

impl CantorApproximation {
    pub fn thickness(&self) -> ThicknessReport {
        self.tree.thickness(self.level)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let pairs: Vec<[f64; 2]> = self.intervals.intervals().iter().map(|&(l, r)| [l, r]).collect();
        serde_json::json!({
            "level": self.level,
            "intervals": pairs,
            "interval_count": self.interval_count,
            "merged": self.merged,
            "carrier_length": self.tree.root().1,
        })
    }
}

// Gauss–Legendre nodes and weights on [-1, 1], eight points.
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];
const PANELS: usize = 32;

/// The branch maps of the slice: each strip's leaf pushed onto the carrier.
struct Branches<'a, M: ReturnMap, C: Carrier> {
    map: &'a M,
    carrier: &'a C,
    strips: &'a [Vec<ColumnHit>],
    range: (f64, f64),
}

impl<M: ReturnMap, C: Carrier> Branches<'_, M, C> {
    /// `(f(x), f'(x))` for branch `i`.
    fn eval(&self, i: usize, x: f64) -> Option<(f64, f64)> {
        let s = &self.strips[i];
        let k = s.partition_point(|h| h.x <= x).clamp(1, s.len() - 1) - 1;
        let (h0, h1) = (&s[k], &s[k + 1]);
        let dx = h1.x - h0.x;
        let t = (x - h0.x) / dx;
        let t2 = t * t;
        let t3 = t2 * t;
        let mut y = (2.0 * t3 - 3.0 * t2 + 1.0) * h0.leaf_y
            + (t3 - 2.0 * t2 + t) * h0.leaf_slope * dx
            + (-2.0 * t3 + 3.0 * t2) * h1.leaf_y
            + (t3 - t2) * h1.leaf_slope * dx;
        let mut last = None;
        for _ in 0..50 {
            let (z, jac) = self.map.eval(PlanePoint::new(x, y))?;
            let (eta, eta1) = self.carrier.eval(z.x);
            let gy = jac.m[1][1] - eta1 * jac.m[0][1];
            let step = (z.y - eta) / gy;
            last = Some((z.x, jac.det() / gy));
            if step.abs() <= 4.0 * f64::EPSILON * y.abs().max(1e-300) {
                break;
            }
            y -= step;
        }
        last.filter(|v| v.0.is_finite() && v.1.is_finite() && v.1 != 0.0)
    }

    /// `F = f_{w[0]} o ... o f_{w[m-1]}` at `x`: `(F(x), ln|F'(x)|, sign F')`.
    fn compose(&self, word: &[usize], x: f64) -> Option<(f64, f64, f64)> {
        let mut v = x;
        let mut log = 0.0;
        let mut sign = 1.0;
        for &i in word.iter().rev() {
            let (fv, d) = self.eval(i, v)?;
            log += d.abs().ln();
            sign *= d.signum();
            v = fv;
        }
        Some((v, log, sign))
    }

    fn density(&self, x: f64) -> f64 {
        let (_, d) = self.carrier.eval(x);
        (1.0 + d * d).sqrt()
    }

    /// Arclength of `F([a, b])` measured in units of `exp(reference)`.
    fn measure(&self, word: &[usize], a: f64, b: f64, reference: f64) -> Option<f64> {
        let (lo, hi) = self.range;
        let panel = (hi - lo) / PANELS as f64;
        let mut total = 0.0;
        for k in 0..PANELS {
            let (pa, pb) = ((lo + panel * k as f64).max(a), (lo + panel * (k + 1) as f64).min(b));
            if pb <= pa {
                continue;
            }
            let (mid, half) = (0.5 * (pa + pb), 0.5 * (pb - pa));
            for (u, wt) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let (fx, log, _) = self.compose(word, mid + half * u)?;
                total += wt * half * (log - reference).exp() * self.density(fx);
            }
        }
        Some(total)
    }
}

struct NodeData {
    word: Vec<usize>,
    reference: f64,
    measure: f64,
    sign: f64,
}

/// Level-`level` Cantor slice from a certificate for a generic return map.
pub fn cantor_slice<M: ReturnMap, C: Carrier>(
    map: &M,
    carrier: &C,
    cert: &CoverCertificate,
    level: u32,
    exec: Exec,
) -> Result<CantorApproximation> {
    if cert.strips.len() != 2 {
        return Err(Error::Degenerate("certificate must carry exactly two strips".into()));
    }
    let range = cert.x_range;
    let br = Branches {
        map,
        carrier,
        strips: &cert.strips,
        range,
    };
    let mid = 0.5 * (range.0 + range.1);
    let exhausted = |l: u32| Error::ResolutionExhausted { level: l as usize };
    let node_data = |word: Vec<usize>| -> Option<NodeData> {
        let (_, reference, sign) = br.compose(&word, mid)?;
        let measure = br.measure(&word, range.0, range.1, reference)?;
        Some(NodeData {
            word,
            reference,
            measure,
            sign,
        })
    };
    let root_data = node_data(Vec::new()).ok_or_else(|| exhausted(0))?;
    let mut tree = NestedCantor::new((0.0, root_data.measure))?;
    let mut frontier = vec![(0usize, root_data)];
    for depth in 1..=level {
        let placed = exec.map(&frontier, |(_, parent)| -> Option<[(f64, f64, NodeData); 2]> {
            let child = |j: usize| -> Option<(f64, f64, NodeData)> {
                let mut word = parent.word.clone();
                word.push(j);
                let data = node_data(word)?;
                let width = (data.reference - parent.reference).exp() * data.measure / parent.measure;
                let (e0, _) = br.eval(j, range.0)?;
                let (e1, _) = br.eval(j, range.1)?;
                let (j_lo, j_hi) = (e0.min(e1), e0.max(e1));
                let before = if parent.sign > 0.0 {
                    br.measure(&parent.word, range.0, j_lo, parent.reference)?
                } else {
                    br.measure(&parent.word, j_hi, range.1, parent.reference)?
                };
                Some((before / parent.measure, width, data))
            };
            Some([child(0)?, child(1)?])
        });
        let mut next = Vec::with_capacity(2 * frontier.len());
        for ((node, _), kids) in frontier.iter().zip(placed) {
            let [a, b] = kids.ok_or_else(|| exhausted(depth))?;
            if a.1 < 1e-15 || b.1 < 1e-15 {
                return Err(exhausted(depth));
            }
            let ids = tree.refine(*node, [(a.0, a.1), (b.0, b.1)])?;
            // `refine` sorts by offset; keep each child's data with its node.
            let (first, second) = if a.0 <= b.0 { (a.2, b.2) } else { (b.2, a.2) };
            next.push((ids[0], first));
            next.push((ids[1], second));
        }
        frontier = next;
    }
    let (intervals, merged) = tree.to_interval_set(level)?;
    let n = 201;
    let nodes = (0..n)
        .map(|k| {
            let x = range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64;
            PlanePoint::new(x, carrier.eval(x).0)
        })
        .collect();
    Ok(CantorApproximation {
        level,
        interval_count: tree.interval_count(level),
        intervals,
        carrier: CurveSegment::from_nodes(nodes),
        merged,
        tree,
    })
}

/// Level-`level` slice of the outer horseshoe on the stable segment.
pub fn stable_cantor_slice(cert: &CoverCertificate, p: Params, level: u32) -> Result<CantorApproximation> {
    stable_cantor_slice_with(cert, p, level, &HorseshoeConfig::default(), Exec::default())
}

pub fn stable_cantor_slice_with(
    cert: &CoverCertificate,
    p: Params,
    level: u32,
    cfg: &HorseshoeConfig,
    exec: Exec,
) -> Result<CantorApproximation> {
    let carrier = StableTable::new(p, cert.x_range, cfg.table_nodes, exec)?;
    let map = HenonReturn {
        params: p,
        steps: cert.w,
    };
    cantor_slice(&map, &carrier, cert, level, exec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(c: f64) -> (AffineHorseshoe, CoverCertificate) {
        let model = AffineHorseshoe { contraction: c };
        let cert = certify(
            &model,
            &model.carrier(),
            &model.config(),
            model.fixed_point(),
            None,
            1,
            Exec::Sequential,
        )
        .unwrap();
        (model, cert)
    }

    #[test]
    fn affine_model_is_a_full_shift() {
        let (_, cert) = affine(1.0 / 3.0);
        assert!(cert.is_full_shift());
        assert!(cert.cone_margin > 0.0);
        assert_eq!(cert.extra_components, 0);
        assert!((cert.carrier_points[0].x - 1.0 / 6.0).abs() < 1e-12);
        assert!((cert.carrier_points[1].x - 5.0 / 6.0).abs() < 1e-12);
        let h = &cert.strips[0][7];
        assert!((h.y_lo + 0.5).abs() < 1e-15 && (h.y_hi + 1.0 / 6.0).abs() < 1e-12);
        assert!((h.contraction - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn affine_slice_is_the_middle_third_set() {
        let (model, cert) = affine(1.0 / 3.0);
        for level in 0..=6 {
            let slice = cantor_slice(&model, &model.carrier(), &cert, level, Exec::Sequential).unwrap();
            let oracle = IntervalSet::middle_removed(1.0 / 3.0, level).unwrap();
            assert!(!slice.merged);
            assert_eq!(slice.interval_count, 1 << level);
            for (a, b) in slice.intervals.intervals().iter().zip(oracle.intervals()) {
                assert!((a.0 - b.0).abs() < 1e-13 && (a.1 - b.1).abs() < 1e-13, "{a:?} {b:?}");
            }
            if level > 0 {
                assert!((slice.thickness().tau - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_slice_with_other_ratio() {
        let (model, cert) = affine(0.2);
        let slice = cantor_slice(&model, &model.carrier(), &cert, 4, Exec::Sequential).unwrap();
        assert!((slice.thickness().tau - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stable_table_matches_the_graph() {
        let p = Params::new(-2.09, 0.05);
        let table = StableTable::new(p, (GRAPH_X_MIN, GRAPH_X_MAX), 2001, Exec::Parallel).unwrap();
        let graph = StableGraph::new(p).unwrap();
        for x in [-2.4321, -1.0, 0.123, 2.0601] {
            let (e, d) = table.eval(x);
            let (ge, gd, _) = graph.eval(x);
            assert!((e - ge).abs() < 1e-11 && (d - gd).abs() < 1e-7);
        }
    }

    #[test]
    fn narrow_tube_misses_the_homoclinic_region() {
        let p = Params::new(-2.0926916429737, 0.05);
        let cfg = HorseshoeConfig {
            x_range: (-1.5, GRAPH_X_MAX),
            ..HorseshoeConfig::default()
        };
        assert!(matches!(
            build_return_boxes_with(p, &cfg, Exec::Parallel),
            Err(Error::NoReturn { .. })
        ));
    }

    #[test]
    fn b_zero_is_rejected() {
        assert_eq!(
            build_return_boxes(Params::new(-2.0, 0.0), 0.02, 40),
            Err(Error::NonInvertible)
        );
    }
}
