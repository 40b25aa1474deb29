//! The split function, the tangency curve `h(b)` and quadratic-contact detection.

use crate::error::{Error, Result};
use crate::geom::PlanePoint;
use crate::henon::{self, Params};
use crate::manifold::{CurveSegment, GlobalBranch, Jet, StableGraph};
use crate::par::Exec;
use serde::{Deserialize, Serialize};

/// Controls for locating the fold arc and its maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaConfig {
    pub delta: f64,
    /// Which crossing of `x = 0` by the left unstable branch carries the fold arc.
    pub passage: usize,
    pub grid: usize,
}

impl Default for ThetaConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            passage: 2,
            grid: 81,
        }
    }
}

/// The left unstable branch restricted to one passage through the strip `|x| <= delta`,
/// viewed as a graph `y = zeta(t)`.
#[derive(Debug, Clone)]
pub struct FoldArc {
    branch: GlobalBranch,
    lo: f64,
    hi: f64,
    increasing: bool,
}

const SCAN_POINTS: usize = 20_000;
const SCAN_S_MIN: f64 = 1e-3;
const SCAN_S_MAX: f64 = 400.0;

impl FoldArc {
    pub fn new(p: Params, cfg: &ThetaConfig) -> Result<Self> {
        let branch = GlobalBranch::unstable(p)?;
        let ratio = (SCAN_S_MAX / SCAN_S_MIN).powf(1.0 / (SCAN_POINTS - 1) as f64);
        let ss: Vec<f64> = (0..SCAN_POINTS).map(|k| -SCAN_S_MIN * ratio.powi(k as i32)).collect();
        let xs: Vec<f64> = ss.iter().map(|&s| branch.point(s).x).collect();
        let mut seen = 0;
        for k in 1..SCAN_POINTS {
            if !xs[k].is_finite() {
                break;
            }
            if (xs[k - 1] > 0.0) != (xs[k] > 0.0) {
                seen += 1;
                if seen == cfg.passage.max(1) {
                    let reach = 1.25 * cfg.delta;
                    let mut i = k - 1;
                    while i > 0 && xs[i].abs() <= reach {
                        i -= 1;
                    }
                    let mut j = k;
                    while j + 1 < SCAN_POINTS && xs[j].abs() <= reach {
                        j += 1;
                    }
                    let window = &xs[i..=j];
                    let increasing = xs[k] > xs[k - 1];
                    let monotone = window.windows(2).all(|w| (w[1] > w[0]) == increasing);
                    if !monotone {
                        return Err(Error::NotGraphLike);
                    }
                    // ss is decreasing, so the bracket is (ss[j], ss[i]).
                    return Ok(Self {
                        branch,
                        lo: ss[j],
                        hi: ss[i],
                        increasing: xs[i] > xs[j],
                    });
                }
            }
        }
        Err(Error::Degenerate(format!(
            "unstable branch has fewer than {} passages through x = 0",
            cfg.passage
        )))
    }

    pub fn branch(&self) -> &GlobalBranch {
        &self.branch
    }

    /// Manifold parameter whose point has abscissa `t`.
    pub fn param_at(&self, t: f64) -> f64 {
        let (mut lo, mut hi) = (self.lo, self.hi);
        let sign = if self.increasing { 1.0 } else { -1.0 };
        let mut s = 0.5 * (lo + hi);
        for _ in 0..200 {
            let j = self.branch.jet(s);
            let f = sign * (j.p.x - t);
            if f == 0.0 {
                break;
            }
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let newton = s - (j.p.x - t) / j.d1.x;
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - s).abs() <= 1e-16 * s.abs().max(1.0) {
                s = next;
                break;
            }
            s = next;
        }
        s
    }

    pub fn jet_at(&self, t: f64) -> Jet {
        self.branch.jet(self.param_at(t))
    }

    /// `(zeta, zeta', zeta'')` at `t`.
    pub fn zeta(&self, t: f64) -> (f64, f64, f64) {
        let j = self.jet_at(t);
        let d1 = j.d1.y / j.d1.x;
        let d2 = (j.d2.y * j.d1.x - j.d1.y * j.d2.x) / j.d1.x.powi(3);
        (j.p.y, d1, d2)
    }
}

/// The split function with its ingredients, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct SplitFunction {
    pub params: Params,
    pub arc: FoldArc,
    pub stable: StableGraph,
    pub cfg: ThetaConfig,
}

impl SplitFunction {
    pub fn new(p: Params, cfg: ThetaConfig) -> Result<Self> {
        Ok(Self {
            params: p,
            arc: FoldArc::new(p, &cfg)?,
            stable: StableGraph::new(p)?,
            cfg,
        })
    }

    /// `(theta, theta', theta'')` at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let Params { a, b } = self.params;
        let (z, z1, z2) = self.arc.zeta(t);
        let (e, e1, e2) = self.stable.eval(z);
        let th = a - b * t + z * z - e;
        let th1 = -b + 2.0 * z * z1 - e1 * z1;
        let th2 = 2.0 * z1 * z1 + 2.0 * z * z2 - e2 * z1 * z1 - e1 * z2;
        (th, th1, th2)
    }

    /// The fold arc pushed forward once and straightened against the stable graph:
    /// nodes `(zeta(t), theta(t))` with generating parameter `t`.
    pub fn straightened_image(&self, t_lo: f64, t_hi: f64, samples: usize) -> CurveSegment {
        let n = samples.max(3);
        let ts: Vec<f64> = (0..n)
            .map(|i| t_lo + (t_hi - t_lo) * i as f64 / (n - 1) as f64)
            .collect();
        let jets: Vec<Jet> = ts
            .iter()
            .map(|&t| {
                let (z, z1, z2) = self.arc.zeta(t);
                let (th, th1, th2) = self.eval(t);
                Jet {
                    p: PlanePoint::new(z, th),
                    d1: PlanePoint::new(z1, th1),
                    d2: PlanePoint::new(z2, th2),
                }
            })
            .collect();
        CurveSegment::from_jets(ts, &jets, 1.0)
    }
}

/// Dense samples of the split function and its polished interior maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaProfile {
    pub ts: Vec<f64>,
    pub values: Vec<f64>,
    pub t_star: f64,
    pub theta_star: f64,
    pub second_deriv: f64,
}

pub fn theta_profile(p: Params, delta: f64) -> Result<ThetaProfile> {
    let cfg = ThetaConfig {
        delta,
        ..ThetaConfig::default()
    };
    theta_profile_with(&SplitFunction::new(p, cfg)?)
}

pub fn theta_profile_with(f: &SplitFunction) -> Result<ThetaProfile> {
    let delta = f.cfg.delta;
    let n = f.cfg.grid.max(5);
    let ts: Vec<f64> = (0..n)
        .map(|i| -delta + 2.0 * delta * i as f64 / (n - 1) as f64)
        .collect();
    let values: Vec<f64> = ts.iter().map(|&t| f.eval(t).0).collect();
    let best = (0..n).max_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap_or(0);
    if best == 0 || best == n - 1 {
        return Err(Error::NoInteriorMax { t: ts[best] });
    }
    let (mut lo, mut hi) = (ts[best - 1], ts[best + 1]);
    let mut t = ts[best];
    for _ in 0..60 {
        let (_, d1, d2) = f.eval(t);
        if d1 > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = if d2 < 0.0 { t - d1 / d2 } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 1e-15 {
            t = next;
            break;
        }
        t = next;
    }
    let (theta_star, _, second_deriv) = f.eval(t);
    if t.abs() >= delta {
        return Err(Error::NoInteriorMax { t });
    }
    Ok(ThetaProfile {
        ts,
        values,
        t_star: t,
        theta_star,
        second_deriv,
    })
}

/// Signed height of the fold above the stable graph.
pub fn split_function_h(p: Params) -> Result<f64> {
    split_function_h_with(p, &ThetaConfig::default())
}

pub fn split_function_h_with(p: Params, cfg: &ThetaConfig) -> Result<f64> {
    Ok(theta_profile_with(&SplitFunction::new(p, *cfg)?)?.theta_star)
}

/// Closed form of the split function on the axis `b = 0`.
pub fn h_closed_form_b0(a: f64) -> f64 {
    a * a + a - 0.5 * (1.0 + (1.0 - 4.0 * a).sqrt())
}

/// Central difference of `H` in `a`.
pub fn dh_da(p: Params, step: f64, cfg: &ThetaConfig) -> Result<f64> {
    let hp = split_function_h_with(p.with_a(p.a + step), cfg)?;
    let hm = split_function_h_with(p.with_a(p.a - step), cfg)?;
    Ok((hp - hm) / (2.0 * step))
}

/// Central difference of `H` in `b`.
pub fn dh_db(p: Params, step: f64, cfg: &ThetaConfig) -> Result<f64> {
    let hp = split_function_h_with(Params::new(p.a, p.b + step), cfg)?;
    let hm = split_function_h_with(Params::new(p.a, p.b - step), cfg)?;
    Ok((hp - hm) / (2.0 * step))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TangencyKind {
    Homoclinic,
    Heteroclinic,
}

/// A located quadratic tangency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangencyRecord {
    pub params: Params,
    pub point: PlanePoint,
    pub t_star: f64,
    pub second_deriv: f64,
    pub unfolding_speed: f64,
    pub kind: TangencyKind,
    pub residual: f64,
    /// `|H|` after each Newton step.
    pub history: Vec<f64>,
    pub slope_check: Option<SlopeCheck>,
}

/// Slope of the tangency curve two ways: differencing solved points, and the implicit quotient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeCheck {
    pub finite_difference: f64,
    pub quotient: f64,
    pub relative_error: f64,
}

/// Flat JSON form of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangencyRecordJson {
    pub a: f64,
    pub b: f64,
    pub x: f64,
    pub y: f64,
    pub t_star: f64,
    pub second_deriv: f64,
    pub unfolding_speed: f64,
    pub kind: TangencyKind,
    pub residual: f64,
}

impl TangencyRecord {
    pub fn to_json(&self) -> TangencyRecordJson {
        TangencyRecordJson {
            a: self.params.a,
            b: self.params.b,
            x: self.point.x,
            y: self.point.y,
            t_star: self.t_star,
            second_deriv: self.second_deriv,
            unfolding_speed: self.unfolding_speed,
            kind: self.kind,
            residual: self.residual,
        }
    }

    /// Quadratic contact with nonzero unfolding speed.
    pub fn is_generic(&self) -> bool {
        self.second_deriv != 0.0 && self.unfolding_speed != 0.0
    }
}

/// Solver controls for `H(a, b) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub da: f64,
    pub theta: ThetaConfig,
    pub with_slope_check: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            da: 1e-5,
            theta: ThetaConfig::default(),
            with_slope_check: true,
        }
    }
}

/// Finds the zero of `a -> H(a, b)` by Newton with a bisection fallback once a sign change
/// is bracketed. Returns the root and `|H|` after every evaluation.
pub fn solve_h(b: f64, a_seed: f64, cfg: &SolveConfig) -> Result<(f64, Vec<f64>)> {
    if b == 0.0 {
        return Ok((-2.0, vec![h_closed_form_b0(-2.0).abs()]));
    }
    let h = |a: f64| split_function_h_with(Params::new(a, b), &cfg.theta);
    let mut a = a_seed;
    let mut value = h(a)?;
    let mut history = vec![value.abs()];
    // (lo, value at lo, hi, value at hi) with opposite signs.
    let mut bracket: Option<(f64, f64, f64, f64)> = None;
    for _ in 0..cfg.max_iter {
        if value.abs() <= cfg.tol {
            return Ok((a, history));
        }
        let slope = (h(a + cfg.da)? - h(a - cfg.da)?) / (2.0 * cfg.da);
        let mut next = a - value / slope;
        match bracket {
            Some((lo, _, hi, _)) if !(next > lo && next < hi) => next = 0.5 * (lo + hi),
            None if !next.is_finite() || (next - a).abs() > 0.25 => {
                next = a - 0.25 * (value / slope).signum();
            }
            _ => {}
        }
        let v = match (h(next), bracket) {
            (Ok(v), _) => v,
            (Err(_), Some((lo, _, hi, _))) => {
                next = 0.5 * (lo + hi);
                h(next)?
            }
            (Err(e), None) => return Err(e),
        };
        bracket = match bracket {
            _ if v.signum() != value.signum() => Some(if a < next {
                (a, value, next, v)
            } else {
                (next, v, a, value)
            }),
            Some((lo, vlo, hi, vhi)) => {
                if v.signum() == vlo.signum() {
                    Some((next, v, hi, vhi))
                } else {
                    Some((lo, vlo, next, v))
                }
            }
            None => None,
        };
        a = next;
        value = v;
        history.push(value.abs());
    }
    if value.abs() <= cfg.tol {
        return Ok((a, history));
    }
    Err(Error::NewtonDiverged {
        iterations: cfg.max_iter,
        last: a,
    })
}

/// Builds the full record at a solved tangency.
pub fn tangency_record(a: f64, b: f64, history: Vec<f64>, cfg: &SolveConfig) -> Result<TangencyRecord> {
    let p = Params::new(a, b);
    let f = SplitFunction::new(p, cfg.theta)?;
    let prof = theta_profile_with(&f)?;
    let speed = if b == 0.0 {
        // Exact derivative of the axis closed form.
        2.0 * a + 1.0 + 1.0 / (1.0 - 4.0 * a).sqrt()
    } else {
        dh_da(p, cfg.da, &cfg.theta)?
    };
    let (z, _, _) = f.arc.zeta(prof.t_star);
    let point = henon::apply(p, PlanePoint::new(prof.t_star, z));
    Ok(TangencyRecord {
        params: p,
        point,
        t_star: prof.t_star,
        second_deriv: prof.second_deriv,
        unfolding_speed: speed,
        kind: TangencyKind::Homoclinic,
        residual: prof.theta_star.abs(),
        history,
        slope_check: None,
    })
}

fn slope_check(rec: &TangencyRecord, cfg: &SolveConfig) -> Result<SlopeCheck> {
    let b = rec.params.b;
    let step = if b == 0.0 { 1e-3 } else { b.abs() / 10.0 };
    let inner = SolveConfig {
        with_slope_check: false,
        ..*cfg
    };
    let (ap, _) = solve_h(b + step, rec.params.a, &inner)?;
    let (am, _) = solve_h(b - step, rec.params.a, &inner)?;
    let fd = (ap - am) / (2.0 * step);
    let hb = dh_db(rec.params, 1e-5, &cfg.theta)?;
    let quotient = -hb / rec.unfolding_speed;
    Ok(SlopeCheck {
        finite_difference: fd,
        quotient,
        relative_error: ((fd - quotient) / quotient).abs(),
    })
}

/// Solves the tangency curve for every `b`, seeding each solve with the previous root.
///
/// Failures are reported per entry and do not stop the sweep.
pub fn solve_tangency_curve(b_values: &[f64], a_seed: f64, tol: f64) -> Vec<Result<TangencyRecord>> {
    let cfg = SolveConfig {
        tol,
        ..SolveConfig::default()
    };
    solve_tangency_curve_with(b_values, a_seed, &cfg, Exec::Sequential)
}

/// Like [`solve_tangency_curve`]; with `Exec::Parallel` every `b` is seeded from `a_seed`
/// and the optional slope checks run concurrently.
pub fn solve_tangency_curve_with(
    b_values: &[f64],
    a_seed: f64,
    cfg: &SolveConfig,
    exec: Exec,
) -> Vec<Result<TangencyRecord>> {
    let solve_one = |b: f64, seed: f64| -> Result<TangencyRecord> {
        let (a, hist) = solve_h(b, seed, cfg)?;
        tangency_record(a, b, hist, cfg)
    };
    let mut records: Vec<Result<TangencyRecord>> = match exec {
        Exec::Sequential => {
            let mut seed = a_seed;
            let mut out = Vec::with_capacity(b_values.len());
            for &b in b_values {
                let r = solve_one(b, seed);
                if let Ok(rec) = &r {
                    seed = rec.params.a;
                }
                out.push(r);
            }
            out
        }
        Exec::Parallel => exec.map(b_values, |&b| solve_one(b, a_seed)),
    };
    if cfg.with_slope_check {
        let checks = exec.map(&records, |r| match r {
            Ok(rec) => slope_check(rec, cfg).ok(),
            Err(_) => None,
        });
        for (r, c) in records.iter_mut().zip(checks) {
            if let Ok(rec) = r {
                rec.slope_check = c;
            }
        }
    }
    records
}

/// A short segment crossing both curves; the comparison window is the tube of radius
/// `half_width` around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transversal {
    pub from: PlanePoint,
    pub to: PlanePoint,
    pub half_width: f64,
}

impl Transversal {
    fn distance(&self, z: PlanePoint) -> f64 {
        let d = self.to - self.from;
        let t = ((z - self.from).dot(d) / d.dot(d)).clamp(0.0, 1.0);
        z.dist(self.from + t * d)
    }
}

/// Local contact data in the quadratic model `y = 0` versus `y = curvature * u^2 + gap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub point: PlanePoint,
    pub normal_gap: f64,
    /// Half the second derivative of the gap with respect to the second curve's parameter.
    pub relative_curvature: f64,
    pub is_tangency: bool,
}

impl Contact {
    pub fn tangency(&self) -> Option<Self> {
        self.is_tangency.then_some(*self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub tol: f64,
    pub min_curvature: f64,
    pub fit_half_window: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            min_curvature: 1e-3,
            fit_half_window: 8,
        }
    }
}

fn window(c: &CurveSegment, tr: &Transversal) -> Vec<usize> {
    (0..c.len())
        .filter(|&i| tr.distance(c.nodes[i]) <= tr.half_width)
        .collect()
}

fn folds(c: &CurveSegment, idx: &[usize]) -> bool {
    let Some(&first) = idx.first() else {
        return false;
    };
    let t0 = c.tangents[first];
    idx.iter().any(|&i| c.tangents[i].dot(t0) <= 0.0)
}

/// Signed distance from `z` to the polyline `c` restricted to `idx`, positive on the left.
fn signed_distance(c: &CurveSegment, idx: &[usize], z: PlanePoint) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for w in idx.windows(2) {
        if w[1] != w[0] + 1 {
            continue;
        }
        let (p0, p1) = (c.nodes[w[0]], c.nodes[w[1]]);
        let d = p1 - p0;
        let t = ((z - p0).dot(d) / d.dot(d)).clamp(0.0, 1.0);
        let proj = p0 + t * d;
        let dist = z.dist(proj);
        if dist < best.0 {
            best = (dist, d.cross(z - proj).signum() * dist);
        }
    }
    best.1
}

/// Gap of `c2` measured from `c1` as a function of `c2`'s generating parameter, reduced to the
/// quadratic contact model.
pub fn detect_quadratic_tangency(c1: &CurveSegment, c2: &CurveSegment, transversal: &Transversal) -> Result<Contact> {
    detect_quadratic_tangency_with(c1, c2, transversal, &DetectConfig::default())
}

pub fn detect_quadratic_tangency_with(
    c1: &CurveSegment,
    c2: &CurveSegment,
    transversal: &Transversal,
    cfg: &DetectConfig,
) -> Result<Contact> {
    let w1 = window(c1, transversal);
    let w2 = window(c2, transversal);
    if w1.len() < 2 || w2.len() < 3 {
        return Err(Error::NotGraphLike);
    }
    if folds(c1, &w1) {
        return Err(Error::NotGraphLike);
    }
    // Extend the base window so projections of the far ends of c2 stay interior.
    let lo = w1[0].saturating_sub(4);
    let hi = (w1[w1.len() - 1] + 5).min(c1.len());
    let base: Vec<usize> = (lo..hi).collect();
    let us: Vec<f64> = w2.iter().map(|&i| c2.params[i]).collect();
    let gs: Vec<f64> = w2.iter().map(|&i| signed_distance(c1, &base, c2.nodes[i])).collect();
    let n = gs.len();
    let mut center = None;
    for k in 1..n - 1 {
        let ext = (gs[k] - gs[k - 1]) * (gs[k + 1] - gs[k]) <= 0.0;
        if ext && center.is_none_or(|c: usize| gs[k].abs() < gs[c].abs()) {
            center = Some(k);
        }
    }
    let k0 = center.unwrap_or_else(|| (0..n).min_by(|&i, &j| gs[i].abs().total_cmp(&gs[j].abs())).unwrap_or(0));
    let a = k0.saturating_sub(cfg.fit_half_window).min(n.saturating_sub(3));
    let b = (k0 + cfg.fit_half_window + 1).min(n).max(a + 3);
    let u0 = us[k0];
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for k in a..b {
        let u = us[k] - u0;
        let basis = [1.0, u, u * u];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            r[i] += basis[i] * gs[k];
        }
    }
    let c = crate::manifold::solve3(m, r).ok_or(Error::NotGraphLike)?;
    let curvature = c[2];
    let (u_star, gap) = if curvature.abs() > 0.0 && center.is_some() {
        let du = -c[1] / (2.0 * curvature);
        (u0 + du, c[0] + c[1] * du + curvature * du * du)
    } else {
        (u0, c[0])
    };
    let seg = c2.params.partition_point(|&p| p <= u_star).clamp(1, c2.len() - 1);
    let (p0, p1) = (c2.params[seg - 1], c2.params[seg]);
    let t = if p1 != p0 {
        ((u_star - p0) / (p1 - p0)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let point = c2.nodes[seg - 1] + t * (c2.nodes[seg] - c2.nodes[seg - 1]);
    Ok(Contact {
        point,
        normal_gap: gap,
        relative_curvature: curvature,
        is_tangency: center.is_some() && gap.abs() <= cfg.tol && curvature.abs() >= cfg.min_curvature,
    })
}

/// The straightened stable segment and the straightened fold image around `t_star`.
pub fn straightened_pair(
    f: &SplitFunction,
    t_star: f64,
    half_span: f64,
    samples: usize,
) -> (CurveSegment, CurveSegment, Transversal) {
    let l1 = f.straightened_image(t_star - half_span, t_star + half_span, samples);
    let (zx, _, _) = f.arc.zeta(t_star);
    let n = samples.max(3);
    let xs: Vec<f64> = (0..n).map(|i| zx - 0.5 + i as f64 / (n - 1) as f64).collect();
    let s = CurveSegment::from_jets(
        xs.clone(),
        &xs.iter()
            .map(|&x| Jet {
                p: PlanePoint::new(x, 0.0),
                d1: PlanePoint::new(1.0, 0.0),
                d2: PlanePoint::default(),
            })
            .collect::<Vec<_>>(),
        1.0,
    );
    let tr = Transversal {
        from: PlanePoint::new(zx, -0.1),
        to: PlanePoint::new(zx, 0.1),
        half_width: 0.2,
    };
    (s, l1, tr)
}

/// Normal gap of the straightened fold image at parameters `p`, through contact detection.
pub fn contact_gap(p: Params, cfg: &ThetaConfig) -> Result<Contact> {
    let f = SplitFunction::new(p, *cfg)?;
    let prof = theta_profile_with(&f)?;
    let (s, l1, tr) = straightened_pair(&f, prof.t_star, 0.02, 401);
    detect_quadratic_tangency(&s, &l1, &tr)
}

/// Central difference of the detected normal gap with respect to `a` at the record's parameters.
pub fn unfolding_speed(record: &TangencyRecord, da: f64) -> Result<f64> {
    let cfg = ThetaConfig::default();
    let p = record.params;
    let gp = contact_gap(p.with_a(p.a + da), &cfg)?.normal_gap;
    let gm = contact_gap(p.with_a(p.a - da), &cfg)?.normal_gap;
    Ok((gp - gm) / (2.0 * da))
}

/// Measured leaf slopes of the renormalized picture at one `a_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGapReport {
    pub a_bar: f64,
    pub slope_stable: f64,
    pub slope_unstable: f64,
    pub gap: f64,
}

impl VelocityGapReport {
    pub fn new(a_bar: f64, slope_stable: f64, slope_unstable: f64) -> Self {
        Self {
            a_bar,
            slope_stable,
            slope_unstable,
            gap: slope_stable - slope_unstable,
        }
    }
}

/// Where the leaf slopes come from.
#[derive(Debug, Clone)]
pub enum SlopeSource<'a> {
    /// Closed forms of the limit family.
    Limit,
    /// Finite differences through a fitted renormalization frame.
    Frame(&'a crate::renorm::RenormFrame),
}

pub fn leaf_velocity_gap(source: &SlopeSource<'_>, a_bar_values: &[f64]) -> Result<Vec<VelocityGapReport>> {
    a_bar_values
        .iter()
        .map(|&ab| match source {
            SlopeSource::Limit => {
                let d = crate::renorm::limit_family_data(ab)?;
                Ok(VelocityGapReport::new(ab, d.slope_fixed, d.slope_endpoint))
            }
            SlopeSource::Frame(frame) => crate::renorm::frame_leaf_slopes(frame, ab),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn theta_at_b0_is_closed_form() {
        let prof = theta_profile(Params::new(-2.0, 0.0), 0.2).unwrap();
        assert!(prof.t_star.abs() < 1e-8);
        assert!((prof.second_deriv + 8.0).abs() < 1e-8);
        assert!(prof.theta_star.abs() < 1e-10);
        let prof = theta_profile(Params::new(-1.9, 0.0), 0.2).unwrap();
        assert!((prof.theta_star - h_closed_form_b0(-1.9)).abs() < 1e-10);
        assert!((prof.theta_star + 0.25629).abs() < 1e-5);
    }

    #[test]
    fn theta_profile_small_b() {
        let prof = theta_profile(Params::new(-2.0, 0.02), 0.2).unwrap();
        assert!(prof.t_star.abs() < 0.05);
        assert!((prof.second_deriv + 8.0).abs() < 0.5);
    }

    #[test]
    fn split_derivative_at_corner() {
        let d = dh_da(Params::new(-2.0, 0.0), 1e-4, &ThetaConfig::default()).unwrap();
        assert!((d + 8.0 / 3.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn curve_at_b0_is_exact() {
        let recs = solve_tangency_curve(&[0.0], -2.0, 1e-12);
        assert_eq!(recs[0].as_ref().unwrap().params.a, -2.0);
    }

    #[test]
    fn newton_tail_is_quadratic() {
        let cfg = SolveConfig::default();
        let (_, hist) = solve_h(0.02, -2.0, &cfg).unwrap();
        for w in hist.windows(2) {
            if w[0] < 1e-4 && w[1] > 1e-13 {
                assert!(w[1] / w[0] <= 0.5, "{hist:?}");
            }
        }
    }

    #[test]
    fn diverging_solve_is_reported_per_entry() {
        let recs = solve_tangency_curve(&[0.02, 5.0], -2.0, 1e-12);
        assert!(recs[0].is_ok());
        assert!(recs[1].is_err());
    }

    fn parabola(offset: f64) -> CurveSegment {
        CurveSegment::from_nodes(
            (-400..=400)
                .map(|i| {
                    let x = i as f64 * 1e-3;
                    PlanePoint::new(x, x * x + offset)
                })
                .collect(),
        )
    }

    fn line() -> CurveSegment {
        CurveSegment::from_nodes((-400..=400).map(|i| PlanePoint::new(i as f64 * 1e-3, 0.0)).collect())
    }

    fn vertical() -> Transversal {
        Transversal {
            from: PlanePoint::new(0.0, -0.2),
            to: PlanePoint::new(0.0, 0.3),
            half_width: 0.1,
        }
    }

    #[test]
    fn model_contacts() {
        let c = detect_quadratic_tangency(&line(), &parabola(0.0), &vertical()).unwrap();
        assert!(c.is_tangency && c.normal_gap.abs() < 1e-9);
        assert!((c.relative_curvature - 1.0).abs() < 1e-3);
        assert!(c.point.norm() < 1e-6);
        let c = detect_quadratic_tangency(&line(), &parabola(0.1), &vertical()).unwrap();
        assert!(c.tangency().is_none());
        assert!((c.normal_gap - 0.1).abs() < 1e-9);
    }

    #[test]
    fn swapping_curves_flips_the_frame() {
        for offset in [0.0, 0.1] {
            let fwd = detect_quadratic_tangency(&line(), &parabola(offset), &vertical()).unwrap();
            let rev = detect_quadratic_tangency(&parabola(offset), &line(), &vertical()).unwrap();
            assert!((fwd.normal_gap + rev.normal_gap).abs() < 1e-6);
            // Away from contact the distance to a curved base rescales curvature by 1/(1 + kappa d).
            let expected = -fwd.relative_curvature / (1.0 + 2.0 * offset);
            assert!((rev.relative_curvature - expected).abs() < 0.01);
            assert_eq!(fwd.is_tangency, rev.is_tangency);
        }
    }

    #[test]
    fn folding_base_is_rejected() {
        let hairpin = CurveSegment::from_nodes(
            (0..2000)
                .map(|i| {
                    let t = i as f64 * 1e-3 * std::f64::consts::PI;
                    PlanePoint::new(0.05 * t.cos(), 0.05 * t.sin())
                })
                .collect(),
        );
        let tr = Transversal {
            from: PlanePoint::new(0.0, -0.1),
            to: PlanePoint::new(0.0, 0.1),
            half_width: 0.2,
        };
        assert_eq!(
            detect_quadratic_tangency(&hairpin, &line(), &tr),
            Err(Error::NotGraphLike)
        );
    }

    #[test]
    fn limit_gap() {
        let r = leaf_velocity_gap(&SlopeSource::Limit, &[-2.0, -2.05]).unwrap();
        assert!((r[0].slope_stable + 1.0 / 3.0).abs() < 1e-14);
        assert!((r[0].slope_unstable + 3.0).abs() < 1e-14);
        assert!((r[0].gap - 8.0 / 3.0).abs() < 1e-14);
        assert!((r[1].slope_stable + 1.0 / 9.2f64.sqrt()).abs() < 1e-14);
        assert!((r[1].slope_unstable + 3.1).abs() < 1e-14);
        assert!(r[1].gap > 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn axis_profile_matches_closed_form(a in -2.1f64..-1.9) {
            let prof = theta_profile(Params::new(a, 0.0), 0.2).unwrap();
            prop_assert!((prof.theta_star - h_closed_form_b0(a)).abs() <= 1e-10);
            prop_assert!((prof.second_deriv - 4.0 * a).abs() <= 1e-8);
        }

        #[test]
        fn gap_is_difference(s in -5.0f64..5.0, u in -5.0f64..5.0) {
            let r = VelocityGapReport::new(-2.0, s, u);
            prop_assert_eq!(r.gap, s - u);
        }
    }
}
