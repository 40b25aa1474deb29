use crate::config::{ConfigError, RunConfig};
use crate::output::to_json;
use henon_lab::census::{self, CensusConfig, SeedStrategy};
use henon_lab::horseshoe::{self, AffineHorseshoe, CantorApproximation, HorseshoeConfig};
use henon_lab::io::{csv_row, f17};
use henon_lab::manifold::{self, GrowthConfig, ManifoldKind, DEFAULT_DEGREE, DEFAULT_TRIM};
use henon_lab::renorm::{self, FrameConfig};
use henon_lab::tangency::{self, SolveConfig, ThetaConfig};
use henon_lab::{henon, Error, Exec, Params, PlanePoint, Rect};
use serde_json::{json, Value};
use std::fmt;

/// Why a command stopped; each variant has its own exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Domain(String),
    AllFailed(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Domain(_) => 2,
            Failure::AllFailed(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Domain(m) => write!(f, "domain error: {m}"),
            Failure::AllFailed(m) => write!(f, "all work items failed: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

/// Files written into the output directory plus a summary for the manifest.
#[derive(Debug, Default)]
pub struct Output {
    pub files: Vec<(String, String)>,
    pub summary: Value,
}

impl Output {
    fn file(mut self, name: &str, body: String) -> Self {
        self.files.push((name.to_string(), body));
        self
    }
}

const COMMON: &[&str] = &["seed"];

fn accept(cfg: &RunConfig, command: &str, keys: &[&str]) -> Result<(), Failure> {
    let all: Vec<&str> = keys.iter().chain(COMMON).copied().collect();
    Ok(cfg.restrict(command, &all)?)
}

fn bool_key(cfg: &RunConfig, key: &str, default: bool) -> Result<bool, Failure> {
    Ok(cfg.get_or(key, default)?)
}

fn pair(cfg: &RunConfig, key: &str) -> Result<Option<(f64, f64)>, Failure> {
    if !cfg.contains(key) {
        return Ok(None);
    }
    match cfg.list::<f64>(key)?.as_slice() {
        [lo, hi] if lo <= hi => Ok(Some((*lo, *hi))),
        _ => Err(Failure::Config(format!(
            "key {key:?} needs two increasing values lo,hi"
        ))),
    }
}

pub fn fixed_points(cfg: &RunConfig) -> Result<Output, Failure> {
    accept(cfg, "fixed-points", &["a", "b"])?;
    let p = Params::new(cfg.finite("a")?, cfg.finite("b")?);
    let fps = henon::fixed_points(p)?;
    let entries: Vec<Value> = fps
        .iter()
        .map(|s| {
            json!({
                "sign": s.sign,
                "x": s.point.x,
                "y": s.point.y,
                "lambda": s.lambda,
                "sigma": s.sigma,
                "stable_direction": s.v_s,
                "unstable_direction": s.v_u,
                "dissipative_saddle": henon::is_dissipative_saddle(s),
            })
        })
        .collect();
    let body = json!({ "a": p.a, "b": p.b, "dissipative": p.b.abs() < 1.0, "fixed_points": entries });
    Ok(Output {
        summary: json!({ "fixed_points": fps.len() }),
        ..Output::default()
    }
    .file("fixed_points.json", to_json(&body)))
}

pub fn tangency_curve(cfg: &RunConfig, exec: Exec) -> Result<Output, Failure> {
    accept(cfg, "tangency-curve", &["b_values", "a_seed", "tol", "slope_check"])?;
    let bs: Vec<f64> = cfg.list("b_values")?;
    if bs.is_empty() {
        return Err(Failure::Config("key \"b_values\" must list at least one b".into()));
    }
    let solve = SolveConfig {
        tol: cfg.positive("tol", 1e-12)?,
        with_slope_check: bool_key(cfg, "slope_check", true)?,
        ..SolveConfig::default()
    };
    let records = tangency::solve_tangency_curve_with(&bs, cfg.get_or("a_seed", -2.0)?, &solve, exec);
    let mut csv = String::from("b,h,dH_da,dh_db_difference,dh_db_quotient,slope_relative_error,deviation\n");
    let mut entries = Vec::new();
    let mut ok = 0;
    for (b, r) in bs.iter().zip(records) {
        match r {
            Ok(rec) => {
                ok += 1;
                let dha = tangency::dh_da(rec.params, 1e-5, &ThetaConfig::default()).unwrap_or(f64::NAN);
                let (fd, q, rel) = rec
                    .slope_check
                    .map(|s| (s.finite_difference, s.quotient, s.relative_error))
                    .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
                csv.push_str(&csv_row(&[
                    *b,
                    rec.params.a,
                    dha,
                    fd,
                    q,
                    rel,
                    (rec.params.a + 2.0).abs(),
                ]));
                csv.push('\n');
                entries.push(json!({ "b": b, "record": rec.to_json(), "slope_check": rec.slope_check }));
            }
            Err(e) => entries.push(json!({ "b": b, "error": e.to_string() })),
        }
    }
    if ok == 0 {
        return Err(Failure::AllFailed(format!(
            "no tangency solved for {} values of b",
            bs.len()
        )));
    }
    Ok(Output {
        summary: json!({ "requested": bs.len(), "solved": ok }),
        ..Output::default()
    }
    .file("tangency_curve.json", to_json(&entries))
    .file("tangency_curve.csv", csv))
}

pub fn sweep(cfg: &RunConfig, exec: Exec) -> Result<Output, Failure> {
    accept(
        cfg,
        "sweep",
        &[
            "b",
            "a_interval",
            "tangency_halfwidth",
            "grid",
            "max_period",
            "transient",
            "iterations",
            "basin_grid",
            "newton_grid",
            "tangency_gap",
        ],
    )?;
    let b = cfg.finite("b")?;
    let interval = match (pair(cfg, "a_interval")?, cfg.optional::<f64>("tangency_halfwidth")?) {
        (Some(iv), None) => iv,
        (None, Some(w)) if w > 0.0 => {
            let rec = tangency::solve_tangency_curve(&[b], -2.0, 1e-12).remove(0)?;
            (rec.params.a - w, rec.params.a + w)
        }
        _ => {
            return Err(Failure::Config(
                "give exactly one of \"a_interval\" or a positive \"tangency_halfwidth\"".into(),
            ))
        }
    };
    let defaults = CensusConfig::default();
    let census_cfg = CensusConfig {
        transient: cfg.get_or("transient", defaults.transient)?,
        iterations: cfg.get_or("iterations", defaults.iterations)?,
        basin_grid: cfg.get_or("basin_grid", defaults.basin_grid)?,
        newton_seeds: SeedStrategy {
            grid: cfg.get_or("newton_grid", defaults.newton_seeds.grid)?,
            ..defaults.newton_seeds.clone()
        },
        tangency_gap: bool_key(cfg, "tangency_gap", true)?,
    };
    let grid: usize = cfg.get_or("grid", 200)?;
    let max_period: usize = cfg.get_or("max_period", 16)?;
    if grid == 0 || max_period == 0 || max_period > census::MAX_PERIOD {
        return Err(Failure::Config(format!(
            "grid must be positive and max_period within 1..={}",
            census::MAX_PERIOD
        )));
    }
    let result = census::sink_census_sweep_with(b, interval, grid, max_period, &census_cfg, exec)?;
    let body = json!({
        "b": b,
        "a_interval": [interval.0, interval.1],
        "records": result.records(),
        "summary": result.summary,
        "orbits": result.points.iter().map(|p| &p.orbits).collect::<Vec<_>>(),
    });
    Ok(Output {
        summary: serde_json::to_value(result.summary).unwrap_or(Value::Null),
        ..Output::default()
    }
    .file("sweep.csv", result.to_csv())
    .file("sweep.json", to_json(&body)))
}

fn slice_report(slices: &[(u32, Result<CantorApproximation, Error>)]) -> (String, Vec<Value>) {
    let mut csv = String::from("level,interval_count,tau,merged\n");
    let mut json_levels = Vec::new();
    for (level, s) in slices {
        match s {
            Ok(s) => {
                let tau = s.thickness().tau;
                csv.push_str(&format!("{level},{},{},{}\n", s.interval_count, f17(tau), s.merged));
                json_levels.push(json!({
                    "level": level,
                    "interval_count": s.interval_count,
                    "tau": if tau.is_finite() { json!(tau) } else { json!("inf") },
                    "merged": s.merged,
                }));
            }
            Err(e) => json_levels.push(json!({ "level": level, "error": e.to_string() })),
        }
    }
    (csv, json_levels)
}

pub fn thickness(cfg: &RunConfig, exec: Exec) -> Result<Output, Failure> {
    accept(
        cfg,
        "thickness",
        &["model", "contraction", "a", "b", "half_thickness", "w_max", "levels"],
    )?;
    let levels: u32 = cfg.get_or("levels", 6)?;
    if levels > 20 {
        return Err(Failure::Config("key \"levels\" must be at most 20".into()));
    }
    let model: String = cfg.get_or("model", "affine".to_string())?;
    let (slices, header) = match model.as_str() {
        "affine" => {
            let c = cfg.positive("contraction", 1.0 / 3.0)?;
            if c >= 0.5 {
                return Err(Failure::Config("key \"contraction\" must lie in (0, 1/2)".into()));
            }
            let m = AffineHorseshoe { contraction: c };
            let cert = horseshoe::certify(&m, &m.carrier(), &m.config(), m.fixed_point(), None, 1, exec)?;
            let slices: Vec<_> = (0..=levels)
                .map(|k| (k, horseshoe::cantor_slice(&m, &m.carrier(), &cert, k, exec)))
                .collect();
            (slices, json!({ "model": "affine", "contraction": c, "w": cert.w }))
        }
        "henon" => {
            for key in ["contraction"] {
                if cfg.contains(key) {
                    return Err(Failure::Config(format!("key {key:?} only applies to model = affine")));
                }
            }
            let p = Params::new(cfg.finite("a")?, cfg.finite("b")?);
            let hcfg = HorseshoeConfig {
                half_thickness: cfg.positive("half_thickness", 0.02)?,
                w_max: cfg.get_or("w_max", 40)?,
                ..HorseshoeConfig::default()
            };
            let cert = horseshoe::build_return_boxes_with(p, &hcfg, exec)?;
            let slices: Vec<_> = (0..=levels)
                .map(|k| (k, horseshoe::stable_cantor_slice_with(&cert, p, k, &hcfg, exec)))
                .collect();
            (
                slices,
                json!({
                    "model": "henon", "a": p.a, "b": p.b, "w": cert.w,
                    "crossing_matrix": cert.crossing_matrix,
                    "carrier_points": cert.carrier_points,
                    "validity_radius": cert.validity_radius,
                }),
            )
        }
        other => return Err(Failure::Config(format!("key \"model\": unknown model {other:?}"))),
    };
    let (csv, json_levels) = slice_report(&slices);
    let top = slices
        .iter()
        .rev()
        .find_map(|(_, s)| s.as_ref().ok())
        .ok_or_else(|| Failure::AllFailed("no level of the slice could be built".into()))?;
    let mut slice_csv = String::from("l,r\n");
    for &(l, r) in top.intervals.intervals() {
        slice_csv.push_str(&csv_row(&[l, r]));
        slice_csv.push('\n');
    }
    let body = json!({ "horseshoe": header, "levels": json_levels, "top_level": top.to_json() });
    let tau = top.thickness().tau;
    Ok(Output {
        summary: json!({ "levels": levels, "tau_top": if tau.is_finite() { json!(tau) } else { json!("inf") } }),
        ..Output::default()
    }
    .file("thickness.json", to_json(&body))
    .file("thickness_levels.csv", csv)
    .file("cantor_slice.csv", slice_csv))
}

pub fn renorm(cfg: &RunConfig, exec: Exec) -> Result<Output, Failure> {
    accept(cfg, "renorm", &["b", "a_seed", "n_min", "n_max", "samples"])?;
    let b: f64 = cfg.get_or("b", 0.05)?;
    let n_min: usize = cfg.get_or("n_min", 1)?;
    let n_max: usize = cfg.get_or("n_max", 3)?;
    if n_min == 0 || n_max < n_min {
        return Err(Failure::Config("need 1 <= n_min <= n_max".into()));
    }
    let samples: usize = cfg.get_or("samples", 256)?;
    let rec = tangency::solve_tangency_curve(&[b], cfg.get_or("a_seed", -2.0)?, 1e-12).remove(0)?;
    let ns: Vec<usize> = (n_min..=n_max).collect();
    let fits = renorm::fit_frames(&rec, &ns, renorm::default_box(), &FrameConfig::default(), samples, exec);
    let mut csv = String::from(
        "n,return_time,residual_c0,residual_c1,fit_residual,saddle_x,saddle_y,unstable_multiplier,leaf_gap\n",
    );
    let mut entries = Vec::new();
    let mut ok = 0;
    for (n, fit) in ns.iter().zip(fits) {
        match fit {
            Ok(f) => {
                ok += 1;
                let saddle = renorm::renormalized_fixed_point(&f.frame, -2.0, PlanePoint::new(2.0, 2.0)).ok();
                let gap = renorm::frame_leaf_slopes(&f.frame, -2.0)
                    .map(|g| g.gap)
                    .unwrap_or(f64::NAN);
                let (sx, sy, mu) =
                    saddle
                        .map(|s| (s.point.x, s.point.y, s.multipliers[1]))
                        .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
                csv.push_str(&format!(
                    "{n},{},{}\n",
                    f.frame.return_time,
                    csv_row(&[
                        f.report.residual_c0,
                        f.report.residual_c1,
                        f.frame.fit_residual,
                        sx,
                        sy,
                        mu,
                        gap
                    ])
                ));
                entries
                    .push(json!({ "n": n, "report": f.report, "frame": f.frame, "saddle": saddle, "leaf_gap": gap }));
            }
            Err(e) => entries.push(json!({ "n": n, "error": e.to_string() })),
        }
    }
    if ok == 0 {
        return Err(Failure::AllFailed(format!(
            "no frame could be fitted for n in {n_min}..={n_max}"
        )));
    }
    let limit = renorm::build_limit_frame(renorm::default_box(), &FrameConfig::default())?;
    let self_test = renorm::quadratic_fit_residual(&limit, samples);
    let body = json!({ "b": b, "tangency": rec.to_json(), "frames": entries, "limit_self_test": self_test });
    Ok(Output {
        summary: json!({ "requested": ns.len(), "fitted": ok, "limit_residual_c0": self_test.residual_c0 }),
        ..Output::default()
    }
    .file("renorm.json", to_json(&body))
    .file("renorm.csv", csv))
}

pub fn census(cfg: &RunConfig, exec: Exec) -> Result<Output, Failure> {
    accept(
        cfg,
        "census",
        &[
            "a",
            "b",
            "max_period",
            "grid",
            "transient",
            "iterations",
            "seed_x",
            "seed_y",
            "attractor",
            "basin_samples",
            "basin_iterations",
        ],
    )?;
    let p = Params::new(cfg.finite("a")?, cfg.finite("b")?);
    if p.b == 0.0 {
        return Err(Error::NonInvertible.into());
    }
    let max_period: usize = cfg.get_or("max_period", 8)?;
    if max_period == 0 || max_period > census::MAX_PERIOD {
        return Err(Failure::Config(format!(
            "max_period must lie in 1..={}",
            census::MAX_PERIOD
        )));
    }
    let seeds = SeedStrategy {
        grid: cfg.get_or("grid", 32)?,
        ..SeedStrategy::default()
    };
    let orbits = census::find_periodic_orbits_with(p, max_period, &seeds, exec);
    let start = PlanePoint::new(cfg.get_or("seed_x", 0.1)?, cfg.get_or("seed_y", 0.1)?);
    let report = census::lyapunov_exponent(
        p,
        start,
        cfg.get_or("transient", 10_000)?,
        cfg.get_or("iterations", 1_000_000)?,
    );
    let attractor = if bool_key(cfg, "attractor", true)? {
        census::detect_strange_attractor(p)
    } else {
        None
    };
    let mut csv = String::from("period,index,x,y,kind,modulus_small,modulus_large\n");
    for o in &orbits {
        let kind = serde_json::to_value(o.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        for (i, z) in o.points.iter().enumerate() {
            csv.push_str(&format!(
                "{},{i},{},{kind},{}\n",
                o.period,
                csv_row(&[z.x, z.y]),
                csv_row(&[o.multipliers[0].norm(), o.multipliers[1].norm()])
            ));
        }
    }
    let sinks = orbits.iter().filter(|o| o.kind == census::OrbitKind::Sink).count();
    let basin_samples: usize = cfg.get_or("basin_samples", 64)?;
    let basin_iterations: usize = cfg.get_or("basin_iterations", 10_000)?;
    let contacts: Vec<Value> = orbits
        .iter()
        .filter(|o| o.kind == census::OrbitKind::Sink)
        .map(
            |o| match census::basin_meets_unstable(p, o, basin_samples, basin_iterations) {
                Ok(c) => json!(c),
                Err(e) => json!({ "period": o.period, "error": e.to_string() }),
            },
        )
        .collect();
    let body = json!({
        "a": p.a,
        "b": p.b,
        "orbits": orbits,
        "basin_contacts": contacts,
        "lyapunov": report,
        "lyapunov_valid": report.is_valid(),
        "attractor": attractor,
    });
    Ok(Output {
        summary: json!({ "orbits": orbits.len(), "sinks": sinks, "attractor": attractor.is_some() }),
        ..Output::default()
    }
    .file("census.json", to_json(&body))
    .file("orbits.csv", csv))
}

pub fn manifold_dump(cfg: &RunConfig) -> Result<Output, Failure> {
    accept(
        cfg,
        "manifold-dump",
        &["a", "b", "iterations", "degree", "trim", "stable_graph"],
    )?;
    let p = Params::new(cfg.finite("a")?, cfg.finite("b")?);
    let trim = if cfg.contains("trim") {
        match cfg.list::<f64>("trim")?.as_slice() {
            [x0, x1, y0, y1] if x0 < x1 && y0 < y1 => Rect::new(*x0, *x1, *y0, *y1),
            _ => return Err(Failure::Config("key \"trim\" needs x_min,x_max,y_min,y_max".into())),
        }
    } else {
        DEFAULT_TRIM
    };
    let saddle = henon::plus_saddle(p)?;
    let chart = manifold::local_manifold_chart(
        p,
        &saddle,
        ManifoldKind::Unstable,
        cfg.get_or("degree", DEFAULT_DEGREE)?,
    )?;
    let segs = manifold::grow_unstable(p, &chart, cfg.get_or("iterations", 8)?, trim, &GrowthConfig::default())?;
    let mut csv = String::from("segment,s,x,y,tx,ty,kappa\n");
    for (k, seg) in segs.iter().enumerate() {
        for line in seg.to_csv().lines().skip(1) {
            csv.push_str(&format!("{k},{line}\n"));
        }
    }
    let mut out = Output::default().file("unstable_manifold.csv", csv);
    let mut graph_max_slope = None;
    if bool_key(cfg, "stable_graph", true)? {
        let g = manifold::extract_stable_graph(p)?;
        graph_max_slope = Some(g.max_abs_d1());
        let mut gcsv = String::from("x,eta,eta_prime\n");
        for i in 0..g.xs.len() {
            gcsv.push_str(&csv_row(&[g.xs[i], g.ys[i], g.d1[i]]));
            gcsv.push('\n');
        }
        out = out.file("stable_graph.csv", gcsv);
    }
    let body = json!({
        "a": p.a,
        "b": p.b,
        "saddle": saddle,
        "trim": trim,
        "segments": segs.iter().map(|s| json!({ "nodes": s.len(), "length": s.total_length() })).collect::<Vec<_>>(),
        "stable_graph_max_slope": graph_max_slope,
    });
    out.summary = json!({ "segments": segs.len() });
    Ok(out.file("manifold.json", to_json(&body)))
}
