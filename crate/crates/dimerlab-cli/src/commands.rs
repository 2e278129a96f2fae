//! One function per command; each writes its artifacts through a [`Sink`].

use std::f64::consts::TAU;
use std::path::Path;

use dimerlab::girsanov::girsanov_relative_error;
use dimerlab::green::{exit_distribution, green_solve, harmonicity_defect, hitting_probability, mystery_identity_residual, target_indicator, ExitTarget};
use dimerlab::lattice::{preset, LatticeDomain, LatticeKind, Region, SvgCanvas, Symmetry};
use dimerlab::loewner::{diffusivity_estimate, lattice_resolved_dt, lerw_driving, DrivingFunction, ZipperOptions};
use dimerlab::observables::{
    ball_avoidance, covariance_check, crossing_probability, exit_frequencies, winding_moments, CovarianceMap, CrossingSetup, McSummary, Orientation,
};
use dimerlab::temperley::{
    arborescence_partition, build_temperleyan, build_temperleyan_with, dimers_to_tree, height_function, kasteleyn_partition, tree_to_dimers,
};
use dimerlab::walk::{conditioned_kernel, conditioned_kernel_on, sample_lerw, sample_walk, wilson_sample, Conditioning, Kernel, Law, RngSeed, DEFAULT_CAP};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifacts::{num, Sink};
use crate::config::{invalid, point, Command, ExperimentConfig, Shape};
use crate::CliError;

/// Outcome of a run: the JSON document written and whether its checks held.
pub struct RunOutcome {
    pub document: Value,
    pub passed: bool,
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome, CliError> {
    cfg.mc_plan()?;
    let document = match cfg.command {
        Command::VerifyIdentities => return verify_identities(cfg, out),
        Command::SampleTree => sample_tree(cfg, out)?,
        Command::SampleLerw => sample_lerw_cmd(cfg, out)?,
        Command::Green => green(cfg, out)?,
        Command::ExitLaw => exit_law(cfg, out)?,
        Command::Winding => winding(cfg, out)?,
        Command::Crossing => crossing(cfg, out)?,
        Command::Loewner => loewner(cfg, out)?,
        Command::Height => height(cfg, out)?,
        Command::Covariance => covariance(cfg, out)?,
    };
    Ok(RunOutcome { document, passed: true })
}

fn sink<P: Serialize>(cfg: &ExperimentConfig, out: &Path, params: &P) -> Result<Sink, CliError> {
    let plan = cfg.mc_plan()?;
    Sink::new(out, cfg.command.name(), &cfg.resolved(params), cfg.seed, Some(plan.hash()))
}

fn vertex(dom: &LatticeDomain, z: [f64; 2], what: &str) -> Result<usize, CliError> {
    dom.vertex_near(point(z)).ok_or_else(|| invalid(format!("{what} {z:?} is outside the domain")))
}

/// Walk kernel of the configured law; the massive law is conditioned to
/// survive, which is the law of its loop erasures.
fn lerw_kernel(dom: &LatticeDomain, law: Law) -> Result<Kernel, CliError> {
    match law {
        Law::Massive => Ok(conditioned_kernel(dom, Law::Massive, Conditioning::Alive)?.0),
        l => Ok(Kernel::new(dom, l)),
    }
}

fn xy(z: Complex64) -> [String; 2] {
    [num(z.re), num(z.im)]
}

// verify-identities

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct VerifyParams {
    paths: usize,
    trees: usize,
    tolerance: f64,
    square_preset: String,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self { paths: 200, trees: 50, tolerance: 1e-10, square_preset: "sq-block12".into() }
    }
}

#[derive(Debug, Serialize)]
struct IdentityCheck {
    name: &'static str,
    residual: f64,
    tolerance: f64,
    pass: bool,
    note: Option<String>,
}

fn check(name: &'static str, tol: f64, res: Result<f64, CliError>) -> IdentityCheck {
    match res {
        Ok(r) => IdentityCheck { name, residual: r, tolerance: tol, pass: r < tol, note: None },
        Err(e) => IdentityCheck { name, residual: f64::INFINITY, tolerance: tol, pass: false, note: Some(e.to_string()) },
    }
}

fn max_girsanov(dom: &LatticeDomain, n: usize, seed: RngSeed) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for i in 0..n {
        let w = sample_walk(dom, i % dom.len(), Law::Simple, DEFAULT_CAP, seed.child(i as u64))?;
        worst = worst.max(girsanov_relative_error(dom, &w)?);
    }
    Ok(worst)
}

fn verify_identities(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome, CliError> {
    let p: VerifyParams = cfg.params()?;
    let dom = match cfg.domain {
        Some(_) => cfg.build_domain()?,
        None => preset("tri-block10x5")?,
    };
    if dom.kind() != LatticeKind::DirectedTriangular {
        return Err(invalid("verify-identities runs on a triangular domain"));
    }
    let square = preset(&p.square_preset).map_err(|e| invalid(e.to_string()))?;
    if square.kind() != LatticeKind::SquareZ2 {
        return Err(invalid("params.square_preset must name a square-lattice preset"));
    }
    let seed = RngSeed::new(cfg.seed);
    let tol = p.tolerance;
    let mut checks = vec![
        check("girsanov_triangular", tol, max_girsanov(&dom, p.paths, seed.child(1))),
        check("girsanov_square", tol, max_girsanov(&square, p.paths, seed.child(2))),
    ];
    checks.push(check("conditioned_equality", tol, {
        let mut worst = 0.0f64;
        (0..dom.boundary_edges().len())
            .try_for_each(|y| {
                let (kd, _) = conditioned_kernel(&dom, Law::Drifted, Conditioning::Edge(y))?;
                let (km, _) = conditioned_kernel(&dom, Law::Massive, Conditioning::Edge(y))?;
                for v in 0..dom.len() {
                    for k in 0..dom.degree() {
                        worst = worst.max((kd.prob(v, k) - km.prob(v, k)).abs());
                    }
                }
                Ok::<_, dimerlab::Error>(())
            })
            .map(|_| worst)
            .map_err(CliError::Lib)
    }));
    checks.push(check("mystery_identity", tol, {
        let picks: Vec<usize> = (0..5).map(|j| j * (dom.len() - 1) / 4).collect();
        let mut worst = 0.0f64;
        picks
            .iter()
            .try_for_each(|&w| {
                picks.iter().try_for_each(|&z| {
                    worst = worst.max(mystery_identity_residual(&dom, w, z)?);
                    Ok::<_, dimerlab::Error>(())
                })
            })
            .map(|_| worst)
            .map_err(CliError::Lib)
    }));
    checks.push(check("bijection_weight", tol, {
        (|| {
            let t = build_temperleyan(&dom)?;
            let mut worst = 0.0f64;
            for i in 0..p.trees {
                let tr = wilson_sample(&dom, dimerlab::walk::TreeLaw::Drifted, &[], seed.child(1000 + i as u64))?;
                let m = tree_to_dimers(&tr, &t)?;
                if dimers_to_tree(&m, &t)? != tr {
                    return Ok(f64::INFINITY);
                }
                worst = worst.max((m.log_weight - tr.log_weight()).abs());
            }
            Ok::<_, dimerlab::Error>(worst)
        })()
        .map_err(CliError::Lib)
    }));
    checks.push(check("matrix_tree_kasteleyn", tol, {
        (|| Ok::<_, dimerlab::Error>((kasteleyn_partition(&build_temperleyan(&dom)?)? - arborescence_partition(&dom)?).abs()))().map_err(CliError::Lib)
    }));
    checks.push(check("massive_harmonicity", tol, {
        (|| {
            let ind = target_indicator(&dom, ExitTarget::Alive)?;
            let h = hitting_probability(&dom, ExitTarget::Alive, Law::Massive)?;
            Ok::<_, dimerlab::Error>(harmonicity_defect(&dom, &Kernel::new(&dom, Law::Massive), &h.values, &ind))
        })()
        .map_err(CliError::Lib)
    }));
    let passed = checks.iter().all(|c| c.pass);
    let mut s = sink(cfg, out, &p)?;
    let doc = s.json(&json!({ "vertices": dom.len(), "pass": passed, "identities": checks }))?;
    s.csv(
        &["identity", "residual", "tolerance", "pass"],
        checks.iter().map(|c| vec![c.name.to_string(), num(c.residual), num(c.tolerance), c.pass.to_string()]),
    )?;
    Ok(RunOutcome { document: doc, passed })
}

// sample-tree

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct NoParams {}

fn sample_tree(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let p: NoParams = cfg.params()?;
    let dom = cfg.build_domain()?;
    let law = cfg.tree_law()?;
    let plan = cfg.mc_plan()?;
    let trees = plan.run(|s| wilson_sample(&dom, law, &[], s)).into_iter().collect::<Result<Vec<_>, _>>()?;
    let t = build_temperleyan(&dom)?;
    let first = tree_to_dimers(&trees[0], &t)?;
    let mut s = sink(cfg, out, &p)?;
    s.svg(&t.to_svg(Some(&first)))?;
    s.csv(
        &["replica", "vertex", "x", "y", "parent_direction"],
        trees.iter().enumerate().flat_map(|(i, tr)| {
            let dom = &dom;
            tr.parent.iter().enumerate().map(move |(v, &d)| {
                let [x, y] = xy(dom.position(v));
                vec![i.to_string(), v.to_string(), x, y, d.to_string()]
            })
        }),
    )?;
    s.json(&json!({
        "vertices": dom.len(),
        "log_weights": trees.iter().map(|t| t.log_weight()).collect::<Vec<_>>(),
        "first_tree_dimers": first.links,
    }))
}

// sample-lerw

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct StartParams {
    start: [f64; 2],
}

fn curve_svg(dom: &LatticeDomain, curve: &[Complex64]) -> String {
    let mut svg = SvgCanvas::fit((0..dom.len()).map(|v| dom.position(v)), dom.delta());
    for v in 0..dom.len() {
        svg.dot(dom.position(v), 0.08, "#bbb");
    }
    for w in curve.windows(2) {
        svg.line(w[0], w[1], "#c33", 0.3);
    }
    svg.finish()
}

fn sample_lerw_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let p: StartParams = cfg.params()?;
    let dom = cfg.build_domain()?;
    let v = vertex(&dom, p.start, "params.start")?;
    let kernel = lerw_kernel(&dom, cfg.walk_law())?;
    let curves = cfg.mc_plan()?.run(|s| sample_lerw(&dom, &kernel, v, &mut s.rng()));
    let mut s = sink(cfg, out, &p)?;
    s.svg(&curve_svg(&dom, &curves[0].positions(&dom)))?;
    s.csv(
        &["replica", "index", "x", "y"],
        curves.iter().enumerate().flat_map(|(i, c)| {
            c.positions(&dom).into_iter().enumerate().map(move |(j, z)| {
                let [x, y] = xy(z);
                vec![i.to_string(), j.to_string(), x, y]
            })
        }),
    )?;
    s.json(&json!({
        "start_vertex": v,
        "lengths": curves.iter().map(|c| c.len()).collect::<Vec<_>>(),
        "exit_edges": curves.iter().map(|c| c.exit).collect::<Vec<_>>(),
    }))
}

// green

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct GreenParams {
    source: [f64; 2],
}

fn green(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let p: GreenParams = cfg.params()?;
    let dom = cfg.build_domain()?;
    let v = vertex(&dom, p.source, "params.source")?;
    let g = green_solve(&dom, v, cfg.walk_law())?;
    let mut s = sink(cfg, out, &p)?;
    s.csv(
        &["vertex", "x", "y", "green"],
        g.values.iter().enumerate().map(|(u, &val)| {
            let [x, y] = xy(dom.position(u));
            vec![u.to_string(), x, y, num(val)]
        }),
    )?;
    s.json(&json!({ "source_vertex": v, "solver_residual": g.solver_residual, "expected_lifetime": g.values.iter().sum::<f64>() }))
}

// exit-law

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct ExitParams {
    start: [f64; 2],
    monte_carlo: bool,
}

fn exit_law(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let p: ExitParams = cfg.params()?;
    let dom = cfg.build_domain()?;
    let v = vertex(&dom, p.start, "params.start")?;
    let law = cfg.walk_law();
    let exact = exit_distribution(&dom, v, law)?;
    let mc = if p.monte_carlo { Some(exit_frequencies(&dom, law, v, &cfg.mc_plan()?)?) } else { None };
    let mut s = sink(cfg, out, &p)?;
    s.csv(
        &["edge", "x", "y", "exact", "monte_carlo"],
        exact.iter().enumerate().map(|(e, &pe)| {
            let [x, y] = xy(dom.boundary_midpoint(e));
            vec![e.to_string(), x, y, num(pe), mc.as_ref().map_or(String::new(), |m| num(m[e]))]
        }),
    )?;
    let tv = mc.as_ref().map(|m| 0.5 * m.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>());
    s.json(&json!({ "start_vertex": v, "exit_mass": exact.iter().sum::<f64>(), "monte_carlo_total_variation": tv }))
}

// winding

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct WindingParams {
    #[serde(default)]
    start: [f64; 2],
    scales: Vec<f64>,
    #[serde(default = "two")]
    moment: i32,
    /// Optional ball-avoidance probe: centre, radius and fractions.
    #[serde(default)]
    ball: Option<BallParams>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct BallParams {
    center: [f64; 2],
    radius: f64,
    fractions: Vec<f64>,
}

fn two() -> i32 {
    2
}

fn summary_rows(m: &McSummary) -> Vec<Vec<String>> {
    m.observables.iter().map(|o| vec![o.name.clone(), o.count.to_string(), num(o.mean), num(o.variance), num(o.ci95)]).collect()
}

fn winding(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let p: WindingParams = cfg.params()?;
    if p.moment < 1 {
        return Err(invalid("params.moment must be at least 1"));
    }
    let dom = cfg.build_domain()?;
    let v = vertex(&dom, p.start, "params.start")?;
    let plan = cfg.mc_plan()?;
    let m = winding_moments(&dom, cfg.walk_law(), v, &p.scales, p.moment, &plan)?;
    let ball = match &p.ball {
        Some(b) => Some(ball_avoidance(&dom, cfg.walk_law(), v, point(b.center), b.radius, &b.fractions, &plan)?),
        None => None,
    };
    let mut s = sink(cfg, out, &p)?;
    let mut rows = summary_rows(&m);
    if let Some(b) = &ball {
        rows.extend(summary_rows(&b.summary));
    }
    s.csv(&["observable", "count", "mean", "variance", "ci95"], rows)?;
    s.json(&json!({ "winding": m, "ball_avoidance": ball }))
}

// crossing

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct CrossingParams {
    scale: f64,
    orientation: Orientation,
    corner: [f64; 2],
    cap: Option<u64>,
}

impl Default for CrossingParams {
    fn default() -> Self {
        Self { scale: 1.0, orientation: Orientation::Horizontal, corner: [0.0, 0.0], cap: None }
    }
}

fn crossing(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let p: CrossingParams = cfg.params()?;
    if !(p.scale > 0.0) {
        return Err(invalid("params.scale must be positive"));
    }
    let (kind, mesh) = cfg.lattice_and_mesh()?;
    let extent = point(p.corner).norm() + 3.2 * p.scale;
    let setup = CrossingSetup::new(kind, mesh, p.scale, point(p.corner), p.orientation, &cfg.field(extent)?)?;
    let m = crossing_probability(&setup, cfg.walk_law(), p.cap, &cfg.mc_plan()?);
    let mut s = sink(cfg, out, &p)?;
    s.csv(&["observable", "count", "mean", "variance", "ci95"], summary_rows(&m))?;
    s.json(&json!({ "vertices": setup.domain.len(), "crossing": m }))
}

// loewner

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct LoewnerParams {
    t0: f64,
    t1: f64,
    dt: Option<f64>,
    cells: f64,
    subdivide: usize,
    /// Condition on exiting through the arc `[a, b]` of boundary angles.
    arc: Option<[f64; 2]>,
}

impl Default for LoewnerParams {
    fn default() -> Self {
        Self { t0: 0.2, t1: 2.0, dt: None, cells: 10.0, subdivide: 1, arc: None }
    }
}

fn loewner(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let mut p: LoewnerParams = cfg.params()?;
    let spec = cfg.domain.as_ref().ok_or_else(|| invalid("missing [domain] table"))?;
    if spec.shape != Some(Shape::Disc) {
        return Err(CliError::Lib(dimerlab::Error::MapUnavailable("only disc domains have an analytic map".into())));
    }
    if p.subdivide == 0 {
        return Err(invalid("params.subdivide must be at least 1"));
    }
    let dom = cfg.build_domain()?;
    let radius = spec.radius.unwrap_or(1.0);
    let region = Region::Disc { center: point(spec.center.unwrap_or([0.0, 0.0])), radius };
    let start = cfg.domain.as_ref().and_then(|d| d.center).unwrap_or([0.0, 0.0]);
    let v = vertex(&dom, start, "domain.center")?;
    let kernel = match p.arc {
        None => lerw_kernel(&dom, cfg.walk_law())?,
        Some([a, b]) => {
            let centre = region_center(&region);
            let ind: Vec<f64> = (0..dom.boundary_edges().len())
                .map(|e| if (a..=b).contains(&(dom.boundary_midpoint(e) - centre).arg().rem_euclid(TAU)) { 1.0 } else { 0.0 })
                .collect();
            conditioned_kernel_on(&dom, cfg.walk_law(), &ind)?.0
        }
    };
    let dt = *p.dt.get_or_insert_with(|| lattice_resolved_dt(dom.delta() / radius, p.t1, 2.0, p.cells));
    let opts = ZipperOptions { t_max: p.t1 + dt, subdivide: p.subdivide };
    let drivers: Vec<DrivingFunction> =
        cfg.mc_plan()?.run(|s| lerw_driving(&dom, &region, &sample_lerw(&dom, &kernel, v, &mut s.rng()), opts)).into_iter().collect::<Result<_, _>>()?;
    let report = diffusivity_estimate(&drivers, p.t0, p.t1, dt)?;
    let mut s = sink(cfg, out, &p)?;
    s.csv(
        &["curve", "t", "xi"],
        drivers.iter().enumerate().flat_map(|(i, d)| d.times.iter().zip(&d.xi).map(move |(t, x)| vec![i.to_string(), num(*t), num(*x)])),
    )?;
    s.json(&json!({ "report": report, "drift_significant": report.drift_significant() }))
}

fn region_center(r: &Region) -> Complex64 {
    match r {
        Region::Disc { center, .. } => *center,
        _ => Complex64::new(0.0, 0.0),
    }
}

// height

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct HeightParams {
    removed_near: Option<[f64; 2]>,
}

fn height(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let p: HeightParams = cfg.params()?;
    let dom = cfg.build_domain()?;
    let t = build_temperleyan_with(&dom, p.removed_near.map(point))?;
    let law = cfg.tree_law()?;
    let samples = cfg
        .mc_plan()?
        .run(|s| -> Result<_, dimerlab::Error> {
            let tr = wilson_sample(&dom, law, &[], s)?;
            let m = tree_to_dimers(&tr, &t)?;
            let h = height_function(&m, &t);
            Ok((m, h.values()))
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let faces = t.inner_face_centroids();
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..faces.len()).map(|f| samples.iter().map(|s| s.1[f]).sum::<f64>() / n).collect();
    let var: Vec<f64> = (0..faces.len()).map(|f| samples.iter().map(|s| (s.1[f] - mean[f]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).collect();
    let mut s = sink(cfg, out, &p)?;
    s.svg(&t.to_svg(Some(&samples[0].0)))?;
    s.csv(
        &["face", "x", "y", "first_sample", "mean", "variance"],
        faces.iter().enumerate().map(|(f, &z)| {
            let [x, y] = xy(z);
            vec![f.to_string(), x, y, num(samples[0].1[f]), num(mean[f]), num(var[f])]
        }),
    )?;
    s.json(&json!({ "faces": faces.len(), "removed_cell": t.removed_cell(), "samples": samples.len() }))
}

// covariance

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CovarianceParams {
    probes: Vec<[f64; 2]>,
    #[serde(default)]
    rotation_turns: Option<i32>,
    #[serde(default)]
    translation: Option<[i32; 2]>,
    #[serde(default)]
    scale: Option<f64>,
}

fn covariance(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let p: CovarianceParams = cfg.params()?;
    let dom = cfg.build_domain()?;
    let map = match (p.rotation_turns, p.translation, p.scale) {
        (None, None, None) => CovarianceMap::Symmetry(Symmetry::Identity),
        (Some(k), None, None) => CovarianceMap::Symmetry(Symmetry::Rotation(k as f64 * TAU / dom.kind().rotation_order() as f64)),
        (None, Some([a, b]), None) => CovarianceMap::Symmetry(Symmetry::Translation((a, b))),
        (None, None, Some(sc)) => CovarianceMap::Scale(sc),
        _ => return Err(invalid("set at most one of params.rotation_turns, params.translation, params.scale")),
    };
    let probes: Vec<Complex64> = p.probes.iter().map(|&z| point(z)).collect();
    let r = covariance_check(&dom, map, &probes, &cfg.mc_plan()?)?;
    let mut s = sink(cfg, out, &p)?;
    let k = probes.len();
    let pairs = (0..k).flat_map(|i| (i..k).map(move |j| (i, j)));
    s.csv(
        &["i", "j", "original", "transformed", "z_score", "relative_difference"],
        pairs.enumerate().map(|(n, (i, j))| {
            let x = i * k + j;
            vec![i.to_string(), j.to_string(), num(r.original.cov[x]), num(r.transformed.cov[x]), num(r.z_scores[n]), num(r.rel_diffs[n])]
        }),
    )?;
    s.json(&r)
}
