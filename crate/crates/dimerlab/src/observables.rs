//! Monte Carlo harness and curve observables: winding, ball avoidance,
//! crossing, conditioned-law comparison and height covariances.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DriftField, LatticeDomain, LatticeKind, Region, Symmetry, Target};
use crate::temperley::{build_temperleyan_with, height_function, tree_to_dimers, TemperleyanDomain};
use crate::walk::{
    conditioned_kernel, sample_lerw, sample_with_kernel, wilson_with_kernel, Conditioning, Kernel, Law,
    LoopErasedPath, RngSeed, Step, TreeLaw, DEFAULT_CAP,
};

/// Replica count and master seed of a Monte Carlo run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McPlan {
    pub replicas: usize,
    pub seed: RngSeed,
}

impl McPlan {
    pub fn new(replicas: usize, seed: RngSeed) -> Result<Self> {
        if replicas == 0 {
            return Err(Error::InvalidArgument("replica count must be at least 1".into()));
        }
        Ok(Self { replicas, seed })
    }

    /// Independent stream of replica `i`.
    pub fn replica_seed(&self, i: usize) -> RngSeed {
        self.seed.child(i as u64)
    }

    /// Sub-plan covering replicas `start..start + len` of this plan.
    pub fn slice(&self, start: usize, len: usize) -> SubPlan {
        SubPlan { plan: *self, start, len }
    }

    /// Run `f` once per replica in parallel, returning results in replica order.
    pub fn run<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(RngSeed) -> T + Sync,
    {
        self.slice(0, self.replicas).run(f)
    }

    /// Stable 64-bit FNV-1a hash of the plan.
    pub fn hash(&self) -> u64 {
        fnv1a(format!("{}:{}:{}", self.replicas, self.seed.seed, self.seed.stream).as_bytes())
    }
}

/// A contiguous block of replicas of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubPlan {
    pub plan: McPlan,
    pub start: usize,
    pub len: usize,
}

impl SubPlan {
    pub fn run<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(RngSeed) -> T + Sync,
    {
        (self.start..self.start + self.len)
            .into_par_iter()
            .map(|i| f(self.plan.replica_seed(i)))
            .collect()
    }
}

/// FNV-1a hash of a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Mergeable mean/variance accumulator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    /// Sum of squared deviations from the mean.
    pub m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Combine with the statistics of a disjoint sample.
    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// 95% confidence radius `1.96·√(var/count)`.
    pub fn ci95(&self) -> f64 {
        if self.count == 0 {
            f64::INFINITY
        } else {
            1.96 * (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// Summary of one scalar observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSummary {
    pub name: String,
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
    pub ci95: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Vec<(i64, u64)>>,
}

impl ObservableSummary {
    pub fn from_stats(name: &str, s: &RunningStats) -> Self {
        Self {
            name: name.to_string(),
            count: s.count,
            mean: s.mean,
            variance: s.variance(),
            ci95: s.ci95(),
            histogram: None,
        }
    }
}

/// Results of a Monte Carlo run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub observables: Vec<ObservableSummary>,
    pub seed: RngSeed,
    pub plan_hash: u64,
    pub replicas: usize,
}

impl McSummary {
    pub fn new(plan: &McPlan, observables: Vec<ObservableSummary>) -> Self {
        Self { observables, seed: plan.seed, plan_hash: plan.hash(), replicas: plan.replicas }
    }

    /// Observable by name.
    pub fn get(&self, name: &str) -> Option<&ObservableSummary> {
        self.observables.iter().find(|o| o.name == name)
    }

    /// CSV text with one row per observable.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,count,mean,variance,ci95\n");
        for o in &self.observables {
            s.push_str(&format!("{},{},{},{},{}\n", csv_field(&o.name), o.count, o.mean, o.variance, o.ci95));
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Turning angle from direction `a` to direction `b`, in `(−π, π]`.
fn turn(a: Complex64, b: Complex64) -> f64 {
    (b * a.conj()).arg()
}

/// Sum of signed turning angles of the polygonal path `points[s..=t]`.
pub fn winding(points: &[Complex64], s: usize, t: usize) -> f64 {
    if t > points.len().saturating_sub(1) || s + 2 > t {
        return 0.0;
    }
    (s + 1..t).map(|i| turn(points[i] - points[i - 1], points[i + 1] - points[i])).sum()
}

/// Winding of a loop-erased path between vertex indices, with the exit-edge
/// midpoint as final point.
pub fn curve_winding(dom: &LatticeDomain, curve: &LoopErasedPath, s: usize, t: usize) -> f64 {
    winding(&curve.positions(dom), s, t)
}

/// `sup_{s ≤ t in [lo, hi]} |W(γ[s, t])|`.
pub fn sup_winding(points: &[Complex64], lo: usize, hi: usize) -> f64 {
    if hi >= points.len() || lo + 2 > hi {
        return 0.0;
    }
    // W(s, t) = P(t − 1) − P(s) with P the prefix sum of turns
    let mut p = 0.0;
    let (mut pmin, mut pmax) = (0.0f64, 0.0f64);
    let mut best = 0.0f64;
    for i in lo + 1..hi {
        p += turn(points[i] - points[i - 1], points[i + 1] - points[i]);
        best = best.max(p - pmin).max(pmax - p);
        pmin = pmin.min(p);
        pmax = pmax.max(p);
    }
    best
}

/// Window `[σ_r, τ_r]`: first exit of the closed ball `B(c, r)` and last visit
/// of the closed ball `B(c, e·r)`, or `None` if empty.
pub fn winding_window(points: &[Complex64], c: Complex64, r: f64) -> Option<(usize, usize)> {
    let sigma = points.iter().position(|p| (p - c).norm() > r)?;
    let big = std::f64::consts::E * r;
    let tau = points.iter().rposition(|p| (p - c).norm() <= big)?;
    (sigma <= tau).then_some((sigma, tau))
}

/// `k`-th moments of the sup-winding between scales `r` and `e·r` around the
/// start vertex, per scale, for LERWs from `v`.
pub fn winding_moments(dom: &LatticeDomain, law: Law, v: usize, scales: &[f64], k: i32, plan: &McPlan) -> Result<McSummary> {
    check_vertex(dom, v)?;
    let kernel = Kernel::new(dom, law);
    let c = dom.position(v);
    let rows = plan.run(|seed| {
        let curve = sample_lerw(dom, &kernel, v, &mut seed.rng());
        let pts = curve.positions(dom);
        scales
            .iter()
            .map(|&r| {
                if r < 2.0 * dom.delta() {
                    return 0.0;
                }
                match winding_window(&pts, c, r) {
                    Some((a, b)) => sup_winding(&pts, a, b).powi(k),
                    None => 0.0,
                }
            })
            .collect::<Vec<f64>>()
    });
    let obs = scales
        .iter()
        .enumerate()
        .map(|(j, r)| ObservableSummary::from_stats(&format!("winding_moment_r{r}"), &rows.iter().map(|x| x[j]).collect()))
        .collect();
    Ok(McSummary::new(plan, obs))
}

fn check_vertex(dom: &LatticeDomain, v: usize) -> Result<()> {
    if v >= dom.len() {
        return Err(Error::InvalidArgument(format!("vertex {v} is not interior")));
    }
    Ok(())
}

/// Least-squares fit `y = a + b x` returning `(b, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (b, r2)
}

/// Frequencies of LERW hitting `B(z, r·ε)` per `ε`, with a power-law fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallAvoidanceReport {
    pub summary: McSummary,
    pub fractions: Vec<f64>,
    /// Fitted exponent `c` in `P ≈ C ε^c`.
    pub slope: f64,
    pub r2: f64,
}

/// Ball-avoidance frequencies for LERWs from `v` around the ball `B(z, r)`.
pub fn ball_avoidance(
    dom: &LatticeDomain,
    law: Law,
    v: usize,
    z: Complex64,
    r: f64,
    fractions: &[f64],
    plan: &McPlan,
) -> Result<BallAvoidanceReport> {
    check_vertex(dom, v)?;
    let kernel = Kernel::new(dom, law);
    let rows = plan.run(|seed| {
        let curve = sample_lerw(dom, &kernel, v, &mut seed.rng());
        let dmin = curve.vertices.iter().map(|&u| (dom.position(u) - z).norm()).fold(f64::INFINITY, f64::min);
        fractions.iter().map(|&e| if dmin < r * e { 1.0 } else { 0.0 }).collect::<Vec<f64>>()
    });
    let stats: Vec<RunningStats> = (0..fractions.len()).map(|j| rows.iter().map(|x| x[j]).collect()).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = fractions
        .iter()
        .zip(&stats)
        .filter(|(_, s)| s.mean > 0.0)
        .map(|(e, s)| (e.ln(), s.mean.ln()))
        .unzip();
    let (slope, r2) = if xs.len() >= 2 { linear_fit(&xs, &ys) } else { (f64::NAN, f64::NAN) };
    let obs = fractions
        .iter()
        .zip(&stats)
        .map(|(e, s)| ObservableSummary::from_stats(&format!("hit_eps{e}"), s))
        .collect();
    Ok(BallAvoidanceReport { summary: McSummary::new(plan, obs), fractions: fractions.to_vec(), slope, r2 })
}

/// Orientation of the crossing rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// `r·[0,3]×[0,1]`.
    Horizontal,
    /// `r·[0,1]×[0,3]`.
    Vertical,
}

/// Rectangle crossing setup at scale `r` with lower-left corner `corner`.
#[derive(Clone, Debug)]
pub struct CrossingSetup {
    pub domain: LatticeDomain,
    pub start: usize,
    pub target_center: Complex64,
    pub target_radius: f64,
}

impl CrossingSetup {
    pub fn new(kind: LatticeKind, delta: f64, r: f64, corner: Complex64, orientation: Orientation, field: &DriftField) -> Result<Self> {
        let (size, b2) = match orientation {
            Orientation::Horizontal => (Complex64::new(3.0, 1.0), Complex64::new(2.5, 0.5)),
            Orientation::Vertical => (Complex64::new(1.0, 3.0), Complex64::new(0.5, 2.5)),
        };
        let domain = LatticeDomain::build(kind, &Region::Rectangle { min: corner, max: corner + size * r }, delta, field)?;
        let b1 = corner + Complex64::new(0.5, 0.5) * r;
        let start = domain.vertex_near(b1).ok_or(Error::EmptyDomain)?;
        if (domain.position(start) - b1).norm() >= r / 4.0 {
            return Err(Error::InvalidArgument("starting ball contains no vertex".into()));
        }
        Ok(Self { domain, start, target_center: corner + b2 * r, target_radius: r / 4.0 })
    }

    /// Whether one walk under `kernel` hits the target ball before leaving or
    /// dying, within `cap` steps.
    pub fn crosses<R: rand::Rng + ?Sized>(&self, kernel: &Kernel, cap: u64, rng: &mut R) -> bool {
        let mut v = self.start;
        for _ in 0..cap {
            if (self.domain.position(v) - self.target_center).norm() < self.target_radius {
                return true;
            }
            match kernel.step(v, rng.random()) {
                Step::Killed => return false,
                Step::Move(k) => match self.domain.target(v, k) {
                    Target::Interior(w) => v = w,
                    Target::Boundary(_) => return false,
                },
            }
        }
        false
    }
}

/// Crossing frequency at scale `r`; `cap` bounds the walk length.
pub fn crossing_probability(setup: &CrossingSetup, law: Law, cap: Option<u64>, plan: &McPlan) -> McSummary {
    let kernel = Kernel::new(&setup.domain, law);
    let cap = cap.unwrap_or(DEFAULT_CAP);
    let xs = plan.run(|seed| if setup.crosses(&kernel, cap, &mut seed.rng()) { 1.0 } else { 0.0 });
    McSummary::new(plan, vec![ObservableSummary::from_stats("crossing", &xs.into_iter().collect())])
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return (0.0, 1.0);
    }
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let t = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { t } else { -t };
        if t < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Total-variation distance between two empirical laws.
pub fn total_variation<K: std::hash::Hash + Eq + Clone>(a: &[K], b: &[K]) -> f64 {
    let mut h: HashMap<K, (f64, f64)> = HashMap::new();
    for x in a {
        h.entry(x.clone()).or_default().0 += 1.0 / a.len() as f64;
    }
    for x in b {
        h.entry(x.clone()).or_default().1 += 1.0 / b.len() as f64;
    }
    0.5 * h.values().map(|(p, q)| (p - q).abs()).sum::<f64>()
}

/// Comparison of drifted LERW given the exit edge with massive LERW given
/// survival and the exit edge, under paired seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionedComparison {
    pub samples: usize,
    pub ks_length: f64,
    pub ks_length_p: f64,
    pub tv_length: f64,
    pub tv_exit_segment: f64,
    pub mean_winding: (f64, f64),
    pub winding_ks_p: f64,
    /// Fraction of paired samples that coincide exactly.
    pub identical_fraction: f64,
    /// Fraction of samples ending at the conditioned edge.
    pub conditioning_satisfied: f64,
}

/// Paired-seed comparison of the two conditioned LERW laws ending at edge `y`.
pub fn compare_conditioned_laws(dom: &LatticeDomain, start: usize, y: usize, plan: &McPlan) -> Result<ConditionedComparison> {
    check_vertex(dom, start)?;
    let (kd, hd) = conditioned_kernel(dom, Law::Drifted, Conditioning::Edge(y))?;
    let (km, hm) = conditioned_kernel(dom, Law::Massive, Conditioning::Edge(y))?;
    if !(hd[start] >= crate::walk::UNREACHABLE && hm[start] >= crate::walk::UNREACHABLE) {
        return Err(Error::UnreachableTarget);
    }
    let pairs = plan.run(|seed| {
        let a = sample_lerw(dom, &kd, start, &mut seed.rng());
        let b = sample_lerw(dom, &km, start, &mut seed.rng());
        (a, b)
    });
    let seg = |c: &LoopErasedPath| -> Vec<usize> { c.vertices.iter().rev().take(3).copied().collect() };
    let la: Vec<f64> = pairs.iter().map(|p| p.0.len() as f64).collect();
    let lb: Vec<f64> = pairs.iter().map(|p| p.1.len() as f64).collect();
    let wa: Vec<f64> = pairs.iter().map(|p| curve_winding(dom, &p.0, 0, p.0.len())).collect();
    let wb: Vec<f64> = pairs.iter().map(|p| curve_winding(dom, &p.1, 0, p.1.len())).collect();
    let (ks, ks_p) = ks_two_sample(&la, &lb);
    let (_, wp) = ks_two_sample(&wa, &wb);
    let ia: Vec<usize> = pairs.iter().map(|p| p.0.len()).collect();
    let ib: Vec<usize> = pairs.iter().map(|p| p.1.len()).collect();
    let sa: Vec<Vec<usize>> = pairs.iter().map(|p| seg(&p.0)).collect();
    let sb: Vec<Vec<usize>> = pairs.iter().map(|p| seg(&p.1)).collect();
    let n = pairs.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ConditionedComparison {
        samples: pairs.len(),
        ks_length: ks,
        ks_length_p: ks_p,
        tv_length: total_variation(&ia, &ib),
        tv_exit_segment: total_variation(&sa, &sb),
        mean_winding: (mean(&wa), mean(&wb)),
        winding_ks_p: wp,
        identical_fraction: pairs.iter().filter(|p| p.0 == p.1).count() as f64 / n,
        conditioning_satisfied: pairs.iter().filter(|p| p.0.exit == y && p.1.exit == y).count() as f64 / n,
    })
}

/// Sample covariance matrix of heights at fixed faces, with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub samples: usize,
    pub means: Vec<f64>,
    /// Row-major `k × k` centered covariances.
    pub cov: Vec<f64>,
    /// Standard errors of `cov`.
    pub cov_se: Vec<f64>,
}

impl CovarianceEstimate {
    pub fn from_samples(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let k = rows.first().map_or(0, |r| r.len());
        let means: Vec<f64> = (0..k).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n as f64).collect();
        let mut cov = vec![0.0; k * k];
        let mut cov_se = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let s: RunningStats = rows.iter().map(|r| (r[i] - means[i]) * (r[j] - means[j])).collect();
                cov[i * k + j] = s.mean * n as f64 / (n as f64 - 1.0).max(1.0);
                cov_se[i * k + j] = s.std_error();
            }
        }
        Self { samples: n, means, cov, cov_se }
    }
}

/// Temperleyan domain with faces probed by a covariance experiment.
#[derive(Clone, Debug)]
pub struct HeightSetup {
    pub domain: LatticeDomain,
    pub temperleyan: TemperleyanDomain,
    pub faces: Vec<usize>,
}

impl HeightSetup {
    /// Setup on `dom` with the removed cell nearest `removed_near` and the
    /// inner faces nearest `probes`.
    pub fn new(dom: LatticeDomain, removed_near: Option<Complex64>, probes: &[Complex64]) -> Result<Self> {
        let t = build_temperleyan_with(&dom, removed_near)?;
        let faces = probes.iter().map(|&z| t.inner_face_near(z)).collect();
        Ok(Self { domain: dom, temperleyan: t, faces })
    }

    /// Centroids of the probed faces.
    pub fn face_positions(&self) -> Vec<Complex64> {
        let c = self.temperleyan.inner_face_centroids();
        self.faces.iter().map(|&f| c[f]).collect()
    }

    /// Heights at the probed faces for one Wilson sample.
    pub fn sample_heights(&self, kernel: &Kernel, seed: RngSeed) -> Result<Vec<f64>> {
        let tree = wilson_with_kernel(&self.domain, kernel, &[], &mut seed.rng())?;
        let m = tree_to_dimers(&tree, &self.temperleyan)?;
        let h = height_function(&m, &self.temperleyan);
        Ok(self.faces.iter().map(|&f| h.value(f)).collect())
    }

    /// Height covariance estimate under `law`.
    pub fn covariances(&self, law: TreeLaw, plan: &McPlan) -> Result<CovarianceEstimate> {
        let kernel = crate::walk::tree_kernel(&self.domain, law)?;
        let rows: Result<Vec<Vec<f64>>> = plan.run(|s| self.sample_heights(&kernel, s)).into_iter().collect();
        Ok(CovarianceEstimate::from_samples(&rows?))
    }
}

/// Map relating the original and transformed setups of a covariance check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CovarianceMap {
    /// Exact lattice symmetry.
    Symmetry(Symmetry),
    /// `φ(w) = s·w`: the domain shrinks by `s`, the mesh by `s` and the
    /// coefficients grow by `s`.
    Scale(f64),
}

/// Comparison of mapped-pair height covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub original: CovarianceEstimate,
    pub transformed: CovarianceEstimate,
    /// `|C − C̃| / √(se² + s̃e²)` per pair `i ≤ j`.
    pub z_scores: Vec<f64>,
    /// Relative differences `|C − C̃| / |C|` per pair `i ≤ j`.
    pub rel_diffs: Vec<f64>,
    pub max_z: f64,
    pub within_3sigma: bool,
}

fn map_point(map: CovarianceMap, dom: &LatticeDomain, z: Complex64) -> Result<Complex64> {
    Ok(match map {
        CovarianceMap::Symmetry(Symmetry::Identity) => z,
        CovarianceMap::Symmetry(Symmetry::Rotation(theta)) => {
            let turns = dom.rotation_turns(theta)?;
            let unit = 2.0 * std::f64::consts::PI / dom.kind().rotation_order() as f64;
            z * Complex64::from_polar(1.0, -unit * turns as f64)
        }
        CovarianceMap::Symmetry(Symmetry::Translation(t)) => z + dom.site_position(t) - dom.site_position((0, 0)),
        CovarianceMap::Scale(s) => z / s,
    })
}

/// Height covariances at `probes` on `dom` versus the transformed setup at
/// the mapped probes, under the drifted tree law.
pub fn covariance_check(dom: &LatticeDomain, map: CovarianceMap, probes: &[Complex64], plan: &McPlan) -> Result<CovarianceReport> {
    let a = HeightSetup::new(dom.clone(), None, probes)?;
    let removed = a.temperleyan.cells()[a.temperleyan.removed_cell()].centroid;
    let dom_b = match map {
        CovarianceMap::Symmetry(g) => dom.apply_symmetry(g)?,
        CovarianceMap::Scale(s) => {
            if dom.is_mass_mode() || !(s > 0.0) {
                return Err(Error::InvalidArgument("scaling needs a drift-mode domain and s > 0".into()));
            }
            let coeff: HashMap<_, _> = (0..dom.len()).map(|v| (dom.site(v), dom.coefficients(v).to_vec())).collect();
            LatticeDomain::from_coefficients(dom.kind(), dom.delta() / s, dom.sites(), |site| {
                let mut c = [0.0; 4];
                for (k, x) in coeff[&site].iter().enumerate() {
                    c[k] = x * s;
                }
                c
            })?
        }
    };
    let mapped: Vec<Complex64> = a.face_positions().iter().map(|&z| map_point(map, dom, z)).collect::<Result<_>>()?;
    let b = HeightSetup::new(dom_b, Some(map_point(map, dom, removed)?), &mapped)?;
    for (p, q) in mapped.iter().zip(b.face_positions()) {
        if (p - q).norm() > 1e-9 * dom.delta().max(1.0) {
            return Err(Error::InvalidArgument("probe faces do not map onto faces".into()));
        }
    }
    let ca = a.covariances(TreeLaw::Drifted, plan)?;
    let plan_b = McPlan { replicas: plan.replicas, seed: RngSeed { seed: plan.seed.seed, stream: plan.seed.stream ^ 0x9e37_79b9_7f4a_7c15 } };
    let plan_b = if map == CovarianceMap::Symmetry(Symmetry::Identity) { *plan } else { plan_b };
    let cb = b.covariances(TreeLaw::Drifted, &plan_b)?;
    let k = probes.len();
    let mut z_scores = Vec::new();
    let mut rel_diffs = Vec::new();
    for i in 0..k {
        for j in i..k {
            let x = i * k + j;
            let d = (ca.cov[x] - cb.cov[x]).abs();
            let se = (ca.cov_se[x].powi(2) + cb.cov_se[x].powi(2)).sqrt();
            z_scores.push(if se > 0.0 { d / se } else if d == 0.0 { 0.0 } else { f64::INFINITY });
            rel_diffs.push(if ca.cov[x] != 0.0 { d / ca.cov[x].abs() } else { d });
        }
    }
    let max_z = z_scores.iter().cloned().fold(0.0, f64::max);
    Ok(CovarianceReport { original: ca, transformed: cb, z_scores, rel_diffs, max_z, within_3sigma: max_z <= 3.0 })
}

/// Exit-edge frequencies of `law` walks from `v`, for comparison with
/// [`crate::green::exit_distribution`].
pub fn exit_frequencies(dom: &LatticeDomain, law: Law, v: usize, plan: &McPlan) -> Result<Vec<f64>> {
    check_vertex(dom, v)?;
    let kernel = Kernel::new(dom, law);
    let exits = plan.run(|s| match sample_with_kernel(dom, &kernel, v, DEFAULT_CAP, &mut s.rng()).terminal {
        crate::walk::Terminal::ExitedBoundary(e) => Some(e),
        _ => None,
    });
    let mut f = vec![0.0; dom.boundary_edges().len()];
    for e in exits.into_iter().flatten() {
        f[e] += 1.0 / plan.replicas as f64;
    }
    Ok(f)
}
