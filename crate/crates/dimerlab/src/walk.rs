//! Drifted, massive and simple random walks, loop erasure, Wilson's
//! algorithm, Doob-conditioned walks and the free heat kernel.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green;
use crate::lattice::{LatticeDomain, LatticeKind, Site, Target};
use crate::numeric::{ln_factorials, KahanSum};

/// Reproducible seed of a counter-based ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }

    /// Independent child stream; distinct indices give distinct streams.
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(index)),
        }
    }
}

/// Walk laws on a lattice domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Law {
    /// Jump probabilities `a_k(v) / a(v)`.
    Drifted,
    /// Jumps `(1 − m²δ²)/deg`, ghost with probability `m²δ²`.
    Massive,
    /// Uniform jumps `1/deg`.
    Simple,
}

/// Laws used by Wilson's algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreeLaw {
    Drifted,
    MassiveConditionedAlive,
}

/// Terminal event of a conditioned walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conditioning {
    /// Exit through this boundary edge.
    Edge(usize),
    /// Exit through any boundary edge before being killed.
    Alive,
}

/// One transition outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Move(usize),
    Killed,
}

/// Per-vertex transition probabilities over the outgoing directions plus a
/// ghost probability.
#[derive(Clone, Debug)]
pub struct Kernel {
    deg: usize,
    probs: Vec<[f64; 4]>,
    kill: Vec<f64>,
}

impl Kernel {
    /// Kernel of `law` on `dom`.
    pub fn new(dom: &LatticeDomain, law: Law) -> Self {
        let deg = dom.degree();
        let mut probs = Vec::with_capacity(dom.len());
        let mut kill = Vec::with_capacity(dom.len());
        for v in 0..dom.len() {
            let mut p = [0.0; 4];
            let k = match law {
                Law::Drifted => {
                    let a = dom.total_weight(v);
                    for (j, pj) in p.iter_mut().take(deg).enumerate() {
                        *pj = dom.weight(v, j) / a;
                    }
                    0.0
                }
                Law::Massive => {
                    let kv = dom.killing(v);
                    for pj in p.iter_mut().take(deg) {
                        *pj = (1.0 - kv) / deg as f64;
                    }
                    kv
                }
                Law::Simple => {
                    for pj in p.iter_mut().take(deg) {
                        *pj = 1.0 / deg as f64;
                    }
                    0.0
                }
            };
            probs.push(p);
            kill.push(k);
        }
        Self { deg, probs, kill }
    }

    /// Doob transform of `base` by `h`, where `h[v]` is the interior value and
    /// `boundary(e)` the terminal value on boundary edge `e`; the ghost has value 0.
    pub fn doob<F>(dom: &LatticeDomain, base: &Kernel, h: &[f64], boundary: F) -> Self
    where
        F: Fn(usize) -> f64,
    {
        let deg = base.deg;
        let mut probs = Vec::with_capacity(dom.len());
        for v in 0..dom.len() {
            let mut p = [0.0; 4];
            let mut s = 0.0;
            for (k, pk) in p.iter_mut().take(deg).enumerate() {
                let hv = match dom.target(v, k) {
                    Target::Interior(w) => h[w],
                    Target::Boundary(e) => boundary(e),
                };
                *pk = base.probs[v][k] * hv;
                s += *pk;
            }
            if s > 0.0 {
                for pk in p.iter_mut().take(deg) {
                    *pk /= s;
                }
            }
            probs.push(p);
        }
        Self { deg, probs, kill: vec![0.0; dom.len()] }
    }

    pub fn degree(&self) -> usize {
        self.deg
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, v: usize, k: usize) -> f64 {
        self.probs[v][k]
    }

    pub fn probs(&self, v: usize) -> &[f64] {
        &self.probs[v][..self.deg]
    }

    pub fn kill(&self, v: usize) -> f64 {
        self.kill[v]
    }

    /// Outcome for a uniform variate `u ∈ [0, 1)`.
    pub fn step(&self, v: usize, u: f64) -> Step {
        let kv = self.kill[v];
        if u < kv {
            return Step::Killed;
        }
        let x = u - kv;
        let p = &self.probs[v];
        let mut acc = 0.0;
        let mut last = 0;
        for (k, &pk) in p.iter().take(self.deg).enumerate() {
            if pk > 0.0 {
                acc += pk;
                last = k;
                if x < acc {
                    return Step::Move(k);
                }
            }
        }
        Step::Move(last)
    }

    /// Log-probability of the outcome `s` at `v`.
    pub fn log_prob(&self, v: usize, s: Step) -> f64 {
        match s {
            Step::Killed => self.kill[v].ln(),
            Step::Move(k) => self.probs[v][k].ln(),
        }
    }
}

/// Termination cause of a walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    ExitedBoundary(usize),
    Killed,
    Truncated(u64),
}

/// A sampled walk `x_0 … x_n` with its step directions.
///
/// For an exited walk `steps` has one more entry than the interior moves:
/// the last step crosses the boundary edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    pub vertices: Vec<usize>,
    pub steps: Vec<u8>,
    pub terminal: Terminal,
    pub log_weight: f64,
}

impl WalkPath {
    /// Number of transitions taken (including the exit step).
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Planar positions of the path, ending at the exterior endpoint when exited.
    pub fn positions(&self, dom: &LatticeDomain) -> Vec<num_complex::Complex64> {
        let mut out: Vec<_> = self.vertices.iter().map(|&v| dom.position(v)).collect();
        if let Terminal::ExitedBoundary(e) = self.terminal {
            out.push(dom.boundary_outer_position(e));
        }
        out
    }

    /// Rebuild a path from a start vertex and a direction sequence; the walk
    /// must stay inside until the final step, which may exit.
    pub fn from_steps(dom: &LatticeDomain, start: usize, steps: &[u8]) -> Result<Self> {
        let mut vertices = vec![start];
        let mut terminal = Terminal::Truncated(steps.len() as u64);
        for (s, &k) in steps.iter().enumerate() {
            if k as usize >= dom.degree() {
                return Err(Error::PathMismatch(format!("direction {k} out of range")));
            }
            let v = *vertices.last().unwrap();
            match dom.target(v, k as usize) {
                Target::Interior(w) => vertices.push(w),
                Target::Boundary(e) => {
                    if s + 1 != steps.len() {
                        return Err(Error::PathMismatch("exit before the final step".into()));
                    }
                    terminal = Terminal::ExitedBoundary(e);
                }
            }
        }
        Ok(Self { vertices, steps: steps.to_vec(), terminal, log_weight: 0.0 })
    }

    /// Log-probability of the path under a kernel, recomputed step by step.
    pub fn log_probability(&self, kernel: &Kernel) -> f64 {
        let mut acc = KahanSum::new();
        for (s, &k) in self.steps.iter().enumerate() {
            acc.add(kernel.prob(self.vertices[s], k as usize).ln());
        }
        if self.terminal == Terminal::Killed {
            acc.add(kernel.kill(*self.vertices.last().unwrap()).ln());
        }
        acc.value()
    }
}

/// Sample a walk under `kernel` until exit, death or `cap` steps.
pub fn sample_with_kernel<R: Rng + ?Sized>(
    dom: &LatticeDomain,
    kernel: &Kernel,
    start: usize,
    cap: u64,
    rng: &mut R,
) -> WalkPath {
    let mut vertices = vec![start];
    let mut steps = Vec::new();
    let mut lw = KahanSum::new();
    let mut v = start;
    let mut n = 0u64;
    let terminal = loop {
        if n >= cap {
            break Terminal::Truncated(cap);
        }
        let u: f64 = rng.random();
        let s = kernel.step(v, u);
        lw.add(kernel.log_prob(v, s));
        n += 1;
        match s {
            Step::Killed => break Terminal::Killed,
            Step::Move(k) => {
                steps.push(k as u8);
                match dom.target(v, k) {
                    Target::Interior(w) => {
                        vertices.push(w);
                        v = w;
                    }
                    Target::Boundary(e) => break Terminal::ExitedBoundary(e),
                }
            }
        }
    };
    WalkPath { vertices, steps, terminal, log_weight: lw.value() }
}

/// Default step cap.
pub const DEFAULT_CAP: u64 = 1_000_000_000;

/// Sample a walk from `start` under `law`.
pub fn sample_walk(dom: &LatticeDomain, start: usize, law: Law, cap: u64, seed: RngSeed) -> Result<WalkPath> {
    if start >= dom.len() {
        return Err(Error::InvalidArgument(format!("start {start} is not interior")));
    }
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }
    let kernel = Kernel::new(dom, law);
    Ok(sample_with_kernel(dom, &kernel, start, cap, &mut seed.rng()))
}

/// A simple lattice path ending with a boundary edge.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoopErasedPath {
    pub vertices: Vec<usize>,
    pub exit: usize,
    pub source_length: usize,
}

impl LoopErasedPath {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Vertex positions followed by the exit-edge midpoint.
    pub fn positions(&self, dom: &LatticeDomain) -> Vec<num_complex::Complex64> {
        let mut out: Vec<_> = self.vertices.iter().map(|&v| dom.position(v)).collect();
        out.push(dom.boundary_midpoint(self.exit));
        out
    }

    /// Check simplicity and that consecutive vertices are oriented edges.
    pub fn validate(&self, dom: &LatticeDomain) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for &v in &self.vertices {
            if !seen.insert(v) {
                return Err(Error::NonSimpleCurve);
            }
        }
        for w in self.vertices.windows(2) {
            if !dom.targets(w[0]).contains(&Target::Interior(w[1])) {
                return Err(Error::PathMismatch(format!("{} -> {} is not an edge", w[0], w[1])));
            }
        }
        let last = *self.vertices.last().ok_or(Error::PathMismatch("empty curve".into()))?;
        if dom.boundary_edges()[self.exit].inner != last {
            return Err(Error::PathMismatch("exit edge does not leave the last vertex".into()));
        }
        Ok(())
    }
}

/// Chronological loop erasure of an exited walk.
pub fn loop_erase(path: &WalkPath) -> Result<LoopErasedPath> {
    let exit = match path.terminal {
        Terminal::ExitedBoundary(e) => e,
        _ => return Err(Error::NotExited),
    };
    Ok(LoopErasedPath {
        vertices: erase_loops(&path.vertices),
        exit,
        source_length: path.steps.len(),
    })
}

/// Chronological loop erasure of a vertex sequence.
pub fn erase_loops(vs: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut pos: HashMap<usize, usize> = HashMap::new();
    for &v in vs {
        if let Some(&p) = pos.get(&v) {
            for u in out.drain(p + 1..) {
                pos.remove(&u);
            }
        } else {
            pos.insert(v, out.len());
            out.push(v);
        }
    }
    out
}

/// Sample the loop erasure of a walk from `start`, resampling killed or
/// truncated walks.
pub fn sample_lerw<R: Rng + ?Sized>(dom: &LatticeDomain, kernel: &Kernel, start: usize, rng: &mut R) -> LoopErasedPath {
    loop {
        let w = sample_with_kernel(dom, kernel, start, DEFAULT_CAP, rng);
        if let Ok(le) = loop_erase(&w) {
            return le;
        }
    }
}

/// Spanning arborescence rooted at the outer vertex: one outgoing direction
/// per interior vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arborescence {
    pub parent: Vec<u8>,
    #[serde(skip)]
    log_weight_bits: u64,
}

impl Arborescence {
    /// Arborescence from parent directions; validates acyclicity.
    pub fn new(dom: &LatticeDomain, parent: Vec<u8>) -> Result<Self> {
        if parent.len() != dom.len() {
            return Err(Error::InvalidArgument("parent vector has wrong length".into()));
        }
        let mut state = vec![0u8; dom.len()];
        for s in 0..dom.len() {
            let mut v = s;
            let mut trail = Vec::new();
            loop {
                if state[v] == 2 {
                    break;
                }
                if state[v] == 1 {
                    return Err(Error::CycleDetected);
                }
                state[v] = 1;
                trail.push(v);
                let k = parent[v] as usize;
                if k >= dom.degree() {
                    return Err(Error::InvalidArgument(format!("direction {k} out of range")));
                }
                match dom.target(v, k) {
                    Target::Interior(w) => v = w,
                    Target::Boundary(_) => break,
                }
            }
            for u in trail {
                state[u] = 2;
            }
        }
        let lw: f64 = (0..dom.len())
            .map(|v| dom.log_weight(v, parent[v] as usize))
            .collect::<KahanSum>()
            .value();
        Ok(Self { parent, log_weight_bits: lw.to_bits() })
    }

    /// `Σ_v log a_{k(v)}(v)`.
    pub fn log_weight(&self) -> f64 {
        f64::from_bits(self.log_weight_bits)
    }

    pub fn parent_target(&self, dom: &LatticeDomain, v: usize) -> Target {
        dom.target(v, self.parent[v] as usize)
    }
}

/// Wilson's algorithm with a prepared kernel (no ghost transitions allowed).
pub fn wilson_with_kernel<R: Rng + ?Sized>(dom: &LatticeDomain, kernel: &Kernel, order: &[usize], rng: &mut R) -> Result<Arborescence> {
    let n = dom.len();
    let mut in_tree = vec![false; n];
    let mut next = vec![0u8; n];
    let visit = |start: usize, in_tree: &mut Vec<bool>, next: &mut Vec<u8>, rng: &mut R| -> Result<()> {
        let mut v = start;
        while !in_tree[v] {
            let u: f64 = rng.random();
            match kernel.step(v, u) {
                Step::Killed => return Err(Error::InvalidArgument("Wilson kernel must not kill".into())),
                Step::Move(k) => {
                    next[v] = k as u8;
                    match dom.target(v, k) {
                        Target::Interior(w) => v = w,
                        Target::Boundary(_) => break,
                    }
                }
            }
        }
        let mut v = start;
        while !in_tree[v] {
            in_tree[v] = true;
            match dom.target(v, next[v] as usize) {
                Target::Interior(w) => v = w,
                Target::Boundary(_) => break,
            }
        }
        Ok(())
    };
    for &s in order {
        if s >= n {
            return Err(Error::InvalidArgument(format!("order entry {s} out of range")));
        }
        visit(s, &mut in_tree, &mut next, rng)?;
    }
    for s in 0..n {
        visit(s, &mut in_tree, &mut next, rng)?;
    }
    Arborescence::new(dom, next)
}

/// Kernel used by Wilson's algorithm for `law`.
pub fn tree_kernel(dom: &LatticeDomain, law: TreeLaw) -> Result<Kernel> {
    match law {
        TreeLaw::Drifted => Ok(Kernel::new(dom, Law::Drifted)),
        TreeLaw::MassiveConditionedAlive => {
            let (k, _) = conditioned_kernel(dom, Law::Massive, Conditioning::Alive)?;
            Ok(k)
        }
    }
}

/// Wilson's algorithm visiting vertices in `order` (remaining vertices follow
/// in index order).
pub fn wilson_sample(dom: &LatticeDomain, law: TreeLaw, order: &[usize], seed: RngSeed) -> Result<Arborescence> {
    let kernel = tree_kernel(dom, law)?;
    wilson_with_kernel(dom, &kernel, order, &mut seed.rng())
}

/// Threshold below which a hitting probability counts as zero.
pub const UNREACHABLE: f64 = 1e-300;

/// Doob-transformed kernel for `law` conditioned on exiting through the
/// boundary edges weighted by `indicator`, with the solved hitting probabilities.
pub fn conditioned_kernel_on(dom: &LatticeDomain, law: Law, indicator: &[f64]) -> Result<(Kernel, Vec<f64>)> {
    let base = Kernel::new(dom, law);
    let h = green::hitting_with_kernel(dom, &base, indicator)?;
    let k = Kernel::doob(dom, &base, &h.values, |e| indicator[e]);
    Ok((k, h.values))
}

/// Doob-transformed kernel for `law` conditioned on `target`.
pub fn conditioned_kernel(dom: &LatticeDomain, law: Law, target: Conditioning) -> Result<(Kernel, Vec<f64>)> {
    let t = match target {
        Conditioning::Edge(e) => green::ExitTarget::Edge(e),
        Conditioning::Alive => green::ExitTarget::Alive,
    };
    conditioned_kernel_on(dom, law, &green::target_indicator(dom, t)?)
}

/// Sample the Doob h-transform of `law` conditioned on `target`.
pub fn condition_walk(dom: &LatticeDomain, start: usize, law: Law, target: Conditioning, cap: u64, seed: RngSeed) -> Result<WalkPath> {
    if start >= dom.len() {
        return Err(Error::InvalidArgument(format!("start {start} is not interior")));
    }
    let (k, h) = conditioned_kernel(dom, law, target)?;
    if !(h[start] >= UNREACHABLE) {
        return Err(Error::UnreachableTarget);
    }
    Ok(sample_with_kernel(dom, &k, start, cap, &mut seed.rng()))
}

/// Exact `n`-step transition probability of the simple walk on the infinite
/// lattice for a displacement in lattice coordinates.
pub fn free_heat_kernel(kind: LatticeKind, displacement: Site, n: u64) -> f64 {
    HeatKernel::new(kind, n).prob(displacement)
}

/// Cached log-factorials for repeated heat-kernel evaluation at fixed `n`.
pub struct HeatKernel {
    kind: LatticeKind,
    n: i64,
    lf: Vec<f64>,
}

impl HeatKernel {
    pub fn new(kind: LatticeKind, n: u64) -> Self {
        Self { kind, n: n as i64, lf: ln_factorials(n as usize) }
    }

    /// Log-probability, or `None` when the displacement is unreachable.
    pub fn ln_prob(&self, d: Site) -> Option<f64> {
        let n = self.n;
        let (a, b) = (d.0 as i64, d.1 as i64);
        let lf = |k: i64| self.lf[k as usize];
        match self.kind {
            LatticeKind::DirectedTriangular => {
                if (n - a - b).rem_euclid(3) != 0 {
                    return None;
                }
                let n3 = (n - a - b) / 3;
                let n1 = n3 + a;
                let n2 = n3 + b;
                if n1 < 0 || n2 < 0 || n3 < 0 {
                    return None;
                }
                Some(lf(n) - lf(n1) - lf(n2) - lf(n3) - n as f64 * 3f64.ln())
            }
            LatticeKind::SquareZ2 => {
                let (u, w) = (a + b, a - b);
                if (n + u).rem_euclid(2) != 0 || u.abs() > n || w.abs() > n {
                    return None;
                }
                let (pu, pw) = ((n + u) / 2, (n + w) / 2);
                Some(2.0 * lf(n) - lf(pu) - lf(n - pu) - lf(pw) - lf(n - pw) - n as f64 * 4f64.ln())
            }
        }
    }

    pub fn prob(&self, d: Site) -> f64 {
        self.ln_prob(d).map_or(0.0, f64::exp)
    }
}

/// Gaussian surrogate `√27/(2πn) exp(−|x−y|²/(δ²n))` of the triangular kernel,
/// with `|x−y|/δ` given in lattice units.
pub fn triangular_gaussian(displacement: Site, n: u64) -> f64 {
    let z = LatticeKind::DirectedTriangular.embed(displacement);
    27f64.sqrt() / (2.0 * std::f64::consts::PI * n as f64) * (-z.norm_sqr() / n as f64).exp()
}

/// Exact integer path counts of the triangular simple walk after `n` steps,
/// keyed by displacement.
pub fn triangular_counts(n: usize) -> HashMap<Site, u64> {
    let mut cur: HashMap<Site, u64> = HashMap::from([((0, 0), 1u64)]);
    for _ in 0..n {
        let mut nxt: HashMap<Site, u64> = HashMap::with_capacity(cur.len() * 2);
        for (&s, &c) in &cur {
            for st in LatticeKind::DirectedTriangular.steps() {
                *nxt.entry((s.0 + st.0, s.1 + st.1)).or_default() += c;
            }
        }
        cur = nxt;
    }
    cur
}

/// Counterexample to the monotone comparison of multinomial counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComparisonViolation {
    pub n: usize,
    pub y: Site,
    pub z: Site,
}

/// Exhaustively check that for every `n ≤ n_max` and all reachable `z` with
/// `|z| < |y|/2`, the `n`-step probability at `z` dominates the one at `y`.
pub fn comparison_lemma_check(n_max: usize) -> std::result::Result<(), ComparisonViolation> {
    let kind = LatticeKind::DirectedTriangular;
    for n in 0..=n_max {
        let counts = triangular_counts(n);
        let mut by_radius: Vec<(f64, u64, Site)> = counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&s, &c)| (kind.embed(s).norm_sqr(), c, s))
            .collect();
        by_radius.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.2.cmp(&b.2)));
        let mut prefix_min: Vec<(u64, Site)> = Vec::with_capacity(by_radius.len());
        for (i, &(_, c, s)) in by_radius.iter().enumerate() {
            let m = if i == 0 || c < prefix_min[i - 1].0 { (c, s) } else { prefix_min[i - 1] };
            prefix_min.push(m);
        }
        for &(r2, cy, y) in &by_radius {
            let bound = r2 / 4.0;
            let cnt = by_radius.partition_point(|e| e.0 < bound - 1e-9);
            if cnt > 0 && prefix_min[cnt - 1].0 < cy {
                return Err(ComparisonViolation { n, y, z: prefix_min[cnt - 1].1 });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{hexagon_sites, DriftField, Region};
    use num_complex::Complex64;

    fn hex(r: i32, field: &DriftField) -> LatticeDomain {
        LatticeDomain::build(LatticeKind::DirectedTriangular, &Region::Sites(hexagon_sites(r)), 0.1, field).unwrap()
    }

    #[test]
    fn simple_law_log_weight() {
        let d = hex(3, &DriftField::zero());
        let p = sample_walk(&d, 0, Law::Simple, 1000, RngSeed::new(3)).unwrap();
        assert!((p.log_weight + p.len() as f64 * 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn zero_drift_matches_simple_bitwise() {
        let d = hex(3, &DriftField::zero());
        for s in 0..20 {
            let a = sample_walk(&d, 5, Law::Simple, 1000, RngSeed::new(s)).unwrap();
            let b = sample_walk(&d, 5, Law::Drifted, 1000, RngSeed::new(s)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn loop_erasure_examples() {
        let p = WalkPath { vertices: vec![1, 2, 3, 1, 4], steps: vec![0; 5], terminal: Terminal::ExitedBoundary(0), log_weight: 0.0 };
        assert_eq!(loop_erase(&p).unwrap().vertices, vec![1, 4]);
        let q = WalkPath { vertices: vec![1, 2, 3], steps: vec![0; 3], terminal: Terminal::ExitedBoundary(2), log_weight: 0.0 };
        assert_eq!(loop_erase(&q).unwrap().vertices, vec![1, 2, 3]);
        let k = WalkPath { terminal: Terminal::Killed, ..q };
        assert_eq!(loop_erase(&k).unwrap_err(), Error::NotExited);
    }

    #[test]
    fn single_vertex_wilson() {
        let d = LatticeDomain::build(
            LatticeKind::DirectedTriangular,
            &Region::Sites(vec![(0, 0)]),
            0.1,
            &DriftField::constant_drift(Complex64::new(1.0, 0.0)),
        )
        .unwrap();
        let mut counts = [0usize; 3];
        for s in 0..30000 {
            let t = wilson_sample(&d, TreeLaw::Drifted, &[0], RngSeed::new(s)).unwrap();
            counts[t.parent[0] as usize] += 1;
        }
        for k in 0..3 {
            let p = d.jump_probability(0, k);
            let f = counts[k] as f64 / 30000.0;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / 30000.0).sqrt());
        }
    }

    #[test]
    fn heat_kernel_small_cases() {
        assert_eq!(free_heat_kernel(LatticeKind::DirectedTriangular, (0, 0), 0), 1.0);
        assert!((free_heat_kernel(LatticeKind::DirectedTriangular, (0, 0), 3) - 6.0 / 27.0).abs() < 1e-15);
        assert_eq!(free_heat_kernel(LatticeKind::DirectedTriangular, (1, 0), 3), 0.0);
        assert!((free_heat_kernel(LatticeKind::SquareZ2, (0, 0), 2) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn heat_kernel_matches_counts() {
        let n = 9;
        let c = triangular_counts(n);
        let tot = 3f64.powi(n as i32);
        for (&s, &k) in &c {
            assert!((free_heat_kernel(LatticeKind::DirectedTriangular, s, n as u64) - k as f64 / tot).abs() < 1e-14);
        }
    }

    #[test]
    fn child_streams_are_distinct() {
        let s = RngSeed::new(1);
        let a: Vec<u64> = (0..1000).map(|i| s.child(i).stream).collect();
        let set: std::collections::HashSet<_> = a.iter().collect();
        assert_eq!(set.len(), a.len());
    }
}
