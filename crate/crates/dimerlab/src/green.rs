//! Absorbing-chain linear algebra: Green functions, hitting probabilities,
//! exit laws, the massive/massless resolvent identity and the massive
//! martingale observable on slit domains.

use std::sync::Once;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeDomain, Target};
use crate::walk::{Kernel, Law, LoopErasedPath};

static SEQUENTIAL: Once = Once::new();

/// Residual above which one step of iterative refinement is applied.
const REFINE_ABOVE: f64 = 1e-14;

/// LU-factorized `I − Q` for the substochastic interior part `Q` of a kernel,
/// optionally restricted to the vertices not marked as removed.
pub struct AbsorbingSolver {
    verts: Vec<usize>,
    local: Vec<Option<usize>>,
    rows: Vec<Vec<(usize, f64)>>,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl AbsorbingSolver {
    /// Factorize `I − Q` on `dom` minus `removed` (vertices treated as absorbing).
    pub fn new(dom: &LatticeDomain, kernel: &Kernel, removed: Option<&[bool]>) -> Result<Self> {
        SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
        let gone = |v: usize| removed.is_some_and(|r| r[v]);
        let mut local = vec![None; dom.len()];
        let mut verts = Vec::new();
        for v in 0..dom.len() {
            if !gone(v) {
                local[v] = Some(verts.len());
                verts.push(v);
            }
        }
        if verts.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let mut rows = Vec::with_capacity(verts.len());
        let mut trips = Vec::with_capacity(verts.len() * (dom.degree() + 1));
        for (i, &v) in verts.iter().enumerate() {
            let mut row = Vec::with_capacity(dom.degree());
            for (k, t) in dom.targets(v).iter().enumerate() {
                if let Target::Interior(w) = *t {
                    if let Some(j) = local[w] {
                        let p = kernel.prob(v, k);
                        if p != 0.0 {
                            row.push((j, p));
                        }
                    }
                }
            }
            trips.push(Triplet::new(i, i, 1.0));
            for &(j, p) in &row {
                trips.push(Triplet::new(i, j, -p));
            }
            rows.push(row);
        }
        let n = verts.len();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
            .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
        let lu = a.sp_lu().map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
        Ok(Self { verts, local, rows, lu })
    }

    /// Number of unknowns.
    pub fn len(&self) -> usize {
        self.verts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verts.is_empty()
    }

    /// Local index of a domain vertex, if it is active.
    pub fn local(&self, v: usize) -> Option<usize> {
        self.local[v]
    }

    fn apply(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let mut y = x.to_vec();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                if transpose {
                    y[j] -= p * x[i];
                } else {
                    y[i] -= p * x[j];
                }
            }
        }
        y
    }

    fn residual(&self, x: &[f64], b: &[f64], transpose: bool) -> (Vec<f64>, f64) {
        let ax = self.apply(x, transpose);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let bn = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let rn = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (r, rn / bn)
    }

    fn raw(&self, b: &[f64], transpose: bool) -> Vec<f64> {
        let mut m = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        if transpose {
            self.lu.solve_transpose_in_place(m.as_mut());
        } else {
            self.lu.solve_in_place(m.as_mut());
        }
        (0..b.len()).map(|i| m[(i, 0)]).collect()
    }

    /// Solve in local coordinates with iterative refinement; returns the
    /// solution and its relative residual.
    pub fn solve_local(&self, b: &[f64], transpose: bool) -> Result<(Vec<f64>, f64)> {
        let mut x = self.raw(b, transpose);
        let (mut r, mut res) = self.residual(&x, b, transpose);
        for _ in 0..3 {
            if !(res > REFINE_ABOVE) {
                break;
            }
            let dx = self.raw(&r, transpose);
            x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
            (r, res) = self.residual(&x, b, transpose);
        }
        if !res.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite solution".into()));
        }
        Ok((x, res))
    }

    /// Solve `(I − Q) x = b` with `b` and `x` indexed by domain vertices.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.solve_global(b, false)
    }

    /// Solve `(I − Q)ᵀ x = b` with `b` and `x` indexed by domain vertices.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.solve_global(b, true)
    }

    fn solve_global(&self, b: &[f64], transpose: bool) -> Result<(Vec<f64>, f64)> {
        let bl: Vec<f64> = self.verts.iter().map(|&v| b[v]).collect();
        let (xl, res) = self.solve_local(&bl, transpose)?;
        let mut x = vec![0.0; self.local.len()];
        for (i, &v) in self.verts.iter().enumerate() {
            x[v] = xl[i];
        }
        Ok((x, res))
    }

    /// Green row `G(x, ·)`: expected visits to each vertex from `x`.
    pub fn green_row(&self, x: usize) -> Result<(Vec<f64>, f64)> {
        let mut e = vec![0.0; self.local.len()];
        e[x] = 1.0;
        self.solve_transpose(&e)
    }

    /// Green column `G(·, z)`.
    pub fn green_column(&self, z: usize) -> Result<(Vec<f64>, f64)> {
        let mut e = vec![0.0; self.local.len()];
        e[z] = 1.0;
        self.solve(&e)
    }
}

/// Green function `Z(source, ·)` with its solver residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenTable {
    pub source: usize,
    pub values: Vec<f64>,
    pub mass_mode: bool,
    pub solver_residual: f64,
}

/// Expected visits before exit or death from `source` under `law`.
pub fn green_solve(dom: &LatticeDomain, source: usize, law: Law) -> Result<GreenTable> {
    if source >= dom.len() {
        return Err(Error::InvalidArgument(format!("source {source} is not interior")));
    }
    let k = Kernel::new(dom, law);
    let s = AbsorbingSolver::new(dom, &k, None)?;
    let (values, solver_residual) = s.green_row(source)?;
    Ok(GreenTable { source, values, mass_mode: law == Law::Massive, solver_residual })
}

/// Terminal event for a Dirichlet problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitTarget {
    Edge(usize),
    Alive,
}

/// Solution `h` of a Dirichlet problem with its residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingTable {
    pub values: Vec<f64>,
    pub residual: f64,
}

/// Boundary indicator of a target event.
pub fn target_indicator(dom: &LatticeDomain, target: ExitTarget) -> Result<Vec<f64>> {
    let mut ind = vec![0.0; dom.boundary_edges().len()];
    match target {
        ExitTarget::Edge(e) => {
            if e >= ind.len() {
                return Err(Error::InvalidArgument(format!("boundary edge {e} out of range")));
            }
            ind[e] = 1.0;
        }
        ExitTarget::Alive => ind.iter_mut().for_each(|x| *x = 1.0),
    }
    Ok(ind)
}

fn boundary_rhs(dom: &LatticeDomain, kernel: &Kernel, boundary: &[f64]) -> Vec<f64> {
    (0..dom.len())
        .map(|v| {
            dom.targets(v)
                .iter()
                .enumerate()
                .map(|(k, t)| match *t {
                    Target::Boundary(e) => kernel.prob(v, k) * boundary[e],
                    Target::Interior(_) => 0.0,
                })
                .sum()
        })
        .collect()
}

/// Dirichlet solution with boundary values `boundary` (per boundary edge) and
/// value 0 at the ghost.
pub fn hitting_with_kernel(dom: &LatticeDomain, kernel: &Kernel, boundary: &[f64]) -> Result<HittingTable> {
    let s = AbsorbingSolver::new(dom, kernel, None)?;
    let (values, residual) = s.solve(&boundary_rhs(dom, kernel, boundary))?;
    Ok(HittingTable { values, residual })
}

/// Probability of the target event from every interior vertex under `law`.
pub fn hitting_probability(dom: &LatticeDomain, target: ExitTarget, law: Law) -> Result<HittingTable> {
    let ind = target_indicator(dom, target)?;
    hitting_with_kernel(dom, &Kernel::new(dom, law), &ind)
}

/// Largest violation of `h(v) = Σ_k p(v,k) h(target)` over interior vertices.
pub fn harmonicity_defect(dom: &LatticeDomain, kernel: &Kernel, h: &[f64], boundary: &[f64]) -> f64 {
    (0..dom.len())
        .map(|v| {
            let mean: f64 = dom
                .targets(v)
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    kernel.prob(v, k)
                        * match *t {
                            Target::Interior(w) => h[w],
                            Target::Boundary(e) => boundary[e],
                        }
                })
                .sum();
            (h[v] - mean).abs()
        })
        .fold(0.0, f64::max)
}

/// Exit law from `start` given a prepared solver: probability per boundary edge.
pub fn exit_distribution_with(dom: &LatticeDomain, kernel: &Kernel, solver: &AbsorbingSolver, start: usize) -> Result<Vec<f64>> {
    let (g, _) = solver.green_row(start)?;
    Ok(dom
        .boundary_edges()
        .iter()
        .map(|b| g[b.inner] * kernel.prob(b.inner, b.direction))
        .collect())
}

/// Exit law from `start` under `law`; sums to the survival probability.
pub fn exit_distribution(dom: &LatticeDomain, start: usize, law: Law) -> Result<Vec<f64>> {
    if start >= dom.len() {
        return Err(Error::InvalidArgument(format!("start {start} is not interior")));
    }
    let k = Kernel::new(dom, law);
    let s = AbsorbingSolver::new(dom, &k, None)?;
    exit_distribution_with(dom, &k, &s, start)
}

fn constant_killing(dom: &LatticeDomain) -> Result<f64> {
    let k0 = dom.killing(0);
    for v in 1..dom.len() {
        let kv = dom.killing(v);
        if (kv - k0).abs() > 1e-15 * k0.abs().max(1e-300) {
            return Err(Error::NonConstantMass);
        }
    }
    Ok(k0)
}

fn mystery_from(kill: f64, zm_row: &[f64], z_row: &[f64], z_col: &[f64], z: usize) -> f64 {
    let conv: f64 = zm_row.iter().zip(z_col).map(|(a, b)| a * b).sum();
    ((1.0 - kill) * zm_row[z] - z_row[z] + kill * conv).abs() / z_row[z]
}

/// `|(1−m²δ²)Z^(m)(w,z) − Z(w,z) + m²δ² Σ_v Z^(m)(w,v) Z(v,z)| / Z(w,z)` for
/// the massive law against the simple law.
pub fn mystery_identity_residual(dom: &LatticeDomain, w: usize, z: usize) -> Result<f64> {
    if w >= dom.len() || z >= dom.len() {
        return Err(Error::InvalidArgument("vertices must be interior".into()));
    }
    let kill = constant_killing(dom)?;
    let km = Kernel::new(dom, Law::Massive);
    let k0 = Kernel::new(dom, Law::Simple);
    let sm = AbsorbingSolver::new(dom, &km, None)?;
    let s0 = AbsorbingSolver::new(dom, &k0, None)?;
    let (zm_row, _) = sm.green_row(w)?;
    let (z_row, _) = s0.green_row(w)?;
    let (z_col, _) = s0.green_column(z)?;
    Ok(mystery_from(kill, &zm_row, &z_row, &z_col, z))
}

/// Gauss–Seidel solve of `(I − Q) x = b` (or its transpose) stopped when the
/// largest update falls below `tol`.
pub fn gauss_seidel(dom: &LatticeDomain, kernel: &Kernel, b: &[f64], transpose: bool, tol: f64) -> Vec<f64> {
    let n = dom.len();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for v in 0..n {
        for (k, t) in dom.targets(v).iter().enumerate() {
            if let Target::Interior(w) = *t {
                if transpose {
                    incoming[w].push((v, kernel.prob(v, k)));
                } else {
                    incoming[v].push((w, kernel.prob(v, k)));
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for _ in 0..10_000_000 {
        let mut change = 0.0f64;
        for v in 0..n {
            let new = b[v] + incoming[v].iter().map(|&(u, p)| p * x[u]).sum::<f64>();
            change = change.max((new - x[v]).abs());
            x[v] = new;
        }
        if change < tol {
            break;
        }
    }
    x
}

/// Version of [`mystery_identity_residual`] with all three systems solved by
/// Gauss–Seidel to tolerance `tol`.
pub fn mystery_identity_residual_iterative(dom: &LatticeDomain, w: usize, z: usize, tol: f64) -> Result<f64> {
    let kill = constant_killing(dom)?;
    let km = Kernel::new(dom, Law::Massive);
    let k0 = Kernel::new(dom, Law::Simple);
    let mut ew = vec![0.0; dom.len()];
    ew[w] = 1.0;
    let mut ez = vec![0.0; dom.len()];
    ez[z] = 1.0;
    let zm_row = gauss_seidel(dom, &km, &ew, true, tol);
    let z_row = gauss_seidel(dom, &k0, &ew, true, tol);
    let z_col = gauss_seidel(dom, &k0, &ez, false, tol);
    Ok(mystery_from(kill, &zm_row, &z_row, &z_col, z))
}

/// Values `M_n(v)` of the massive martingale observable along a curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableTrace {
    pub curve: LoopErasedPath,
    pub probe: usize,
    pub values: Vec<f64>,
}

/// Tip hitting probabilities on the slit domain `Ω ∖ tail`.
///
/// `tail` lists `γ_1 … γ_n` (the reversed curve without its boundary edge);
/// the returned `H` is the probability of reaching the tip `γ_n` (or of
/// exiting through `exit` when the tail is empty) before leaving the slit
/// domain or dying, with `H(γ_n) = 1`.
pub fn tip_hitting(dom: &LatticeDomain, kernel: &Kernel, exit: usize, tail: &[usize]) -> Result<(Option<AbsorbingSolver>, Vec<f64>)> {
    let mut removed = vec![false; dom.len()];
    for &u in tail {
        removed[u] = true;
    }
    if tail.len() == dom.len() {
        let mut h = vec![0.0; dom.len()];
        if let Some(&t) = tail.last() {
            h[t] = 1.0;
        }
        return Ok((None, h));
    }
    let solver = AbsorbingSolver::new(dom, kernel, Some(&removed))?;
    let rhs = tip_rhs(dom, kernel, exit, tail, &removed);
    let (mut h, _) = solver.solve(&rhs)?;
    if let Some(&t) = tail.last() {
        h[t] = 1.0;
    }
    Ok((Some(solver), h))
}

fn tip_rhs(dom: &LatticeDomain, kernel: &Kernel, exit: usize, tail: &[usize], removed: &[bool]) -> Vec<f64> {
    let target = match tail.last() {
        Some(&t) => Target::Interior(t),
        None => Target::Boundary(exit),
    };
    (0..dom.len())
        .map(|w| {
            if removed[w] {
                return 0.0;
            }
            dom.targets(w)
                .iter()
                .enumerate()
                .filter(|(_, t)| **t == target)
                .map(|(k, _)| kernel.prob(w, k))
                .sum()
        })
        .collect()
}

/// Reversed curve `γ_1 … γ_L` of a LERW from its root.
pub fn reversed_tail(curve: &LoopErasedPath) -> Vec<usize> {
    curve.vertices.iter().rev().copied().collect()
}

/// `M_n(probe) = H_n(probe) / H_n(root)` for the reversed tail of length `n`.
pub fn observable_at(dom: &LatticeDomain, kernel: &Kernel, curve: &LoopErasedPath, probe: usize, n: usize) -> Result<f64> {
    let tail = reversed_tail(curve);
    let root = curve.vertices[0];
    let (_, h) = tip_hitting(dom, kernel, curve.exit, &tail[..n])?;
    let denom = h[root];
    if !(denom > 0.0) {
        return Err(Error::SingularSystem("root cannot reach the tip".into()));
    }
    Ok(h[probe] / denom)
}

/// Stopped observable: `M` at step `n`, or at the step the tip lands on the
/// probe if that happens first.
pub fn stopped_observable(dom: &LatticeDomain, kernel: &Kernel, curve: &LoopErasedPath, probe: usize, n: usize) -> Result<f64> {
    let tail = reversed_tail(curve);
    let hit = tail.iter().position(|&u| u == probe).map(|i| i + 1);
    let n = hit.map_or(n, |h| h.min(n)).min(tail.len());
    observable_at(dom, kernel, curve, probe, n)
}

/// Massive martingale observable along the reversed `curve` grown from its
/// boundary edge toward its root `curve.vertices[0]`.
pub fn martingale_observable(dom: &LatticeDomain, law: Law, curve: &LoopErasedPath, probe: usize) -> Result<ObservableTrace> {
    if curve.vertices.contains(&probe) {
        return Err(Error::ProbeSwallowed);
    }
    let kernel = Kernel::new(dom, law);
    let tail = reversed_tail(curve);
    let root = curve.vertices[0];
    let mut values = Vec::with_capacity(tail.len() + 1);
    for n in 0..=tail.len() {
        let (_, h) = tip_hitting(dom, &kernel, curve.exit, &tail[..n])?;
        if !(h[probe] > 0.0) {
            return Err(Error::ProbeSwallowed);
        }
        values.push(h[probe] / h[root]);
    }
    Ok(ObservableTrace { curve: curve.clone(), probe, values })
}

/// Exact one-step expectation of the observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneStepCheck {
    pub current: f64,
    pub expected_next: f64,
    /// `(w, P(γ_{n+1} = w), M_{n+1}(probe))` over candidate next vertices.
    pub next_law: Vec<(usize, f64, f64)>,
    pub total_mass: f64,
}

/// Next-step law of the reversed LERW after `tail` and the resulting
/// expectation of `M_{n+1}(probe)`, with each `M_{n+1}` re-solved on its own
/// slit domain.
pub fn martingale_one_step(dom: &LatticeDomain, law: Law, exit: usize, tail: &[usize], root: usize, probe: usize) -> Result<OneStepCheck> {
    if tail.contains(&probe) || tail.contains(&root) {
        return Err(Error::ProbeSwallowed);
    }
    let kernel = Kernel::new(dom, law);
    let (solver, h) = tip_hitting(dom, &kernel, exit, tail)?;
    let solver = solver.ok_or(Error::ProbeSwallowed)?;
    let current = h[probe] / h[root];
    let (g_root, _) = solver.green_row(root)?;
    let mut removed = vec![false; dom.len()];
    tail.iter().for_each(|&u| removed[u] = true);
    let r = tip_rhs(dom, &kernel, exit, tail, &removed);
    let mut next_law = Vec::new();
    let mut expected_next = 0.0;
    let mut total_mass = 0.0;
    let mut next_tail = tail.to_vec();
    for w in 0..dom.len() {
        if removed[w] || r[w] == 0.0 {
            continue;
        }
        let p = g_root[w] * r[w] / h[root];
        if p == 0.0 {
            continue;
        }
        next_tail.push(w);
        let (_, h2) = tip_hitting(dom, &kernel, exit, &next_tail)?;
        next_tail.pop();
        let m = h2[probe] / h2[root];
        expected_next += p * m;
        total_mass += p;
        next_law.push((w, p, m));
    }
    Ok(OneStepCheck { current, expected_next, next_law, total_mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{hexagon_sites, DriftField, LatticeKind, Region};

    #[test]
    fn single_vertex_visits_once() {
        let d = LatticeDomain::build(LatticeKind::DirectedTriangular, &Region::Sites(vec![(0, 0)]), 0.1, &DriftField::zero()).unwrap();
        let g = green_solve(&d, 0, Law::Simple).unwrap();
        assert_eq!(g.values, vec![1.0]);
    }

    #[test]
    fn alive_without_mass_is_one() {
        let d = LatticeDomain::build(LatticeKind::DirectedTriangular, &Region::Sites(hexagon_sites(3)), 0.1, &DriftField::zero()).unwrap();
        let h = hitting_probability(&d, ExitTarget::Alive, Law::Massive).unwrap();
        assert!(h.values.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn exit_law_sums_to_one() {
        let d = LatticeDomain::build(
            LatticeKind::SquareZ2,
            &Region::Disc { center: num_complex::Complex64::new(0.0, 0.0), radius: 1.0 },
            0.2,
            &DriftField::constant_drift(num_complex::Complex64::new(0.5, -0.3)),
        )
        .unwrap();
        let p = exit_distribution(&d, 0, Law::Drifted).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
