//! Exact discrete Radon–Nikodym derivatives between the drifted, massive
//! and simple walk laws, and the induced mass/drift correspondence.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeDomain, LatticeKind, Target};
use crate::numeric::KahanSum;
use crate::walk::{Terminal, WalkPath};

/// Per-vertex coefficients of the discrete Girsanov decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalCoefficients {
    /// `α_k = log(a_k)/δ` per outgoing direction.
    pub alpha_k: Vec<f64>,
    /// Planar vector `α = Σ_k α_k ω^k` (triangular) or `(α₁ − α₃, α₂ − α₄)` (square).
    pub alpha: Complex64,
    /// `β²` (triangular, second entry 0) or `(β₁², β₂²)` (square).
    pub beta2: [f64; 2],
    /// Mass `m(v) ≥ 0`.
    pub mass: f64,
}

/// `ln(a(v)/deg)` evaluated without cancellation.
fn log_mean_weight(dom: &LatticeDomain, v: usize) -> f64 {
    let c = dom.coefficients(v);
    let mean_c = c.iter().sum::<f64>() / c.len() as f64;
    (mean_c * dom.delta()).ln_1p()
}

/// Coefficients at `v`, computed in log-space.
pub fn local_coefficients(dom: &LatticeDomain, v: usize) -> LocalCoefficients {
    let d = dom.delta();
    let deg = dom.degree();
    let logs: Vec<f64> = (0..deg).map(|k| dom.log_weight(v, k)).collect();
    let alpha_k: Vec<f64> = logs.iter().map(|l| l / d).collect();
    let lmean = log_mean_weight(dom, v);
    let (alpha, beta2) = match dom.kind() {
        LatticeKind::DirectedTriangular => {
            let alpha = (0..3).map(|k| dom.kind().direction(k) * alpha_k[k]).sum();
            let b = (3.0 * lmean - logs.iter().sum::<f64>()) / (d * d);
            (alpha, [b, 0.0])
        }
        LatticeKind::SquareZ2 => {
            let alpha = Complex64::new(alpha_k[0] - alpha_k[2], alpha_k[1] - alpha_k[3]);
            let b1 = (2.0 * lmean - logs[0] - logs[2]) / (d * d);
            let b2 = (2.0 * lmean - logs[1] - logs[3]) / (d * d);
            (alpha, [b1, b2])
        }
    };
    LocalCoefficients { alpha_k, alpha, beta2, mass: dom.mass_squared(v).max(0.0).sqrt() }
}

/// Decomposition `log(P^(Δ)/P^(0)) = M − V/2` of a path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GirsanovDecomposition {
    pub m: f64,
    pub v: f64,
    pub n: usize,
    pub log_rn: f64,
}

fn dot(a: Complex64, b: Complex64) -> f64 {
    a.re * b.re + a.im * b.im
}

/// Check that `steps` are consistent with `vertices` on `dom`.
pub fn validate_path(dom: &LatticeDomain, path: &WalkPath) -> Result<()> {
    if path.vertices.is_empty() {
        return Err(Error::PathMismatch("path has no vertices".into()));
    }
    for (s, &k) in path.steps.iter().enumerate() {
        let k = k as usize;
        let v = path.vertices.get(s).copied().ok_or(Error::PathMismatch("too few vertices".into()))?;
        if v >= dom.len() || k >= dom.degree() {
            return Err(Error::PathMismatch(format!("invalid step {k} at vertex {v}")));
        }
        match (dom.target(v, k), path.vertices.get(s + 1)) {
            (Target::Interior(w), Some(&x)) if w == x => {}
            (Target::Boundary(e), None) if path.terminal == Terminal::ExitedBoundary(e) => {}
            _ => return Err(Error::PathMismatch(format!("step {s} does not match the vertex sequence"))),
        }
    }
    Ok(())
}

/// Girsanov decomposition of `path` on `dom`.
pub fn rn_decompose(dom: &LatticeDomain, path: &WalkPath) -> Result<GirsanovDecomposition> {
    validate_path(dom, path)?;
    let d = dom.delta();
    let mut cache: HashMap<usize, LocalCoefficients> = HashMap::new();
    let mut m = KahanSum::new();
    let mut q = KahanSum::new();
    for (s, &k) in path.steps.iter().enumerate() {
        let v = path.vertices[s];
        let lc = cache.entry(v).or_insert_with(|| local_coefficients(dom, v));
        let dx = dom.kind().direction(k as usize) * d;
        match dom.kind() {
            LatticeKind::DirectedTriangular => {
                m.add(2.0 / 3.0 * dot(lc.alpha, dx));
                q.add(2.0 / 3.0 * d * d * lc.beta2[0]);
            }
            LatticeKind::SquareZ2 => {
                m.add(0.5 * dot(lc.alpha, dx));
                let b = lc.beta2[0] * dx.re * dx.re + lc.beta2[1] * dx.im * dx.im;
                q.add(b);
            }
        }
    }
    let (m, v) = (m.value(), q.value());
    Ok(GirsanovDecomposition { m, v, n: path.steps.len(), log_rn: m - v / 2.0 })
}

/// `log P(path)` under the drifted law, as a direct product of `a_k/a`.
pub fn log_drifted_probability(dom: &LatticeDomain, path: &WalkPath) -> f64 {
    path.steps
        .iter()
        .enumerate()
        .map(|(s, &k)| dom.jump_probability(path.vertices[s], k as usize).ln())
        .collect::<KahanSum>()
        .value()
}

/// `log P(path)` under the simple law, `−n log deg`.
pub fn log_simple_probability(dom: &LatticeDomain, path: &WalkPath) -> f64 {
    -(path.steps.len() as f64) * (dom.degree() as f64).ln()
}

/// `log P(path, no death)` under the massive law `(1 − m²δ²)/deg` per step.
pub fn log_massive_probability(dom: &LatticeDomain, path: &WalkPath) -> f64 {
    let deg = (dom.degree() as f64).ln();
    path.steps
        .iter()
        .enumerate()
        .map(|(s, _)| (-dom.killing(path.vertices[s])).ln_1p() - deg)
        .collect::<KahanSum>()
        .value()
}

/// Relative error `|exp(M − V/2) P^(0) − P^(Δ)| / P^(Δ)` for one path.
pub fn girsanov_relative_error(dom: &LatticeDomain, path: &WalkPath) -> Result<f64> {
    let g = rn_decompose(dom, path)?;
    let lhs = g.log_rn + log_simple_probability(dom, path);
    let rhs = log_drifted_probability(dom, path);
    Ok((lhs - rhs).exp_m1().abs())
}

/// `m(v)² − |Δ(v)|²` per vertex of a drift-mode domain.
pub fn mass_drift_gap(dom: &LatticeDomain) -> Vec<f64> {
    (0..dom.len()).map(|v| dom.mass_squared(v) - dom.drift(v).norm_sqr()).collect()
}

/// `|P^(Δ)(loop) / P^(m)(loop) − 1|` for a closed path.
pub fn rn_loop_invariance_check(dom: &LatticeDomain, lp: &WalkPath) -> Result<f64> {
    if lp.vertices.len() != lp.steps.len() + 1 || lp.vertices.first() != lp.vertices.last() {
        return Err(Error::NotALoop);
    }
    validate_path(dom, lp)?;
    let diff = log_drifted_probability(dom, lp) - log_massive_probability(dom, lp);
    Ok(diff.exp_m1().abs())
}

/// Summary of an identity verified over many samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub identity: String,
    pub n_samples: usize,
    pub max_rel_err: f64,
    /// `(quantile, value)` pairs of the error distribution.
    pub percentiles: Vec<(f64, f64)>,
}

impl VerificationReport {
    /// Report from raw errors at the quantiles 0.5, 0.9, 0.99 and 1.
    pub fn from_errors(identity: &str, mut errs: Vec<f64>) -> Self {
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let q = |p: f64| -> f64 {
            if errs.is_empty() {
                return 0.0;
            }
            let i = ((errs.len() - 1) as f64 * p).round() as usize;
            errs[i]
        };
        Self {
            identity: identity.to_string(),
            n_samples: errs.len(),
            max_rel_err: errs.last().copied().unwrap_or(0.0),
            percentiles: [0.5, 0.9, 0.99, 1.0].iter().map(|&p| (p, q(p))).collect(),
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Mean quadratic-variation increment per step, `δ²(β₁² + β₂²)/2`, on the square lattice.
pub fn square_qv_rate(dom: &LatticeDomain, v: usize) -> f64 {
    let lc = local_coefficients(dom, v);
    dom.delta() * dom.delta() * (lc.beta2[0] + lc.beta2[1]) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{block_sites, hexagon_sites, DriftField, Region};

    #[test]
    fn zero_field_coefficients() {
        let d = LatticeDomain::build(
            LatticeKind::DirectedTriangular,
            &Region::Sites(hexagon_sites(1)),
            0.01,
            &DriftField::zero(),
        )
        .unwrap();
        let lc = local_coefficients(&d, 0);
        assert_eq!(lc.alpha, Complex64::new(0.0, 0.0));
        assert_eq!(lc.beta2, [0.0, 0.0]);
        assert_eq!(lc.mass, 0.0);
    }

    #[test]
    fn triangular_mass_example() {
        let d = LatticeDomain::build(
            LatticeKind::DirectedTriangular,
            &Region::Sites(vec![(0, 0)]),
            0.01,
            &DriftField::constant_drift(Complex64::new(1.0, 0.0)),
        )
        .unwrap();
        assert_eq!(d.coefficients(0), &[2.0, -1.0, -1.0]);
        let lc = local_coefficients(&d, 0);
        let direct = ((1.0 - 3.0 * (1.02f64 * 0.99 * 0.99).cbrt() / 3.0) / 1e-4).sqrt();
        assert!((lc.mass - direct).abs() < 1e-9);
        assert!((lc.mass - 0.9965).abs() < 5e-4);
    }

    #[test]
    fn square_beta_example() {
        let d = LatticeDomain::from_coefficients(LatticeKind::SquareZ2, 0.01, &block_sites(2, 2), |_| [2.0, 0.0, -2.0, 0.0]).unwrap();
        let lc = local_coefficients(&d, 0);
        assert!((lc.beta2[0] - 4.0008).abs() < 1e-3);
        assert!((lc.beta2[0] - (-(1.02f64 * 0.98).ln() / 1e-4)).abs() < 1e-9);
        assert_eq!(lc.beta2[1], 0.0);
    }

    #[test]
    fn report_quantiles() {
        let r = VerificationReport::from_errors("x", vec![3.0, 1.0, 2.0]);
        assert_eq!(r.max_rel_err, 3.0);
        assert_eq!(r.n_samples, 3);
        assert_eq!(r.percentiles[0], (0.5, 2.0));
    }
}
