//! Radial Loewner driving functions of discrete curves by a zipper of
//! elementary radial slit maps, and ensemble diffusivity/drift estimates.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeDomain, Region};
use crate::walk::LoopErasedPath;

/// Discrete driving function on a capacity grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivingFunction {
    pub times: Vec<f64>,
    pub xi: Vec<f64>,
    pub curve_ref: String,
}

impl DrivingFunction {
    /// Linear interpolation of `ξ` at `t`, or `None` outside the grid.
    pub fn at(&self, t: f64) -> Option<f64> {
        let n = self.times.len();
        if n == 0 || t < self.times[0] || t > self.times[n - 1] {
            return None;
        }
        let i = self.times.partition_point(|&s| s <= t);
        if i == n {
            return Some(self.xi[n - 1]);
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        Some(self.xi[i - 1] * (1.0 - w) + self.xi[i] * w)
    }

    /// Final capacity.
    pub fn total_capacity(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// CSV text with header `t,xi`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,xi\n");
        for (t, x) in self.times.iter().zip(&self.xi) {
            s.push_str(&format!("{t},{x}\n"));
        }
        s
    }
}

fn h(z: Complex64) -> Complex64 {
    z / ((Complex64::new(1.0, 0.0) + z) * (Complex64::new(1.0, 0.0) + z))
}

fn h_inv(w: Complex64) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    2.0 * w / ((one - 2.0 * w) + (one - 4.0 * w).sqrt())
}

/// Conformal map of `D ∖ [r, 1]` onto `D` fixing 0 with positive derivative;
/// sends the tip `r` to 1.
pub fn slit_map(r: f64, z: Complex64) -> Complex64 {
    let c = r / ((1.0 + r) * (1.0 + r));
    h_inv(h(z) / (4.0 * c))
}

/// Capacity `log((1+r)²/(4r))` of the radial slit `[r, 1]`.
pub fn slit_capacity(r: f64) -> f64 {
    // log((1+r)²/(4r)) = 2 log((1+r)/(2√r)), evaluated stably near r = 1
    let s = r.sqrt();
    let u = (1.0 - s) * (1.0 - s) / (2.0 * s);
    2.0 * (u).ln_1p()
}

/// Composition of elementary slit maps, normalized by `g(0) = 0`, `g'(0) > 0`.
#[derive(Clone, Debug, Default)]
pub struct Zipper {
    maps: Vec<(Complex64, f64)>,
    capacity: f64,
}

impl Zipper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Image of `z` under the current map.
    pub fn apply(&self, mut z: Complex64) -> Complex64 {
        for &(rot, r) in &self.maps {
            z = rot * slit_map(r, rot.conj() * z);
        }
        z
    }

    /// Absorb a radial slit from `e^{iθ}` down to radius `r`.
    pub fn push(&mut self, theta: f64, r: f64) {
        self.maps.push((Complex64::from_polar(1.0, theta), r));
        self.capacity += slit_capacity(r);
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Options for [`extract_driving_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZipperOptions {
    /// Stop once the capacity exceeds this value.
    pub t_max: f64,
    /// Subdivide each curve segment into this many pieces.
    pub subdivide: usize,
}

impl Default for ZipperOptions {
    fn default() -> Self {
        Self { t_max: f64::INFINITY, subdivide: 1 }
    }
}

/// Driving function of a curve in the unit disc started on the unit circle,
/// growing toward the interior target `z`.
pub fn extract_driving(curve: &[Complex64], z: Complex64) -> Result<DrivingFunction> {
    extract_driving_with(curve, z, ZipperOptions::default())
}

fn to_target_frame(p: Complex64, z: Complex64) -> Complex64 {
    // disc automorphism sending z to 0 and fixing the direction of 1
    (p - z) / (Complex64::new(1.0, 0.0) - z.conj() * p)
}

/// As [`extract_driving`] with explicit options.
pub fn extract_driving_with(curve: &[Complex64], z: Complex64, opts: ZipperOptions) -> Result<DrivingFunction> {
    let first = *curve.first().ok_or(Error::InvalidArgument("empty curve".into()))?;
    if (first.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("curve must start on the unit circle".into()));
    }
    if z.norm() >= 1.0 {
        return Err(Error::InvalidArgument("target must lie inside the disc".into()));
    }
    let mut pts = Vec::with_capacity(curve.len() * opts.subdivide.max(1));
    pts.push(first);
    for w in curve.windows(2) {
        let m = opts.subdivide.max(1);
        for j in 1..=m {
            pts.push(w[0] + (w[1] - w[0]) * (j as f64 / m as f64));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for p in curve {
        if !seen.insert((p.re.to_bits(), p.im.to_bits())) {
            return Err(Error::NonSimpleCurve);
        }
        if (p - z).norm() < 1e-12 {
            return Err(Error::CurveHitsTarget);
        }
    }
    let start = to_target_frame(first, z);
    let mut theta = start.arg();
    let mut times = vec![0.0];
    let mut xi = vec![theta];
    let mut zip = Zipper::new();
    for &p in &pts[1..] {
        if zip.capacity() > opts.t_max {
            break;
        }
        let q = to_target_frame(p, z);
        if q.norm() >= 1.0 {
            return Err(Error::InvalidArgument("curve leaves the disc".into()));
        }
        let w = zip.apply(q);
        let rel = w * Complex64::from_polar(1.0, -theta);
        let r = w.norm();
        if !(r < 1.0) || !r.is_finite() {
            return Err(Error::NonSimpleCurve);
        }
        if r == 0.0 {
            return Err(Error::CurveHitsTarget);
        }
        theta += rel.arg();
        zip.push(theta, r);
        times.push(zip.capacity());
        xi.push(theta);
    }
    Ok(DrivingFunction { times, xi, curve_ref: String::new() })
}

/// Affine normalization of a disc domain to the unit disc, with the first
/// curve point projected radially onto the unit circle.
pub fn map_to_disc(region: &Region, mesh: f64, extent: f64, curve: &[Complex64]) -> Result<(Vec<Complex64>, Complex64)> {
    match region {
        Region::Disc { center, .. } => {
            let r = extent + mesh / 2.0;
            let mut out: Vec<Complex64> = curve.iter().map(|p| (p - center) / r).collect();
            if let Some(f) = out.first_mut() {
                if f.norm() == 0.0 {
                    return Err(Error::CurveHitsTarget);
                }
                *f /= f.norm();
            }
            Ok((out, Complex64::new(0.0, 0.0)))
        }
        _ => Err(Error::MapUnavailable("only disc domains have an analytic map".into())),
    }
}

/// Driving function of a loop-erased path on a disc domain, read from its
/// exit edge toward its first vertex, with the disc centre as target.
///
/// The first vertex is dropped when it sits at the target, which is the usual
/// case for a walk started at the centre.
pub fn lerw_driving(dom: &LatticeDomain, region: &Region, curve: &LoopErasedPath, opts: ZipperOptions) -> Result<DrivingFunction> {
    let Region::Disc { center, .. } = region else {
        return Err(Error::MapUnavailable("only disc domains have an analytic map".into()));
    };
    let extent = (0..dom.len()).map(|v| (dom.position(v) - center).norm()).fold(0.0, f64::max);
    let mut pts = curve.positions(dom);
    pts.reverse();
    if pts.last().is_some_and(|p| (p - center).norm() < 1e-9 * dom.delta()) {
        pts.pop();
    }
    let (disc_pts, z) = map_to_disc(region, dom.delta(), extent, &pts)?;
    extract_driving_with(&disc_pts, z, opts)
}

/// Ensemble estimates of the driving process on a time window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusivityReport {
    pub kappa_hat: f64,
    /// 95% confidence half-width of `kappa_hat`.
    pub kappa_ci: f64,
    /// `(t, mean drift rate, 95% half-width)` per grid interval.
    pub drift_hat: Vec<(f64, f64, f64)>,
    /// Mean of `(ξ(t1) − ξ(t0)) / (t1 − t0)` over curves.
    pub drift_mean: f64,
    /// 95% confidence half-width of `drift_mean`.
    pub drift_ci: f64,
    pub n_curves: usize,
    pub window: (f64, f64),
    pub dt: f64,
}

impl DiffusivityReport {
    /// Whether the window drift differs from zero at the 95% level.
    pub fn drift_significant(&self) -> bool {
        self.drift_mean.abs() > self.drift_ci
    }
}

fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, f64::INFINITY);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::INFINITY);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, 1.96 * (v / n).sqrt())
}

/// Grid step for [`diffusivity_estimate`] at which a diffusivity-`kappa`
/// driver moves by `cells` image-plane mesh units per step at capacity `t1`.
///
/// The slit domain at capacity `t` has conformal radius `e^{-t}`, so one
/// lattice spacing `mesh` (relative to the disc radius) maps to about
/// `mesh·e^t` on the circle; finer grids see the lattice-scale smoothness of
/// the curve rather than its diffusive increments.
pub fn lattice_resolved_dt(mesh: f64, t1: f64, kappa: f64, cells: f64) -> f64 {
    (cells * mesh * t1.exp()).powi(2) / kappa
}

/// Quadratic variation per unit capacity and mean drift of `ξ` on the grid
/// `t0, t0 + dt, …, t1`; drivers not reaching `t1` are skipped.
pub fn diffusivity_estimate(drivers: &[DrivingFunction], t0: f64, t1: f64, dt: f64) -> Result<DiffusivityReport> {
    if !(t1 > t0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument("window must be nonempty with positive step".into()));
    }
    let steps = ((t1 - t0) / dt).round().max(1.0) as usize;
    let grid: Vec<f64> = (0..=steps).map(|j| t0 + (t1 - t0) * j as f64 / steps as f64).collect();
    let mut per_curve_qv = Vec::new();
    let mut per_curve_drift = Vec::new();
    let mut per_step: Vec<Vec<f64>> = vec![Vec::new(); steps];
    for d in drivers {
        let vals: Option<Vec<f64>> = grid.iter().map(|&t| d.at(t)).collect();
        let Some(vals) = vals else { continue };
        let qv: f64 = vals.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        per_curve_qv.push(qv / (t1 - t0));
        per_curve_drift.push((vals[steps] - vals[0]) / (t1 - t0));
        for (j, w) in vals.windows(2).enumerate() {
            per_step[j].push((w[1] - w[0]) / (grid[j + 1] - grid[j]));
        }
    }
    let (kappa_hat, kappa_ci) = mean_ci(&per_curve_qv);
    let (drift_mean, drift_ci) = mean_ci(&per_curve_drift);
    let drift_hat = per_step
        .iter()
        .enumerate()
        .map(|(j, xs)| {
            let (m, c) = mean_ci(xs);
            ((grid[j] + grid[j + 1]) / 2.0, m, c)
        })
        .collect();
    Ok(DiffusivityReport {
        kappa_hat,
        kappa_ci,
        drift_hat,
        drift_mean,
        drift_ci,
        n_curves: per_curve_qv.len(),
        window: (t0, t1),
        dt: (t1 - t0) / steps as f64,
    })
}
