//! Lattice domains on the δ-scaled square and directed triangular lattices.
//!
//! A vertex is addressed by integer coordinates `(i, j)` in the basis
//! `{1, ω}` with `ω = i` (square) or `ω = τ = e^{2πi/3}` (triangular). Step
//! weights are stored as coefficients `c_k` with `a_k = 1 + c_k δ`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer lattice coordinates `(i, j)` of a site `δ(i + jω)`.
pub type Site = (i32, i32);

/// `τ = e^{2πi/3}`.
pub fn tau() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI / 3.0)
}

const TRI_STEPS: [Site; 3] = [(1, 0), (0, 1), (-1, -1)];
const SQ_STEPS: [Site; 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
const TRI_NEIGHBOURS: [Site; 6] = [(1, 0), (1, 1), (0, 1), (-1, 0), (-1, -1), (0, -1)];

/// The two lattices supported by the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatticeKind {
    SquareZ2,
    DirectedTriangular,
}

impl LatticeKind {
    /// Number of outgoing directions per vertex.
    pub fn degree(self) -> usize {
        match self {
            LatticeKind::SquareZ2 => 4,
            LatticeKind::DirectedTriangular => 3,
        }
    }

    /// Outgoing steps in lattice coordinates, indexed by direction `k`.
    pub fn steps(self) -> &'static [Site] {
        match self {
            LatticeKind::SquareZ2 => &SQ_STEPS,
            LatticeKind::DirectedTriangular => &TRI_STEPS,
        }
    }

    /// Undirected nearest neighbours used for connectivity.
    pub fn neighbours(self) -> &'static [Site] {
        match self {
            LatticeKind::SquareZ2 => &SQ_STEPS,
            LatticeKind::DirectedTriangular => &TRI_NEIGHBOURS,
        }
    }

    /// Second basis vector `ω`.
    pub fn omega(self) -> Complex64 {
        match self {
            LatticeKind::SquareZ2 => Complex64::i(),
            LatticeKind::DirectedTriangular => tau(),
        }
    }

    /// Planar position of a site at unit mesh.
    pub fn embed(self, s: Site) -> Complex64 {
        Complex64::new(s.0 as f64, 0.0) + self.omega() * s.1 as f64
    }

    /// Unit vector of direction `k`: `i^k` or `τ^k`.
    pub fn direction(self, k: usize) -> Complex64 {
        self.embed(self.steps()[k])
    }

    /// Site of the lattice point nearest to `z / delta` (exact for lattice points).
    pub fn nearest_site(self, z: Complex64, delta: f64) -> Site {
        let w = z / delta;
        match self {
            LatticeKind::SquareZ2 => (w.re.round() as i32, w.im.round() as i32),
            LatticeKind::DirectedTriangular => {
                let j = w.im / (3f64.sqrt() / 2.0);
                let i = w.re + j / 2.0;
                let (i0, j0) = (i.floor() as i32, j.floor() as i32);
                let mut best = (i0, j0);
                let mut bd = f64::INFINITY;
                for di in 0..=1 {
                    for dj in 0..=1 {
                        let s = (i0 + di, j0 + dj);
                        let d = (self.embed(s) - w).norm_sqr();
                        if d < bd {
                            bd = d;
                            best = s;
                        }
                    }
                }
                best
            }
        }
    }

    /// Rotate a site by `turns` elementary rotations (`τ` or `i`).
    pub fn rotate_site(self, s: Site, turns: i32) -> Site {
        let order = self.rotation_order();
        let t = turns.rem_euclid(order);
        let mut s = s;
        for _ in 0..t {
            s = match self {
                LatticeKind::SquareZ2 => (-s.1, s.0),
                LatticeKind::DirectedTriangular => (-s.1, s.0 - s.1),
            };
        }
        s
    }

    /// Order of the elementary rotation (3 or 4).
    pub fn rotation_order(self) -> i32 {
        match self {
            LatticeKind::SquareZ2 => 4,
            LatticeKind::DirectedTriangular => 3,
        }
    }

    /// Degree of an edge-node in the full Temperleyan superposition lattice.
    pub fn white_degree(self) -> i64 {
        match self {
            LatticeKind::SquareZ2 => 4,
            LatticeKind::DirectedTriangular => 3,
        }
    }

    /// Coefficients `c_k` realising the drift `Δ`.
    pub fn coefficients_for_drift(self, d: Complex64) -> [f64; 4] {
        match self {
            LatticeKind::SquareZ2 => [2.0 * d.re, 2.0 * d.im, -2.0 * d.re, -2.0 * d.im],
            LatticeKind::DirectedTriangular => {
                let r3y = 3f64.sqrt() * d.im;
                [2.0 * d.re, -d.re + r3y, -d.re - r3y, 0.0]
            }
        }
    }

    /// Drift `Δ = Σ c_k ω^k / deg` of a coefficient vector.
    pub fn drift_of(self, c: &[f64]) -> Complex64 {
        let deg = self.degree();
        let mut s = Complex64::new(0.0, 0.0);
        for (k, ck) in c.iter().take(deg).enumerate() {
            s += self.direction(k) * *ck;
        }
        s / deg as f64
    }
}

/// How the values of a [`DriftField`] are interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FieldMode {
    ConstantDrift,
    VariableDrift,
    ConstantMass(f64),
    VariableMass,
}

/// A bounded drift or mass field on the plane.
#[derive(Clone)]
pub struct DriftField {
    eval: Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync>,
    pub bound: f64,
    pub mode: FieldMode,
}

impl fmt::Debug for DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftField")
            .field("bound", &self.bound)
            .field("mode", &self.mode)
            .finish()
    }
}

impl DriftField {
    /// The zero drift.
    pub fn zero() -> Self {
        Self::constant_drift(Complex64::new(0.0, 0.0))
    }

    /// Constant drift `Δ`.
    pub fn constant_drift(d: Complex64) -> Self {
        Self {
            eval: Arc::new(move |_| d),
            bound: d.norm(),
            mode: FieldMode::ConstantDrift,
        }
    }

    /// Position-dependent drift with sup norm at most `bound`.
    pub fn variable_drift<F>(bound: f64, f: F) -> Self
    where
        F: Fn(Complex64) -> Complex64 + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(f),
            bound,
            mode: FieldMode::VariableDrift,
        }
    }

    /// Constant killing amplitude `m`.
    pub fn constant_mass(m: f64) -> Self {
        Self {
            eval: Arc::new(move |_| Complex64::new(m, 0.0)),
            bound: m.abs(),
            mode: FieldMode::ConstantMass(m),
        }
    }

    /// Position-dependent killing amplitude (real part of `f`).
    pub fn variable_mass<F>(bound: f64, f: F) -> Self
    where
        F: Fn(Complex64) -> f64 + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(move |z| Complex64::new(f(z), 0.0)),
            bound,
            mode: FieldMode::VariableMass,
        }
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        (self.eval)(z)
    }

    pub fn is_mass(&self) -> bool {
        matches!(self.mode, FieldMode::ConstantMass(_) | FieldMode::VariableMass)
    }
}

/// Planar region descriptors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// Open disc.
    Disc { center: Complex64, radius: f64 },
    /// Open axis-aligned rectangle with opposite corners `min`, `max`.
    Rectangle { min: Complex64, max: Complex64 },
    /// Explicit list of lattice sites.
    Sites(Vec<Site>),
}

impl Region {
    fn contains(&self, z: Complex64) -> bool {
        match self {
            Region::Disc { center, radius } => (z - center).norm() < *radius,
            Region::Rectangle { min, max } => {
                z.re > min.re && z.re < max.re && z.im > min.im && z.im < max.im
            }
            Region::Sites(_) => false,
        }
    }

    fn candidate_sites(&self, kind: LatticeKind, delta: f64) -> Vec<Site> {
        let (lo, hi) = match self {
            Region::Sites(s) => return s.clone(),
            Region::Disc { center, radius } => (
                center - Complex64::new(*radius, *radius),
                center + Complex64::new(*radius, *radius),
            ),
            Region::Rectangle { min, max } => (*min, *max),
        };
        let h = match kind {
            LatticeKind::SquareZ2 => 1.0,
            LatticeKind::DirectedTriangular => 3f64.sqrt() / 2.0,
        };
        let (jmin, jmax) = ((lo.im / (delta * h)).floor(), (hi.im / (delta * h)).ceil());
        let mut out = Vec::new();
        for j in (jmin as i32 - 1)..=(jmax as i32 + 1) {
            let shift = match kind {
                LatticeKind::SquareZ2 => 0.0,
                LatticeKind::DirectedTriangular => j as f64 / 2.0,
            };
            let imin = (lo.re / delta + shift).floor() as i32 - 1;
            let imax = (hi.re / delta + shift).ceil() as i32 + 1;
            for i in imin..=imax {
                let s = (i, j);
                if self.contains(kind.embed(s) * delta) {
                    out.push(s);
                }
            }
        }
        out
    }
}

/// Where a step from an interior vertex lands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Interior(usize),
    Boundary(usize),
}

/// A directed boundary edge from an interior vertex to an exterior site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub inner: usize,
    pub direction: usize,
    pub outer_site: Site,
}

/// Lattice symmetry elements: `Rotation(θ)` names `φ' = e^{iθ}` of the map
/// `φ` from the new domain onto the old one, so vertices move by `e^{-iθ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Symmetry {
    Identity,
    Rotation(f64),
    Translation(Site),
}

/// A finite weighted domain of the δ-scaled lattice.
#[derive(Clone, Debug)]
pub struct LatticeDomain {
    kind: LatticeKind,
    delta: f64,
    sites: Vec<Site>,
    lookup: HashMap<Site, usize>,
    coeffs: Vec<[f64; 4]>,
    kill: Vec<f64>,
    mass_mode: bool,
    targets: Vec<[Target; 4]>,
    boundary: Vec<BoundaryEdge>,
}

impl LatticeDomain {
    /// Largest connected vertex set of `region` with weights from `field`.
    pub fn build(kind: LatticeKind, region: &Region, delta: f64, field: &DriftField) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!("mesh must be positive, got {delta}")));
        }
        let cand = region.candidate_sites(kind, delta);
        let sites = largest_component(kind, &cand);
        if sites.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let mut coeffs = Vec::with_capacity(sites.len());
        let mut kill = Vec::with_capacity(sites.len());
        for &s in &sites {
            let z = kind.embed(s) * delta;
            let val = field.eval(z);
            if val.norm() > field.bound * (1.0 + 1e-12) + 1e-300 {
                return Err(Error::InvalidField(format!(
                    "|field({z})| = {} exceeds bound {}",
                    val.norm(),
                    field.bound
                )));
            }
            if field.is_mass() {
                if val.re < 0.0 || val.im != 0.0 {
                    return Err(Error::InvalidField(format!("mass must be real and nonnegative, got {val}")));
                }
                coeffs.push([0.0; 4]);
                kill.push(val.re * val.re * delta * delta);
            } else {
                coeffs.push(kind.coefficients_for_drift(val));
                kill.push(0.0);
            }
        }
        Self::assemble(kind, delta, sites, coeffs, kill, field.is_mass())
    }

    /// Domain on explicit sites with explicit coefficients `c_k` per site.
    pub fn from_coefficients<F>(kind: LatticeKind, delta: f64, sites: &[Site], coeff: F) -> Result<Self>
    where
        F: Fn(Site) -> [f64; 4],
    {
        let sites = largest_component(kind, sites);
        if sites.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let coeffs = sites.iter().map(|&s| coeff(s)).collect();
        let kill = vec![0.0; sites.len()];
        Self::assemble(kind, delta, sites, coeffs, kill, false)
    }

    fn assemble(
        kind: LatticeKind,
        delta: f64,
        sites: Vec<Site>,
        coeffs: Vec<[f64; 4]>,
        kill: Vec<f64>,
        mass_mode: bool,
    ) -> Result<Self> {
        let lookup: HashMap<Site, usize> = sites.iter().enumerate().map(|(v, &s)| (s, v)).collect();
        if lookup.len() != sites.len() {
            return Err(Error::InvalidArgument("duplicate sites".into()));
        }
        check_simply_connected(kind, &sites, &lookup)?;
        let deg = kind.degree();
        for (v, c) in coeffs.iter().enumerate() {
            for (k, &ck) in c.iter().take(deg).enumerate() {
                let w = 1.0 + ck * delta;
                if !(w > 0.0) {
                    return Err(Error::WeightUnderflow { vertex: v, direction: k, weight: w });
                }
            }
            if !(kill[v] < 1.0) {
                return Err(Error::WeightUnderflow { vertex: v, direction: 0, weight: 1.0 - kill[v] });
            }
        }
        let mut targets = Vec::with_capacity(sites.len());
        let mut boundary = Vec::new();
        for (v, &s) in sites.iter().enumerate() {
            let mut t = [Target::Boundary(usize::MAX); 4];
            for (k, st) in kind.steps().iter().enumerate() {
                let n = (s.0 + st.0, s.1 + st.1);
                t[k] = match lookup.get(&n) {
                    Some(&w) => Target::Interior(w),
                    None => {
                        boundary.push(BoundaryEdge { inner: v, direction: k, outer_site: n });
                        Target::Boundary(boundary.len() - 1)
                    }
                };
            }
            targets.push(t);
        }
        Ok(Self { kind, delta, sites, lookup, coeffs, kill, mass_mode, targets, boundary })
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn degree(&self) -> usize {
        self.kind.degree()
    }

    /// Number of interior vertices.
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Synthetic id of the outer (root) vertex.
    pub fn outer_vertex(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, v: usize) -> Site {
        self.sites[v]
    }

    pub fn vertex_at(&self, s: Site) -> Option<usize> {
        self.lookup.get(&s).copied()
    }

    /// Interior vertex nearest to the planar point `z`, if `z` rounds to one.
    pub fn vertex_near(&self, z: Complex64) -> Option<usize> {
        self.vertex_at(self.kind.nearest_site(z, self.delta))
    }

    pub fn position(&self, v: usize) -> Complex64 {
        self.site_position(self.sites[v])
    }

    pub fn site_position(&self, s: Site) -> Complex64 {
        self.kind.embed(s) * self.delta
    }

    pub fn is_mass_mode(&self) -> bool {
        self.mass_mode
    }

    /// Coefficients `c_k(v)` over the `deg` outgoing directions.
    pub fn coefficients(&self, v: usize) -> &[f64] {
        &self.coeffs[v][..self.degree()]
    }

    /// Step weight `a_k(v) = 1 + c_k(v) δ`.
    pub fn weight(&self, v: usize, k: usize) -> f64 {
        1.0 + self.coeffs[v][k] * self.delta
    }

    /// `log a_k(v)`, evaluated as `log1p(c_k δ)`.
    pub fn log_weight(&self, v: usize, k: usize) -> f64 {
        (self.coeffs[v][k] * self.delta).ln_1p()
    }

    /// `a(v) = Σ_k a_k(v)`.
    pub fn total_weight(&self, v: usize) -> f64 {
        (0..self.degree()).map(|k| self.weight(v, k)).sum()
    }

    /// Drifted-law jump probability `a_k(v) / a(v)`.
    pub fn jump_probability(&self, v: usize, k: usize) -> f64 {
        self.weight(v, k) / self.total_weight(v)
    }

    /// Drift `Δ(v)` recovered from the coefficients.
    pub fn drift(&self, v: usize) -> Complex64 {
        self.kind.drift_of(self.coefficients(v))
    }

    /// Ghost probability `m(v)² δ²` of the massive law at `v`.
    ///
    /// In mass mode this is the prescribed killing; in drift mode it is the
    /// mass attached to the weights by the geometric/arithmetic mean ratio.
    pub fn killing(&self, v: usize) -> f64 {
        if self.mass_mode {
            return self.kill[v];
        }
        let deg = self.degree() as f64;
        let c = self.coefficients(v);
        let mean_log: f64 = c.iter().map(|&ck| (ck * self.delta).ln_1p()).sum::<f64>() / deg;
        let mean_c: f64 = c.iter().sum::<f64>() / deg;
        let l = mean_log - (mean_c * self.delta).ln_1p();
        -l.exp_m1()
    }

    /// Squared mass `m(v)²` of the massive law.
    pub fn mass_squared(&self, v: usize) -> f64 {
        self.killing(v) / (self.delta * self.delta)
    }

    pub fn target(&self, v: usize, k: usize) -> Target {
        self.targets[v][k]
    }

    pub fn targets(&self, v: usize) -> &[Target] {
        &self.targets[v][..self.degree()]
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    /// Position of the exterior endpoint of a boundary edge.
    pub fn boundary_outer_position(&self, e: usize) -> Complex64 {
        self.site_position(self.boundary[e].outer_site)
    }

    /// Midpoint of a boundary edge, the nominal exit location.
    pub fn boundary_midpoint(&self, e: usize) -> Complex64 {
        let b = &self.boundary[e];
        (self.position(b.inner) + self.boundary_outer_position(e)) * 0.5
    }

    /// Boundary edge leaving `v` in direction `k`, if any.
    pub fn boundary_edge_of(&self, v: usize, k: usize) -> Option<usize> {
        match self.targets[v][k] {
            Target::Boundary(e) => Some(e),
            Target::Interior(_) => None,
        }
    }

    /// Image of the domain under a lattice symmetry.
    ///
    /// For `Rotation(θ)` the new domain is `e^{-iθ}Ω` and the coefficients are
    /// permuted so that `Δ̃(w) = e^{-iθ} Δ(e^{iθ} w)`.
    pub fn apply_symmetry(&self, g: Symmetry) -> Result<Self> {
        let (turns, shift) = match g {
            Symmetry::Identity => (0, (0, 0)),
            Symmetry::Translation(t) => (0, t),
            Symmetry::Rotation(theta) => (self.rotation_turns(theta)?, (0, 0)),
        };
        let deg = self.degree();
        let order = self.kind.rotation_order();
        let mut sites = Vec::with_capacity(self.len());
        let mut coeffs = Vec::with_capacity(self.len());
        for (v, &s) in self.sites.iter().enumerate() {
            let r = self.kind.rotate_site(s, -turns);
            sites.push((r.0 + shift.0, r.1 + shift.1));
            let mut c = [0.0; 4];
            for (k, &ck) in self.coefficients(v).iter().enumerate() {
                let j = (k as i32 - turns).rem_euclid(order) as usize;
                debug_assert!(j < deg);
                c[j] = ck;
            }
            coeffs.push(c);
        }
        let mut idx: Vec<usize> = (0..sites.len()).collect();
        idx.sort_by_key(|&v| (sites[v].1, sites[v].0));
        let sites2 = idx.iter().map(|&v| sites[v]).collect();
        let coeffs2 = idx.iter().map(|&v| coeffs[v]).collect();
        let kill2 = idx.iter().map(|&v| self.kill[v]).collect();
        Self::assemble(self.kind, self.delta, sites2, coeffs2, kill2, self.mass_mode)
    }

    /// Number of elementary rotations represented by the angle `theta`.
    pub fn rotation_turns(&self, theta: f64) -> Result<i32> {
        let unit = 2.0 * PI / self.kind.rotation_order() as f64;
        let t = theta / unit;
        let r = t.round();
        if (t - r).abs() > 1e-9 {
            return Err(Error::UnsupportedSymmetry(format!(
                "rotation by {theta} is not a symmetry of {:?}",
                self.kind
            )));
        }
        Ok(r as i32)
    }

    /// Serializable description of the domain.
    pub fn to_document(&self) -> DomainDocument {
        DomainDocument {
            kind: self.kind,
            delta: self.delta,
            vertices: (0..self.len())
                .map(|v| {
                    let p = self.position(v);
                    VertexRecord {
                        id: v,
                        x: p.re,
                        y: p.im,
                        c: self.coefficients(v).to_vec(),
                        kill: self.kill[v],
                    }
                })
                .collect(),
            boundary_edges: (0..self.boundary.len())
                .map(|e| {
                    let p = self.boundary_outer_position(e);
                    (self.boundary[e].inner, p.re, p.im)
                })
                .collect(),
            removed_node: None,
        }
    }

    /// Static SVG drawing of vertices, interior edges and boundary edges.
    pub fn to_svg(&self) -> String {
        let pts: Vec<Complex64> = (0..self.len()).map(|v| self.position(v)).collect();
        let mut svg = SvgCanvas::fit(pts.iter().copied(), self.delta);
        for v in 0..self.len() {
            for k in 0..self.degree() {
                let (a, b) = (self.position(v), self.kind.direction(k) * self.delta + self.position(v));
                let colour = match self.targets[v][k] {
                    Target::Interior(_) => "#999",
                    Target::Boundary(_) => "#c33",
                };
                svg.line(a, b, colour, 0.15);
            }
        }
        for &p in &pts {
            svg.dot(p, 0.18, "#000");
        }
        svg.finish()
    }
}

/// JSON form of a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDocument {
    pub kind: LatticeKind,
    pub delta: f64,
    pub vertices: Vec<VertexRecord>,
    pub boundary_edges: Vec<(usize, f64, f64)>,
    pub removed_node: Option<usize>,
}

/// One vertex of a [`DomainDocument`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub c: Vec<f64>,
    pub kill: f64,
}

/// Minimal SVG writer in a flipped, padded coordinate frame.
pub struct SvgCanvas {
    min: Complex64,
    scale: f64,
    width: f64,
    height: f64,
    body: String,
}

impl SvgCanvas {
    /// Canvas fitted to the given points with padding of two mesh units.
    pub fn fit<I: IntoIterator<Item = Complex64>>(pts: I, delta: f64) -> Self {
        let (mut lo, mut hi) = (Complex64::new(f64::INFINITY, f64::INFINITY), Complex64::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in pts {
            lo = Complex64::new(lo.re.min(p.re), lo.im.min(p.im));
            hi = Complex64::new(hi.re.max(p.re), hi.im.max(p.im));
        }
        if !lo.re.is_finite() {
            lo = Complex64::new(0.0, 0.0);
            hi = lo;
        }
        let pad = 2.0 * delta;
        lo -= Complex64::new(pad, pad);
        hi += Complex64::new(pad, pad);
        let scale = 20.0 / delta;
        Self {
            min: lo,
            scale,
            width: (hi.re - lo.re) * scale,
            height: (hi.im - lo.im) * scale,
            body: String::new(),
        }
    }

    fn map(&self, z: Complex64) -> (f64, f64) {
        ((z.re - self.min.re) * self.scale, self.height - (z.im - self.min.im) * self.scale)
    }

    /// Line segment; `width` in mesh units.
    pub fn line(&mut self, a: Complex64, b: Complex64, colour: &str, width: f64) {
        let (x1, y1) = self.map(a);
        let (x2, y2) = self.map(b);
        self.body.push_str(&format!(
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{colour}\" stroke-width=\"{:.2}\"/>\n",
            width * 20.0
        ));
    }

    /// Filled disc; `radius` in mesh units.
    pub fn dot(&mut self, p: Complex64, radius: f64, colour: &str) {
        let (x, y) = self.map(p);
        self.body.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{:.2}\" fill=\"{colour}\"/>\n",
            radius * 20.0
        ));
    }

    /// Filled polygon.
    pub fn polygon(&mut self, pts: &[Complex64], fill: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = self.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        self.body.push_str(&format!("<polygon points=\"{}\" fill=\"{fill}\"/>\n", coords.join(" ")));
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.2} {:.2}\">\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

fn largest_component(kind: LatticeKind, cand: &[Site]) -> Vec<Site> {
    let set: HashSet<Site> = cand.iter().copied().collect();
    let mut sorted: Vec<Site> = set.iter().copied().collect();
    sorted.sort_by_key(|s| (s.1, s.0));
    let mut seen: HashSet<Site> = HashSet::new();
    let mut best: Vec<Site> = Vec::new();
    for &s in &sorted {
        if seen.contains(&s) {
            continue;
        }
        let mut comp = vec![s];
        seen.insert(s);
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for d in kind.neighbours() {
                let n = (u.0 + d.0, u.1 + d.1);
                if set.contains(&n) && seen.insert(n) {
                    comp.push(n);
                    q.push_back(n);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_by_key(|s| (s.1, s.0));
    best
}

fn check_simply_connected(kind: LatticeKind, sites: &[Site], lookup: &HashMap<Site, usize>) -> Result<()> {
    let (mut imin, mut imax, mut jmin, mut jmax) = (i32::MAX, i32::MIN, i32::MAX, i32::MIN);
    for &(i, j) in sites {
        imin = imin.min(i);
        imax = imax.max(i);
        jmin = jmin.min(j);
        jmax = jmax.max(j);
    }
    let (imin, imax, jmin, jmax) = (imin - 2, imax + 2, jmin - 2, jmax + 2);
    let inside_box = |s: Site| s.0 >= imin && s.0 <= imax && s.1 >= jmin && s.1 <= jmax;
    let total = ((imax - imin + 1) as usize) * ((jmax - jmin + 1) as usize) - sites.len();
    let start = (imin, jmin);
    let mut seen: HashSet<Site> = HashSet::from([start]);
    let mut q = VecDeque::from([start]);
    while let Some(u) = q.pop_front() {
        for d in kind.neighbours() {
            let n = (u.0 + d.0, u.1 + d.1);
            if inside_box(n) && !lookup.contains_key(&n) && seen.insert(n) {
                q.push_back(n);
            }
        }
    }
    if seen.len() == total {
        Ok(())
    } else {
        Err(Error::NotSimplyConnected)
    }
}

/// Convenience constructor for a disc domain centred at the origin.
pub fn disc(kind: LatticeKind, radius: f64, delta: f64, field: &DriftField) -> Result<LatticeDomain> {
    LatticeDomain::build(
        kind,
        &Region::Disc { center: Complex64::new(0.0, 0.0), radius },
        delta,
        field,
    )
}

/// Hexagonal patch of triangular sites within graph distance `r` of the origin.
pub fn hexagon_sites(r: i32) -> Vec<Site> {
    let mut out = Vec::new();
    for i in -r..=r {
        for j in -r..=r {
            if (i - j).abs() <= r {
                out.push((i, j));
            }
        }
    }
    out
}

/// Rectangle of `w × h` square-lattice (or sheared triangular) sites.
pub fn block_sites(w: i32, h: i32) -> Vec<Site> {
    let mut out = Vec::new();
    for j in 0..h {
        for i in 0..w {
            out.push((i, j));
        }
    }
    out
}

/// Names of the bundled domains, in increasing size.
pub const PRESET_NAMES: &[&str] = &[
    "tri-hex2",
    "tri-block10x5",
    "tri-hex4",
    "tri-hex5",
    "tri-mass-hex6",
    "sq-block12",
    "tri-disc-half",
    "sq-disc-half",
];

/// Bundled domain by name.
pub fn preset(name: &str) -> Result<LatticeDomain> {
    use LatticeKind::{DirectedTriangular as Tri, SquareZ2 as Sq};
    let c = Complex64::new;
    let sites = |kind, s: Vec<Site>, delta, field: DriftField| LatticeDomain::build(kind, &Region::Sites(s), delta, &field);
    match name {
        "tri-hex2" => sites(Tri, hexagon_sites(2), 0.1, DriftField::constant_drift(c(1.0, 0.5))),
        "tri-block10x5" => sites(Tri, block_sites(10, 5), 0.1, DriftField::constant_drift(c(1.5, -0.5))),
        "tri-hex4" => sites(Tri, hexagon_sites(4), 0.05, DriftField::constant_drift(c(1.2, 0.9))),
        "tri-hex5" => sites(Tri, hexagon_sites(5), 0.05, DriftField::constant_drift(c(-2.0, 0.3))),
        "tri-mass-hex6" => sites(Tri, hexagon_sites(6), 0.05, DriftField::constant_mass(1.5)),
        "sq-block12" => sites(Sq, block_sites(12, 12), 0.05, DriftField::constant_drift(c(-0.6, 1.1))),
        "tri-disc-half" => disc(Tri, 0.5, 0.05, &DriftField::constant_drift(c(0.8, -0.6))),
        "sq-disc-half" => disc(Sq, 0.5, 0.05, &DriftField::constant_mass(1.0)),
        _ => Err(Error::InvalidArgument(format!("unknown preset {name:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn presets_build_within_size_limits() {
        for name in PRESET_NAMES {
            let d = preset(name).unwrap();
            assert!(d.len() <= 500, "{name}: {}", d.len());
        }
        assert_eq!(preset("tri-block10x5").unwrap().len(), 50);
        assert!(preset("nope").is_err());
    }

    #[test]
    fn zero_drift_triangular_disc_is_uniform() {
        let d = disc(LatticeKind::DirectedTriangular, 1.0, 0.05, &DriftField::zero()).unwrap();
        for v in 0..d.len() {
            for k in 0..3 {
                assert_eq!(d.weight(v, k), 1.0);
                assert_eq!(d.jump_probability(v, k), 1.0 / 3.0);
            }
        }
    }

    #[test]
    fn square_weights_for_unit_drift() {
        let region = Region::Rectangle { min: c(0.0, 0.0), max: c(1.0, 1.0) };
        let d = LatticeDomain::build(LatticeKind::SquareZ2, &region, 0.01, &DriftField::constant_drift(c(1.0, 0.0))).unwrap();
        for v in 0..d.len() {
            let w: Vec<f64> = (0..4).map(|k| d.weight(v, k)).collect();
            assert!((w[0] - 1.02).abs() < 1e-15 && w[1] == 1.0 && (w[2] - 0.98).abs() < 1e-15 && w[3] == 1.0);
            let cf = d.coefficients(v);
            assert_eq!(cf[0] + cf[2], 0.0);
        }
    }

    #[test]
    fn large_drift_underflows() {
        let r = disc(LatticeKind::DirectedTriangular, 1.0, 0.01, &DriftField::constant_drift(c(150.0, 0.0)));
        assert!(matches!(r, Err(Error::WeightUnderflow { .. })));
    }

    #[test]
    fn empty_region_errors() {
        let region = Region::Disc { center: c(0.05, 0.05), radius: 0.001 };
        let r = LatticeDomain::build(LatticeKind::SquareZ2, &region, 0.1, &DriftField::zero());
        assert_eq!(r.unwrap_err(), Error::EmptyDomain);
    }

    #[test]
    fn holes_are_rejected() {
        let mut s = hexagon_sites(2);
        s.retain(|&x| x != (0, 0));
        let r = LatticeDomain::build(LatticeKind::DirectedTriangular, &Region::Sites(s), 0.1, &DriftField::zero());
        assert_eq!(r.unwrap_err(), Error::NotSimplyConnected);
    }

    #[test]
    fn rotation_by_third_turn_conjugates_drift() {
        let d = LatticeDomain::build(
            LatticeKind::DirectedTriangular,
            &Region::Sites(hexagon_sites(2)),
            0.1,
            &DriftField::constant_drift(c(1.0, 0.0)),
        )
        .unwrap();
        let r = d.apply_symmetry(Symmetry::Rotation(2.0 * PI / 3.0)).unwrap();
        let t2 = tau() * tau();
        for v in 0..r.len() {
            assert!((r.drift(v) - t2).norm() < 1e-14);
        }
        let same = d.apply_symmetry(Symmetry::Identity).unwrap();
        assert_eq!(same.sites(), d.sites());
        assert!(matches!(d.apply_symmetry(Symmetry::Rotation(PI / 3.0)), Err(Error::UnsupportedSymmetry(_))));
    }

    #[test]
    fn rotated_sites_are_rotated_positions() {
        let k = LatticeKind::DirectedTriangular;
        let s = (3, -1);
        let r = k.rotate_site(s, 1);
        assert!((k.embed(r) - k.embed(s) * tau()).norm() < 1e-12);
        let k = LatticeKind::SquareZ2;
        assert!((k.embed(k.rotate_site(s, 1)) - k.embed(s) * Complex64::i()).norm() < 1e-12);
    }

    #[test]
    fn nearest_site_inverts_embedding() {
        for kind in [LatticeKind::SquareZ2, LatticeKind::DirectedTriangular] {
            for i in -5..5 {
                for j in -5..5 {
                    assert_eq!(kind.nearest_site(kind.embed((i, j)) * 0.03, 0.03), (i, j));
                }
            }
        }
    }

    #[test]
    fn mass_mode_killing() {
        let d = disc(LatticeKind::DirectedTriangular, 0.5, 0.1, &DriftField::constant_mass(1.0)).unwrap();
        assert!(d.is_mass_mode());
        for v in 0..d.len() {
            assert!((d.killing(v) - 0.01).abs() < 1e-15);
        }
    }
}
