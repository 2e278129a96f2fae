//! Experiment configuration: TOML schema, validation and resolution.

use dimerlab::lattice::{preset, DriftField, LatticeDomain, LatticeKind, Region};
use dimerlab::observables::McPlan;
use dimerlab::walk::{Law, RngSeed, TreeLaw};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Top-level experiment document.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub law: LawSpec,
    #[serde(default)]
    pub plan: PlanSpec,
    /// Command-specific parameters, validated against the command's schema.
    #[serde(default)]
    pub params: toml::Table,
    /// Output directory; the `--out` flag takes precedence.
    #[serde(default)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    VerifyIdentities,
    SampleTree,
    SampleLerw,
    Green,
    ExitLaw,
    Winding,
    Crossing,
    Loewner,
    Height,
    Covariance,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyIdentities => "verify-identities",
            Command::SampleTree => "sample-tree",
            Command::SampleLerw => "sample-lerw",
            Command::Green => "green",
            Command::ExitLaw => "exit-law",
            Command::Winding => "winding",
            Command::Crossing => "crossing",
            Command::Loewner => "loewner",
            Command::Height => "height",
            Command::Covariance => "covariance",
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeName {
    Triangular,
    Square,
}

impl LatticeName {
    pub fn kind(self) -> LatticeKind {
        match self {
            LatticeName::Triangular => LatticeKind::DirectedTriangular,
            LatticeName::Square => LatticeKind::SquareZ2,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Disc,
    Rectangle,
    Hexagon,
    Block,
    Preset,
}

/// Domain description. Which fields apply depends on `shape`.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lattice: Option<LatticeName>,
    pub shape: Option<Shape>,
    pub mesh: Option<f64>,
    pub radius: Option<f64>,
    pub center: Option<[f64; 2]>,
    pub min: Option<[f64; 2]>,
    pub max: Option<[f64; 2]>,
    pub size: Option<i32>,
    pub width: Option<i32>,
    pub height: Option<i32>,
    pub name: Option<String>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum WalkLaw {
    Drifted,
    Massive,
    Simple,
}

impl WalkLaw {
    pub fn law(self) -> Law {
        match self {
            WalkLaw::Drifted => Law::Drifted,
            WalkLaw::Massive => Law::Massive,
            WalkLaw::Simple => Law::Simple,
        }
    }
}

/// Field and walk law. At most one of `drift`, `drift_preset`, `polynomial`
/// and `mass` may be set; none means the critical field.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub walk: Option<WalkLaw>,
    pub drift: Option<[f64; 2]>,
    pub drift_preset: Option<DriftPreset>,
    /// Coefficients `a_k` of `Δ(z) = Σ a_k z^k`.
    pub polynomial: Option<Vec<[f64; 2]>>,
    pub mass: Option<f64>,
}

/// Named position-dependent drift fields.
#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DriftPreset {
    /// `Δ(z) = i z`.
    Swirl,
    /// `Δ(z) = z`.
    Source,
    /// `Δ(z) = cos(π y)`.
    Wave,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    #[serde(default = "one")]
    pub replicas: usize,
}

impl Default for PlanSpec {
    fn default() -> Self {
        Self { replicas: 1 }
    }
}

fn one() -> usize {
    1
}

/// Fully resolved configuration echoed into every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved<P> {
    pub command: &'static str,
    pub seed: u64,
    pub domain: Option<DomainSpec>,
    pub law: LawSpec,
    pub replicas: usize,
    pub params: P,
}

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::ConfigInvalid(msg.into())
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| invalid(e.message().to_string()))
}

impl ExperimentConfig {
    /// Typed command parameters; unknown keys are rejected.
    pub fn params<P: DeserializeOwned>(&self) -> Result<P, CliError> {
        toml::Value::Table(self.params.clone()).try_into().map_err(|e: toml::de::Error| invalid(format!("params: {}", e.message())))
    }

    pub fn mc_plan(&self) -> Result<McPlan, CliError> {
        McPlan::new(self.plan.replicas, RngSeed::new(self.seed)).map_err(|_| invalid("plan.replicas must be at least 1"))
    }

    pub fn resolved<P: Serialize>(&self, params: P) -> Resolved<P> {
        Resolved {
            command: self.command.name(),
            seed: self.seed,
            domain: self.domain.clone(),
            law: self.law.clone(),
            replicas: self.plan.replicas,
            params,
        }
    }

    /// Walk law: explicit, else massive for mass fields, else drifted.
    pub fn walk_law(&self) -> Law {
        match self.law.walk {
            Some(w) => w.law(),
            None if self.law.mass.is_some() => Law::Massive,
            None => Law::Drifted,
        }
    }

    pub fn tree_law(&self) -> Result<TreeLaw, CliError> {
        match self.walk_law() {
            Law::Drifted => Ok(TreeLaw::Drifted),
            Law::Massive => Ok(TreeLaw::MassiveConditionedAlive),
            Law::Simple => Err(invalid("trees are sampled under the drifted or massive law")),
        }
    }

    /// Build the configured domain.
    pub fn build_domain(&self) -> Result<LatticeDomain, CliError> {
        let spec = self.domain.as_ref().ok_or_else(|| invalid("missing [domain] table"))?;
        let shape = spec.shape.ok_or_else(|| invalid("domain.shape is required"))?;
        if shape == Shape::Preset {
            let extra = spec.lattice.is_some() || spec.mesh.is_some() || spec.radius.is_some() || spec.center.is_some();
            let extra = extra || spec.min.is_some() || spec.max.is_some() || spec.size.is_some() || spec.width.is_some() || spec.height.is_some();
            if extra {
                return Err(invalid("a preset domain takes only `name`"));
            }
            if self.law_has_field() {
                return Err(invalid("a preset domain carries its own field; drop the law field keys"));
            }
            let name = spec.name.as_deref().ok_or_else(|| invalid("domain.name is required for presets"))?;
            return preset(name).map_err(|e| invalid(e.to_string()));
        }
        if spec.name.is_some() {
            return Err(invalid("domain.name applies only to presets"));
        }
        let kind = spec.lattice.ok_or_else(|| invalid("domain.lattice is required"))?.kind();
        let mesh = spec.mesh.unwrap_or(0.05);
        if !(mesh > 0.0) {
            return Err(invalid("domain.mesh must be positive"));
        }
        let (region, extent) = region_of(spec, shape, mesh)?;
        let field = self.field(extent)?;
        LatticeDomain::build(kind, &region, mesh, &field).map_err(CliError::Lib)
    }

    /// Lattice and mesh for commands that build their own domains.
    pub fn lattice_and_mesh(&self) -> Result<(LatticeKind, f64), CliError> {
        let spec = self.domain.clone().unwrap_or_default();
        if spec.shape.is_some() {
            return Err(invalid("this command builds its own domain; give only domain.lattice and domain.mesh"));
        }
        let mesh = spec.mesh.unwrap_or(0.05);
        if !(mesh > 0.0) {
            return Err(invalid("domain.mesh must be positive"));
        }
        Ok((spec.lattice.unwrap_or(LatticeName::Square).kind(), mesh))
    }

    fn law_has_field(&self) -> bool {
        self.law.drift.is_some() || self.law.drift_preset.is_some() || self.law.polynomial.is_some() || self.law.mass.is_some()
    }

    /// Field of the configured law; `extent` bounds `|z|` over the domain.
    pub fn field(&self, extent: f64) -> Result<DriftField, CliError> {
        let l = &self.law;
        let set = [l.drift.is_some(), l.drift_preset.is_some(), l.polynomial.is_some(), l.mass.is_some()].iter().filter(|&&b| b).count();
        if set > 1 {
            return Err(invalid("set at most one of law.drift, law.drift_preset, law.polynomial, law.mass"));
        }
        if let Some([x, y]) = l.drift {
            return Ok(DriftField::constant_drift(Complex64::new(x, y)));
        }
        if let Some(m) = l.mass {
            if !(m >= 0.0) {
                return Err(invalid("law.mass must be nonnegative"));
            }
            return Ok(DriftField::constant_mass(m));
        }
        if let Some(p) = l.drift_preset {
            return Ok(match p {
                DriftPreset::Swirl => DriftField::variable_drift(extent, |z: Complex64| Complex64::new(0.0, 1.0) * z),
                DriftPreset::Source => DriftField::variable_drift(extent, |z: Complex64| z),
                DriftPreset::Wave => DriftField::variable_drift(1.0, |z: Complex64| Complex64::new((std::f64::consts::PI * z.im).cos(), 0.0)),
            });
        }
        if let Some(coeffs) = &l.polynomial {
            let a: Vec<Complex64> = coeffs.iter().map(|&[x, y]| Complex64::new(x, y)).collect();
            let bound = a.iter().enumerate().map(|(k, c)| c.norm() * extent.powi(k as i32)).sum();
            return Ok(DriftField::variable_drift(bound, move |z: Complex64| a.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)));
        }
        Ok(DriftField::zero())
    }
}

fn region_of(spec: &DomainSpec, shape: Shape, mesh: f64) -> Result<(Region, f64), CliError> {
    let used = |keys: &[&str]| -> Result<(), CliError> {
        let present = [
            ("radius", spec.radius.is_some()),
            ("center", spec.center.is_some()),
            ("min", spec.min.is_some()),
            ("max", spec.max.is_some()),
            ("size", spec.size.is_some()),
            ("width", spec.width.is_some()),
            ("height", spec.height.is_some()),
        ];
        match present.iter().find(|(k, p)| *p && !keys.contains(k)) {
            Some((k, _)) => Err(invalid(format!("domain.{k} does not apply to this shape"))),
            None => Ok(()),
        }
    };
    let c = |p: [f64; 2]| Complex64::new(p[0], p[1]);
    match shape {
        Shape::Disc => {
            used(&["radius", "center"])?;
            let radius = spec.radius.ok_or_else(|| invalid("domain.radius is required for discs"))?;
            let center = c(spec.center.unwrap_or([0.0, 0.0]));
            Ok((Region::Disc { center, radius }, center.norm() + radius))
        }
        Shape::Rectangle => {
            used(&["min", "max"])?;
            let (min, max) = match (spec.min, spec.max) {
                (Some(a), Some(b)) => (c(a), c(b)),
                _ => return Err(invalid("domain.min and domain.max are required for rectangles")),
            };
            let extent = [min, max, Complex64::new(min.re, max.im), Complex64::new(max.re, min.im)].iter().map(|z| z.norm()).fold(0.0, f64::max);
            Ok((Region::Rectangle { min, max }, extent))
        }
        Shape::Hexagon => {
            used(&["size"])?;
            let r = spec.size.ok_or_else(|| invalid("domain.size is required for hexagons"))?;
            Ok((Region::Sites(dimerlab::lattice::hexagon_sites(r)), r as f64 * mesh))
        }
        Shape::Block => {
            used(&["width", "height"])?;
            let (w, h) = match (spec.width, spec.height) {
                (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
                _ => return Err(invalid("domain.width and domain.height must be positive for blocks")),
            };
            Ok((Region::Sites(dimerlab::lattice::block_sites(w, h)), (w + h) as f64 * mesh))
        }
        Shape::Preset => unreachable!("presets are handled by the caller"),
    }
}

/// `[x, y]` as a complex number.
pub fn point(p: [f64; 2]) -> Complex64 {
    Complex64::new(p[0], p[1])
}
