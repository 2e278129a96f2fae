//! Error type shared by every module.

use thiserror::Error;

/// Failure modes of domain construction, sampling, solving and extraction.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("region contains no lattice vertex")]
    EmptyDomain,
    #[error("non-positive step weight {weight} at vertex {vertex} direction {direction}")]
    WeightUnderflow {
        vertex: usize,
        direction: usize,
        weight: f64,
    },
    #[error("domain is not simply connected")]
    NotSimplyConnected,
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("unsupported symmetry: {0}")]
    UnsupportedSymmetry(String),
    #[error("walk did not exit through the boundary")]
    NotExited,
    #[error("conditioning target is unreachable from the start vertex")]
    UnreachableTarget,
    #[error("path does not match the domain: {0}")]
    PathMismatch(String),
    #[error("path is not a loop")]
    NotALoop,
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("domain does not carry a constant mass")]
    NonConstantMass,
    #[error("probe vertex swallowed by the curve")]
    ProbeSwallowed,
    #[error("no dimer completion: {0}")]
    NoCompletion(String),
    #[error("matching induces a cycle in the vertex-node dimers")]
    CycleDetected,
    #[error("colour classes differ in size: {black} black, {white} white")]
    UnequalColorClasses { black: usize, white: usize },
    #[error("curve hits the interior target point")]
    CurveHitsTarget,
    #[error("curve is not simple")]
    NonSimpleCurve,
    #[error("conformal map unavailable: {0}")]
    MapUnavailable(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
