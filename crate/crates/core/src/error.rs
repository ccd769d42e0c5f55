//! Error types shared across the crate.

use thiserror::Error;

/// Failures raised while building or querying cubical grids.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("face dimension {j} out of range for a grid of dimension {dim}")]
    Dimension { j: usize, dim: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("cell index {0:?} lies outside the grid")]
    CellOutOfRange(Vec<usize>),
}

/// Failures raised when evaluating a map.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("evaluation at singular point {0:?}")]
    Singular(Vec<f64>),
    #[error("point {point:?} lies outside the map's domain: {reason}")]
    Domain { point: Vec<f64>, reason: String },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("interpolated value {0:?} left the retraction neighborhood of the target")]
    Projection(Vec<f64>),
}

/// Failures raised by the energy quadrature.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("non-integrable configuration: exponent {p} with a singular point inside a {dim}-dimensional domain")]
    NonIntegrable { p: f64, dim: usize },
    #[error("cell budget {budget} exhausted; partial value {partial}")]
    Budget { budget: usize, partial: f64 },
    #[error("map evaluation failed: {0}")]
    Map(#[from] MapError),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("no admissible shell found in ({lo}, {hi})")]
    NoAdmissibleShell { lo: f64, hi: f64 },
}

/// Failures raised by degree and Hopf invariant computations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("image comes within {distance} of the point {sigma:?}")]
    IllConditioned { sigma: Vec<f64>, distance: f64 },
    #[error("raw degree {raw} is not within 0.5 of an integer")]
    NonIntegral { raw: f64 },
    #[error("precondition violated: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("regular value search failed after {attempts} attempts: {reason}")]
    RegularValue { attempts: usize, reason: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Failures raised by the ball-growth machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BallError {
    #[error("closed balls do not intersect (distance {distance}, radii {r0} + {r1})")]
    Disjoint { distance: f64, r0: f64, r1: f64 },
    #[error("invalid ball family: {0}")]
    Invalid(String),
    #[error("negative density sample {value} at {point:?}")]
    NegativeDensity { point: Vec<f64>, value: f64 },
}

/// Failures raised by the lattice transport solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("fit needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}
