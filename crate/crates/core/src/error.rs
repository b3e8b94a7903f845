use std::path::PathBuf;

use thiserror::Error;

use crate::optimality::Solution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("triangle id {id} out of range (mesh has {len} triangles)")]
    InvalidElement { id: usize, len: usize },

    #[error("unsupported {kind} quadrature degree {degree}; supported degrees are {supported:?}")]
    UnsupportedDegree {
        kind: &'static str,
        degree: usize,
        supported: std::ops::RangeInclusive<usize>,
    },

    #[error("quadrature rule failed its monomial check: {0}")]
    QuadratureCheck(String),

    #[error("non-finite sample of the integrand on element {element}")]
    NonFiniteSample { element: usize },

    #[error("iterative solver stopped after {iterations} iterations with relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("semismooth Newton did not converge in {iterations} iterations (last increment {increment:e})")]
    NewtonDiverged {
        iterations: usize,
        increment: f64,
        last: Box<Solution>,
    },

    #[error("mesh domain {mesh} does not match problem domain {problem}")]
    DomainMismatch { mesh: String, problem: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("rate fit needs at least 3 rows, got {0}")]
    TooFewRows(usize),

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
