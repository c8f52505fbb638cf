use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("g2o file mixes 2D and 3D records (line {line})")]
    MixedDimension { line: usize },

    #[error("duplicate measurement between vertices {i} and {j}")]
    DuplicateEdge { i: usize, j: usize },

    #[error("measurement graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rotation angle {theta} is too close to pi; the logarithm is singular there")]
    LogSingularity { theta: f64 },

    #[error(
        "edge ({i}, {j}) has a residual angle of {theta} rad, at the cut locus; \
         this usually indicates an outlier measurement"
    )]
    ResidualAtPi { i: usize, j: usize, theta: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("eliminated vertex {vertex} lies in a component with no kept neighbour; its block is singular")]
    IsolatedEliminated { vertex: usize },

    #[error("interior block of robot {robot} is singular: an interior component does not touch any separator")]
    SingularInterior { robot: usize },

    #[error(
        "right-hand side is not in the image of the Laplacian (column {column} sums to {sum})"
    )]
    RhsNotInImage { column: usize, sum: f64 },

    #[error("vertices {i} and {j} lie in different connected components")]
    DifferentComponents { i: usize, j: usize },

    #[error(
        "projected Hessian is not positive definite on the horizontal space \
         (curvature {curvature}); start closer to a minimizer"
    )]
    IndefiniteHessian { curvature: f64 },
}

impl Error {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::LogSingularity { .. }
                | Self::ResidualAtPi { .. }
                | Self::NotPositiveDefinite { .. }
                | Self::IsolatedEliminated { .. }
                | Self::SingularInterior { .. }
                | Self::RhsNotInImage { .. }
                | Self::IndefiniteHessian { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
