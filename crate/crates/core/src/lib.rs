// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cholesky;
pub mod dd;
pub mod error;
pub mod laplacian;
pub mod metrics;
pub mod pose_graph;
pub mod rotation;
pub mod so;
pub mod sparse;
pub mod trace;
pub mod translation;

pub use error::{Error, Result};

// Compiles and runs the guide's snippets as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/rotations.md")]
    mod rotations {}
    #[doc = include_str!("../../../book/src/laplacians.md")]
    mod laplacians {}
    #[doc = include_str!("../../../book/src/domain-decomposition.md")]
    mod domain_decomposition {}
    #[doc = include_str!("../../../book/src/sparsification.md")]
    mod sparsification {}
    #[doc = include_str!("../../../book/src/metering.md")]
    mod metering {}
    #[doc = include_str!("../../../book/src/translation.md")]
    mod translation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
