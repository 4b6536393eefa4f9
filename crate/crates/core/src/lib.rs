//! Sparse 3D convolution with magnitude-guided spatial pruning.
//!
//! The crate is a CPU reference engine for voxelized point clouds:
//!
//! - [`tensor`]: sparse tensors, coordinate hashing, voxelization.
//! - [`rulebook`]: kernel offsets, gather-scatter plans, FLOP accounting.
//! - [`conv`]: rulebook execution, submanifold and regular convolution, blocks.
//! - [`pruning`]: magnitude scores, top-k partitions, the pruned SPSS and
//!   SPRS operators.
//! - [`backbone`]: a stem plus four stages, baseline or pruned.
//! - [`oracle`]: a naive dense convolution used to check all of the above.
//!
//! ```
//! use spsconv::conv::{subm_conv, ConvWeights};
//! use spsconv::rulebook::KernelSpec;
//! use spsconv::tensor::{Coord, SparseTensor};
//!
//! let t = SparseTensor::new(
//!     vec![Coord::new(0, 1, 1, 1), Coord::new(0, 1, 1, 2)],
//!     vec![1.0, 2.0],
//!     1,
//!     [4, 4, 4],
//! )?;
//! let w = ConvWeights::filled(3, 1, 1, 1.0)?;
//! let y = subm_conv(&t, &KernelSpec::unit(3)?, &w)?;
//! assert_eq!(y.features(), &[3.0, 3.0]);
//! # Ok::<(), spsconv::Error>(())
//! ```
//!
//! A longer walkthrough lives in the `book/` directory of the repository;
//! its code listings are compiled and run as doc-tests of this crate.

pub mod backbone;
pub mod conv;
pub mod error;
pub mod oracle;
pub mod pointfile;
pub mod pruning;
pub mod rulebook;
pub mod tensor;

pub use error::{Error, Result};

// Runs the book's code listings under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/sparse-tensors.md")]
    struct SparseTensors;
    #[doc = include_str!("../../../book/src/rulebooks.md")]
    struct Rulebooks;
    #[doc = include_str!("../../../book/src/magnitude.md")]
    struct Magnitude;
    #[doc = include_str!("../../../book/src/spss.md")]
    struct Spss;
    #[doc = include_str!("../../../book/src/sprs.md")]
    struct Sprs;
    #[doc = include_str!("../../../book/src/backbone.md")]
    struct Backbone;
    #[doc = include_str!("../../../book/src/oracle.md")]
    struct Oracle;
}
