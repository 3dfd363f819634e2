#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Strong-constraint 4D-Var with flow-dependent background covariances.
//!
//! The reference system is the discretized shallow-water model on a
//! periodic grid ([`swe`]). Sparse Taylor Jacobians of its flow map
//! ([`jacobian`]) drive the adjoint gradient and the Gauss-Newton solver
//! ([`var4d`]), and also represent the background precision built from the
//! previous assimilation windows ([`background`]). Ensemble Kalman filter
//! and hybrid En4D-Var baselines live in [`enkf`]; [`harness`] runs twin
//! experiments end to end.

pub mod background;
pub mod enkf;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod sparse;
pub mod jacobian;
pub mod obs;
pub mod swe;
pub mod var4d;

pub use error::{Error, Result};
