//! Sparse Jacobians of the flow map, their inverses and factored chains.

pub mod cache;
mod chain;
mod taylor;

pub use chain::{chain_apply, JacobianChain};
pub use taylor::{
    build_inverse_jacobian, build_jacobian, state_hash, JacobianConfig, SparseJacobian, MAX_TAYLOR_ORDER,
};
