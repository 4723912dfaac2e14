//! Private aggregation of teacher ensembles (PATE) over two image-classifier
//! backends: a small classical CNN and a hybrid CNN + variational-quantum-circuit
//! model run on a built-in statevector simulator.
//!
//! Teachers train on disjoint private shards; a student trains only on labels
//! produced by a Laplace noisy-argmax vote over the teachers. A moments
//! accountant converts the query history into a certified (epsilon, delta)
//! guarantee, and the experiment harness sweeps student accuracy against the
//! privacy budget.

pub mod data;
pub mod dp;
pub mod error;
pub mod harness;
pub mod pate;
pub mod quantum;
pub mod tensor;

pub use error::{Error, Result};
