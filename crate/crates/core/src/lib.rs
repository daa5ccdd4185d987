//! First passage percolation with Exp(1) edge weights on inhomogeneous random
//! graphs, the multi-type branching processes that approximate its local
//! exploration, and a seeded Monte Carlo harness for the resulting limit laws.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod ctbp;
pub mod fpp;
pub mod graphgen;
pub mod harness;
pub mod kernel;
pub mod labelbp;
pub mod rng;
pub mod stats;
pub mod twoflow;
