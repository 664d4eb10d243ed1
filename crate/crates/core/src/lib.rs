//! Taylor-expanded linear attention, multi-scale dilated convolution blocks,
//! and a small blind super-resolution toolkit built on them.
//!
//! Everything runs in 64-bit floating point on a hand-written tape
//! ([`graph::Graph`]) so every backward pass can be checked against finite
//! differences.

pub mod attention;
pub mod bench;
pub mod config;
pub mod conv;
pub mod degrade;
pub mod error;
pub mod eval;
pub mod flops;
pub mod gradcheck;
pub mod graph;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod mlfr;
pub mod model;
pub mod networks;
pub mod par;
pub mod param;
pub mod rng;
pub mod suite;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use flops::FlopCounter;
pub use graph::{Graph, Var};
pub use param::{count_params, Param, ParamId, ParamStore, WeightSet};
pub use tensor::Tensor;
