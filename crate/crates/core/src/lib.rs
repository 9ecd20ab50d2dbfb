//! Structure learning of sparse linear DAGs with a Bregman proximal gradient
//! method (dynamic NoLips) and a trace-polynomial acyclicity penalty.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dag_penalty;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod nolips;
pub mod prox_solver;
pub mod scm_gen;
pub mod weights;

pub use error::{Error, Result};
pub use metrics::{evaluate, EvalReport};
pub use nolips::{fit, FitConfig, FitResult, KernelKind};
pub use scm_gen::{Dataset, GraphModel, GraphSpec, NoiseFamily, NoiseSpec};
pub use weights::{Adjacency, Mode, SplitWeights, WeightMatrix};
