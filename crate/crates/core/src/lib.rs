//! Inference-complexity estimation for neural-network layers, an instrumented
//! reference interpreter, and complexity-budgeted Bayesian hyperparameter search.

pub mod arch;
pub mod bayesopt;
pub mod costmodel;
pub mod interp;
pub mod quant;
pub mod search;
