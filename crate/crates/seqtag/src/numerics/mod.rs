//! Reverse-mode autodiff engine, dense tensors, deterministic RNG, and
//! parameter storage.

pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_store, DEFAULT_EPS};
pub use graph::{Graph, Node};
pub use params::{Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
