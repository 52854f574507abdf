//! Dense f64 tensors, a recorded tape for reverse-mode gradients, optimizers
//! and a finite-difference checker.

mod graph;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use graph::{Gradients, Graph, Var};
pub use optim::{OptimizerConfig, OptimizerSnapshot, OptimizerState, StepReport, UpdateRule};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::{log_add, log_sum_exp, Tensor};

#[cfg(test)]
mod tests;
