//! Reference execution: host kernels, a simulated device with handle-based
//! allocations, whole-module evaluation and per-op dynamic evaluation of
//! source programs.

mod device;
mod dynamic;
mod eval;
pub mod kernels;

pub use device::{Device, DeviceStats, Handle, TraceEntry, DEFAULT_WHILE_CAP};
pub use dynamic::{dynamic_eval, DynamicError, DynamicEvaluator, DEFAULT_STEP_LIMIT};
pub use eval::Evaluator;

use crate::hlo::ShapeError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("shape error: {0}")]
    Shape(ShapeError),
    #[error("type error: {0}")]
    Type(String),
    #[error("input mismatch: {0}")]
    Input(String),
    #[error("integer division by zero")]
    DivideByZero,
    #[error("while loop exceeded {0} iterations")]
    WhileLimit(u64),
    #[error("handle {0} is not live")]
    DeadHandle(u64),
}
