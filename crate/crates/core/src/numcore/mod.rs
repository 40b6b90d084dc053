//! Minimal reverse-mode differentiable numeric core: dense `f64` tensors, a
//! recording tape, the layers this system needs, losses, AdamW and a
//! finite-difference gradient checker.

mod gradcheck;
mod layers;
mod loss;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{dropout, BiLstm, Embedding, Linear, Lstm};
pub use loss::{cross_entropy, kl_pair_loss, mse_loss};
pub use params::{adamw_step, OptimizerConfig, Param, ParamGrads, ParamGroup, ParamId, ParamSet};
pub use tape::{sigmoid, CustomOp, Gradients, Tape, Var};
pub use tensor::{log_softmax_rows, log_sum_exp, softmax_rows, Tensor};
