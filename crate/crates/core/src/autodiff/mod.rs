//! Minimal reverse-mode differentiation: tensors, a recording graph, the
//! recurrent and attention layers, initialisers and optimisers.

mod gradcheck;
mod graph;
pub mod init;
mod optim;
mod params;
mod recurrent;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, Offender, REL_ERROR_FLOOR};
pub use graph::{Graph, Mask, Var, COSINE_NORM_GUARD};
pub use optim::{Method, Optimizer, OptimizerConfig};
pub use params::{Gradients, ParamGrad, ParamId, ParamSet};
pub use recurrent::{
    attention_pool, lstm_sequence, AttentionParams, AttentionVariant, Direction, LstmOutput, LstmParams,
};
pub use tensor::Tensor;
