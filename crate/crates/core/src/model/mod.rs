//! A tiny transducer with hand-written backprop: context-window encoder,
//! two-token causal predictor, and an additive tanh joiner.

mod checkpoint;
mod dropout;
mod network;
mod optim;
mod params;

pub use checkpoint::Checkpoint;
pub use dropout::{DropoutPlan, DropoutSite};
pub use network::{
    encode, encoder_mse, encoder_mse_grad, joint_log_probs, model_backward, model_forward,
    predictor_output, ForwardCache, ForwardPass,
};
pub use optim::{optimizer_step, AdamWConfig, NoamSchedule, OptimizerState};
pub use params::{ModelDims, TransducerParams, PARAM_NAMES};
