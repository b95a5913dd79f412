//! Federated-learning kernels: the MLP, SGD training, and averaging.

mod aggregate;
mod model;
mod mlp;

pub use aggregate::aggregate;
pub use mlp::{
    evaluate, forward_loss, local_train, loss_gradient, sgd_step, EvalReport, TrainOpts,
    TrainReport,
};
pub use model::{init_model, param_count, ModelParams};
