//! Minimal hand-differentiated neural-network substrate in f64.
//!
//! Layers expose explicit forward passes that return what the backward pass
//! needs, and backward passes that accumulate into per-layer gradient buffers.
//! Parameters are reached through the [`Parameters`] visitor, which Adam, the
//! finite-difference checker and the JSON parameter map all share.

mod adam;
mod dense;
mod gradcheck;
mod loss;
mod lstm;
mod mlp;
mod params;
mod tensor;
mod vae;

pub use adam::{adam_step, AdamState};
pub use dense::{dense_forward, Activation, DenseCache, DenseLayer};
pub use gradcheck::{check_model_gradients, finite_diff_grad_check, GradCheckReport};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_loss};
pub use lstm::{lstm_cell_step, LstmCell, LstmStepCache};
pub use mlp::{train_classifier, ClassifierFit, Mlp, TrainOptions};
pub use params::{export_params, flatten_grads, flatten_values, import_params, load_flat, zero_grads, ParamEntry, ParamMap, Parameters};
pub use tensor::Tensor;
pub use vae::{kl_divergence_diag_gaussian, reparameterize, GaussianLatent, LOG_VAR_BOUND};
