//! Minimal fully connected network over a flat parameter vector.
//!
//! Everything the learners touch lives in one contiguous `f64` buffer
//! ([`ParamVector`]) so gradients can be projected, mixed and averaged as
//! plain vectors. The network itself ([`NetworkArchitecture`]) only knows how
//! to slice that buffer into layers.

mod adam;
mod checkpoint;
mod mlp;
mod params;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{
    forward, forward_batch, grad_value, per_sample_grad_dots, Activation, ForwardPass, GradDots,
    LayerShape, NetworkArchitecture,
};
pub use params::{ema_update, ParamVector};
