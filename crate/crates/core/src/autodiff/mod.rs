//! Minimal reverse-mode differentiation on a dynamic tape.
//!
//! Every forward pass builds a fresh [`Tape`]; the graph topology changes
//! per image, so nothing is compiled or cached. Values are dense `f64`
//! tensors (scalars, vectors, matrices). `backward` walks the tape in
//! reverse and accumulates exact gradients; gradients flow back into the
//! [`ParamStore`] via [`Tape::flush_grads`].

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{adam_step, sgd_step, AdamState};
pub use params::ParamStore;
pub use tape::{Tape, Value};
