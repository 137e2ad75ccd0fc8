//! Dense numerics substrate: activations, a small MLP with manual reverse
//! pass, SGD with momentum, a seeded generator and a finite-difference checker.
//!
//! Everything is `f64`.

mod act;
mod gradcheck;
mod mlp;
mod optim;
mod rng;

pub use act::{log_sigmoid, logit, logsumexp, sigmoid, softmax, softplus};
pub(crate) use act::{log_softmax_in_place, softmax_in_place};
pub use gradcheck::{finite_diff_grad, max_rel_error};
pub use mlp::{backprop, Layer, MlpParams, Tape};
pub use optim::{sgd_momentum_step, OptState};
pub use rng::Rng;
