//! Noisy-label learning with a learned noise rate.
//!
//! A clean classifier, a noisy-label head and a scalar flip probability form
//! a small graphical model fitted by variational EM. The running noise-rate
//! estimate sets how many small-loss samples are trusted as clean at each
//! epoch.

pub mod cli;
pub mod datagen;
pub mod emtrain;
pub mod error;
pub mod evalkit;
pub mod gm;
pub mod numkit;
pub mod select;

pub use error::{Error, Result};
