//! Core of a target-aware machine-unlearning laboratory.
//!
//! The crate is `no_std` (with `alloc`): a small differentiable classifier,
//! layered label taxonomies and synthetic data, unlearning task construction,
//! the annealed forgetting schedules, the unlearning engines and their
//! evaluation metrics. File formats, CLI and timing live in `unlearn-lab`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod diffnet;
pub mod dynamics;
pub mod engines;
pub mod error;
pub mod evalkit;
pub mod matrix;
pub mod taxonomy;
pub mod schedules;
pub mod tasks;

pub use error::{Error, Result};
pub use matrix::Matrix;
