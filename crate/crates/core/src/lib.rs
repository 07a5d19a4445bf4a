//! Learn executable game rules from demonstrated frames.
//!
//! A user draws a handful of frames of a grid game. [`learner::learn`]
//! searches for an [`engine::Engine`], an ordered list of guarded fact
//! rewrites, that predicts each demonstrated frame from the one before it.
//! The engine then runs live in [`runtime`], is scored against reference
//! demonstrations in [`evaluation`], and its rules can be clustered in
//! [`analysis`].

pub mod analysis;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod fact;
pub mod fixtures;
pub mod learner;
pub mod persistence;
pub mod runtime;
pub mod service;

pub use error::{Error, Result};
