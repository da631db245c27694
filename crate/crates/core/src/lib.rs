//! Dual-branch diffusion fusion for personalized face generation with
//! human-object interaction.
//!
//! A general text-to-image branch (SD) supplies layout and interaction while a
//! personalized face branch (PFD) supplies identity. Both run in lockstep from
//! the same initial noise and are fused inside a head mask through three
//! mechanisms: [`attention::apply_cac`], [`merge::latent_merge`] and
//! [`merge::residual_merge`]. [`pipeline::generate`] runs the whole procedure
//! against any [`backend::DenoiserBackend`]; the bundled
//! [`backend::ToyBackend`] makes it runnable without model weights.

pub mod attention;
pub mod backend;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod filters;
pub mod image;
pub mod io;
pub mod masks;
pub mod merge;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
