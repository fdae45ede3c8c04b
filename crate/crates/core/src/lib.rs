//! Mixture-of-weather-experts forecast fusion.
//!
//! A patch transformer conditioned on lead time turns N expert forecasts into
//! per-pixel, per-channel softmax weights plus a bias field, and the blend
//! `Ŷ = Σᵢ Wᵢ ⊙ Eᵢ + b` is trained against truth with an MSE loss. The crate
//! also ships a synthetic multi-expert forecast generator, binary dataset and
//! checkpoint formats, and evaluation tooling.

pub mod binio;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gating;
pub mod stats;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
