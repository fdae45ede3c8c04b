//! Lead-time-conditioned patch transformer producing per-pixel expert
//! logits and a bias field.

mod config;
pub mod embedding;
mod network;
pub mod patch;

pub use config::{GateConfig, SizePreset};
pub use network::{
    count_params, dit_block, linear_params, param_specs, BlockVars, Bound, ConditioningVector, GateInputs, GateNetwork,
    GateOutput, ParamSpec,
};
pub use patch::{patchify, unpatchify};
