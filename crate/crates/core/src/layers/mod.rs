//! Architecture building blocks: patch tiling, GRU cells, directional
//! sweeps, ReNet layers, upsampling and the convolutional stem.

mod frontend;
pub mod gru;
mod patches;
mod sweep;

pub use frontend::{conv_frontend, frontend_geometry, upsample_layer, FrontendLayer, FrontendStage};
pub use gru::{gru_step, GruParams, GruView, GRU_PARAM_NAMES};
pub use patches::{split_patches, PatchGrid};
pub(crate) use patches::{check_divisible, permute_patches};
pub use sweep::{
    directional_sweep, renet_layer, renet_layer_parts, Direction, ReNetOutput, ReNetParams,
    SweepMode, SweepParams,
};
