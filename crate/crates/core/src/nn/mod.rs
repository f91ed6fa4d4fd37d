//! Shared neural-network plumbing: the named parameter registry and layer
//! primitives used by the encoder, fusion and decoder modules.

pub mod layers;
pub mod params;

pub use layers::{
    bilinear_resize, conv2d, dropout, l2_normalize, layer_norm, linear, roll, sigmoid, softplus,
    BatchNorm2d, LayerNorm,
};
pub use params::{Init, ParamStore};
