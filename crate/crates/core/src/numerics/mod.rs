//! Dense kernels, the differentiation tape, layers and optimisers.

pub mod adam;
pub mod layers;
pub mod matrix;
pub mod tape;

pub use adam::{sgd_step, Adam, Optimizer};
pub use layers::{
    check_chain, gcn_layer_forward, spectral_normalize, Activation, BatchNorm, Bind, GraphConv,
    LayerKind, LayerSpec, Linear, Module, ParamTensor, SnLinear, SpectralNorm,
};
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};
