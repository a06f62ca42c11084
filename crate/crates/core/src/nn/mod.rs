//! Minimal dense neural-network engine.
//!
//! Parameters are stored per layer so every federated operation (distances,
//! layer-wise weighting, aggregation) can address individual blocks.

pub(crate) mod gemm;
mod model;
mod tensor;

pub use model::{
    layer_sq_distance, param_sq_distance, validate_specs, Activation, DenseLayer, ForwardPass,
    Gradient, LayerGrad, LayerSpec, ModelParams,
};
pub(crate) use model::cross_entropy;
pub use tensor::Tensor;
