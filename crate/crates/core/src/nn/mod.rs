//! Layer primitives with hand-written reverse-mode gradients.

pub mod conv;
pub mod gdn;
pub mod gradcheck;
mod layer;
mod scalar;
mod sequential;
mod tensor;

pub use gradcheck::{grad_check, grad_check_layer, Differentiable};
pub use layer::{
    sigmoid, softplus, softplus_inverse, Layer, LayerGrads, LayerKind, LayerSpec, Padding,
    GDN_BETA_FLOOR, LEAKY_RELU_SLOPE,
};
pub use scalar::{matmul, Scalar};
pub use sequential::{NetGrads, Sequential};
pub use tensor::FeatureMap;
