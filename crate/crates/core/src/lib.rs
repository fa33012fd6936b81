//! Single-model learned image codec: one encoder, per-bitrate latent
//! adapters, and a multi-branch decoder whose branch count trades decoding
//! FLOPs for reconstruction quality.

pub mod codec;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod latent;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
pub use latent::Latent;
