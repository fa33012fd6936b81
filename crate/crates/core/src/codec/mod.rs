//! Encoder, bitrate adapters, multi-branch decoder and the model bundle.

pub mod bam;
pub mod bundle;
pub mod cam;
pub mod config;
pub mod nets;
pub mod pipeline;
pub mod sizing;

pub use bam::{Adapter, CodingPrior, Gate, GateKind};
pub use bundle::{Manifest, ModelBundle};
pub use cam::{Branch, Cam};
pub use config::CodecConfig;
pub use pipeline::{
    bal_forward, cam_decode, compress, decompress, encode_latent, ibal_forward, pad_reflect,
};
pub use sizing::{select_branches, size_branches};
