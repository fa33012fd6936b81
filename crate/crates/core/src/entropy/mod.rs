//! Quantization, factorized entropy model, range coding and the `.cba` container.

pub mod bitstream;
pub mod model;
pub mod quantize;
pub mod range;

pub use bitstream::{pack_bitstream, parse_bitstream, Header, HEADER_LEN};
pub use model::{FactorizedEntropyModel, FrozenTables, RateGrad, SUPPORT_MAX, SUPPORT_MIN};
pub use quantize::{quantize, QuantMode};
pub use range::{range_decode, range_encode, Cdf, RangeDecoder, RangeEncoder};
