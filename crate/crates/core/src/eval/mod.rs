//! Metrics and accounting: PSNR, bpp, FLOPs, parameters, BD deltas and RD sweeps.

pub mod bd;
pub mod flops;
pub mod metrics;
pub mod storage;
pub mod sweep;

pub use bd::{bd_metrics, BdReport, RdCurve, RdPoint};
pub use flops::{count_flops, decoder_report, FlopsReport};
pub use metrics::{bpp, psnr, psnr_u8};
pub use storage::{count_params, storage_report, StorageReport};
pub use sweep::{rd_sweep, RdRow};
