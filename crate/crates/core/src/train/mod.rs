//! Two-step optimization: base encoder and decoder branches first, then one
//! bitrate adapter per target rate.

pub mod config;
pub mod data;
pub mod loss;
pub mod optim;
pub mod stages;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::TrainConfig;
pub use data::{ingest_dataset, synthetic_images, toy_images, CropStream};
pub use loss::loss_rd;
pub use stages::{train_bam, train_base, train_cam_progressive, StageReport};

use crate::codec::{CodecConfig, ModelBundle};
use crate::error::Result;
use crate::nn::FeatureMap;

/// Parameter initialization seed for a given training seed.
pub fn init_bundle(config: CodecConfig, tc: &TrainConfig) -> Result<ModelBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    ModelBundle::init(config, tc.seed, &mut rng)
}

/// Every stage in order, adapters at their configured multipliers.
pub fn train_all(config: CodecConfig, tc: &TrainConfig, images: &[FeatureMap]) -> Result<(ModelBundle, Vec<StageReport>)> {
    let mut bundle = init_bundle(config, tc)?;
    let mut reports = vec![train_base(&mut bundle, tc, images)?.report];
    reports.extend(train_cam_progressive(&mut bundle, tc, images)?);
    for j in 1..bundle.base_quality() {
        let lambda = bundle.config.lambda_for(j)?;
        reports.push(train_bam(&mut bundle, tc, images, j, lambda)?);
    }
    Ok((bundle, reports))
}
