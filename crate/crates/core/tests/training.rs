//! Stage-level behaviour of the training pipeline.

use cbanet::codec::pipeline::crop;
use cbanet::codec::{compress, decompress, CodecConfig};
use cbanet::eval::{bpp, psnr};
use cbanet::nn::FeatureMap;
use cbanet::train::stages::{init_adapter, noisy_rd_loss, train_cam_branch};
use cbanet::train::{
    init_bundle, synthetic_images, toy_images, train_all, train_bam, train_base, train_cam_progressive,
    CropStream, TrainConfig,
};
use cbanet::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_tc() -> TrainConfig {
    TrainConfig {
        crop_size: 32,
        batch_size: 1,
        iterations_base: 6,
        iterations_cam: 3,
        iterations_bam: 3,
        ..TrainConfig::desk()
    }
}

fn tiny_images() -> Vec<FeatureMap> {
    synthetic_images(3, 48, 48, 5)
}

#[test]
fn stages_must_run_in_order() {
    let tc = tiny_tc();
    let images = tiny_images();
    let mut b = init_bundle(CodecConfig::desk(), &tc).unwrap();
    assert!(matches!(train_cam_branch(&mut b, &tc, &images, 1), Err(Error::StageOrder(_))));
    assert!(matches!(train_bam(&mut b, &tc, &images, 1, 1e-3), Err(Error::StageOrder(_))));
    train_base(&mut b, &tc, &images).unwrap();
    assert!(matches!(train_cam_branch(&mut b, &tc, &images, 2), Err(Error::StageOrder(_))));
    assert!(matches!(train_bam(&mut b, &tc, &images, 1, 1e-3), Err(Error::StageOrder(_))));
    train_cam_progressive(&mut b, &tc, &images).unwrap();
    assert!(train_bam(&mut b, &tc, &images, 3, 1e-3).is_err());
    train_bam(&mut b, &tc, &images, 1, 1e-3).unwrap();
}

#[test]
fn each_stage_touches_only_its_own_components() {
    let tc = tiny_tc();
    let images = tiny_images();
    let mut b = init_bundle(CodecConfig::desk(), &tc).unwrap();
    let base = train_base(&mut b, &tc, &images).unwrap().report;
    assert_eq!(base.frozen_violations(), Vec::<String>::new());
    let mut reports = train_cam_progressive(&mut b, &tc, &images).unwrap();
    reports.push(train_bam(&mut b, &tc, &images, 2, 0.01).unwrap());
    for r in &reports {
        assert!(r.frozen_violations().is_empty(), "{}: {:?}", r.stage, r.frozen_violations());
        assert_eq!(r.curve.len(), r.iterations);
        for u in &r.updated {
            assert_ne!(r.digests_before.get(u), r.digests_after.get(u), "{} left {u} unchanged", r.stage);
        }
    }
    assert_eq!(reports[1].updated, vec!["cam_k2".to_string()]);
    assert_eq!(reports[3].updated, vec!["adapter_q2".to_string()]);
}

#[test]
fn adapter_rerun_is_reproducible() {
    let tc = tiny_tc();
    let images = tiny_images();
    let (mut b, _) = train_all(CodecConfig::desk(), &tc, &images).unwrap();
    let before = b.files()["adapter_q1.bin"].clone();
    let lam = b.config.lambda_list[0];
    train_bam(&mut b, &tc, &images, 1, lam).unwrap();
    assert_eq!(b.files()["adapter_q1.bin"], before);
}

#[test]
fn fresh_adapter_at_base_lambda_matches_base_loss() {
    let tc = tiny_tc();
    let images = tiny_images();
    let (b, _) = train_all(CodecConfig::desk(), &tc, &images).unwrap();
    let mut stream = CropStream::new(images, 32, 3).unwrap();
    let crops: Vec<FeatureMap> = (0..8).map(|_| stream.next_crop()).collect();
    let adapter = init_adapter(&b, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let lam = b.config.lambda_base;
    let base = noisy_rd_loss(&b, None, &crops, lam, 9).unwrap();
    let fresh = noisy_rd_loss(&b, Some(&adapter), &crops, lam, 9).unwrap();
    assert!(((fresh - base) / base).abs() < 0.01, "{fresh} vs {base}");
}

#[test]
fn base_stage_overfits_one_image() {
    let image = crop(&synthetic_images(1, 64, 64, 21)[0], 64, 64).unwrap();
    let mut config = CodecConfig::desk();
    config.lambda_base = 50.0;
    let tc = TrainConfig {
        batch_size: 1,
        iterations_base: 2500,
        ..TrainConfig::desk()
    };
    let mut b = init_bundle(config, &tc).unwrap();
    let out = train_base(&mut b, &tc, std::slice::from_ref(&image)).unwrap();
    // eval path through the scratch decoder that was trained with the encoder
    let y = b.encoder.forward(&image).unwrap().map(f32::round);
    let x_hat = out.scratch_decoder.forward(&y).unwrap();
    let p = psnr(&image, &x_hat).unwrap();
    assert!(p > 40.0, "overfit PSNR {p:.2} dB");
}

/// One desk-scale run shared by the RD-ordering checks.
#[test]
fn desk_run_orders_adapters_and_branches() {
    let images = toy_images();
    let (b, _) = train_all(CodecConfig::desk(), &TrainConfig::desk(), &images).unwrap();
    let mut stream = CropStream::new(images, 64, 99).unwrap();
    let crops: Vec<FeatureMap> = (0..16).map(|_| stream.next_crop()).collect();
    let m = b.base_quality();
    let k_max = b.cam.k_max();
    // per quality: mean bpp, mean MSE per K, mean PSNR at K_max
    let mut bpps = vec![0.0; m];
    let mut mse = vec![vec![0.0; k_max]; m];
    let mut psnrs = vec![0.0; m];
    for x in &crops {
        for j in 1..=m {
            let s = compress(&b, x, j).unwrap();
            bpps[j - 1] += bpp(s.len(), 64, 64).unwrap();
            for k in 1..=k_max {
                let r = decompress(&b, &s, k).unwrap();
                let e: f64 = x
                    .data()
                    .iter()
                    .zip(r.data())
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
                    / x.len() as f64;
                mse[j - 1][k - 1] += e;
                if k == k_max {
                    psnrs[j - 1] += psnr(x, &r).unwrap();
                }
            }
        }
    }
    for j in 1..m {
        assert!(bpps[j - 1] < bpps[m - 1], "adapter q{j} does not save bits: {bpps:?}");
        assert!(bpps[j - 1] < bpps[j], "{bpps:?}");
        assert!(psnrs[j - 1] <= psnrs[j], "{psnrs:?}");
    }
    let n = crops.len() as f64;
    for row in &mse {
        for k in 1..k_max {
            assert!(row[k] / n <= row[k - 1] / n + 1e-6, "{mse:?}");
        }
    }
}
