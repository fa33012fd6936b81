//! Train the desk-scale codec on the synthetic toy set and print its RD table.
//!
//! `cargo run --release --example toy_run`

use std::time::Instant;

use cbanet::codec::CodecConfig;
use cbanet::eval::sweep::{rd_sweep, to_csv};
use cbanet::train::{toy_images, train_all, CropStream, TrainConfig};

fn main() -> cbanet::Result<()> {
    let tc = TrainConfig::desk();
    let images = toy_images();
    let t = Instant::now();
    let (bundle, reports) = train_all(CodecConfig::desk(), &tc, &images)?;
    for r in &reports {
        println!("{:8} final loss {:.4}", r.stage, r.final_loss());
    }
    println!("trained in {:.1}s, branch weights {:?}", t.elapsed().as_secs_f64(),
        bundle.cam.branches.iter().map(|b| b.g).collect::<Vec<_>>());
    let mut stream = CropStream::new(images, tc.crop_size, 99)?;
    let crops: Vec<_> = (0..16).map(|_| stream.next_crop()).collect();
    let q: Vec<usize> = (1..=bundle.base_quality()).collect();
    let k: Vec<usize> = (1..=bundle.cam.k_max()).collect();
    print!("{}", to_csv(&rd_sweep(&bundle, &crops, &q, &k)?));
    Ok(())
}
