//! Training images, seeded crop streams and a procedural image generator.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio::{load_png, save_png};
use crate::nn::FeatureMap;

/// Endless, seed-determined sequence of random crops.
#[derive(Clone, Debug)]
pub struct CropStream {
    images: Vec<FeatureMap>,
    crop: usize,
    rng: ChaCha8Rng,
}

impl CropStream {
    pub fn new(images: Vec<FeatureMap>, crop: usize, seed: u64) -> Result<Self> {
        let images: Vec<_> = images
            .into_iter()
            .filter(|im| im.channels() == 3 && im.height() >= crop && im.width() >= crop)
            .collect();
        if images.is_empty() {
            return Err(Error::Data(format!("no image is at least {crop}x{crop}")));
        }
        Ok(Self {
            images,
            crop,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn images(&self) -> &[FeatureMap] {
        &self.images
    }

    pub fn crop_size(&self) -> usize {
        self.crop
    }

    /// Next crop and the index of the image it came from.
    pub fn next_indexed(&mut self) -> (usize, FeatureMap) {
        let i = self.rng.gen_range(0..self.images.len());
        let im = &self.images[i];
        let y0 = self.rng.gen_range(0..=im.height() - self.crop);
        let x0 = self.rng.gen_range(0..=im.width() - self.crop);
        let crop = FeatureMap::from_fn(3, self.crop, self.crop, |c, y, x| im.get(c, y0 + y, x0 + x));
        (i, crop)
    }

    pub fn next_crop(&mut self) -> FeatureMap {
        self.next_indexed().1
    }
}

/// Load every PNG in `dir` (sorted by name); unusable files are skipped with a warning.
pub fn load_dir(dir: &Path, min_side: usize) -> Result<Vec<FeatureMap>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        match load_png(&p) {
            Ok(im) if im.height() >= min_side && im.width() >= min_side => out.push(im),
            Ok(im) => log::warn!(
                "skipping {}: {}x{} is smaller than {min_side}",
                p.display(),
                im.height(),
                im.width()
            ),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "no usable images of at least {min_side}x{min_side} in {}",
            dir.display()
        )));
    }
    Ok(out)
}

pub fn ingest_dataset(dir: &Path, crop: usize, seed: u64) -> Result<CropStream> {
    CropStream::new(load_dir(dir, crop)?, crop, seed)
}

/// Smooth colour fields with a few soft-edged shapes; deterministic in `seed`.
pub fn synthetic_image(height: usize, width: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f32; 5]> = (0..9)
        .map(|_| {
            [
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.0..std::f32::consts::TAU),
                rng.gen_range(0.05..0.15),
                rng.gen_range(0.0..1.0),
            ]
        })
        .collect();
    let shapes: Vec<[f32; 6]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.08..0.25),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            ]
        })
        .collect();
    let base: [f32; 3] = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
    let scale = height.max(width) as f32;
    FeatureMap::from_fn(3, height, width, |c, y, x| {
        let (u, v) = (y as f32 / scale, x as f32 / scale);
        let mut s = base[c];
        for w in &waves[c * 3..c * 3 + 3] {
            s += w[3] * (std::f32::consts::TAU * (w[0] * u + w[1] * v) + w[2]).sin();
        }
        for sh in &shapes {
            let d = ((u - sh[0]).powi(2) + (v - sh[1]).powi(2)).sqrt();
            let inside = 1.0 / (1.0 + ((d - sh[2]) * 60.0).exp());
            s += inside * sh[3 + c];
        }
        s.clamp(0.0, 1.0)
    })
}

pub fn synthetic_images(count: usize, height: usize, width: usize, seed: u64) -> Vec<FeatureMap> {
    (0..count)
        .map(|i| synthetic_image(height, width, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

/// The eight 80×80 images the desk-scale defaults are tuned on.
pub fn toy_images() -> Vec<FeatureMap> {
    synthetic_images(8, 80, 80, 7)
}

/// Write `count` synthetic PNGs named `img_000.png`, … into `dir`.
pub fn write_synthetic_dataset(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, im) in synthetic_images(count, height, width, seed).iter().enumerate() {
        save_png(&dir.join(format!("img_{i:03}.png")), im)?;
    }
    Ok(())
}
