//! PNG in/out. Samples are `[0,1]` floats in a 3-channel `FeatureMap`.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::eval::metrics::to_u8;
use crate::nn::FeatureMap;

/// Decode a PNG; grayscale and alpha inputs become plain RGB.
pub fn load_png(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path)?;
    decode_png(&bytes)
}

pub fn decode_png(bytes: &[u8]) -> Result<FeatureMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    Ok(from_rgb8(img.width() as usize, img.height() as usize, img.as_raw()))
}

/// Interleaved RGB bytes → planar `[0,1]` map.
pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> FeatureMap {
    FeatureMap::from_fn(3, height, width, |c, y, x| {
        rgb[(y * width + x) * 3 + c] as f32 / 255.0
    })
}

/// Planar map → interleaved RGB bytes, clamped and rounded.
pub fn to_rgb8(image: &FeatureMap) -> Result<Vec<u8>> {
    let (c, h, w) = image.shape();
    if c != 3 {
        return Err(Error::Shape(format!("RGB export needs 3 channels, got {c}")));
    }
    let mut out = vec![0u8; h * w * 3];
    for ch in 0..3 {
        for (i, &v) in image.plane(ch).iter().enumerate() {
            out[i * 3 + ch] = to_u8(v);
        }
    }
    Ok(out)
}

pub fn encode_png(image: &FeatureMap) -> Result<Vec<u8>> {
    let (_, h, w) = image.shape();
    let img = RgbImage::from_raw(w as u32, h as u32, to_rgb8(image)?)
        .ok_or_else(|| Error::Shape("image buffer size".into()))?;
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn save_png(path: &Path, image: &FeatureMap) -> Result<()> {
    std::fs::write(path, encode_png(image)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless_on_8bit_values() {
        let img = FeatureMap::from_fn(3, 5, 7, |c, y, x| ((c * 35 + y * 7 + x) * 2) as f32 / 255.0);
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn grayscale_is_replicated() {
        let g = image::GrayImage::from_raw(2, 1, vec![0, 255]).unwrap();
        let mut buf = std::io::Cursor::new(Vec::new());
        g.write_to(&mut buf, ImageFormat::Png).unwrap();
        let img = decode_png(buf.get_ref()).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }
}
