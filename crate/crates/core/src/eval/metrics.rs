use crate::error::{Error, Result};
use crate::nn::FeatureMap;

pub const PSNR_CAP_DB: f64 = 100.0;

/// `[0,1]` sample → 8-bit code value.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn image_to_u8(image: &FeatureMap) -> Vec<u8> {
    image.data().iter().map(|&v| to_u8(v)).collect()
}

pub fn mse_u8(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "cannot compare images of {} and {} samples",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

pub fn psnr_u8(a: &[u8], b: &[u8]) -> Result<f64> {
    let mse = mse_u8(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// PSNR after quantizing both images to 8 bits.
pub fn psnr(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "PSNR of {:?} against {:?}",
            a.shape(),
            b.shape()
        )));
    }
    psnr_u8(&image_to_u8(a), &image_to_u8(b))
}

/// Bits per pixel of a complete stream, header included.
pub fn bpp(stream_bytes: usize, orig_h: usize, orig_w: usize) -> Result<f64> {
    if orig_h == 0 || orig_w == 0 {
        return Err(Error::InvalidArgument("image has no pixels".into()));
    }
    Ok(stream_bytes as f64 * 8.0 / (orig_h * orig_w) as f64)
}
