//! Forward pipelines and the image ⇄ `.cba` round trip.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::bundle::ModelBundle;
use crate::codec::nets::DOWNSAMPLE;
use crate::entropy::{pack_bitstream, parse_bitstream, quantize, Header, QuantMode};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::nn::conv::reflect_index;
use crate::nn::FeatureMap;

/// Base latent `y^b` of a padded `[0,1]` RGB image.
pub fn encode_latent(image: &FeatureMap, bundle: &ModelBundle) -> Result<Latent> {
    let (c, h, w) = image.shape();
    if c != 3 {
        return Err(Error::Shape(format!("encoder takes 3 channels, got {c}")));
    }
    if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} is not padded to a multiple of {DOWNSAMPLE}"
        )));
    }
    image.ensure_finite("image")?;
    Latent::new(bundle.encoder.forward(image)?, bundle.base_quality(), false)
}

fn check_index(latent: &Latent, j: usize, bundle: &ModelBundle, what: &str) -> Result<()> {
    bundle.config.check_quality(j)?;
    let (c, _, _) = latent.shape();
    if c != bundle.config.latent_channels {
        return Err(Error::Shape(format!(
            "{what}: latent has {c} channels, bundle expects {}",
            bundle.config.latent_channels
        )));
    }
    Ok(())
}

/// Retarget the base latent to quality `j`; identity at the base quality.
pub fn bal_forward(y_b: &Latent, j: usize, bundle: &ModelBundle) -> Result<Latent> {
    check_index(y_b, j, bundle, "BAL")?;
    if y_b.quality_index != bundle.base_quality() || y_b.quantized {
        return Err(Error::InvalidArgument(
            "BAL takes the unquantized base latent".into(),
        ));
    }
    match bundle.adapter(j)? {
        None => Ok(y_b.clone()),
        Some(a) => Latent::new(a.bal.forward(&y_b.values)?, j, false),
    }
}

/// Map a dequantized quality-`j` latent back to the base domain.
pub fn ibal_forward(y_hat_j: &Latent, j: usize, bundle: &ModelBundle) -> Result<Latent> {
    check_index(y_hat_j, j, bundle, "IBAL")?;
    match bundle.adapter(j)? {
        None => Ok(y_hat_j.clone()),
        Some(a) => Latent::new(a.ibal.forward(&y_hat_j.values)?, bundle.base_quality(), false),
    }
}

pub fn cam_decode(y_hat_b: &Latent, k: usize, bundle: &ModelBundle) -> Result<FeatureMap> {
    bundle.cam.decode(&y_hat_b.values, k)
}

/// Reflect-pad bottom and right edges up to multiples of `multiple`.
pub fn pad_reflect(image: &FeatureMap, multiple: usize) -> FeatureMap {
    let (c, h, w) = image.shape();
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return image.clone();
    }
    FeatureMap::from_fn(c, ph, pw, |ch, y, x| {
        image.get(ch, reflect_index(y as isize, h), reflect_index(x as isize, w))
    })
}

/// Top-left `h × w` window.
pub fn crop(image: &FeatureMap, h: usize, w: usize) -> Result<FeatureMap> {
    let (c, ih, iw) = image.shape();
    if h > ih || w > iw {
        return Err(Error::Shape(format!("cannot crop {ih}x{iw} to {h}x{w}")));
    }
    Ok(FeatureMap::from_fn(c, h, w, |ch, y, x| image.get(ch, y, x)))
}

/// Image → quantized latent at quality `j`, with the padded dims.
pub fn analyze(bundle: &ModelBundle, image: &FeatureMap, j: usize) -> Result<Latent> {
    bundle.config.check_quality(j)?;
    let padded = pad_reflect(image, DOWNSAMPLE);
    let y_b = encode_latent(&padded, bundle)?;
    let y_j = bal_forward(&y_b, j, bundle)?;
    // eval-mode quantization draws no randomness
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    quantize(&y_j, QuantMode::Eval, &mut rng)
}

/// Full encoder: `[0,1]` RGB image of any size → `.cba` bytes.
pub fn compress(bundle: &ModelBundle, image: &FeatureMap, j: usize) -> Result<Vec<u8>> {
    let (_, h, w) = image.shape();
    let y_hat = analyze(bundle, image, j)?;
    let payload = bundle.prior(j)?.tables.encode(&y_hat.values)?;
    let header = Header::new(j, (h, w), y_hat.shape(), payload.len())?;
    pack_bitstream(&header, &payload)
}

/// Parsed stream with its dequantized latent.
pub struct Decoded {
    pub header: Header,
    pub latent: Latent,
}

pub fn parse_and_decode_latent(bundle: &ModelBundle, bytes: &[u8]) -> Result<Decoded> {
    let (header, payload) = parse_bitstream(bytes)?;
    let j = header.quality_index as usize;
    bundle.config.check_quality(j)?;
    let (c, h, w) = (
        header.latent_c as usize,
        header.latent_h as usize,
        header.latent_w as usize,
    );
    if c != bundle.config.latent_channels
        || h * DOWNSAMPLE < header.orig_h as usize
        || w * DOWNSAMPLE < header.orig_w as usize
        || (h - 1) * DOWNSAMPLE >= header.orig_h as usize
        || (w - 1) * DOWNSAMPLE >= header.orig_w as usize
    {
        return Err(Error::Bitstream(format!(
            "latent {c}x{h}x{w} does not fit image {}x{} for this bundle",
            header.orig_h, header.orig_w
        )));
    }
    let values = bundle.prior(j)?.tables.decode(payload, c, h, w)?;
    Ok(Decoded {
        header,
        latent: Latent::new(values, j, true)?,
    })
}

/// Full decoder with `k` branches: `.cba` bytes → unclamped image at the original size.
pub fn decompress(bundle: &ModelBundle, bytes: &[u8], k: usize) -> Result<FeatureMap> {
    bundle.cam.check_branches(k)?;
    let d = parse_and_decode_latent(bundle, bytes)?;
    let j = d.header.quality_index as usize;
    let y_b = ibal_forward(&d.latent, j, bundle)?;
    let x = cam_decode(&y_b, k, bundle)?;
    crop(&x, d.header.orig_h as usize, d.header.orig_w as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;

    fn bundle() -> ModelBundle {
        let mut c = CodecConfig::desk();
        c.latent_channels = 8;
        c.cam_width = 32;
        c.bam_width = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        ModelBundle::init(c, 2, &mut rng).unwrap()
    }

    fn image(h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(3, h, w, |c, y, x| {
            0.5 + 0.4 * ((c + 1) as f32 * 0.3 * y as f32 + 0.2 * x as f32).sin()
        })
    }

    #[test]
    fn latent_shape_follows_stride() {
        let b = bundle();
        let y = encode_latent(&image(32, 48), &b).unwrap();
        assert_eq!(y.shape(), (8, 2, 3));
        assert_eq!(y.quality_index, 3);
        assert!(!y.quantized);
        assert!(encode_latent(&image(30, 48), &b).is_err());
    }

    #[test]
    fn zero_image_gives_zero_latent() {
        let y = encode_latent(&FeatureMap::zeros(3, 16, 16), &bundle()).unwrap();
        assert!(y.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_restores_original_size() {
        let b = bundle();
        let img = image(20, 37);
        let stream = compress(&b, &img, 3).unwrap();
        assert_eq!(stream, compress(&b, &img, 3).unwrap());
        let out = decompress(&b, &stream, 2).unwrap();
        assert_eq!(out.shape(), (3, 20, 37));
        assert!(decompress(&b, &stream, 4).is_err());
    }

    #[test]
    fn padding_reflects() {
        let img = FeatureMap::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let p = pad_reflect(&img, 4);
        assert_eq!(p.shape(), (1, 4, 4));
        assert_eq!(&p.data()[..4], &[1.0, 2.0, 3.0, 2.0]);
        assert_eq!(crop(&p, 1, 3).unwrap(), img);
    }
}
