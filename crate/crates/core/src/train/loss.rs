use crate::error::{Error, Result};
use crate::nn::FeatureMap;

/// Mean squared error on the 0–255 scale, with its gradient w.r.t. `x_hat`.
pub fn mse255_with_grad(x: &FeatureMap, x_hat: &FeatureMap) -> Result<(f64, FeatureMap)> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Shape(format!(
            "distortion of {:?} against {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    let n = x.len() as f64;
    let s = 255.0f64 * 255.0;
    let mut sum = 0.0;
    let grad = x_hat.zip_map(x, |a, b| ((2.0 * s / n) * (a as f64 - b as f64)) as f32)?;
    for (&a, &b) in x_hat.data().iter().zip(x.data()) {
        let d = a as f64 - b as f64;
        sum += d * d;
    }
    Ok((sum * s / n, grad))
}

/// `bits / pixels + λ · D` with `D` the 255-scale MSE.
pub fn loss_rd(x: &FeatureMap, x_hat: &FeatureMap, bits: f64, lambda: f64, pixels: usize) -> Result<f64> {
    let (d, _) = mse255_with_grad(x, x_hat)?;
    Ok(bits / pixels as f64 + lambda * d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f32) -> FeatureMap {
        FeatureMap::from_fn(3, 4, 4, |_, _, _| v)
    }

    #[test]
    fn identical_images_leave_the_rate() {
        assert_eq!(loss_rd(&img(0.3), &img(0.3), 96.0, 2048.0, 16).unwrap(), 6.0);
    }

    #[test]
    fn uniform_error_of_16_levels() {
        let l = loss_rd(&img(0.25), &img(0.25 + 16.0 / 255.0), 0.0, 2048.0, 16).unwrap();
        assert!((l / (2048.0 * 256.0) - 1.0).abs() < 1e-6, "{l}");
    }

    #[test]
    fn monotone_in_lambda() {
        let (a, b) = (img(0.2), img(0.3));
        let l1 = loss_rd(&a, &b, 10.0, 0.01, 16).unwrap();
        let l2 = loss_rd(&a, &b, 10.0, 0.02, 16).unwrap();
        assert!(l2 > l1);
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        let x = FeatureMap::from_fn(3, 2, 2, |c, i, j| (c + i + j) as f32 * 0.1);
        let xh = x.map(|v| v + 0.05);
        let (d0, g) = mse255_with_grad(&x, &xh).unwrap();
        let mut xp = xh.clone();
        xp.data_mut()[5] += 1e-3;
        let (d1, _) = mse255_with_grad(&x, &xp).unwrap();
        assert!(((d1 - d0) / 1e-3 - g.data()[5] as f64).abs() < 0.05 * g.data()[5].abs() as f64);
    }
}
