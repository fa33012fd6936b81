//! Generalized divisive normalization on effective (positive) parameters.
//!
//! Per spatial site: `norm_i = beta_i + Σ_j gamma_ij · x_j²`;
//! GDN gives `x_i / sqrt(norm_i)`, IGDN gives `x_i · sqrt(norm_i)`.

use crate::nn::{matmul, Scalar};

fn norms<T: Scalar>(x: &[T], channels: usize, plane: usize, beta: &[T], gamma: &[T]) -> Vec<T> {
    let sq: Vec<T> = x.iter().map(|&v| v * v).collect();
    let mut norm = vec![T::zero(); channels * plane];
    for (c, b) in beta.iter().enumerate() {
        norm[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = *b);
    }
    matmul(channels, channels, plane, gamma, false, &sq, false, &mut norm, true);
    norm
}

pub fn gdn_forward<T: Scalar>(
    x: &[T],
    channels: usize,
    plane: usize,
    beta: &[T],
    gamma: &[T],
    inverse: bool,
) -> Vec<T> {
    let norm = norms(x, channels, plane, beta, gamma);
    x.iter()
        .zip(&norm)
        .map(|(&v, &n)| if inverse { v * n.sqrt() } else { v / n.sqrt() })
        .collect()
}

/// Returns `(grad_beta, grad_gamma, grad_x)` with respect to the effective parameters.
#[allow(clippy::too_many_arguments)]
pub fn gdn_backward<T: Scalar>(
    x: &[T],
    channels: usize,
    plane: usize,
    beta: &[T],
    gamma: &[T],
    inverse: bool,
    grad_out: &[T],
    want_params: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let norm = norms(x, channels, plane, beta, gamma);
    let half = T::from_f64_lossy(0.5);
    // dL/dnorm_i = coef_i; for GDN out = x·n^-1/2 → -½·g·x·n^-3/2, IGDN → ½·g·x·n^-1/2.
    let mut coef = vec![T::zero(); x.len()];
    let mut grad_x = vec![T::zero(); x.len()];
    for i in 0..x.len() {
        let n = norm[i];
        let r = n.sqrt();
        if inverse {
            coef[i] = half * grad_out[i] * x[i] / r;
            grad_x[i] = grad_out[i] * r;
        } else {
            coef[i] = -half * grad_out[i] * x[i] / (n * r);
            grad_x[i] = grad_out[i] / r;
        }
    }
    // dnorm_i/dx_k = 2·gamma_ik·x_k → grad_x_k += 2·x_k·Σ_i gamma_ik·coef_i
    let mut back = vec![T::zero(); x.len()];
    matmul(channels, channels, plane, gamma, true, &coef, false, &mut back, false);
    let two = T::from_f64_lossy(2.0);
    for i in 0..x.len() {
        grad_x[i] = grad_x[i] + two * x[i] * back[i];
    }
    if !want_params {
        return (Vec::new(), Vec::new(), grad_x);
    }
    let grad_beta: Vec<T> = (0..channels)
        .map(|c| coef[c * plane..(c + 1) * plane].iter().copied().sum())
        .collect();
    let sq: Vec<T> = x.iter().map(|&v| v * v).collect();
    let mut grad_gamma = vec![T::zero(); channels * channels];
    matmul(channels, plane, channels, &coef, false, &sq, true, &mut grad_gamma, false);
    (grad_beta, grad_gamma, grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_gamma_zero_beta_one() {
        let x = [0.5, -3.0, 7.25, 0.0];
        let y = gdn_forward(&x, 2, 2, &[1.0, 1.0], &[0.0; 4], false);
        assert_eq!(y, x);
    }

    #[test]
    fn single_channel_hand_value() {
        let y = gdn_forward(&[3.0f64], 1, 1, &[1.0], &[1.0], false);
        assert!((y[0] - 3.0 / 10f64.sqrt()).abs() < 1e-15);
        assert!((y[0] - 0.94868).abs() < 1e-5);
    }

    #[test]
    fn gdn_then_igdn_is_identity_for_zero_gamma() {
        let x = [0.5f64, -3.0, 7.25, 1e-3, 2.0, -0.125];
        let beta = [1.0, 1.0, 1.0];
        let gamma = [0.0; 9];
        let y = gdn_forward(&x, 3, 2, &beta, &gamma, false);
        let z = gdn_forward(&y, 3, 2, &beta, &gamma, true);
        assert_eq!(z, x);
    }

    #[test]
    fn identity_region_gradient_passes_upstream() {
        let g = [0.3, -1.0, 2.0, 0.7];
        let (_, _, gx) = gdn_backward(&[1.0, 2.0, 3.0, 4.0], 2, 2, &[1.0, 1.0], &[0.0; 4], false, &g, true);
        assert_eq!(gx, g);
    }
}
