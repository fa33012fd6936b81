//! Central finite-difference gradient checks in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{FeatureMap, Layer, LayerSpec, Sequential};

/// Anything with parameters, a forward map and its reverse-mode derivative.
pub trait Differentiable {
    fn param_tensors_mut(&mut self) -> Vec<&mut Vec<f64>>;
    fn forward(&self, x: &FeatureMap<f64>) -> Result<FeatureMap<f64>>;
    /// `(parameter gradients in storage order, input gradient)`
    fn backward(
        &self,
        x: &FeatureMap<f64>,
        grad_out: &FeatureMap<f64>,
    ) -> Result<(Vec<Vec<f64>>, FeatureMap<f64>)>;
}

impl Differentiable for Layer<f64> {
    fn param_tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.params_mut().iter_mut().collect()
    }

    fn forward(&self, x: &FeatureMap<f64>) -> Result<FeatureMap<f64>> {
        Layer::forward(self, x)
    }

    fn backward(
        &self,
        x: &FeatureMap<f64>,
        grad_out: &FeatureMap<f64>,
    ) -> Result<(Vec<Vec<f64>>, FeatureMap<f64>)> {
        let g = Layer::backward(self, x, grad_out, true)?;
        Ok((g.params, g.input))
    }
}

impl Differentiable for Sequential<f64> {
    fn param_tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        Sequential::param_tensors_mut(self)
    }

    fn forward(&self, x: &FeatureMap<f64>) -> Result<FeatureMap<f64>> {
        Sequential::forward(self, x)
    }

    fn backward(
        &self,
        x: &FeatureMap<f64>,
        grad_out: &FeatureMap<f64>,
    ) -> Result<(Vec<Vec<f64>>, FeatureMap<f64>)> {
        let trace = self.forward_trace(x)?;
        let g = Sequential::backward(self, &trace, grad_out, true)?;
        Ok((g.params, g.input))
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error between analytic and central-difference gradients,
/// over every parameter and every input element.
///
/// The scalar objective is `<u, f(x)>` for a fixed pseudo-random upstream `u`.
pub fn grad_check<D: Differentiable>(f: &mut D, x: &FeatureMap<f64>, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside (0, 1e-2]"
        )));
    }
    let y = f.forward(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let (c, h, w) = y.shape();
    let upstream = FeatureMap::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0));
    let objective = |f: &D, x: &FeatureMap<f64>| -> Result<f64> { Ok(f.forward(x)?.dot(&upstream)) };

    let (param_grads, input_grad) = f.backward(x, &upstream)?;
    let mut worst = 0.0f64;

    let n_tensors = f.param_tensors_mut().len();
    for t in 0..n_tensors {
        let len = f.param_tensors_mut()[t].len();
        for i in 0..len {
            let orig = f.param_tensors_mut()[t][i];
            f.param_tensors_mut()[t][i] = orig + eps;
            let plus = objective(f, x)?;
            f.param_tensors_mut()[t][i] = orig - eps;
            let minus = objective(f, x)?;
            f.param_tensors_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(param_grads[t][i], numeric));
        }
    }

    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = objective(f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = objective(f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(input_grad.data()[i], numeric));
    }
    Ok(worst)
}

/// [`grad_check`] for a single layer described by `spec` and stored `params`.
pub fn grad_check_layer(
    spec: LayerSpec,
    params: Vec<Vec<f64>>,
    x: &FeatureMap<f64>,
    eps: f64,
) -> Result<f64> {
    let mut layer = Layer::new(spec, params)?;
    grad_check(&mut layer, x, eps)
}
