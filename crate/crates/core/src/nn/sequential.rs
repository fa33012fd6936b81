use rand::Rng;

use crate::error::Result;
use crate::nn::{FeatureMap, Layer, LayerSpec, Scalar};

/// A chain of layers evaluated in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T = f32> {
    layers: Vec<Layer<T>>,
}

/// Gradients of a [`Sequential`]: parameter tensors flattened in storage order.
#[derive(Clone, Debug)]
pub struct NetGrads<T> {
    pub params: Vec<Vec<T>>,
    pub input: FeatureMap<T>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn init(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|s| Layer::init(*s, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Rebuild from specs and a flat list of parameter tensors.
    pub fn from_flat(specs: &[LayerSpec], mut tensors: Vec<Vec<T>>) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut rest = tensors.drain(..);
        for spec in specs {
            let params: Vec<Vec<T>> = rest.by_ref().take(spec.param_shapes().len()).collect();
            layers.push(Layer::new(*spec, params)?);
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| *l.spec()).collect()
    }

    pub fn param_tensors(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(|l| l.params().iter()).collect()
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut().iter_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec().param_count()).sum()
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Forward pass keeping every intermediate; `trace[0]` is the input, the last entry the output.
    pub fn forward_trace(&self, x: &FeatureMap<T>) -> Result<Vec<FeatureMap<T>>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(trace.last().expect("non-empty trace"))?;
            trace.push(next);
        }
        Ok(trace)
    }

    pub fn backward(
        &self,
        trace: &[FeatureMap<T>],
        grad_out: &FeatureMap<T>,
        want_params: bool,
    ) -> Result<NetGrads<T>> {
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut grad = grad_out.clone();
        for (layer, x) in self.layers.iter().zip(trace).rev() {
            let g = layer.backward(x, &grad, want_params)?;
            per_layer.push(g.params);
            grad = g.input;
        }
        per_layer.reverse();
        Ok(NetGrads {
            params: per_layer.into_iter().flatten().collect(),
            input: grad,
        })
    }
}
