//! Bitrate adaptive gates.
//!
//! BAL shrinks the base latent, `y · (1 − σ(B(y)))`; IBAL expands the
//! dequantized latent back, `ŷ · (1 + relu(B̂(ŷ)))`.

use rand::Rng;

use crate::codec::nets::gate_specs;
use crate::entropy::{FactorizedEntropyModel, FrozenTables};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Differentiable, FeatureMap, NetGrads, Scalar, Sequential};

/// Final-layer bias of a fresh BAL: `1 − σ(−4) ≈ 0.982`.
pub const BAL_INIT_BIAS: f64 = -4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateKind {
    Bal,
    Ibal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate<T = f32> {
    pub kind: GateKind,
    pub net: Sequential<T>,
}

/// Intermediates kept for the backward pass.
pub struct GateTrace<T> {
    net: Vec<FeatureMap<T>>,
}

impl<T: Scalar> Gate<T> {
    /// Zero final-layer weights make each gate a constant; the IBAL bias `e^−4`
    /// exactly undoes the BAL shrink, so a fresh pair is the identity.
    pub fn init(kind: GateKind, channels: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Sequential::init(&gate_specs(channels, width), rng)?;
        let bias = match kind {
            GateKind::Bal => BAL_INIT_BIAS,
            GateKind::Ibal => BAL_INIT_BIAS.exp(),
        };
        let mut tensors = net.param_tensors_mut();
        let n = tensors.len();
        tensors[n - 2].fill(T::zero());
        tensors[n - 1].fill(T::from_f64_lossy(bias));
        Ok(Self { kind, net })
    }

    pub fn from_net(kind: GateKind, net: Sequential<T>) -> Self {
        Self { kind, net }
    }

    fn apply(&self, y: &FeatureMap<T>, z: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let one = T::one();
        match self.kind {
            GateKind::Bal => y.zip_map(z, |v, g| v * (one - sig(g))),
            GateKind::Ibal => y.zip_map(z, |v, g| v * (one + g.max(T::zero()))),
        }
    }

    pub fn forward(&self, y: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let z = self.net.forward(y)?;
        self.apply(y, &z)
    }

    pub fn forward_trace(&self, y: &FeatureMap<T>) -> Result<(FeatureMap<T>, GateTrace<T>)> {
        let net = self.net.forward_trace(y)?;
        let out = self.apply(y, net.last().expect("non-empty trace"))?;
        Ok((out, GateTrace { net }))
    }

    pub fn backward(
        &self,
        trace: &GateTrace<T>,
        grad_out: &FeatureMap<T>,
        want_params: bool,
    ) -> Result<NetGrads<T>> {
        let y = &trace.net[0];
        let z = trace.net.last().expect("non-empty trace");
        let one = T::one();
        let (direct, grad_z) = match self.kind {
            GateKind::Bal => {
                let direct = grad_out.zip_map(z, |g, s| g * (one - sig(s)))?;
                let mut gz = grad_out.zip_map(y, |g, v| g * v)?;
                for (a, &s) in gz.data_mut().iter_mut().zip(z.data()) {
                    let p = sig(s);
                    *a = -*a * p * (one - p);
                }
                (direct, gz)
            }
            GateKind::Ibal => {
                let direct = grad_out.zip_map(z, |g, s| g * (one + s.max(T::zero())))?;
                let mut gz = grad_out.zip_map(y, |g, v| g * v)?;
                for (a, &s) in gz.data_mut().iter_mut().zip(z.data()) {
                    if s <= T::zero() {
                        *a = T::zero();
                    }
                }
                (direct, gz)
            }
        };
        let mut g = self.net.backward(&trace.net, &grad_z, want_params)?;
        g.input.add_scaled(&direct, one)?;
        Ok(g)
    }
}

fn sig<T: Scalar>(x: T) -> T {
    T::from_f64_lossy(sigmoid(x.to_f64_lossy()))
}

impl Differentiable for Gate<f64> {
    fn param_tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.net.param_tensors_mut()
    }

    fn forward(&self, x: &FeatureMap<f64>) -> Result<FeatureMap<f64>> {
        Gate::forward(self, x)
    }

    fn backward(
        &self,
        x: &FeatureMap<f64>,
        grad_out: &FeatureMap<f64>,
    ) -> Result<(Vec<Vec<f64>>, FeatureMap<f64>)> {
        let (_, trace) = self.forward_trace(x)?;
        let g = Gate::backward(self, &trace, grad_out, true)?;
        Ok((g.params, g.input))
    }
}

/// Entropy model plus the integer tables frozen from it.
#[derive(Clone, Debug, PartialEq)]
pub struct CodingPrior {
    pub model: FactorizedEntropyModel,
    pub tables: FrozenTables,
}

impl CodingPrior {
    pub fn freeze(model: FactorizedEntropyModel) -> Result<Self> {
        let tables = model.export_cdf()?;
        Ok(Self { model, tables })
    }
}

/// Everything one non-base bitrate adds to the bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub bal: Gate,
    pub ibal: Gate,
    pub prior: CodingPrior,
}

impl Adapter {
    pub fn check_channels(&self, channels: usize) -> Result<()> {
        let ok = [&self.bal, &self.ibal].iter().all(|g| {
            let s = g.net.specs();
            s.first().map(|l| l.in_channels) == Some(channels)
                && s.last().map(|l| l.out_channels) == Some(channels)
        }) && self.prior.tables.channels() == channels;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "adapter does not match {channels} latent channels"
            )))
        }
    }

    pub fn param_count(&self) -> usize {
        self.bal.net.param_count() + self.ibal.net.param_count() + self.prior.model.param_count()
    }
}
