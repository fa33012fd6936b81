use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::{self, ConvGeometry};
use crate::nn::gdn;
use crate::nn::{FeatureMap, Scalar};

pub const LEAKY_RELU_SLOPE: f64 = 0.2;
/// Floor added to GDN beta after the softplus map.
pub const GDN_BETA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    Deconv,
    DepthwiseConv,
    Gdn,
    Igdn,
    LeakyRelu,
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    SameReflect,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding: Padding::SameReflect,
        }
    }

    pub fn deconv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Deconv,
            ..Self::conv(in_channels, out_channels, kernel, stride)
        }
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self {
            kind: LayerKind::DepthwiseConv,
            ..Self::conv(channels, channels, kernel, 1)
        }
    }

    pub fn elementwise(kind: LayerKind, channels: usize) -> Self {
        Self {
            kind,
            in_channels: channels,
            out_channels: channels,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            padding: Padding::SameReflect,
        }
    }

    pub fn gdn(channels: usize) -> Self {
        Self::elementwise(LayerKind::Gdn, channels)
    }

    pub fn igdn(channels: usize) -> Self {
        Self::elementwise(LayerKind::Igdn, channels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("{:?}: {msg}", self.kind)));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive");
        }
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return bad("kernel and stride must be positive");
        }
        match self.kind {
            LayerKind::Conv | LayerKind::Deconv => {
                if self.padding == Padding::SameReflect
                    && (self.kernel_h % 2 == 0 || self.kernel_w % 2 == 0)
                {
                    return bad("same padding needs odd kernels");
                }
            }
            LayerKind::DepthwiseConv => {
                if self.in_channels != self.out_channels {
                    return bad("depthwise conv must keep the channel count");
                }
                if self.padding == Padding::SameReflect
                    && (self.kernel_h % 2 == 0 || self.kernel_w % 2 == 0)
                {
                    return bad("same padding needs odd kernels");
                }
            }
            _ => {
                if self.in_channels != self.out_channels {
                    return bad("elementwise layer must keep the channel count");
                }
            }
        }
        Ok(())
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv
                | LayerKind::Deconv
                | LayerKind::DepthwiseConv
                | LayerKind::Gdn
                | LayerKind::Igdn
        )
    }

    /// Shapes of the stored parameter tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (ci, co, kh, kw) = (
            self.in_channels,
            self.out_channels,
            self.kernel_h,
            self.kernel_w,
        );
        match self.kind {
            LayerKind::Conv => vec![vec![co, ci, kh, kw], vec![co]],
            LayerKind::Deconv => vec![vec![ci, co, kh, kw], vec![co]],
            LayerKind::DepthwiseConv => vec![vec![ci, kh, kw], vec![ci]],
            LayerKind::Gdn | LayerKind::Igdn => vec![vec![ci], vec![ci, ci]],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Geometry of the underlying (adjoint, for deconv) convolution.
    fn geometry(&self, h: usize, w: usize) -> Result<ConvGeometry> {
        let (kh, kw, s) = (self.kernel_h, self.kernel_w, self.stride);
        let g = match (self.kind, self.padding) {
            (LayerKind::Deconv, Padding::SameReflect) => {
                ConvGeometry::same(h * s, w * s, kh, kw, s)
            }
            (LayerKind::Deconv, Padding::Valid) => {
                ConvGeometry::valid((h - 1) * s + kh, (w - 1) * s + kw, kh, kw, s)
                    .expect("valid deconv output always fits its kernel")
            }
            (_, Padding::SameReflect) => ConvGeometry::same(h, w, kh, kw, s),
            (_, Padding::Valid) => ConvGeometry::valid(h, w, kh, kw, s).ok_or_else(|| {
                Error::Shape(format!("{kh}x{kw} kernel does not fit a {h}x{w} input"))
            })?,
        };
        Ok(g)
    }

    /// Output `(channels, height, width)` for an input of `h × w`.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        match self.kind {
            LayerKind::Conv | LayerKind::DepthwiseConv => {
                let g = self.geometry(h, w)?;
                Ok((self.out_channels, g.out_h, g.out_w))
            }
            LayerKind::Deconv => {
                let g = self.geometry(h, w)?;
                Ok((self.out_channels, g.in_h, g.in_w))
            }
            _ => Ok((self.out_channels, h, w)),
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]; maps 0 to -inf.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        (-(-y).exp_m1()).ln() + y
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients of one layer: per-parameter-tensor gradients plus the input gradient.
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub params: Vec<Vec<T>>,
    pub input: FeatureMap<T>,
}

/// A layer together with its stored parameters.
///
/// GDN/IGDN store unconstrained values; the effective `beta = softplus(raw) + 1e-6`
/// and `gamma = softplus(raw)` are recomputed on every pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    spec: LayerSpec,
    params: Vec<Vec<T>>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(spec: LayerSpec, params: Vec<Vec<T>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Shape(format!(
                "{:?} takes {} parameter tensors, got {}",
                spec.kind,
                shapes.len(),
                params.len()
            )));
        }
        for (shape, p) in shapes.iter().zip(&params) {
            let n: usize = shape.iter().product();
            if n != p.len() {
                return Err(Error::Shape(format!(
                    "{:?} parameter {:?} needs {n} values, got {}",
                    spec.kind,
                    shape,
                    p.len()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    /// Fan-in scaled uniform weights, zero biases, near-identity GDN.
    pub fn init(spec: LayerSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        let params = match spec.kind {
            LayerKind::Conv | LayerKind::Deconv | LayerKind::DepthwiseConv => {
                let taps = (spec.kernel_h * spec.kernel_w) as f64;
                let fan_in = match spec.kind {
                    LayerKind::Conv => spec.in_channels as f64 * taps,
                    // each output of a strided deconv sees about taps/stride² inputs per channel
                    LayerKind::Deconv => {
                        spec.in_channels as f64 * taps / (spec.stride * spec.stride) as f64
                    }
                    _ => taps,
                };
                let bound = (3.0 / fan_in.max(1.0)).sqrt();
                let w = (0..shapes[0].iter().product::<usize>())
                    .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                    .collect();
                vec![w, vec![T::zero(); shapes[1][0]]]
            }
            LayerKind::Gdn | LayerKind::Igdn => {
                let c = spec.in_channels;
                let beta_raw = T::from_f64_lossy(softplus_inverse(1.0 - GDN_BETA_FLOOR));
                let diag = T::from_f64_lossy(softplus_inverse(0.1));
                let off = T::from_f64_lossy(-10.0);
                let gamma = (0..c * c)
                    .map(|i| if i / c == i % c { diag } else { off })
                    .collect();
                vec![vec![beta_raw; c], gamma]
            }
            _ => Vec::new(),
        };
        Self::new(spec, params)
    }

    /// GDN/IGDN from effective parameters (beta > 0, gamma ≥ 0).
    pub fn gdn_from_effective(inverse: bool, beta: &[f64], gamma: &[f64]) -> Result<Self> {
        let c = beta.len();
        if gamma.len() != c * c {
            return Err(Error::Shape(format!("gamma must be {c}x{c}")));
        }
        if beta.iter().any(|&b| b <= GDN_BETA_FLOOR) || gamma.iter().any(|&g| g < 0.0) {
            return Err(Error::InvalidArgument(
                "GDN needs beta > 1e-6 and gamma >= 0".into(),
            ));
        }
        let spec = if inverse {
            LayerSpec::igdn(c)
        } else {
            LayerSpec::gdn(c)
        };
        let raw_b = beta
            .iter()
            .map(|&b| T::from_f64_lossy(softplus_inverse(b - GDN_BETA_FLOOR)))
            .collect();
        let raw_g = gamma
            .iter()
            .map(|&g| T::from_f64_lossy(softplus_inverse(g)))
            .collect();
        Self::new(spec, vec![raw_b, raw_g])
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    /// Effective `(beta, gamma)` of a GDN/IGDN layer.
    pub fn gdn_effective(&self) -> Option<(Vec<T>, Vec<T>)> {
        if !matches!(self.spec.kind, LayerKind::Gdn | LayerKind::Igdn) {
            return None;
        }
        let beta = self.params[0]
            .iter()
            .map(|&r| T::from_f64_lossy(softplus(r.to_f64_lossy()) + GDN_BETA_FLOOR))
            .collect();
        let gamma = self.params[1]
            .iter()
            .map(|&r| T::from_f64_lossy(softplus(r.to_f64_lossy())))
            .collect();
        Some((beta, gamma))
    }

    fn check_input(&self, x: &FeatureMap<T>) -> Result<()> {
        if x.channels() != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "{:?} expects {} input channels, got {}",
                self.spec.kind,
                self.spec.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.check_input(x)?;
        x.ensure_finite("layer input")?;
        let (c_out, h_out, w_out) = self.spec.output_dims(x.height(), x.width())?;
        let (ci, co) = (self.spec.in_channels, self.spec.out_channels);
        let data = match self.spec.kind {
            LayerKind::Conv => {
                let g = self.spec.geometry(x.height(), x.width())?;
                conv::conv_forward(x.data(), ci, co, &self.params[0], &self.params[1], &g)
            }
            LayerKind::Deconv => {
                let g = self.spec.geometry(x.height(), x.width())?;
                conv::deconv_forward(x.data(), ci, co, &self.params[0], &self.params[1], &g)
            }
            LayerKind::DepthwiseConv => {
                let g = self.spec.geometry(x.height(), x.width())?;
                conv::depthwise_forward(x.data(), ci, &self.params[0], &self.params[1], &g)
            }
            LayerKind::Gdn | LayerKind::Igdn => {
                let (beta, gamma) = self.gdn_effective().expect("gdn layer");
                gdn::gdn_forward(
                    x.data(),
                    ci,
                    x.plane_len(),
                    &beta,
                    &gamma,
                    self.spec.kind == LayerKind::Igdn,
                )
            }
            LayerKind::LeakyRelu => {
                let slope = T::from_f64_lossy(LEAKY_RELU_SLOPE);
                x.data()
                    .iter()
                    .map(|&v| if v > T::zero() { v } else { v * slope })
                    .collect()
            }
            LayerKind::Relu => x.data().iter().map(|&v| v.max(T::zero())).collect(),
            LayerKind::Sigmoid => x
                .data()
                .iter()
                .map(|&v| T::from_f64_lossy(sigmoid(v.to_f64_lossy())))
                .collect(),
        };
        let out = FeatureMap::new(c_out, h_out, w_out, data)?;
        out.ensure_finite("layer output")?;
        Ok(out)
    }

    /// Back-propagate `grad_out` through the layer evaluated at `x`.
    ///
    /// Parameter gradients are skipped (left empty) unless `want_params`.
    pub fn backward(
        &self,
        x: &FeatureMap<T>,
        grad_out: &FeatureMap<T>,
        want_params: bool,
    ) -> Result<LayerGrads<T>> {
        self.check_input(x)?;
        let out_shape = self.spec.output_dims(x.height(), x.width())?;
        grad_out.expect_shape(out_shape, "upstream gradient")?;
        let (ci, co) = (self.spec.in_channels, self.spec.out_channels);
        let (params, gx) = match self.spec.kind {
            LayerKind::Conv => {
                let g = self.spec.geometry(x.height(), x.width())?;
                let (gw, gb, gx) = conv::conv_backward(
                    x.data(),
                    ci,
                    co,
                    &self.params[0],
                    grad_out.data(),
                    &g,
                    want_params,
                );
                (vec![gw, gb], gx)
            }
            LayerKind::Deconv => {
                let g = self.spec.geometry(x.height(), x.width())?;
                let (gw, gb, gx) = conv::deconv_backward(
                    x.data(),
                    ci,
                    co,
                    &self.params[0],
                    grad_out.data(),
                    &g,
                    want_params,
                );
                (vec![gw, gb], gx)
            }
            LayerKind::DepthwiseConv => {
                let g = self.spec.geometry(x.height(), x.width())?;
                let (gw, gb, gx) = conv::depthwise_backward(
                    x.data(),
                    ci,
                    &self.params[0],
                    grad_out.data(),
                    &g,
                    want_params,
                );
                (vec![gw, gb], gx)
            }
            LayerKind::Gdn | LayerKind::Igdn => {
                let (beta, gamma) = self.gdn_effective().expect("gdn layer");
                let (gb, gg, gx) = gdn::gdn_backward(
                    x.data(),
                    ci,
                    x.plane_len(),
                    &beta,
                    &gamma,
                    self.spec.kind == LayerKind::Igdn,
                    grad_out.data(),
                    want_params,
                );
                // chain through the softplus reparametrization: d softplus(r)/dr = sigmoid(r)
                let chain = |g: Vec<T>, raw: &[T]| -> Vec<T> {
                    g.iter()
                        .zip(raw)
                        .map(|(&g, &r)| g * T::from_f64_lossy(sigmoid(r.to_f64_lossy())))
                        .collect()
                };
                let params = if want_params {
                    vec![chain(gb, &self.params[0]), chain(gg, &self.params[1])]
                } else {
                    vec![Vec::new(), Vec::new()]
                };
                (params, gx)
            }
            LayerKind::LeakyRelu => {
                let slope = T::from_f64_lossy(LEAKY_RELU_SLOPE);
                let gx = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { g * slope })
                    .collect();
                (Vec::new(), gx)
            }
            LayerKind::Relu => {
                let gx = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                (Vec::new(), gx)
            }
            LayerKind::Sigmoid => {
                let gx = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&v, &g)| {
                        let s = sigmoid(v.to_f64_lossy());
                        g * T::from_f64_lossy(s * (1.0 - s))
                    })
                    .collect();
                (Vec::new(), gx)
            }
        };
        let input = FeatureMap::new(ci, x.height(), x.width(), gx)?;
        Ok(LayerGrads { params, input })
    }
}
