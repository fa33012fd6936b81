//! Convolution kernels built on im2col / col2im plus GEMM.
//!
//! A transposed convolution is the exact adjoint of the strided convolution
//! running in the opposite direction, so both share one [`ConvGeometry`]:
//! `conv` gathers with `im2col`, `deconv` scatters with `col2im`. With
//! same-reflect padding the scatter folds border taps back through the
//! reflection, which keeps the output exactly `stride ×` the input.

use crate::nn::{matmul, Scalar};

/// Mirror an out-of-range index back into `0..n` (reflection without edge repeat).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Spatial geometry of a convolution from `in_*` to `out_*`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeometry {
    /// Same padding: output is `ceil(in / stride)`.
    pub fn same(in_h: usize, in_w: usize, k_h: usize, k_w: usize, stride: usize) -> Self {
        Self {
            in_h,
            in_w,
            out_h: in_h.div_ceil(stride),
            out_w: in_w.div_ceil(stride),
            k_h,
            k_w,
            stride,
            pad_h: (k_h - 1) / 2,
            pad_w: (k_w - 1) / 2,
        }
    }

    /// No padding. Returns `None` when the kernel does not fit.
    pub fn valid(in_h: usize, in_w: usize, k_h: usize, k_w: usize, stride: usize) -> Option<Self> {
        if in_h < k_h || in_w < k_w {
            return None;
        }
        Some(Self {
            in_h,
            in_w,
            out_h: (in_h - k_h) / stride + 1,
            out_w: (in_w - k_w) / stride + 1,
            k_h,
            k_w,
            stride,
            pad_h: 0,
            pad_w: 0,
        })
    }

    pub fn taps(&self) -> usize {
        self.k_h * self.k_w
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn row_index(&self, oy: usize, dy: usize) -> usize {
        reflect_index(
            (oy * self.stride + dy) as isize - self.pad_h as isize,
            self.in_h,
        )
    }

    fn col_index(&self, ox: usize, dx: usize) -> usize {
        reflect_index(
            (ox * self.stride + dx) as isize - self.pad_w as isize,
            self.in_w,
        )
    }

    /// Source column indices per (dx, ox), shared by every row and channel.
    fn col_table(&self) -> Vec<usize> {
        let mut t = Vec::with_capacity(self.k_w * self.out_w);
        for dx in 0..self.k_w {
            for ox in 0..self.out_w {
                t.push(self.col_index(ox, dx));
            }
        }
        t
    }
}

/// Gather `x` (`channels × in_h × in_w`) into `cols` (`channels·k_h·k_w × out_h·out_w`).
pub fn im2col<T: Scalar>(x: &[T], channels: usize, g: &ConvGeometry, cols: &mut [T]) {
    let in_plane = g.in_h * g.in_w;
    let out_len = g.out_len();
    debug_assert_eq!(x.len(), channels * in_plane);
    debug_assert_eq!(cols.len(), channels * g.taps() * out_len);
    let ctab = g.col_table();
    for c in 0..channels {
        let src = &x[c * in_plane..(c + 1) * in_plane];
        for dy in 0..g.k_h {
            for dx in 0..g.k_w {
                let row = (c * g.taps() + dy * g.k_w + dx) * out_len;
                let dst = &mut cols[row..row + out_len];
                let cidx = &ctab[dx * g.out_w..(dx + 1) * g.out_w];
                for oy in 0..g.out_h {
                    let sy = g.row_index(oy, dy);
                    let srow = &src[sy * g.in_w..(sy + 1) * g.in_w];
                    let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (d, &sx) in drow.iter_mut().zip(cidx) {
                        *d = srow[sx];
                    }
                }
            }
        }
    }
}

/// Scatter-add `cols` back into `x`; the adjoint of [`im2col`].
pub fn col2im<T: Scalar>(cols: &[T], channels: usize, g: &ConvGeometry, x: &mut [T]) {
    let in_plane = g.in_h * g.in_w;
    let out_len = g.out_len();
    debug_assert_eq!(x.len(), channels * in_plane);
    debug_assert_eq!(cols.len(), channels * g.taps() * out_len);
    let ctab = g.col_table();
    for c in 0..channels {
        let dst = &mut x[c * in_plane..(c + 1) * in_plane];
        for dy in 0..g.k_h {
            for dx in 0..g.k_w {
                let row = (c * g.taps() + dy * g.k_w + dx) * out_len;
                let src = &cols[row..row + out_len];
                let cidx = &ctab[dx * g.out_w..(dx + 1) * g.out_w];
                for oy in 0..g.out_h {
                    let sy = g.row_index(oy, dy);
                    let drow = &mut dst[sy * g.in_w..(sy + 1) * g.in_w];
                    let srow = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (&v, &sx) in srow.iter().zip(cidx) {
                        drow[sx] = drow[sx] + v;
                    }
                }
            }
        }
    }
}

/// Forward convolution. `weight` is `[c_out][c_in][k_h][k_w]`.
pub fn conv_forward<T: Scalar>(
    x: &[T],
    c_in: usize,
    c_out: usize,
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
) -> Vec<T> {
    let kdim = c_in * g.taps();
    let n = g.out_len();
    let mut out = vec![T::zero(); c_out * n];
    for (c, b) in bias.iter().enumerate() {
        out[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = *b);
    }
    if is_pointwise(g) {
        matmul(c_out, kdim, n, weight, false, x, false, &mut out, true);
    } else {
        let mut cols = vec![T::zero(); kdim * n];
        im2col(x, c_in, g, &mut cols);
        matmul(c_out, kdim, n, weight, false, &cols, false, &mut out, true);
    }
    out
}

/// Gradients of [`conv_forward`]: `(grad_weight, grad_bias, grad_x)`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    x: &[T],
    c_in: usize,
    c_out: usize,
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    want_params: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let kdim = c_in * g.taps();
    let n = g.out_len();
    let pointwise = is_pointwise(g);
    let mut grad_w = Vec::new();
    let mut grad_b = Vec::new();
    if want_params {
        grad_w = vec![T::zero(); c_out * kdim];
        if pointwise {
            matmul(c_out, n, kdim, grad_out, false, x, true, &mut grad_w, false);
        } else {
            let mut cols = vec![T::zero(); kdim * n];
            im2col(x, c_in, g, &mut cols);
            matmul(c_out, n, kdim, grad_out, false, &cols, true, &mut grad_w, false);
        }
        grad_b = channel_sums(grad_out, c_out, n);
    }
    let mut grad_x = vec![T::zero(); c_in * g.in_h * g.in_w];
    if pointwise {
        matmul(kdim, c_out, n, weight, true, grad_out, false, &mut grad_x, false);
    } else {
        let mut dcols = vec![T::zero(); kdim * n];
        matmul(kdim, c_out, n, weight, true, grad_out, false, &mut dcols, false);
        col2im(&dcols, c_in, g, &mut grad_x);
    }
    (grad_w, grad_b, grad_x)
}

/// Forward transposed convolution. `g` is the geometry of the adjoint conv
/// (from this layer's output back to its input); `weight` is `[c_in][c_out][k_h][k_w]`.
pub fn deconv_forward<T: Scalar>(
    x: &[T],
    c_in: usize,
    c_out: usize,
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
) -> Vec<T> {
    let kdim = c_out * g.taps();
    let n = g.out_len();
    let mut cols = vec![T::zero(); kdim * n];
    matmul(kdim, c_in, n, weight, true, x, false, &mut cols, false);
    let plane = g.in_h * g.in_w;
    let mut out = vec![T::zero(); c_out * plane];
    for (c, b) in bias.iter().enumerate() {
        out[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = *b);
    }
    col2im(&cols, c_out, g, &mut out);
    out
}

/// Gradients of [`deconv_forward`]: `(grad_weight, grad_bias, grad_x)`.
#[allow(clippy::too_many_arguments)]
pub fn deconv_backward<T: Scalar>(
    x: &[T],
    c_in: usize,
    c_out: usize,
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    want_params: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let kdim = c_out * g.taps();
    let n = g.out_len();
    let mut dcols = vec![T::zero(); kdim * n];
    im2col(grad_out, c_out, g, &mut dcols);
    let mut grad_w = Vec::new();
    let mut grad_b = Vec::new();
    if want_params {
        grad_w = vec![T::zero(); c_in * kdim];
        matmul(c_in, n, kdim, x, false, &dcols, true, &mut grad_w, false);
        grad_b = channel_sums(grad_out, c_out, g.in_h * g.in_w);
    }
    let mut grad_x = vec![T::zero(); c_in * n];
    matmul(c_in, kdim, n, weight, false, &dcols, false, &mut grad_x, false);
    (grad_w, grad_b, grad_x)
}

/// Depthwise convolution, one `k_h × k_w` filter per channel.
pub fn depthwise_forward<T: Scalar>(
    x: &[T],
    channels: usize,
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
) -> Vec<T> {
    let in_plane = g.in_h * g.in_w;
    let n = g.out_len();
    let taps = g.taps();
    let ctab = g.col_table();
    let mut out = vec![T::zero(); channels * n];
    for c in 0..channels {
        let src = &x[c * in_plane..(c + 1) * in_plane];
        let w = &weight[c * taps..(c + 1) * taps];
        let dst = &mut out[c * n..(c + 1) * n];
        dst.iter_mut().for_each(|v| *v = bias[c]);
        for dy in 0..g.k_h {
            for dx in 0..g.k_w {
                let wv = w[dy * g.k_w + dx];
                let cidx = &ctab[dx * g.out_w..(dx + 1) * g.out_w];
                for oy in 0..g.out_h {
                    let sy = g.row_index(oy, dy);
                    let srow = &src[sy * g.in_w..(sy + 1) * g.in_w];
                    let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (d, &sx) in drow.iter_mut().zip(cidx) {
                        *d = *d + wv * srow[sx];
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`depthwise_forward`]: `(grad_weight, grad_bias, grad_x)`.
pub fn depthwise_backward<T: Scalar>(
    x: &[T],
    channels: usize,
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    want_params: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let in_plane = g.in_h * g.in_w;
    let n = g.out_len();
    let taps = g.taps();
    let ctab = g.col_table();
    let mut grad_w = vec![T::zero(); if want_params { channels * taps } else { 0 }];
    let grad_b = if want_params {
        channel_sums(grad_out, channels, n)
    } else {
        Vec::new()
    };
    let mut grad_x = vec![T::zero(); channels * in_plane];
    for c in 0..channels {
        let src = &x[c * in_plane..(c + 1) * in_plane];
        let gsrc = &grad_out[c * n..(c + 1) * n];
        let gx = &mut grad_x[c * in_plane..(c + 1) * in_plane];
        for dy in 0..g.k_h {
            for dx in 0..g.k_w {
                let tap = dy * g.k_w + dx;
                let wv = weight[c * taps + tap];
                let cidx = &ctab[dx * g.out_w..(dx + 1) * g.out_w];
                let mut acc = T::zero();
                for oy in 0..g.out_h {
                    let sy = g.row_index(oy, dy);
                    let grow = &gsrc[oy * g.out_w..(oy + 1) * g.out_w];
                    for (&gv, &sx) in grow.iter().zip(cidx) {
                        acc = acc + gv * src[sy * g.in_w + sx];
                        gx[sy * g.in_w + sx] = gx[sy * g.in_w + sx] + gv * wv;
                    }
                }
                if want_params {
                    grad_w[c * taps + tap] = acc;
                }
            }
        }
    }
    (grad_w, grad_b, grad_x)
}

fn is_pointwise(g: &ConvGeometry) -> bool {
    g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.pad_h == 0 && g.pad_w == 0
}

fn channel_sums<T: Scalar>(v: &[T], channels: usize, plane: usize) -> Vec<T> {
    (0..channels)
        .map(|c| v[c * plane..(c + 1) * plane].iter().copied().sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct convolution with the same reflect rule, no im2col.
    fn brute_conv(
        x: &[f64],
        c_in: usize,
        c_out: usize,
        w: &[f64],
        b: &[f64],
        g: &ConvGeometry,
    ) -> Vec<f64> {
        let mut out = vec![0.0; c_out * g.out_len()];
        for co in 0..c_out {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = b[co];
                    for ci in 0..c_in {
                        for dy in 0..g.k_h {
                            for dx in 0..g.k_w {
                                let sy = reflect_index(
                                    (oy * g.stride + dy) as isize - g.pad_h as isize,
                                    g.in_h,
                                );
                                let sx = reflect_index(
                                    (ox * g.stride + dx) as isize - g.pad_w as isize,
                                    g.in_w,
                                );
                                acc += w[((co * c_in + ci) * g.k_h + dy) * g.k_w + dx]
                                    * x[(ci * g.in_h + sy) * g.in_w + sx];
                            }
                        }
                    }
                    out[(co * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
        out
    }

    fn ramp(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 97) as f64 * scale - 0.4).collect()
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(-3, 2), 1);
        assert_eq!(reflect_index(7, 1), 0);
    }

    #[test]
    fn same_geometry_halves_with_ceil() {
        let g = ConvGeometry::same(7, 8, 5, 5, 2);
        assert_eq!((g.out_h, g.out_w), (4, 4));
    }

    #[test]
    fn im2col_conv_matches_brute_force() {
        let (c_in, c_out) = (3, 4);
        let g = ConvGeometry::same(9, 6, 5, 5, 2);
        let x = ramp(c_in * 9 * 6, 0.01);
        let w = ramp(c_out * c_in * 25, 0.003);
        let b = vec![0.1, -0.2, 0.3, 0.0];
        let got = conv_forward(&x, c_in, c_out, &w, &b, &g);
        let want = brute_conv(&x, c_in, c_out, &w, &b, &g);
        for (a, e) in got.iter().zip(&want) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        // <conv(u), v> == <u, deconv(v)> for matching weights and zero bias.
        let (c_big, c_small) = (2, 3);
        let g = ConvGeometry::same(8, 6, 5, 5, 2);
        let u = ramp(c_big * 8 * 6, 0.02);
        let v = ramp(c_small * g.out_len(), 0.015);
        let w = ramp(c_small * c_big * 25, 0.004);
        let conv_u = conv_forward(&u, c_big, c_small, &w, &[0.0; 3], &g);
        // deconv weight layout [c_in=c_small][c_out=c_big][k][k] equals conv's [c_out][c_in][k][k].
        let deconv_v = deconv_forward(&v, c_small, c_big, &w, &[0.0; 2], &g);
        let lhs: f64 = conv_u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&deconv_v).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        assert_eq!(deconv_v.len(), c_big * 8 * 6);
    }

    #[test]
    fn depthwise_channel_isolation() {
        let g = ConvGeometry::same(4, 4, 3, 3, 1);
        let mut x = ramp(2 * 16, 0.05);
        let w = ramp(2 * 9, 0.1);
        let b = [0.0, 0.0];
        let before = depthwise_forward(&x, 2, &w, &b, &g);
        x[16..].iter_mut().for_each(|v| *v += 1.0);
        let after = depthwise_forward(&x, 2, &w, &b, &g);
        assert_eq!(before[..16], after[..16]);
        assert_ne!(before[16..], after[16..]);
    }
}
