//! Slice-level building blocks with hand-written gradients.
//!
//! Activations of one sample are stored channel-major: `x[c * len + t]`.
//! Parameters of all layers live in one flat buffer; each layer records
//! the offsets of its weights and biases.

/// Causal dilated 1-D convolution. A kernel of size 1 is a pointwise
/// (1×1) convolution.
///
/// `y[o][t] = b[o] + Σ_i Σ_j w[o][i][j] · x[i][t − (k − 1 − j)·d]`, with
/// zero padding on the left only, so `y[·][t]` depends on `x[·][≤ t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Conv {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize, offset: &mut usize) -> Self {
        let w_off = *offset;
        let b_off = w_off + out_ch * in_ch * kernel;
        *offset = b_off + out_ch;
        Conv { in_ch, out_ch, kernel, dilation, w_off, b_off }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel
    }

    /// How far back in time tap `j` looks.
    #[inline]
    fn shift(&self, j: usize) -> usize {
        (self.kernel - 1 - j) * self.dilation
    }

    pub fn forward(&self, params: &[f64], x: &[f64], len: usize, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_ch * len);
        debug_assert_eq!(y.len(), self.out_ch * len);
        let w = &params[self.w_off..self.b_off];
        let b = &params[self.b_off..self.b_off + self.out_ch];
        for o in 0..self.out_ch {
            let yo = &mut y[o * len..(o + 1) * len];
            yo.fill(b[o]);
            for i in 0..self.in_ch {
                let xi = &x[i * len..(i + 1) * len];
                let wo = &w[(o * self.in_ch + i) * self.kernel..(o * self.in_ch + i + 1) * self.kernel];
                for (j, &wj) in wo.iter().enumerate() {
                    let s = self.shift(j);
                    if s >= len {
                        continue;
                    }
                    for (yt, xt) in yo[s..].iter_mut().zip(&xi[..len - s]) {
                        *yt += wj * xt;
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and, if requested, the
    /// input gradient into `dx` (which must be zeroed by the caller).
    pub fn backward(&self, params: &[f64], x: &[f64], len: usize, dy: &[f64], grad: &mut [f64], mut dx: Option<&mut [f64]>) {
        let w = &params[self.w_off..self.b_off];
        for o in 0..self.out_ch {
            let dyo = &dy[o * len..(o + 1) * len];
            grad[self.b_off + o] += dyo.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let xi = &x[i * len..(i + 1) * len];
                let base = (o * self.in_ch + i) * self.kernel;
                for j in 0..self.kernel {
                    let s = self.shift(j);
                    if s >= len {
                        continue;
                    }
                    let dot: f64 = dyo[s..].iter().zip(&xi[..len - s]).map(|(a, b)| a * b).sum();
                    grad[self.w_off + base + j] += dot;
                    if let Some(dx) = dx.as_deref_mut() {
                        let wj = w[base + j];
                        let dxi = &mut dx[i * len..(i + 1) * len];
                        for (d, g) in dxi[..len - s].iter_mut().zip(&dyo[s..]) {
                            *d += wj * g;
                        }
                    }
                }
            }
        }
    }
}

/// Fully connected layer, `y = W x + b` with `W` stored row-major `[out][in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, offset: &mut usize) -> Self {
        let w_off = *offset;
        let b_off = w_off + inputs * outputs;
        *offset = b_off + outputs;
        Dense { inputs, outputs, w_off, b_off }
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        let w = &params[self.w_off..self.b_off];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            *yo = params[self.b_off + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: &mut [f64]) {
        let w = &params[self.w_off..self.b_off];
        for (o, &g) in dy.iter().enumerate() {
            grad[self.b_off + o] += g;
            let gw = &mut grad[self.w_off + o * self.inputs..self.w_off + (o + 1) * self.inputs];
            for (gwi, xi) in gw.iter_mut().zip(x) {
                *gwi += g * xi;
            }
            for (d, wi) in dx.iter_mut().zip(&w[o * self.inputs..(o + 1) * self.inputs]) {
                *d += g * wi;
            }
        }
    }
}

/// Average pooling over non-overlapping groups of `factor` time steps.
pub fn avg_pool(x: &[f64], channels: usize, len: usize, factor: usize, y: &mut [f64]) {
    let out_len = len / factor;
    let inv = 1.0 / factor as f64;
    for c in 0..channels {
        for t in 0..out_len {
            let start = c * len + t * factor;
            y[c * out_len + t] = x[start..start + factor].iter().sum::<f64>() * inv;
        }
    }
}

pub fn avg_pool_backward(dy: &[f64], channels: usize, len: usize, factor: usize, dx: &mut [f64]) {
    let out_len = len / factor;
    let inv = 1.0 / factor as f64;
    for c in 0..channels {
        for t in 0..out_len {
            let g = dy[c * out_len + t] * inv;
            dx[c * len + t * factor..c * len + (t + 1) * factor].fill(g);
        }
    }
}

/// Nearest-neighbour upsampling: each step is repeated `factor` times.
pub fn upsample(x: &[f64], channels: usize, short_len: usize, factor: usize, y: &mut [f64]) {
    let len = short_len * factor;
    for c in 0..channels {
        for t in 0..short_len {
            y[c * len + t * factor..c * len + (t + 1) * factor].fill(x[c * short_len + t]);
        }
    }
}

pub fn upsample_backward(dy: &[f64], channels: usize, short_len: usize, factor: usize, dx: &mut [f64]) {
    let len = short_len * factor;
    for c in 0..channels {
        for t in 0..short_len {
            let start = c * len + t * factor;
            dx[c * short_len + t] = dy[start..start + factor].iter().sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the convolution sum, one output at a time.
    fn conv_reference(conv: &Conv, params: &[f64], x: &[f64], len: usize) -> Vec<f64> {
        let mut y = vec![0.0; conv.out_ch * len];
        for o in 0..conv.out_ch {
            for t in 0..len {
                let mut acc = params[conv.b_off + o];
                for i in 0..conv.in_ch {
                    for j in 0..conv.kernel {
                        let back = (conv.kernel - 1 - j) * conv.dilation;
                        if t >= back {
                            acc += params[conv.w_off + (o * conv.in_ch + i) * conv.kernel + j] * x[i * len + t - back];
                        }
                    }
                }
                y[o * len + t] = acc;
            }
        }
        y
    }

    fn ramp(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 113) as f64 * scale - 0.5).collect()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut off = 0;
        let conv = Conv::new(3, 4, 3, 2, &mut off);
        let params = ramp(off, 0.01);
        let len = 11;
        let x = ramp(3 * len, 0.013);
        let mut y = vec![0.0; 4 * len];
        conv.forward(&params, &x, len, &mut y);
        let expected = conv_reference(&conv, &params, &x, len);
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_is_causal() {
        let mut off = 0;
        let conv = Conv::new(2, 2, 4, 3, &mut off);
        let params = ramp(off, 0.02);
        let len = 20;
        let x = ramp(2 * len, 0.01);
        let mut y0 = vec![0.0; 2 * len];
        conv.forward(&params, &x, len, &mut y0);
        let mut x2 = x.clone();
        x2[7] += 1.0;
        x2[len + 7] -= 1.0;
        let mut y1 = vec![0.0; 2 * len];
        conv.forward(&params, &x2, len, &mut y1);
        for c in 0..2 {
            for t in 0..7 {
                assert_eq!(y0[c * len + t], y1[c * len + t]);
            }
        }
    }

    #[test]
    fn pooling_and_upsampling_are_adjoint() {
        // <pool(x), y> == <x, pool_backward(y)>
        let x = ramp(2 * 8, 0.1);
        let y = ramp(2 * 2, 0.3);
        let mut px = vec![0.0; 4];
        avg_pool(&x, 2, 8, 4, &mut px);
        let mut by = vec![0.0; 16];
        avg_pool_backward(&y, 2, 8, 4, &mut by);
        let lhs: f64 = px.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&by).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let mut uy = vec![0.0; 16];
        upsample(&y, 2, 2, 4, &mut uy);
        let mut bx = vec![0.0; 4];
        upsample_backward(&x, 2, 2, 4, &mut bx);
        let lhs: f64 = uy.iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs: f64 = y.iter().zip(&bx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
