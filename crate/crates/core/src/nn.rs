//! Neural-network layers with hand-written analytic backward passes.
//!
//! Convolutions are same-size with whole-sample symmetric boundary
//! extension, matching the lifting engine's boundary policy.  There is no
//! automatic differentiation: each layer exposes an explicit backward that
//! is verified against finite differences in the test suite.

use crate::error::{Error, Result};
use crate::store::GradStore;
use crate::tensor::{mirror_index, Tensor};

/// A same-size convolution layer.  Kernels have shape `(out, in, kh, kw)`
/// with odd spatial extents; bias is optional (the opacity branches run
/// without one).
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub kernels: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl ConvLayer {
    pub fn new(kernels: Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        if kernels.ndim() != 4 {
            return Err(Error::config("conv kernels must have 4 extents"));
        }
        let s = kernels.shape();
        if s[2] % 2 == 0 || s[3] % 2 == 0 {
            return Err(Error::config("conv kernel extents must be odd"));
        }
        if let Some(b) = &bias {
            if b.len() != s[0] {
                return Err(Error::config("bias length must equal out channels"));
            }
        }
        Ok(ConvLayer { kernels, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d_forward(input, &self.kernels, self.bias.as_deref())
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
        conv2d_backward(input, &self.kernels, self.bias.is_some(), grad_out)
    }
}

/// Gradients produced by a convolution backward pass.
#[derive(Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Option<Vec<f64>>,
}

/// Same-size 2-d correlation with symmetric boundary extension.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let (in_c, h, w) = (input.channels(), input.height(), input.width());
    let ks = kernels.shape();
    let (out_c, kin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if kin != in_c {
        return Err(Error::config(format!(
            "conv input has {in_c} channels, kernels expect {kin}"
        )));
    }
    let (rh, rw) = (kh / 2, kw / 2);
    let mut out = Tensor::zeros(&[out_c, h, w]);
    if let Some(b) = bias {
        for o in 0..out_c {
            let row0 = o * h * w;
            out.data_mut()[row0..row0 + h * w].fill(b[o]);
        }
    }
    // Interior columns [x_lo, x_hi) read the input row directly; border
    // columns go through the mirror fold.
    for o in 0..out_c {
        for c in 0..in_c {
            for dy in 0..kh {
                for dx in 0..kw {
                    let wgt = kernels.at4(o, c, dy, dx);
                    if wgt == 0.0 {
                        continue;
                    }
                    let off_x = dx as isize - rw as isize;
                    let x_lo = ((-off_x).max(0) as usize).min(w);
                    let x_hi = ((w as isize - off_x).clamp(0, w as isize)) as usize;
                    let x_hi = x_hi.max(x_lo);
                    for y in 0..h {
                        let sy = mirror_index(y as isize + dy as isize - rh as isize, h);
                        let src = input.row(c, sy);
                        let dst = out.row_mut(o, y);
                        for x in 0..x_lo {
                            dst[x] += wgt * src[mirror_index(x as isize + off_x, w)];
                        }
                        if x_hi > x_lo {
                            let s = &src[(x_lo as isize + off_x) as usize
                                ..(x_hi as isize + off_x) as usize];
                            let d = &mut dst[x_lo..x_hi];
                            for (dv, sv) in d.iter_mut().zip(s) {
                                *dv += wgt * sv;
                            }
                        }
                        for x in x_hi.max(x_lo)..w {
                            dst[x] += wgt * src[mirror_index(x as isize + off_x, w)];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] under the same boundary policy.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    has_bias: bool,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let (in_c, h, w) = (input.channels(), input.height(), input.width());
    let ks = kernels.shape();
    let (out_c, kin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if kin != in_c {
        return Err(Error::config("conv backward: channel mismatch"));
    }
    if grad_out.shape() != [out_c, h, w] {
        return Err(Error::config(format!(
            "conv backward: grad shape {:?} does not match output [{out_c}, {h}, {w}]",
            grad_out.shape()
        )));
    }
    let (rh, rw) = (kh / 2, kw / 2);
    let mut g_in = Tensor::zeros(&[in_c, h, w]);
    let mut g_k = Tensor::zeros(ks);
    let g_b = if has_bias {
        let mut b = vec![0.0; out_c];
        for (o, bo) in b.iter_mut().enumerate() {
            for y in 0..h {
                *bo += grad_out.row(o, y).iter().sum::<f64>();
            }
        }
        Some(b)
    } else {
        None
    };
    for o in 0..out_c {
        for c in 0..in_c {
            for dy in 0..kh {
                for dx in 0..kw {
                    let wgt = kernels.at4(o, c, dy, dx);
                    let off_x = dx as isize - rw as isize;
                    let mut acc = 0.0;
                    for y in 0..h {
                        let sy = mirror_index(y as isize + dy as isize - rh as isize, h);
                        let src = input.row(c, sy);
                        let go = grad_out.row(o, y);
                        for (x, g) in go.iter().enumerate() {
                            acc += g * src[mirror_index(x as isize + off_x, w)];
                        }
                        if wgt != 0.0 {
                            let gin = g_in.row_mut(c, sy);
                            for (x, g) in go.iter().enumerate() {
                                gin[mirror_index(x as isize + off_x, w)] += wgt * g;
                            }
                        }
                    }
                    *g_k.at4_mut(o, c, dy, dx) = acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: g_in,
        kernels: g_k,
        bias: g_b,
    })
}

impl Tensor {
    #[inline]
    pub(crate) fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let s = self.shape();
        self.data()[((a * s[1] + b) * s[2] + c) * s[3] + d]
    }

    #[inline]
    pub(crate) fn at4_mut(&mut self, a: usize, b: usize, c: usize, d: usize) -> &mut f64 {
        let s = self.shape().to_vec();
        &mut self.data_mut()[((a * s[1] + b) * s[2] + c) * s[3] + d]
    }
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    assert_eq!(input.shape(), grad_out.shape());
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data).unwrap()
}

/// Residual block: `x + conv2(relu(conv1(x)))`, both convolutions 3x3 with
/// the block's channel count and no internal normalization.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

pub struct ResidualTrace {
    input: Tensor,
    pre1: Tensor,
    act1: Tensor,
}

impl ResidualBlock {
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ResidualTrace)> {
        if input.channels() != self.conv1.in_channels() {
            return Err(Error::config("residual block: channel mismatch"));
        }
        let pre1 = self.conv1.forward(input)?;
        let act1 = relu_forward(&pre1);
        let mut out = self.conv2.forward(&act1)?;
        out.add_assign(input);
        Ok((
            out,
            ResidualTrace {
                input: input.clone(),
                pre1,
                act1,
            },
        ))
    }

    /// Returns `(grad_input, grad_conv1_kernels, grad_conv2_kernels)`.
    pub fn backward(
        &self,
        trace: &ResidualTrace,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let g2 = self.conv2.backward(&trace.act1, grad_out)?;
        let g_pre1 = relu_backward(&trace.pre1, &g2.input);
        let g1 = self.conv1.backward(&trace.input, &g_pre1)?;
        let mut g_in = g1.input;
        g_in.add_assign(grad_out); // skip path
        Ok((g_in, g1.kernels, g2.kernels))
    }
}

pub const NORMALIZE_OFFSET: f64 = 0.01;

pub struct NormalizeTrace {
    output: Tensor,
    sums: Vec<f64>,
}

/// Per-location channel normalization: `y_i = (x_i + 0.01) / sum_j (x_j + 0.01)`.
/// For non-negative input the outputs are non-negative and sum to one at
/// every spatial location, and uniform intensity scaling mostly cancels.
pub fn normalize_forward(input: &Tensor) -> (Tensor, NormalizeTrace) {
    let (c, h, w) = (input.channels(), input.height(), input.width());
    let mut out = Tensor::zeros(&[c, h, w]);
    let mut sums = vec![0.0; h * w];
    for ch in 0..c {
        for y in 0..h {
            let row = input.row(ch, y);
            for (x, v) in row.iter().enumerate() {
                sums[y * w + x] += v + NORMALIZE_OFFSET;
            }
        }
    }
    for ch in 0..c {
        for y in 0..h {
            let row = input.row(ch, y);
            let orow = out.row_mut(ch, y);
            for (x, v) in row.iter().enumerate() {
                orow[x] = (v + NORMALIZE_OFFSET) / sums[y * w + x];
            }
        }
    }
    let trace = NormalizeTrace {
        output: out.clone(),
        sums,
    };
    (out, trace)
}

pub fn normalize_backward(trace: &NormalizeTrace, grad_out: &Tensor) -> Tensor {
    let out = &trace.output;
    let (c, h, w) = (out.channels(), out.height(), out.width());
    assert_eq!(grad_out.shape(), out.shape());
    // dL/dx_k = (g_k - sum_i g_i y_i) / S
    let mut dot = vec![0.0; h * w];
    for ch in 0..c {
        for y in 0..h {
            let yo = out.row(ch, y);
            let go = grad_out.row(ch, y);
            for x in 0..w {
                dot[y * w + x] += go[x] * yo[x];
            }
        }
    }
    let mut g_in = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            let go = grad_out.row(ch, y);
            let gi = g_in.row_mut(ch, y);
            for x in 0..w {
                gi[x] = (go[x] - dot[y * w + x]) / trace.sums[y * w + x];
            }
        }
    }
    g_in
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators, keyed like the weight store.
#[derive(Debug, Default, Clone)]
pub struct AdamState {
    step: u64,
    m: std::collections::BTreeMap<String, Vec<f64>>,
    v: std::collections::BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction.  Only parameters present in
/// `grads` move; everything else (frozen weights included) is untouched.
pub fn adam_step(
    params: &mut crate::store::WeightStore,
    grads: &GradStore,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (name, g) in grads.iter() {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("adam: unknown parameter '{name}'")))?;
        if p.shape() != g.shape() {
            return Err(Error::config(format!(
                "adam: gradient shape {:?} does not match parameter '{name}' {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            pd[i] -= hyper.lr * mhat / (vhat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}
