//! Small convolutional patch encoder:
//! conv → ReLU → conv → ReLU → global average pool → linear → ReLU.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{add_into, relu, round_to_f32, Dense};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 64,
            conv1_channels: 8,
            conv2_channels: 16,
            kernel: 5,
            stride: 2,
            padding: 2,
            hidden: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("encoder: {m}")));
        if self.kernel == 0 || self.stride == 0 {
            return fail("kernel and stride must be positive");
        }
        if self.conv1_channels == 0 || self.conv2_channels == 0 || self.hidden == 0 {
            return fail("channel and hidden widths must be positive");
        }
        let s1 = conv_out(self.patch_size, self.kernel, self.stride, self.padding);
        let s2 = s1.and_then(|s| conv_out(s, self.kernel, self.stride, self.padding));
        if s2.is_none() {
            return fail("patch size too small for the convolution stack");
        }
        Ok(())
    }
}

/// Fixed offset subtracted from [0, 1] pixels before the first convolution.
/// It is a constant, not a dataset statistic; it only centers the input so
/// plain SGD is well conditioned on mostly-white canvases.
pub const INPUT_CENTER: f64 = 0.5;

fn centered(pixels: &[f64]) -> Vec<f64> {
    pixels.iter().map(|p| p - INPUT_CENTER).collect()
}

fn conv_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// 2-D convolution over channel-major square planes. `weight` is laid out
/// `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Uniform in `±√(6 / fan_in)`.
    fn he(&mut self, rng: &mut impl Rng) {
        let limit = (6.0 / (self.in_channels * self.kernel * self.kernel) as f64).sqrt();
        self.weight.iter_mut().for_each(|w| *w = rng.random_range(-limit..=limit));
    }

    pub fn out_size(&self, input: usize) -> usize {
        conv_out(input, self.kernel, self.stride, self.padding).expect("validated encoder geometry")
    }

    /// Output columns `ox` whose input column `ox·s + k − p` lies in `0..n`.
    fn valid_range(&self, k: usize, n_in: usize, n_out: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let k = k as isize;
        let lo = ((p - k).max(0) + s - 1) / s;
        let hi = ((n_in as isize - 1 + p - k).div_euclid(s) + 1).clamp(0, n_out as isize);
        (lo as usize).min(hi as usize)..hi as usize
    }

    pub fn forward(&self, input: &[f64], size: usize) -> Vec<f64> {
        let out_size = self.out_size(size);
        let plane_in = size * size;
        let plane_out = out_size * out_size;
        let k = self.kernel;
        let mut out = vec![0.0; self.out_channels * plane_out];
        for oc in 0..self.out_channels {
            let dst = &mut out[oc * plane_out..(oc + 1) * plane_out];
            dst.iter_mut().for_each(|v| *v = self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = &input[ic * plane_in..(ic + 1) * plane_in];
                for ky in 0..k {
                    let rows = self.valid_range(ky, size, out_size);
                    for kx in 0..k {
                        let w = self.weight[((oc * self.in_channels + ic) * k + ky) * k + kx];
                        let cols = self.valid_range(kx, size, out_size);
                        for oy in rows.clone() {
                            let iy = oy * self.stride + ky - self.padding;
                            let src_row = &src[iy * size..(iy + 1) * size];
                            let dst_row = &mut dst[oy * out_size..(oy + 1) * out_size];
                            for ox in cols.clone() {
                                dst_row[ox] += w * src_row[ox * self.stride + kx - self.padding];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients; returns ∂L/∂input when asked.
    pub fn backward(
        &self,
        input: &[f64],
        size: usize,
        d_out: &[f64],
        grad: &mut Conv2d,
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let out_size = self.out_size(size);
        let plane_in = size * size;
        let plane_out = out_size * out_size;
        let k = self.kernel;
        let mut d_in = want_input_grad.then(|| vec![0.0; self.in_channels * plane_in]);
        for oc in 0..self.out_channels {
            let g = &d_out[oc * plane_out..(oc + 1) * plane_out];
            grad.bias[oc] += g.iter().sum::<f64>();
            for ic in 0..self.in_channels {
                let src = &input[ic * plane_in..(ic + 1) * plane_in];
                for ky in 0..k {
                    let rows = self.valid_range(ky, size, out_size);
                    for kx in 0..k {
                        let widx = ((oc * self.in_channels + ic) * k + ky) * k + kx;
                        let w = self.weight[widx];
                        let cols = self.valid_range(kx, size, out_size);
                        let mut acc = 0.0;
                        for oy in rows.clone() {
                            let iy = oy * self.stride + ky - self.padding;
                            let g_row = &g[oy * out_size..(oy + 1) * out_size];
                            let src_row = &src[iy * size..(iy + 1) * size];
                            for ox in cols.clone() {
                                acc += g_row[ox] * src_row[ox * self.stride + kx - self.padding];
                            }
                            if let Some(d_in) = d_in.as_mut() {
                                let d_row = &mut d_in[ic * plane_in + iy * size..ic * plane_in + (iy + 1) * size];
                                for ox in cols.clone() {
                                    d_row[ox * self.stride + kx - self.padding] += w * g_row[ox];
                                }
                            }
                        }
                        grad.weight[widx] += acc;
                    }
                }
            }
        }
        d_in
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEncoder {
    pub config: EncoderConfig,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: Dense,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub pre1: Vec<f64>,
    pub act1: Vec<f64>,
    pub pre2: Vec<f64>,
    pub pooled: Vec<f64>,
    pub pre_fc: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl PatchEncoder {
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        Ok(PatchEncoder {
            conv1: Conv2d::zeros(3, c.conv1_channels, c.kernel, c.stride, c.padding),
            conv2: Conv2d::zeros(c.conv1_channels, c.conv2_channels, c.kernel, c.stride, c.padding),
            fc: Dense::zeros(c.conv2_channels, c.hidden),
            config,
        })
    }

    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        let mut enc = Self::zeros(config)?;
        let mut rng = seed::rng(seed);
        enc.conv1.he(&mut rng);
        enc.conv2.he(&mut rng);
        enc.fc = Dense::he(config.conv2_channels, config.hidden, &mut rng);
        Ok(enc)
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden
    }

    fn check_input(&self, pixels: &[f64]) -> Result<()> {
        let expected = 3 * self.config.patch_size * self.config.patch_size;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: pixels.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(pixels)?.hidden)
    }

    pub fn trace(&self, pixels: &[f64]) -> Result<EncoderTrace> {
        self.check_input(pixels)?;
        let s0 = self.config.patch_size;
        let pre1 = self.conv1.forward(&centered(pixels), s0);
        let mut act1 = pre1.clone();
        relu(&mut act1);
        let s1 = self.conv1.out_size(s0);
        let pre2 = self.conv2.forward(&act1, s1);
        let s2 = self.conv2.out_size(s1);
        let plane = s2 * s2;
        let pooled: Vec<f64> = pre2
            .chunks_exact(plane)
            .map(|ch| ch.iter().map(|v| v.max(0.0)).sum::<f64>() / plane as f64)
            .collect();
        let pre_fc = self.fc.forward(&pooled);
        let mut hidden = pre_fc.clone();
        relu(&mut hidden);
        Ok(EncoderTrace {
            pre1,
            act1,
            pre2,
            pooled,
            pre_fc,
            hidden,
        })
    }

    /// Backpropagates ∂L/∂hidden into `grad`.
    pub fn backward(&self, pixels: &[f64], trace: &EncoderTrace, d_hidden: &[f64], grad: &mut PatchEncoder) {
        let s0 = self.config.patch_size;
        let s1 = self.conv1.out_size(s0);
        let s2 = self.conv2.out_size(s1);
        let plane = s2 * s2;

        let d_pre_fc: Vec<f64> = d_hidden
            .iter()
            .zip(&trace.pre_fc)
            .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
            .collect();
        let d_pooled = self.fc.backward(&trace.pooled, &d_pre_fc, &mut grad.fc);

        let mut d_pre2 = vec![0.0; trace.pre2.len()];
        for ((dp, d), pre) in d_pooled.iter().zip(d_pre2.chunks_mut(plane)).zip(trace.pre2.chunks(plane)) {
            let share = dp / plane as f64;
            for (di, &p) in d.iter_mut().zip(pre) {
                if p > 0.0 {
                    *di = share;
                }
            }
        }
        let mut d_act1 = self
            .conv2
            .backward(&trace.act1, s1, &d_pre2, &mut grad.conv2, true)
            .expect("input gradient requested");
        for (d, p) in d_act1.iter_mut().zip(&trace.pre1) {
            if *p <= 0.0 {
                *d = 0.0;
            }
        }
        self.conv1.backward(&centered(pixels), s0, &d_act1, &mut grad.conv1, false);
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    /// conv1 weight, conv1 bias, conv2 weight, conv2 bias, fc weight, fc bias.
    pub fn slices(&self) -> [&[f64]; 6] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.fc.weight,
            &self.fc.bias,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.fc.weight,
            &mut self.fc.bias,
        ]
    }

    pub fn add_assign(&mut self, other: &PatchEncoder) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            add_into(a, b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn round_to_f32(&mut self) {
        for s in self.slices_mut() {
            round_to_f32(s);
        }
    }
}
