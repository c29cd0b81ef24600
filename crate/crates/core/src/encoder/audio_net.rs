//! Frozen residual CNN over log-power spectrograms.
//!
//! The network sees two channels. The first is the spectrogram relative to
//! its loudest cell, mapped linearly so that the peak is 1 and anything more
//! than `DYNAMIC_RANGE` nats below it is 0. The second is the first channel
//! weighted by a log-frequency ramp in [-1, 1]. Global average pooling erases
//! position; the ramp is what lets the pooled features still tell a low tone
//! from a high one. Quiet background maps to exact zeros, and with zero
//! biases the network is positively homogeneous, so the embedding depends on
//! where the energy sits rather than on how much of the clip is silent.

use ndarray::{s, Array1, Array2, Array3, Axis};

use crate::audio::Spectrogram;
use crate::encoder::config::EncoderConfig;
use crate::encoder::params::{ParamSlices, ParamSlicesMut};
use crate::encoder::transformer::{normal_matrix, WEIGHT_STD};
use crate::error::{Error, Result};
use crate::rng;

const INPUT_CHANNELS: usize = 2;
/// Nats of power kept below the loudest cell.
const DYNAMIC_RANGE: f64 = 10.0;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out × in·k·k]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    fn init(rng: &mut rng::Rng, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        let fan_in = cin * kernel * kernel;
        Conv2d {
            weight: normal_matrix(rng, cout, fan_in, (2.0 / fan_in as f64).sqrt()),
            bias: Array1::zeros(cout),
            kernel,
            stride,
        }
    }

    /// Zero-padded (`kernel / 2`) convolution via im2col.
    pub fn forward(&self, input: &Array3<f64>) -> Array3<f64> {
        let (cin, h, w) = input.dim();
        let k = self.kernel;
        let pad = k / 2;
        let ho = (h + 2 * pad - k) / self.stride + 1;
        let wo = (w + 2 * pad - k) / self.stride + 1;
        let mut cols = Array2::<f64>::zeros((cin * k * k, ho * wo));
        for c in 0..cin {
            let plane = input.index_axis(Axis(0), c);
            for ky in 0..k {
                for kx in 0..k {
                    let mut row = cols.row_mut((c * k + ky) * k + kx);
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                row[oy * wo + ox] = plane[[iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        let mut out = self.weight.dot(&cols);
        out += &self.bias.view().insert_axis(Axis(1));
        out.into_shape_with_order((self.weight.nrows(), ho, wo))
            .expect("conv output shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub shortcut: Conv2d,
}

impl ResidualBlock {
    fn init(rng: &mut rng::Rng, cin: usize, cout: usize) -> Self {
        ResidualBlock {
            conv1: Conv2d::init(rng, cin, cout, 3, 2),
            conv2: Conv2d::init(rng, cout, cout, 3, 1),
            shortcut: Conv2d::init(rng, cin, cout, 1, 2),
        }
    }

    fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let h = relu(self.conv1.forward(x));
        let h = self.conv2.forward(&h);
        relu(h + self.shortcut.forward(x))
    }
}

fn relu(mut x: Array3<f64>) -> Array3<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioEncoder {
    pub stem: Conv2d,
    pub stages: Vec<ResidualBlock>,
    /// `[channels × 1024]`
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
    pub ln_gamma: Array1<f64>,
    pub ln_beta: Array1<f64>,
    pub input_shape: (usize, usize),
    pub log_floor: f64,
}

impl AudioEncoder {
    pub fn init(
        rng: &mut rng::Rng,
        cfg: &EncoderConfig,
        input_shape: (usize, usize),
        log_floor: f64,
    ) -> Self {
        let channels = &cfg.audio_channels;
        let stem = Conv2d::init(rng, INPUT_CHANNELS, channels[0], 3, 2);
        let mut prev = channels[0];
        let stages = channels
            .iter()
            .map(|&c| {
                let block = ResidualBlock::init(rng, prev, c);
                prev = c;
                block
            })
            .collect();
        AudioEncoder {
            stem,
            stages,
            head_weight: normal_matrix(rng, prev, cfg.audio_embed_dim, WEIGHT_STD),
            head_bias: Array1::zeros(cfg.audio_embed_dim),
            ln_gamma: Array1::ones(cfg.audio_embed_dim),
            ln_beta: Array1::zeros(cfg.audio_embed_dim),
            input_shape,
            log_floor,
        }
    }

    fn input_planes(&self, spec: &Spectrogram) -> Array3<f64> {
        let (f, t) = spec.values.dim();
        let peak = spec.values.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        // A clip that never rises DYNAMIC_RANGE above the floor is all zeros.
        let reference = peak.max(self.log_floor.ln() + DYNAMIC_RANGE);
        let level = spec
            .values
            .mapv(|v| (1.0 + (v - reference) / DYNAMIC_RANGE).max(0.0));
        let mut x = Array3::zeros((INPUT_CHANNELS, f, t));
        let log_top = (f as f64).ln();
        for r in 0..f {
            let ramp = if f > 1 {
                2.0 * ((1 + r) as f64).ln() / log_top - 1.0
            } else {
                0.0
            };
            x.slice_mut(s![1, r, ..]).assign(&level.row(r).mapv(|v| v * ramp));
        }
        x.slice_mut(s![0, .., ..]).assign(&level);
        x
    }

    /// 1024-d embedding of a spectrogram with the configured static shape.
    pub fn encode(&self, spec: &Spectrogram) -> Result<Array1<f64>> {
        if spec.values.dim() != self.input_shape {
            return Err(Error::Shape(format!(
                "spectrogram {:?}, encoder expects {:?}",
                spec.values.dim(),
                self.input_shape
            )));
        }
        let mut x = relu(self.stem.forward(&self.input_planes(spec)));
        for stage in &self.stages {
            x = stage.forward(&x);
        }
        let (c, h, w) = x.dim();
        let pooled = x
            .into_shape_with_order((c, h * w))
            .expect("contiguous feature map")
            .mean_axis(Axis(1))
            .expect("non-empty feature map");
        let h = pooled.dot(&self.head_weight) + &self.head_bias;
        let mean = h.mean().unwrap_or(0.0);
        let var = h.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0);
        let inv = 1.0 / (var + LN_EPS).sqrt();
        Ok(h.mapv(|v| (v - mean) * inv) * &self.ln_gamma + &self.ln_beta)
    }

    pub(crate) fn params<'s>(&'s self, prefix: &str, out: &mut ParamSlices<'s>) {
        let conv = |name: String, c: &'s Conv2d, out: &mut ParamSlices<'s>| {
            out.push((format!("{name}.weight"), c.weight.as_slice().unwrap()));
            out.push((format!("{name}.bias"), c.bias.as_slice().unwrap()));
        };
        conv(format!("{prefix}.stem"), &self.stem, out);
        for (i, st) in self.stages.iter().enumerate() {
            conv(format!("{prefix}.stages.{i}.conv1"), &st.conv1, out);
            conv(format!("{prefix}.stages.{i}.conv2"), &st.conv2, out);
            conv(format!("{prefix}.stages.{i}.shortcut"), &st.shortcut, out);
        }
        out.push((format!("{prefix}.head.weight"), self.head_weight.as_slice().unwrap()));
        out.push((format!("{prefix}.head.bias"), self.head_bias.as_slice().unwrap()));
        out.push((format!("{prefix}.ln.gamma"), self.ln_gamma.as_slice().unwrap()));
        out.push((format!("{prefix}.ln.beta"), self.ln_beta.as_slice().unwrap()));
    }

    pub(crate) fn params_mut<'s>(&'s mut self, prefix: &str, out: &mut ParamSlicesMut<'s>) {
        fn conv<'s>(name: String, c: &'s mut Conv2d, out: &mut ParamSlicesMut<'s>) {
            out.push((format!("{name}.weight"), c.weight.as_slice_mut().unwrap()));
            out.push((format!("{name}.bias"), c.bias.as_slice_mut().unwrap()));
        }
        conv(format!("{prefix}.stem"), &mut self.stem, out);
        for (i, st) in self.stages.iter_mut().enumerate() {
            conv(format!("{prefix}.stages.{i}.conv1"), &mut st.conv1, out);
            conv(format!("{prefix}.stages.{i}.conv2"), &mut st.conv2, out);
            conv(format!("{prefix}.stages.{i}.shortcut"), &mut st.shortcut, out);
        }
        out.push((format!("{prefix}.head.weight"), self.head_weight.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.head.bias"), self.head_bias.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.ln.gamma"), self.ln_gamma.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.ln.beta"), self.ln_beta.as_slice_mut().unwrap()));
    }
}
