//! Temporal convolutional autoencoder (TCAE).
//!
//! The encoder stacks `L` blocks, each a dilated causal convolution
//! (`filters` channels, dilation `b^l`) followed by a 1×1 convolution
//! (`pointwise_filters` channels), ReLU and dropout. The block outputs are
//! concatenated along the channel axis, compressed by a 1×1 convolution to
//! `latent_channels`, average-pooled by `pool` and flattened into a dense
//! projection that yields the latent vector `z`. The decoder mirrors this:
//! dense expansion, nearest-neighbour upsampling, blocks with dilations in
//! reverse order, concatenation and a linear 1×1 output convolution.
//!
//! All arithmetic is done in `f64`; trained parameters are rounded to `f32`
//! so that a model in memory and its saved file behave identically.

mod layers;
mod train;

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{sha256_hex, Container, Tensor};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub use layers::{Conv, Dense};
pub use train::{train, TrainOptions, TrainingLog};

pub const MODEL_KIND: &str = "tcae";
pub const MODEL_VERSION: u32 = 1;

/// Smallest block count whose receptive field covers a window of `window_len`
/// samples: `L = ⌈log_b((T − 1)(b − 1) / (2(k − 1)) + 1)⌉`.
///
/// Evaluated in exact integer arithmetic as the smallest `L` with
/// `2(k − 1)(b^L − 1) ≥ (T − 1)(b − 1)`.
pub fn auto_blocks(window_len: usize, kernel_size: usize, dilation_base: usize) -> Result<usize> {
    if window_len < 2 || kernel_size < 2 || dilation_base < 2 {
        return Err(Error::invalid(format!(
            "auto_blocks needs T ≥ 2, k ≥ 2, b ≥ 2 (got T={window_len}, k={kernel_size}, b={dilation_base})"
        )));
    }
    let lhs_scale = 2 * (kernel_size as u128 - 1);
    let rhs = (window_len as u128 - 1) * (dilation_base as u128 - 1);
    let mut blocks = 0;
    let mut power: u128 = 1;
    while lhs_scale * (power - 1) < rhs {
        power *= dilation_base as u128;
        blocks += 1;
    }
    Ok(blocks)
}

/// Number of past samples (including the current one) that can influence
/// one output step of a stack of `blocks` dilated convolutions.
pub fn receptive_field(blocks: usize, kernel_size: usize, dilation_base: usize) -> usize {
    let dilations: usize = (0..blocks).map(|l| dilation_base.pow(l as u32)).sum();
    1 + (kernel_size - 1) * dilations
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcaeConfig {
    pub window_len: usize,
    pub channels: usize,
    /// `None` sizes the stack with [`auto_blocks`].
    pub blocks: Option<usize>,
    pub kernel_size: usize,
    pub filters: usize,
    pub pointwise_filters: usize,
    pub latent_channels: usize,
    pub pool: usize,
    pub dropout: f64,
    pub dilation_base: usize,
    /// Report `r` as mean absolute residual instead of the signed mean.
    pub abs_residuals: bool,
}

impl Default for TcaeConfig {
    fn default() -> Self {
        TcaeConfig {
            window_len: 100,
            channels: crate::sim::N_CHANNELS,
            blocks: None,
            kernel_size: 9,
            filters: 64,
            pointwise_filters: 16,
            latent_channels: 16,
            pool: 4,
            dropout: 0.12,
            dilation_base: 2,
            abs_residuals: false,
        }
    }
}

impl TcaeConfig {
    pub fn block_count(&self) -> Result<usize> {
        match self.blocks {
            Some(l) => Ok(l),
            None => auto_blocks(self.window_len, self.kernel_size, self.dilation_base),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_len", self.window_len),
            ("channels", self.channels),
            ("kernel_size", self.kernel_size),
            ("filters", self.filters),
            ("pointwise_filters", self.pointwise_filters),
            ("latent_channels", self.latent_channels),
            ("pool", self.pool),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("tcae.{name} must be positive")));
            }
        }
        if self.dilation_base < 1 {
            return Err(Error::Config("tcae.dilation_base must be ≥ 1".into()));
        }
        if !self.window_len.is_multiple_of(self.pool) {
            return Err(Error::Config(format!(
                "tcae.window_len ({}) must be divisible by tcae.pool ({})",
                self.window_len, self.pool
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("tcae.dropout must lie in [0, 1)".into()));
        }
        if self.block_count()? == 0 {
            return Err(Error::Config("tcae.blocks must be positive".into()));
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> Result<usize> {
        Ok(receptive_field(self.block_count()?, self.kernel_size, self.dilation_base))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    dilated: Conv,
    pointwise: Conv,
}

/// Parameter offsets of every layer inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    encoder: Vec<Block>,
    compress: Conv,
    project: Dense,
    expand: Dense,
    decoder: Vec<Block>,
    output: Conv,
    n_params: usize,
}

impl Layout {
    fn new(cfg: &TcaeConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = cfg.block_count()?;
        let pooled = cfg.latent_channels * cfg.window_len / cfg.pool;
        let mut off = 0;
        let stack = |first_in: usize, dilations: &mut dyn Iterator<Item = usize>, off: &mut usize| {
            let mut in_ch = first_in;
            dilations
                .map(|d| {
                    let dilated = Conv::new(in_ch, cfg.filters, cfg.kernel_size, d, off);
                    let pointwise = Conv::new(cfg.filters, cfg.pointwise_filters, 1, 1, off);
                    in_ch = cfg.pointwise_filters;
                    Block { dilated, pointwise }
                })
                .collect::<Vec<_>>()
        };
        let dilation = |l: usize| cfg.dilation_base.pow(l as u32);
        let encoder = stack(cfg.channels, &mut (0..blocks).map(dilation), &mut off);
        let compress = Conv::new(cfg.pointwise_filters * blocks, cfg.latent_channels, 1, 1, &mut off);
        let project = Dense::new(pooled, cfg.latent_channels, &mut off);
        let expand = Dense::new(cfg.latent_channels, pooled, &mut off);
        let decoder = stack(cfg.latent_channels, &mut (0..blocks).rev().map(dilation), &mut off);
        let output = Conv::new(cfg.pointwise_filters * blocks, cfg.channels, 1, 1, &mut off);
        Ok(Layout { encoder, compress, project, expand, decoder, output, n_params: off })
    }

    /// `(name, layer)` pairs in serialization order.
    fn named_convs(&self) -> Vec<(String, Conv)> {
        let mut out = Vec::new();
        for (prefix, blocks) in [("enc", &self.encoder), ("dec", &self.decoder)] {
            for (l, b) in blocks.iter().enumerate() {
                out.push((format!("{prefix}.{l}.dilated"), b.dilated));
                out.push((format!("{prefix}.{l}.pointwise"), b.pointwise));
            }
            if prefix == "enc" {
                out.push(("enc.compress".into(), self.compress));
            }
        }
        out.push(("dec.output".into(), self.output));
        out
    }
}

/// Per-window features handed to the downstream classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    /// Latent vector, length `latent_channels`.
    pub z: Vec<f64>,
    /// Per-channel mean residual `x − x̂`.
    pub r: Vec<f64>,
    /// Mean absolute reconstruction error.
    pub e: f64,
}

impl Features {
    /// `[z…, r…, e]`, the full classifier input.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.z.len() + self.r.len() + 1);
        v.extend_from_slice(&self.z);
        v.extend_from_slice(&self.r);
        v.push(self.e);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcaeModel {
    pub config: TcaeConfig,
    pub channel_names: Vec<String>,
    pub scaler_hash: String,
    pub training: TrainingLog,
    layout: Layout,
    params: Vec<f64>,
}

struct BlockTrace {
    dilated: Vec<f64>,
    pre_act: Vec<f64>,
    mask: Option<Vec<f64>>,
}

/// Every intermediate activation of one forward pass, kept for backprop.
struct Trace {
    enc_blocks: Vec<BlockTrace>,
    enc_cat: Vec<f64>,
    compressed: Vec<f64>,
    pooled: Vec<f64>,
    z: Vec<f64>,
    expanded: Vec<f64>,
    upsampled: Vec<f64>,
    dec_blocks: Vec<BlockTrace>,
    dec_cat: Vec<f64>,
    xhat: Vec<f64>,
}

fn block_forward(
    block: &Block,
    params: &[f64],
    input: &[f64],
    len: usize,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
    out: &mut [f64],
) -> BlockTrace {
    let mut dilated = vec![0.0; block.dilated.out_ch * len];
    block.dilated.forward(params, input, len, &mut dilated);
    let mut pre_act = vec![0.0; block.pointwise.out_ch * len];
    block.pointwise.forward(params, &dilated, len, &mut pre_act);
    let mask = dropout.filter(|(p, _)| *p > 0.0).map(|(p, rng)| {
        let keep = 1.0 / (1.0 - p);
        (0..pre_act.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect::<Vec<_>>()
    });
    for (i, (o, &v)) in out.iter_mut().zip(&pre_act).enumerate() {
        let m = mask.as_ref().map_or(1.0, |m| m[i]);
        *o = v.max(0.0) * m;
    }
    BlockTrace { dilated, pre_act, mask }
}

#[allow(clippy::too_many_arguments)]
fn block_backward(
    block: &Block,
    params: &[f64],
    input: &[f64],
    len: usize,
    trace: &BlockTrace,
    d_out: &[f64],
    grad: &mut [f64],
    d_input: Option<&mut [f64]>,
) {
    let d_pre: Vec<f64> = d_out
        .iter()
        .zip(&trace.pre_act)
        .enumerate()
        .map(|(i, (&g, &v))| if v > 0.0 { g * trace.mask.as_ref().map_or(1.0, |m| m[i]) } else { 0.0 })
        .collect();
    let mut d_dilated = vec![0.0; trace.dilated.len()];
    block.pointwise.backward(params, &trace.dilated, len, &d_pre, grad, Some(&mut d_dilated));
    block.dilated.backward(params, input, len, &d_dilated, grad, d_input);
}

/// Runs a block stack, writing block `l`'s output into channel group `l` of
/// `cat`. Block `l + 1` consumes block `l`'s output.
fn stack_forward(
    blocks: &[Block],
    params: &[f64],
    input: &[f64],
    len: usize,
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    cat: &mut [f64],
) -> Vec<BlockTrace> {
    let group = cat.len() / blocks.len();
    let mut traces = Vec::with_capacity(blocks.len());
    for (l, block) in blocks.iter().enumerate() {
        let (done, rest) = cat.split_at_mut(l * group);
        let x = if l == 0 { input } else { &done[(l - 1) * group..] };
        let d = dropout.as_mut().map(|(p, rng)| (*p, &mut **rng));
        traces.push(block_forward(block, params, x, len, d, &mut rest[..group]));
    }
    traces
}

/// Backward through a block stack. `d_cat` holds the gradient w.r.t. the
/// concatenated outputs on entry and is consumed.
#[allow(clippy::too_many_arguments)]
fn stack_backward(
    blocks: &[Block],
    params: &[f64],
    input: &[f64],
    len: usize,
    traces: &[BlockTrace],
    cat: &[f64],
    d_cat: &mut [f64],
    grad: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let group = cat.len() / blocks.len();
    for l in (0..blocks.len()).rev() {
        let (before, rest) = d_cat.split_at_mut(l * group);
        let d_out = &rest[..group];
        let (x, dx) = if l == 0 {
            (input, d_input.as_deref_mut())
        } else {
            (&cat[(l - 1) * group..l * group], Some(&mut before[(l - 1) * group..]))
        };
        block_backward(&blocks[l], params, x, len, &traces[l], d_out, grad, dx);
    }
}

impl TcaeModel {
    /// Fresh model with fan-in scaled uniform weights and zero biases.
    pub fn new(config: TcaeConfig, seed: u64) -> Result<Self> {
        let layout = Layout::new(&config)?;
        let mut params = vec![0.0; layout.n_params];
        let mut rng = stream_rng(seed, 0x7cae);
        let mut init_conv = |c: &Conv, params: &mut [f64]| {
            let limit = (3.0 / c.fan_in() as f64).sqrt();
            for w in &mut params[c.w_off..c.b_off] {
                *w = rng.random_range(-limit..limit) as f32 as f64;
            }
        };
        for (_, c) in layout.named_convs() {
            init_conv(&c, &mut params);
        }
        for d in [layout.project, layout.expand] {
            let limit = (3.0 / d.inputs as f64).sqrt();
            for w in &mut params[d.w_off..d.b_off] {
                *w = rng.random_range(-limit..limit) as f32 as f64;
            }
        }
        let channel_names = crate::sim::CHANNEL_NAMES
            .iter()
            .take(config.channels)
            .map(|s| s.to_string())
            .collect();
        Ok(TcaeModel { config, channel_names, scaler_hash: String::new(), training: TrainingLog::default(), layout, params })
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Sets the output-layer bias; handy for probing the decoder.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let o = self.layout.output;
        &mut self.params[o.b_off..o.b_off + o.out_ch]
    }

    fn input_len(&self) -> usize {
        self.config.channels * self.config.window_len
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_len() {
            return Err(Error::shape(
                format!("{} values ({} channels × {} steps)", self.input_len(), self.config.channels, self.config.window_len),
                len,
            ));
        }
        Ok(())
    }

    fn run(&self, params: &[f64], x: &[f64], mut dropout: Option<&mut ChaCha8Rng>) -> Trace {
        let cfg = &self.config;
        let t = cfg.window_len;
        let lay = &self.layout;
        let group = cfg.pointwise_filters * t;
        let p = cfg.dropout;

        let mut enc_cat = vec![0.0; group * lay.encoder.len()];
        let enc_blocks = stack_forward(&lay.encoder, params, x, t, dropout.as_mut().map(|r| (p, &mut **r)), &mut enc_cat);
        let mut compressed = vec![0.0; cfg.latent_channels * t];
        lay.compress.forward(params, &enc_cat, t, &mut compressed);
        let mut pooled = vec![0.0; cfg.latent_channels * t / cfg.pool];
        layers::avg_pool(&compressed, cfg.latent_channels, t, cfg.pool, &mut pooled);
        let mut z = vec![0.0; cfg.latent_channels];
        lay.project.forward(params, &pooled, &mut z);

        let mut expanded = vec![0.0; pooled.len()];
        lay.expand.forward(params, &z, &mut expanded);
        let mut upsampled = vec![0.0; cfg.latent_channels * t];
        layers::upsample(&expanded, cfg.latent_channels, t / cfg.pool, cfg.pool, &mut upsampled);
        let mut dec_cat = vec![0.0; group * lay.decoder.len()];
        let dec_blocks = stack_forward(&lay.decoder, params, &upsampled, t, dropout.map(|r| (p, r)), &mut dec_cat);
        let mut xhat = vec![0.0; cfg.channels * t];
        lay.output.forward(params, &dec_cat, t, &mut xhat);

        Trace { enc_blocks, enc_cat, compressed, pooled, z, expanded, upsampled, dec_blocks, dec_cat, xhat }
    }

    /// Backprop of a loss whose gradient w.r.t. `x̂` is `d_xhat`.
    fn backward(&self, params: &[f64], x: &[f64], tr: &Trace, d_xhat: &[f64], grad: &mut [f64]) {
        let cfg = &self.config;
        let t = cfg.window_len;
        let lay = &self.layout;

        let mut d_dec_cat = vec![0.0; tr.dec_cat.len()];
        lay.output.backward(params, &tr.dec_cat, t, d_xhat, grad, Some(&mut d_dec_cat));
        let mut d_up = vec![0.0; tr.upsampled.len()];
        stack_backward(&lay.decoder, params, &tr.upsampled, t, &tr.dec_blocks, &tr.dec_cat, &mut d_dec_cat, grad, Some(&mut d_up));
        let mut d_expanded = vec![0.0; tr.expanded.len()];
        layers::upsample_backward(&d_up, cfg.latent_channels, t / cfg.pool, cfg.pool, &mut d_expanded);
        let mut d_z = vec![0.0; tr.z.len()];
        lay.expand.backward(params, &tr.z, &d_expanded, grad, &mut d_z);

        let mut d_pooled = vec![0.0; tr.pooled.len()];
        lay.project.backward(params, &tr.pooled, &d_z, grad, &mut d_pooled);
        let mut d_compressed = vec![0.0; tr.compressed.len()];
        layers::avg_pool_backward(&d_pooled, cfg.latent_channels, t, cfg.pool, &mut d_compressed);
        let mut d_enc_cat = vec![0.0; tr.enc_cat.len()];
        lay.compress.backward(params, &tr.enc_cat, t, &d_compressed, grad, Some(&mut d_enc_cat));
        stack_backward(&lay.encoder, params, x, t, &tr.enc_blocks, &tr.enc_cat, &mut d_enc_cat, grad, None);
    }

    /// MSE of one window and its gradient, accumulated into `grad`.
    /// `dropout` switches the model into training mode.
    fn loss_and_grad_with(&self, params: &[f64], x: &[f64], dropout: Option<&mut ChaCha8Rng>, grad: &mut [f64]) -> f64 {
        let tr = self.run(params, x, dropout);
        let n = x.len() as f64;
        let mut loss = 0.0;
        let d: Vec<f64> = tr
            .xhat
            .iter()
            .zip(x)
            .map(|(h, v)| {
                let diff = h - v;
                loss += diff * diff;
                2.0 * diff / n
            })
            .collect();
        self.backward(params, x, &tr, &d, grad);
        loss / n
    }

    /// Reconstruction MSE of one window and its gradient w.r.t. every
    /// parameter, in the order of [`params`](Self::params). With
    /// `dropout_seed` the pass runs in training mode with that mask.
    pub fn loss_and_gradient(&self, window: &[f32], dropout_seed: Option<u64>) -> Result<(f64, Vec<f64>)> {
        self.check_input(window.len())?;
        let x: Vec<f64> = window.iter().map(|&v| v as f64).collect();
        let mut grad = vec![0.0; self.layout.n_params];
        let mut rng = dropout_seed.map(|s| stream_rng(s, 0));
        let loss = self.loss_and_grad_with(&self.params, &x, rng.as_mut(), &mut grad);
        Ok((loss, grad))
    }

    /// Reconstruction MSE of one window with the given dropout mask seed.
    pub fn loss(&self, window: &[f32], dropout_seed: Option<u64>) -> Result<f64> {
        self.check_input(window.len())?;
        let x: Vec<f64> = window.iter().map(|&v| v as f64).collect();
        let mut rng = dropout_seed.map(|s| stream_rng(s, 0));
        let tr = self.run(&self.params, &x, rng.as_mut());
        Ok(mse(&tr.xhat, &x))
    }

    /// Eval-mode reconstruction and features of one channel-major window.
    pub fn forward(&self, window: &[f32]) -> Result<(Vec<f64>, Features)> {
        self.check_input(window.len())?;
        let x: Vec<f64> = window.iter().map(|&v| v as f64).collect();
        let tr = self.run(&self.params, &x, None);
        let features = self.features_of(&x, &tr.xhat, tr.z);
        Ok((tr.xhat, features))
    }

    pub fn features(&self, window: &[f32]) -> Result<Features> {
        Ok(self.forward(window)?.1)
    }

    /// Features of a scaled but unclamped window. The network and `r` see
    /// the window clamped to `[0, 1]`; `e` is measured against the
    /// unclamped values, so inputs far outside the training range keep a
    /// large anomaly score instead of being flattened by the clamp.
    pub fn features_unclamped(&self, window: &[f32]) -> Result<Features> {
        self.check_input(window.len())?;
        let x: Vec<f64> = window.iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect();
        let tr = self.run(&self.params, &x, None);
        let mut f = self.features_of(&x, &tr.xhat, tr.z);
        f.e = window.iter().zip(&tr.xhat).map(|(&a, b)| (a as f64 - b).abs()).sum::<f64>() / x.len() as f64;
        Ok(f)
    }

    /// Features of many windows, computed in parallel, returned in order.
    pub fn features_batch(&self, windows: &[&[f32]]) -> Result<Vec<Features>> {
        windows.par_iter().map(|w| self.features(w)).collect()
    }

    pub fn features_batch_unclamped(&self, windows: &[&[f32]]) -> Result<Vec<Features>> {
        windows.par_iter().map(|w| self.features_unclamped(w)).collect()
    }

    /// Encoder output after the 1×1 compression and before pooling, shape
    /// `(latent_channels, window_len)`. Every step of it depends only on
    /// inputs at the same or earlier steps.
    pub fn encoder_pre_pool(&self, window: &[f32]) -> Result<Vec<f64>> {
        self.check_input(window.len())?;
        let x: Vec<f64> = window.iter().map(|&v| v as f64).collect();
        Ok(self.run(&self.params, &x, None).compressed)
    }

    fn features_of(&self, x: &[f64], xhat: &[f64], z: Vec<f64>) -> Features {
        let t = self.config.window_len;
        let e = x.iter().zip(xhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
        let r = x
            .chunks_exact(t)
            .zip(xhat.chunks_exact(t))
            .map(|(xc, hc)| {
                let s: f64 = if self.config.abs_residuals {
                    xc.iter().zip(hc).map(|(a, b)| (a - b).abs()).sum()
                } else {
                    xc.iter().zip(hc).map(|(a, b)| a - b).sum()
                };
                s / t as f64
            })
            .collect();
        Features { z, r, e }
    }

    /// Rounds every parameter to the nearest `f32`.
    fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    pub fn to_container(&self) -> Container {
        let meta = json!({
            "config": self.config,
            "channel_names": self.channel_names,
            "scaler_hash": self.scaler_hash,
            "training": self.training,
        });
        let mut c = Container::new(MODEL_KIND, MODEL_VERSION, meta);
        let p = &self.params;
        let f = |r: std::ops::Range<usize>| p[r].iter().map(|&v| v as f32).collect::<Vec<_>>();
        let mut convs = self.layout.named_convs();
        // Keep the layers in data-flow order.
        let dec_start = convs.iter().position(|(n, _)| n.starts_with("dec")).unwrap_or(convs.len());
        let tail = convs.split_off(dec_start);
        let push_conv = |c: &mut Container, name: &str, l: &Conv| {
            c.push(Tensor::f32(format!("{name}.weight"), vec![l.out_ch, l.in_ch, l.kernel], f(l.w_off..l.b_off)));
            c.push(Tensor::f32(format!("{name}.bias"), vec![l.out_ch], f(l.b_off..l.b_off + l.out_ch)));
        };
        let push_dense = |c: &mut Container, name: &str, l: &Dense| {
            c.push(Tensor::f32(format!("{name}.weight"), vec![l.outputs, l.inputs], f(l.w_off..l.b_off)));
            c.push(Tensor::f32(format!("{name}.bias"), vec![l.outputs], f(l.b_off..l.b_off + l.outputs)));
        };
        for (name, l) in &convs {
            push_conv(&mut c, name, l);
        }
        push_dense(&mut c, "enc.project", &self.layout.project);
        push_dense(&mut c, "dec.expand", &self.layout.expand);
        for (name, l) in &tail {
            push_conv(&mut c, name, l);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: TcaeConfig = serde_json::from_value(c.meta["config"].clone())?;
        let layout = Layout::new(&config)?;
        let mut params = vec![0.0; layout.n_params];
        let mut load = |name: &str, off: usize, n: usize| -> Result<()> {
            let v = c.f32s(name)?;
            if v.len() != n {
                return Err(Error::shape(format!("{n} values in '{name}'"), v.len()));
            }
            for (d, s) in params[off..off + n].iter_mut().zip(v) {
                *d = *s as f64;
            }
            Ok(())
        };
        for (name, l) in layout.named_convs() {
            load(&format!("{name}.weight"), l.w_off, l.b_off - l.w_off)?;
            load(&format!("{name}.bias"), l.b_off, l.out_ch)?;
        }
        for (name, l) in [("enc.project", layout.project), ("dec.expand", layout.expand)] {
            load(&format!("{name}.weight"), l.w_off, l.b_off - l.w_off)?;
            load(&format!("{name}.bias"), l.b_off, l.outputs)?;
        }
        let channel_names = serde_json::from_value(c.meta["channel_names"].clone())?;
        let scaler_hash = c.meta["scaler_hash"].as_str().unwrap_or_default().to_string();
        let training = serde_json::from_value(c.meta["training"].clone()).unwrap_or_default();
        Ok(TcaeModel { config, channel_names, scaler_hash, training, layout, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, MODEL_KIND, MODEL_VERSION)?)
    }

    /// SHA-256 over the serialized model.
    pub fn hash(&self) -> String {
        let mut buf = Vec::new();
        self.to_container().write_to(&mut buf).expect("writing to memory");
        sha256_hex(&buf)
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
