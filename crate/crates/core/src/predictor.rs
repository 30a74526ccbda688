//! The fully convolutional parameter predictor.
//!
//! Six stride-2 conv layers map a `3×S×S` crop to an 8-channel feature map
//! that is global-average-pooled into the raw parameter vector. Layers 1–3
//! carry batch normalization (computed per call over the spatial positions
//! of the single input, which is the batch granularity of the per-sample
//! training loop); layers 1–5 use leaky ReLU with slope 0.1; dropout with
//! rate 0.5 follows the fifth layer's activation in train mode.
//!
//! Default layer table (kernel, stride, output channels):
//!
//! | layer | k | s | c   | batch norm | dropout |
//! |-------|---|---|-----|------------|---------|
//! | 1     | 3 | 2 | 16  | yes        |         |
//! | 2     | 3 | 2 | 32  | yes        |         |
//! | 3     | 3 | 2 | 64  | yes        |         |
//! | 4     | 3 | 2 | 128 |            |         |
//! | 5     | 3 | 2 | 256 |            | 0.5     |
//! | 6     | 3 | 2 | 8   |            |         |
//!
//! All convolutions zero-pad by `k/2`. The trainable parameter count of
//! this table is 411,272 (see [`PredictorArch::param_count`]); tests pin it.
//!
//! Weights are initialized from the model seed as `U(-b, b)` with
//! `b = 1/√(fan_in)`, `fan_in = k²·c_in`, drawn in layer order and
//! `[out][in][ky][kx]` index order via [`SplitMix64`]; biases start at
//! zero, batch-norm scale at 1 and shift at 0.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::image::{Image, CHANNELS};
use crate::params::{RawParams, PARAM_COUNT};
use crate::rng::SplitMix64;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.1;
pub const DROPOUT_RATE: f64 = 0.5;

/// One convolutional stage of the predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub batch_norm: bool,
    /// Dropout rate applied after this layer's activation in train mode.
    pub dropout: Option<f64>,
}

/// Architecture description: input size, channel/stride table, activation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorArch {
    pub input_size: usize,
    pub in_channels: usize,
    pub layers: Vec<ConvLayerSpec>,
    pub leaky_slope: f64,
}

impl Default for PredictorArch {
    fn default() -> Self {
        PredictorArch::canonical(256)
    }
}

impl PredictorArch {
    /// The default six-layer table at the given square input size. The
    /// network is fully convolutional, so any input size the strides can
    /// reduce is usable; 256 is the training default.
    pub fn canonical(input_size: usize) -> Self {
        let layer = |c, bn, dropout| ConvLayerSpec {
            kernel: 3,
            stride: 2,
            out_channels: c,
            batch_norm: bn,
            dropout,
        };
        PredictorArch {
            input_size,
            in_channels: CHANNELS,
            layers: vec![
                layer(16, true, None),
                layer(32, true, None),
                layer(64, true, None),
                layer(128, false, None),
                layer(256, false, Some(DROPOUT_RATE)),
                layer(8, false, None),
            ],
            leaky_slope: LEAKY_SLOPE,
        }
    }

    /// Structural checks that apply to any arch, including the shrunken
    /// ones used by gradient tests.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CoreError::InvalidConfig {
                message: String::from("predictor needs at least one conv layer"),
            });
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.stride == 0 || l.out_channels == 0 {
                return Err(CoreError::InvalidConfig {
                    message: format!("layer {} has a zero kernel/stride/channel count", i + 1),
                });
            }
            if let Some(rate) = l.dropout {
                if !(0.0..1.0).contains(&rate) {
                    return Err(CoreError::InvalidConfig {
                        message: format!("layer {} dropout rate {rate} outside [0, 1)", i + 1),
                    });
                }
            }
        }
        if self.layers.last().unwrap().out_channels != PARAM_COUNT {
            return Err(CoreError::InvalidConfig {
                message: format!(
                    "final layer must emit {PARAM_COUNT} channels, got {}",
                    self.layers.last().unwrap().out_channels
                ),
            });
        }
        let (h, _) = self.output_hw();
        if h == 0 {
            return Err(CoreError::InvalidConfig {
                message: format!("input size {} collapses to zero", self.input_size),
            });
        }
        Ok(())
    }

    /// Spatial size of the final feature map before pooling.
    pub fn output_hw(&self) -> (usize, usize) {
        let mut h = self.input_size;
        let mut w = self.input_size;
        for l in &self.layers {
            h = conv_out_dim(h, l.kernel, l.stride);
            w = conv_out_dim(w, l.kernel, l.stride);
        }
        (h, w)
    }

    /// Trainable parameter count: `k²·c_in·c_out + c_out` per convolution
    /// plus `2·c_out` (scale, shift) per batch-normalized layer.
    pub fn param_count(&self) -> usize {
        let mut c_in = self.in_channels;
        let mut total = 0;
        for l in &self.layers {
            total += l.kernel * l.kernel * c_in * l.out_channels + l.out_channels;
            if l.batch_norm {
                total += 2 * l.out_channels;
            }
            c_in = l.out_channels;
        }
        total
    }
}

fn conv_out_dim(input: usize, k: usize, s: usize) -> usize {
    let pad = k / 2;
    (input + 2 * pad).saturating_sub(k) / s + 1
}

/// Batch-norm tensors for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Weights of one conv layer, `[out][in][ky][kx]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn: Option<BatchNorm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// The predictor model: architecture, tensors, mode flag, and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub arch: PredictorArch,
    pub layers: Vec<LayerParams>,
    pub mode: Mode,
    pub init_seed: u64,
    /// Optimizer steps applied so far; carried into checkpoints.
    pub step: u64,
}

/// Initialize a model from a seed; see the module docs for the exact
/// weight-draw convention.
pub fn init_predictor(arch: PredictorArch, seed: u64) -> Result<PredictorModel> {
    arch.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut layers = Vec::with_capacity(arch.layers.len());
    let mut c_in = arch.in_channels;
    for spec in &arch.layers {
        let fan_in = spec.kernel * spec.kernel * c_in;
        let bound = 1.0 / crate::math::sqrt(fan_in as f64);
        let n_w = fan_in * spec.out_channels;
        let mut weight = Vec::with_capacity(n_w);
        for _ in 0..n_w {
            weight.push(bound * (2.0 * rng.next_f64() - 1.0));
        }
        let bias = vec![0.0; spec.out_channels];
        let bn = spec.batch_norm.then(|| BatchNorm {
            scale: vec![1.0; spec.out_channels],
            shift: vec![0.0; spec.out_channels],
            running_mean: vec![0.0; spec.out_channels],
            running_var: vec![1.0; spec.out_channels],
        });
        layers.push(LayerParams { weight, bias, bn });
        c_in = spec.out_channels;
    }
    Ok(PredictorModel {
        arch,
        layers,
        mode: Mode::Train,
        init_seed: seed,
        step: 0,
    })
}

impl PredictorModel {
    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Trainable tensors in declared order (`weight`, `bias`, then
    /// `bn.scale`, `bn.shift` per layer). The order is shared by the
    /// optimizer and the checkpoint format.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            names.push(format!("layer{}.weight", i + 1));
            names.push(format!("layer{}.bias", i + 1));
            if l.bn.is_some() {
                names.push(format!("layer{}.bn.scale", i + 1));
                names.push(format!("layer{}.bn.shift", i + 1));
            }
        }
        names
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            t.push(&l.weight);
            t.push(&l.bias);
            if let Some(bn) = &l.bn {
                t.push(&bn.scale);
                t.push(&bn.shift);
            }
        }
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut t: Vec<&mut Vec<f64>> = Vec::new();
        for l in &mut self.layers {
            t.push(&mut l.weight);
            t.push(&mut l.bias);
            if let Some(bn) = &mut l.bn {
                t.push(&mut bn.scale);
                t.push(&mut bn.shift);
            }
        }
        t
    }

    /// Forward pass on a square crop. In train mode, batch-norm statistics
    /// come from this input and `dropout_seed` fixes the dropout mask (it
    /// is recorded in the cache so backward replays it); in eval mode
    /// running statistics are used and dropout is inactive, so the output
    /// is a deterministic function of (model, crop).
    pub fn predict(&self, crop: &Image, dropout_seed: u64) -> Result<(RawParams, ForwardCache)> {
        if crop.height() != self.arch.input_size || crop.width() != self.arch.input_size {
            return Err(CoreError::ShapeMismatch {
                what: "predictor input",
                expected: format!("{0}x{0}", self.arch.input_size),
                actual: format!("{}x{}", crop.height(), crop.width()),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut h = self.arch.input_size;
        let mut w = self.arch.input_size;
        let mut c_in = self.arch.in_channels;
        // CHW planes
        let mut x = {
            let mut planes = Vec::with_capacity(c_in * h * w);
            for c in 0..c_in {
                planes.extend(crop.channel_plane(c));
            }
            planes
        };
        acts.push(x.clone());
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for (li, (spec, params)) in self.arch.layers.iter().zip(&self.layers).enumerate() {
            let oh = conv_out_dim(h, spec.kernel, spec.stride);
            let ow = conv_out_dim(w, spec.kernel, spec.stride);
            let mut y = conv_forward(
                &x, c_in, h, w, &params.weight, &params.bias, spec.out_channels, spec.kernel,
                spec.stride, oh, ow,
            );
            let mut bn_cache = None;
            if let Some(bn) = &params.bn {
                bn_cache = Some(match self.mode {
                    Mode::Train => bn_forward_train(&mut y, bn, spec.out_channels, oh * ow),
                    Mode::Eval => {
                        bn_forward_eval(&mut y, bn, spec.out_channels, oh * ow);
                        BnCache::default()
                    }
                });
            }
            let is_last = li + 1 == self.layers.len();
            if !is_last {
                for v in y.iter_mut() {
                    if *v < 0.0 {
                        *v *= self.arch.leaky_slope;
                    }
                }
            }
            let act = y.clone();
            let mut drop_factors = None;
            if let (Some(rate), Mode::Train) = (spec.dropout, self.mode) {
                let keep = 1.0 - rate;
                let mut rng = SplitMix64::derive(dropout_seed, 0x64726F70, li as u64);
                let factors: Vec<f64> = (0..y.len())
                    .map(|_| if rng.next_f64() >= rate { 1.0 / keep } else { 0.0 })
                    .collect();
                for (v, f) in y.iter_mut().zip(&factors) {
                    *v *= f;
                }
                drop_factors = Some(factors);
            }
            layer_caches.push(LayerCache {
                bn: bn_cache,
                act,
                drop_factors,
                out_hw: (oh, ow),
            });
            acts.push(y.clone());
            x = y;
            c_in = spec.out_channels;
            h = oh;
            w = ow;
        }
        // global average pool over the final feature map
        let spatial = h * w;
        let mut raw = [0.0; PARAM_COUNT];
        for (c, slot) in raw.iter_mut().enumerate() {
            let plane = &x[c * spatial..(c + 1) * spatial];
            *slot = plane.iter().sum::<f64>() / spatial as f64;
        }
        Ok((
            raw,
            ForwardCache {
                mode: self.mode,
                dropout_seed,
                input_size: self.arch.input_size,
                acts,
                layers: layer_caches,
            },
        ))
    }

    /// Convenience eval-mode forward that discards the cache.
    pub fn predict_eval(&self, crop: &Image) -> Result<RawParams> {
        let mut m = self.clone();
        m.mode = Mode::Eval;
        Ok(m.predict(crop, 0)?.0)
    }

    /// Reverse-mode gradients of `raw · grad_raw` for every trainable
    /// tensor, replaying the cached batch statistics and dropout mask.
    pub fn backward(&self, cache: &ForwardCache, grad_raw: &RawParams) -> Result<Gradients> {
        if cache.mode != Mode::Train {
            return Err(CoreError::CacheMismatch {
                reason: "backward requires a train-mode forward cache",
            });
        }
        if cache.layers.len() != self.layers.len() || cache.input_size != self.arch.input_size {
            return Err(CoreError::CacheMismatch {
                reason: "cache was produced by a different architecture",
            });
        }
        let nl = self.layers.len();
        let (fh, fw) = cache.layers[nl - 1].out_hw;
        let spatial = fh * fw;
        // GAP backward
        let mut dy = vec![0.0; PARAM_COUNT * spatial];
        for c in 0..PARAM_COUNT {
            let g = grad_raw[c] / spatial as f64;
            for v in &mut dy[c * spatial..(c + 1) * spatial] {
                *v = g;
            }
        }
        let mut grads = Gradients {
            layers: Vec::with_capacity(nl),
        };
        grads
            .layers
            .resize_with(nl, || LayerGrads::default());
        let mut shapes = Vec::with_capacity(nl);
        let mut h = self.arch.input_size;
        let mut w = self.arch.input_size;
        let mut c_in = self.arch.in_channels;
        for spec in &self.arch.layers {
            let oh = conv_out_dim(h, spec.kernel, spec.stride);
            let ow = conv_out_dim(w, spec.kernel, spec.stride);
            shapes.push((c_in, h, w, oh, ow));
            c_in = spec.out_channels;
            h = oh;
            w = ow;
        }
        for li in (0..nl).rev() {
            let spec = &self.arch.layers[li];
            let lc = &cache.layers[li];
            let (ci, ih, iw, oh, ow) = shapes[li];
            if let Some(factors) = &lc.drop_factors {
                for (d, f) in dy.iter_mut().zip(factors) {
                    *d *= f;
                }
            }
            let is_last = li + 1 == nl;
            if !is_last {
                // leaky gate; the positive branch preserves sign, so the
                // stored post-activation works as the gate
                for (d, &a) in dy.iter_mut().zip(&lc.act) {
                    if a < 0.0 {
                        *d *= self.arch.leaky_slope;
                    }
                }
            }
            let mut lg = LayerGrads::default();
            if let Some(bn) = &self.layers[li].bn {
                let c = spec.out_channels;
                let bnc = lc.bn.as_ref().ok_or(CoreError::CacheMismatch {
                    reason: "missing batch-norm cache",
                })?;
                let (dx, dscale, dshift) = bn_backward(&dy, bn, bnc, c, oh * ow);
                dy = dx;
                lg.bn_scale = dscale;
                lg.bn_shift = dshift;
            }
            let input = &cache.acts[li];
            let (dw, db, dx) = conv_backward(
                input,
                &dy,
                &self.layers[li].weight,
                ci,
                ih,
                iw,
                spec.out_channels,
                spec.kernel,
                spec.stride,
                oh,
                ow,
                li > 0,
            );
            lg.weight = dw;
            lg.bias = db;
            grads.layers[li] = lg;
            if li > 0 {
                dy = dx;
            }
        }
        Ok(grads)
    }
}

/// Activation record from a forward pass; everything backward needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    pub dropout_seed: u64,
    input_size: usize,
    /// `acts[l]` is the input tensor of layer `l` (CHW planes).
    acts: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    bn: Option<BnCache>,
    /// Post-activation, pre-dropout output.
    act: Vec<f64>,
    drop_factors: Option<Vec<f64>>,
    out_hw: (usize, usize),
}

#[derive(Debug, Clone, Default)]
struct BnCache {
    /// Normalized values (pre scale/shift).
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

/// Per-layer gradient tensors, shaped like the model's.
#[derive(Debug, Clone, Default)]
pub struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    /// Flatten in the model's declared tensor order.
    pub fn tensors(&self, model: &PredictorModel) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = Vec::new();
        for (lg, l) in self.layers.iter().zip(&model.layers) {
            t.push(&lg.weight);
            t.push(&lg.bias);
            if l.bn.is_some() {
                t.push(&lg.bn_scale);
                t.push(&lg.bn_shift);
            }
        }
        t
    }

    /// Elementwise sum; shapes must match.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            add_assign(&mut a.weight, &b.weight);
            add_assign(&mut a.bias, &b.bias);
            add_assign(&mut a.bn_scale, &b.bn_scale);
            add_assign(&mut a.bn_shift, &b.bn_shift);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in self.layers.iter_mut() {
            for v in l
                .weight
                .iter_mut()
                .chain(l.bias.iter_mut())
                .chain(l.bn_scale.iter_mut())
                .chain(l.bn_shift.iter_mut())
            {
                *v *= factor;
            }
        }
    }
}

fn add_assign(a: &mut Vec<f64>, b: &[f64]) {
    if a.is_empty() {
        a.extend_from_slice(b);
    } else {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

// out index range for which `out*s + k_off` lands inside `[0, len_in)`
fn conv_bounds(len_in: usize, len_out: usize, k_off: isize, s: usize) -> (usize, usize) {
    let s = s as isize;
    let lo = (-k_off + s - 1).div_euclid(s).max(0) as usize;
    let hi = (len_in as isize - k_off + s - 1).div_euclid(s).clamp(0, len_out as isize) as usize;
    (lo, hi.max(lo))
}

// input planes with `pad` zero columns on each side, so the x loops need
// no bounds logic: unpadded `ix = ox·s + kx − pad` becomes `ox·s + kx`
fn pad_rows(input: &[f64], ci: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let pw = w + 2 * pad;
    let mut out = vec![0.0; ci * h * pw];
    for ic in 0..ci {
        for y in 0..h {
            let src = &input[(ic * h + y) * w..(ic * h + y + 1) * w];
            out[(ic * h + y) * pw + pad..(ic * h + y) * pw + pad + w].copy_from_slice(src);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    co: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let pad = k / 2;
    let pw = w + 2 * pad;
    let padded = pad_rows(input, ci, h, w, pad);
    let mut out = vec![0.0; co * oh * ow];
    for oc in 0..co {
        let out_plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        for v in out_plane.iter_mut() {
            *v = bias[oc];
        }
        for ic in 0..ci {
            let w_base = (oc * ci + ic) * k * k;
            let in_plane = &padded[ic * h * pw..(ic + 1) * h * pw];
            for ky in 0..k {
                let koff_y = ky as isize - pad as isize;
                let (oy_lo, oy_hi) = conv_bounds(h, oh, koff_y, s);
                let wrow = &weight[w_base + ky * k..w_base + ky * k + k];
                for oy in oy_lo..oy_hi {
                    let iy = ((oy * s) as isize + koff_y) as usize;
                    let in_row = &in_plane[iy * pw..(iy + 1) * pw];
                    let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                    if k == 3 {
                        let (w0, w1, w2) = (wrow[0], wrow[1], wrow[2]);
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let b = ox * s;
                            *o += w0 * in_row[b] + w1 * in_row[b + 1] + w2 * in_row[b + 2];
                        }
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let b = ox * s;
                            let mut acc = 0.0;
                            for (kx, wv) in wrow.iter().enumerate() {
                                acc += wv * in_row[b + kx];
                            }
                            *o += acc;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    dy: &[f64],
    weight: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = k / 2;
    let pw = w + 2 * pad;
    let padded = pad_rows(input, ci, h, w, pad);
    let mut dw = vec![0.0; co * ci * k * k];
    let mut db = vec![0.0; co];
    // gradients scatter into a padded buffer; the pad columns are stripped
    // at the end (they receive the contributions that fell outside the
    // image, which zero-padding discards)
    let mut dx_padded = vec![0.0; if need_dx { ci * h * pw } else { 0 }];
    for oc in 0..co {
        let dy_plane = &dy[oc * oh * ow..(oc + 1) * oh * ow];
        db[oc] += dy_plane.iter().sum::<f64>();
        for ic in 0..ci {
            let w_base = (oc * ci + ic) * k * k;
            let in_plane = &padded[ic * h * pw..(ic + 1) * h * pw];
            for ky in 0..k {
                let koff_y = ky as isize - pad as isize;
                let (oy_lo, oy_hi) = conv_bounds(h, oh, koff_y, s);
                let mut acc = [0.0; 8];
                debug_assert!(k <= 8);
                for oy in oy_lo..oy_hi {
                    let iy = ((oy * s) as isize + koff_y) as usize;
                    let in_row = &in_plane[iy * pw..(iy + 1) * pw];
                    let dy_row = &dy_plane[oy * ow..(oy + 1) * ow];
                    if k == 3 {
                        let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                        for (ox, &dyv) in dy_row.iter().enumerate() {
                            let b = ox * s;
                            a0 += dyv * in_row[b];
                            a1 += dyv * in_row[b + 1];
                            a2 += dyv * in_row[b + 2];
                        }
                        acc[0] += a0;
                        acc[1] += a1;
                        acc[2] += a2;
                    } else {
                        for (ox, &dyv) in dy_row.iter().enumerate() {
                            let b = ox * s;
                            for (kx, slot) in acc.iter_mut().enumerate().take(k) {
                                *slot += dyv * in_row[b + kx];
                            }
                        }
                    }
                }
                for kx in 0..k {
                    dw[w_base + ky * k + kx] += acc[kx];
                }
                if need_dx {
                    let dxp = &mut dx_padded[ic * h * pw..(ic + 1) * h * pw];
                    let wrow = &weight[w_base + ky * k..w_base + ky * k + k];
                    for oy in oy_lo..oy_hi {
                        let iy = ((oy * s) as isize + koff_y) as usize;
                        let dy_row = &dy_plane[oy * ow..(oy + 1) * ow];
                        let dx_row = &mut dxp[iy * pw..(iy + 1) * pw];
                        if k == 3 {
                            let (w0, w1, w2) = (wrow[0], wrow[1], wrow[2]);
                            for (ox, &dyv) in dy_row.iter().enumerate() {
                                let b = ox * s;
                                dx_row[b] += w0 * dyv;
                                dx_row[b + 1] += w1 * dyv;
                                dx_row[b + 2] += w2 * dyv;
                            }
                        } else {
                            for (ox, &dyv) in dy_row.iter().enumerate() {
                                let b = ox * s;
                                for (kx, wv) in wrow.iter().enumerate() {
                                    dx_row[b + kx] += wv * dyv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut dx = vec![0.0; if need_dx { ci * h * w } else { 0 }];
    if need_dx {
        for ic in 0..ci {
            for y in 0..h {
                let src = &dx_padded[(ic * h + y) * pw + pad..(ic * h + y) * pw + pad + w];
                dx[(ic * h + y) * w..(ic * h + y + 1) * w].copy_from_slice(src);
            }
        }
    }
    (dw, db, dx)
}

/// Train-mode batch norm over the spatial positions of one sample;
/// population (biased) variance is used both for normalization and the
/// running statistics.
fn bn_forward_train(y: &mut [f64], bn: &BatchNorm, channels: usize, spatial: usize) -> BnCache {
    let mut cache = BnCache {
        xhat: vec![0.0; y.len()],
        inv_std: vec![0.0; channels],
        batch_mean: vec![0.0; channels],
        batch_var: vec![0.0; channels],
    };
    for c in 0..channels {
        let plane = &mut y[c * spatial..(c + 1) * spatial];
        let mean = plane.iter().sum::<f64>() / spatial as f64;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / spatial as f64;
        let inv = 1.0 / crate::math::sqrt(var + BN_EPS);
        cache.inv_std[c] = inv;
        cache.batch_mean[c] = mean;
        cache.batch_var[c] = var;
        let xhat_plane = &mut cache.xhat[c * spatial..(c + 1) * spatial];
        for (v, xh) in plane.iter_mut().zip(xhat_plane.iter_mut()) {
            *xh = (*v - mean) * inv;
            *v = bn.scale[c] * *xh + bn.shift[c];
        }
    }
    cache
}

fn bn_forward_eval(y: &mut [f64], bn: &BatchNorm, channels: usize, spatial: usize) {
    for c in 0..channels {
        let inv = 1.0 / crate::math::sqrt(bn.running_var[c] + BN_EPS);
        let plane = &mut y[c * spatial..(c + 1) * spatial];
        for v in plane.iter_mut() {
            *v = bn.scale[c] * (*v - bn.running_mean[c]) * inv + bn.shift[c];
        }
    }
}

fn bn_backward(
    dy: &[f64],
    bn: &BatchNorm,
    cache: &BnCache,
    channels: usize,
    spatial: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; dy.len()];
    let mut dscale = vec![0.0; channels];
    let mut dshift = vec![0.0; channels];
    let m = spatial as f64;
    for c in 0..channels {
        let r = c * spatial..(c + 1) * spatial;
        let dy_p = &dy[r.clone()];
        let xh_p = &cache.xhat[r.clone()];
        let sum_dy: f64 = dy_p.iter().sum();
        let sum_dy_xh: f64 = dy_p.iter().zip(xh_p).map(|(a, b)| a * b).sum();
        dshift[c] = sum_dy;
        dscale[c] = sum_dy_xh;
        let g = bn.scale[c] * cache.inv_std[c] / m;
        let dx_p = &mut dx[r];
        for ((d, &dyv), &xh) in dx_p.iter_mut().zip(dy_p).zip(xh_p) {
            *d = g * (m * dyv - sum_dy - xh * sum_dy_xh);
        }
    }
    (dx, dscale, dshift)
}

/// Fold a train-mode forward's recorded batch statistics into the running
/// ones: `running = (1 - momentum)·running + momentum·batch`. The training
/// loop calls this once per sample, in manifest order, so eval-mode
/// statistics are deterministic.
pub fn fold_running_stats(model: &mut PredictorModel, cache: &ForwardCache) -> Result<()> {
    if cache.mode != Mode::Train {
        return Err(CoreError::CacheMismatch {
            reason: "running statistics need a train-mode cache",
        });
    }
    if cache.layers.len() != model.layers.len() {
        return Err(CoreError::CacheMismatch {
            reason: "cache was produced by a different architecture",
        });
    }
    for (params, lc) in model.layers.iter_mut().zip(&cache.layers) {
        if let Some(bn) = &mut params.bn {
            let bnc = lc.bn.as_ref().ok_or(CoreError::CacheMismatch {
                reason: "missing batch-norm cache",
            })?;
            for c in 0..bn.running_mean.len() {
                bn.running_mean[c] =
                    (1.0 - BN_MOMENTUM) * bn.running_mean[c] + BN_MOMENTUM * bnc.batch_mean[c];
                bn.running_var[c] =
                    (1.0 - BN_MOMENTUM) * bn.running_var[c] + BN_MOMENTUM * bnc.batch_var[c];
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_arch(input: usize, with_bn: bool, with_dropout: bool) -> PredictorArch {
        PredictorArch {
            input_size: input,
            in_channels: 3,
            layers: vec![
                ConvLayerSpec {
                    kernel: 3,
                    stride: 2,
                    out_channels: 4,
                    batch_norm: with_bn,
                    dropout: None,
                },
                ConvLayerSpec {
                    kernel: 3,
                    stride: 2,
                    out_channels: 8,
                    batch_norm: false,
                    dropout: with_dropout.then_some(0.5),
                },
            ],
            leaky_slope: 0.1,
        }
    }

    fn random_crop_img(size: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::new(seed);
        Image::from_fn(size, size, |_, _| {
            [rng.next_f64(), rng.next_f64(), rng.next_f64()]
        })
    }

    #[test]
    fn default_param_count_is_pinned() {
        // hand count: 448 + 32 + 4640 + 64 + 18496 + 128 + 73856 + 295168 + 18440
        assert_eq!(PredictorArch::default().param_count(), 411_272);
    }

    #[test]
    fn canonical_shape_chain() {
        let arch = PredictorArch::default();
        assert_eq!(arch.output_hw(), (4, 4));
        let small = PredictorArch::canonical(64);
        assert_eq!(small.output_hw(), (1, 1));
    }

    #[test]
    fn init_is_deterministic_and_zeroed_where_stated() {
        let a = init_predictor(PredictorArch::canonical(64), 11).unwrap();
        let b = init_predictor(PredictorArch::canonical(64), 11).unwrap();
        assert_eq!(a, b);
        for l in &a.layers {
            assert!(l.bias.iter().all(|&v| v == 0.0));
            if let Some(bn) = &l.bn {
                assert!(bn.shift.iter().all(|&v| v == 0.0));
                assert!(bn.scale.iter().all(|&v| v == 1.0));
                assert!(bn.running_var.iter().all(|&v| v == 1.0));
            }
        }
        let c = init_predictor(PredictorArch::canonical(64), 12).unwrap();
        assert_ne!(a.layers[0].weight, c.layers[0].weight);
    }

    #[test]
    fn output_has_eight_components() {
        let model = init_predictor(tiny_arch(8, true, false), 3).unwrap();
        let crop = random_crop_img(8, 5);
        let (raw, _) = model.predict(&crop, 0).unwrap();
        assert_eq!(raw.len(), 8);
        assert!(raw.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eval_mode_is_repeatable() {
        let mut model = init_predictor(tiny_arch(8, true, true), 3).unwrap();
        model.set_mode(Mode::Eval);
        let crop = random_crop_img(8, 6);
        let a = model.predict(&crop, 1).unwrap().0;
        let b = model.predict(&crop, 2).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_raw() {
        // all-zero input stays zero through every conv (biases are zero at
        // init) except for batch-norm, so use a no-BN arch
        let model = init_predictor(tiny_arch(8, false, false), 3).unwrap();
        let crop = Image::zeros(8, 8);
        let (raw, _) = model.predict(&crop, 0).unwrap();
        for v in raw {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn train_mode_bn_normalizes() {
        let model = init_predictor(tiny_arch(16, true, false), 9).unwrap();
        // scale up so channel variances dwarf BN_EPS and the normalized
        // variance lands within 1e-5 of 1
        let crop = random_crop_img(16, 8).map(|v| 10.0 * v);
        let (_, cache) = model.predict(&crop, 0).unwrap();
        // xhat of layer 1 must have per-channel mean 0 and variance ~1
        let bnc = cache.layers[0].bn.as_ref().unwrap();
        let spatial = cache.layers[0].out_hw.0 * cache.layers[0].out_hw.1;
        for c in 0..4 {
            let plane = &bnc.xhat[c * spatial..(c + 1) * spatial];
            let mean = plane.iter().sum::<f64>() / spatial as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / spatial as f64;
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let model = init_predictor(tiny_arch(8, true, true), 3).unwrap();
        let crop = random_crop_img(8, 7);
        let (_, cache) = model.predict(&crop, 42).unwrap();
        let grads = model.backward(&cache, &[0.0; 8]).unwrap();
        for lg in &grads.layers {
            assert!(lg.weight.iter().all(|&v| v == 0.0));
            assert!(lg.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_rejects_eval_cache() {
        let mut model = init_predictor(tiny_arch(8, true, false), 3).unwrap();
        model.set_mode(Mode::Eval);
        let crop = random_crop_img(8, 7);
        let (_, cache) = model.predict(&crop, 0).unwrap();
        assert!(matches!(
            model.backward(&cache, &[1.0; 8]),
            Err(CoreError::CacheMismatch { .. })
        ));
    }

    #[test]
    fn dropout_mask_replays() {
        let model = init_predictor(tiny_arch(8, false, true), 3).unwrap();
        let crop = random_crop_img(8, 7);
        let (ra, ca) = model.predict(&crop, 99).unwrap();
        let (rb, cb) = model.predict(&crop, 99).unwrap();
        assert_eq!(ra, rb);
        let ga = model.backward(&ca, &[0.5; 8]).unwrap();
        let gb = model.backward(&cb, &[0.5; 8]).unwrap();
        assert_eq!(ga.layers[0].weight, gb.layers[0].weight);
        let (rc, _) = model.predict(&crop, 100).unwrap();
        assert_ne!(ra, rc, "different dropout seed should change raw output");
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut model = init_predictor(tiny_arch(8, true, false), 3).unwrap();
        let crop = random_crop_img(8, 7);
        let (_, cache) = model.predict(&crop, 0).unwrap();
        let before = model.layers[0].bn.as_ref().unwrap().running_mean.clone();
        fold_running_stats(&mut model, &cache).unwrap();
        let after = model.layers[0].bn.as_ref().unwrap().running_mean.clone();
        assert_ne!(before, after);
        // momentum update: running = 0.9·running + 0.1·batch
        let bnc = cache.layers[0].bn.as_ref().unwrap();
        for (a, (b, m)) in after.iter().zip(before.iter().zip(&bnc.batch_mean)) {
            assert!((a - (0.9 * b + 0.1 * m)).abs() < 1e-15);
        }
    }
}
