//! Frozen downstream tasks: differentiable scalar losses over an enhanced
//! image, plus their exact directional derivatives along the eight
//! pipeline tangents.
//!
//! Three task kinds are provided. `RefMse` compares against a paired
//! well-exposed reference pixelwise. `FeatureMse` compares feature maps
//! from a small fixed random conv stack, rewarding feature preservation
//! rather than pixel fidelity. `BlobHeatmap` runs a fixed
//! difference-of-Gaussians detector over luminance and scores the response
//! map against rendered ground-truth heatmaps with the mean-over-keypoints
//! squared-error loss
//!
//! ```text
//! Loss = (1/K) Σ_i ‖P_i − X_i‖₂²
//! ```
//!
//! where the norm is the plain sum of squared elementwise differences.
//!
//! Task assets (net weights, references, heatmaps) are frozen: they carry
//! FNV-1a digests so a harness can verify nothing mutated them during
//! training.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::image::{Image, CHANNELS};
use crate::math;
use crate::params::PARAM_COUNT;
use crate::rng::{digest_f64, SplitMix64};

/// A stack of `K` nonnegative single-channel response maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub maps: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, maps: Vec<Vec<f64>>) -> Result<Self> {
        if maps.is_empty() {
            return Err(CoreError::InvalidConfig {
                message: alloc::string::String::from("heatmap needs at least one map"),
            });
        }
        for m in &maps {
            if m.len() != height * width {
                return Err(CoreError::ShapeMismatch {
                    what: "heatmap plane",
                    expected: alloc::format!("{} values", height * width),
                    actual: alloc::format!("{}", m.len()),
                });
            }
        }
        Ok(Heatmap {
            height,
            width,
            maps,
        })
    }

    pub fn keypoints(&self) -> usize {
        self.maps.len()
    }

    pub fn digest(&self) -> u64 {
        let mut h = 0xCBF29CE484222325u64;
        for m in &self.maps {
            h ^= digest_f64(m);
            h = h.wrapping_mul(0x100000001B3);
        }
        h
    }
}

/// Mean over keypoints of the summed squared difference of the maps.
pub fn heatmap_mse_loss(pred: &Heatmap, gt: &Heatmap) -> Result<f64> {
    if pred.keypoints() != gt.keypoints()
        || pred.height != gt.height
        || pred.width != gt.width
    {
        return Err(CoreError::ShapeMismatch {
            what: "heatmap loss",
            expected: alloc::format!("{}x{}x{}", gt.keypoints(), gt.height, gt.width),
            actual: alloc::format!("{}x{}x{}", pred.keypoints(), pred.height, pred.width),
        });
    }
    let k = pred.keypoints() as f64;
    let mut total = 0.0;
    for (p, x) in pred.maps.iter().zip(&gt.maps) {
        total += p
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / k)
}

/// Pixelwise MSE against a reference, with the exact directional
/// derivative along each tangent: `dL/draw_k = (2/N) Σ (img − ref)·t_k`.
pub fn ref_mse_loss(
    img: &Image,
    reference: &Image,
    tangents: &[Image],
) -> Result<(f64, [f64; PARAM_COUNT])> {
    img.require_same_shape(reference, "ref_mse_loss")?;
    for t in tangents {
        img.require_same_shape(t, "ref_mse_loss tangent")?;
    }
    let n = img.data().len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; PARAM_COUNT];
    let residual: Vec<f64> = img
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| a - b)
        .collect();
    for r in &residual {
        loss += r * r;
    }
    for (k, t) in tangents.iter().enumerate() {
        grad[k] = 2.0 / n
            * residual
                .iter()
                .zip(t.data())
                .map(|(r, td)| r * td)
                .sum::<f64>();
    }
    Ok((loss / n, grad))
}

/// One frozen convolution stage of the feature net.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub weight: Vec<f64>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Fixed random conv + leaky-ReLU stack used by the feature-MSE task. The
/// weights are seeded at construction and never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    pub layers: Vec<FeatureLayer>,
    pub slope: f64,
}

impl FeatureNet {
    /// Two k3/s2 stages, 3→8→8 channels, weights `U(-1/√fan_in, 1/√fan_in)`.
    pub fn random(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut layers = Vec::new();
        let mut c_in = CHANNELS;
        for &c_out in &[8usize, 8] {
            let fan_in = 9 * c_in;
            let bound = 1.0 / math::sqrt(fan_in as f64);
            let weight = (0..fan_in * c_out)
                .map(|_| bound * (2.0 * rng.next_f64() - 1.0))
                .collect();
            layers.push(FeatureLayer {
                weight,
                in_channels: c_in,
                out_channels: c_out,
                kernel: 3,
                stride: 2,
            });
            c_in = c_out;
        }
        FeatureNet { layers, slope: 0.1 }
    }

    /// A 1×1 identity stack; on positive images feature MSE then equals
    /// plain reference MSE.
    pub fn identity_passthrough() -> Self {
        let mut weight = vec![0.0; CHANNELS * CHANNELS];
        for c in 0..CHANNELS {
            weight[c * CHANNELS + c] = 1.0;
        }
        FeatureNet {
            layers: vec![FeatureLayer {
                weight,
                in_channels: CHANNELS,
                out_channels: CHANNELS,
                kernel: 1,
                stride: 1,
            }],
            slope: 0.1,
        }
    }

    pub fn digest(&self) -> u64 {
        let mut h = 0xCBF29CE484222325u64;
        for l in &self.layers {
            h ^= digest_f64(&l.weight);
            h = h.wrapping_mul(0x100000001B3);
        }
        h
    }

    /// Forward pass over CHW planes; returns per-layer post-activation
    /// tensors (the last entry is the feature map).
    fn forward(&self, mut x: Vec<f64>, mut h: usize, mut w: usize) -> Vec<(Vec<f64>, usize, usize)> {
        let mut acts = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let oh = out_dim(h, l.kernel, l.stride);
            let ow = out_dim(w, l.kernel, l.stride);
            let mut y = conv_nobias(&x, l, h, w, oh, ow);
            for v in y.iter_mut() {
                if *v < 0.0 {
                    *v *= self.slope;
                }
            }
            acts.push((y.clone(), oh, ow));
            x = y;
            h = oh;
            w = ow;
        }
        acts
    }

    /// Propagate a tangent through the frozen net, gating each leaky stage
    /// by the primal activations recorded in `acts`.
    fn forward_tangent(
        &self,
        mut t: Vec<f64>,
        mut h: usize,
        mut w: usize,
        acts: &[(Vec<f64>, usize, usize)],
    ) -> Vec<f64> {
        for (l, (act, oh, ow)) in self.layers.iter().zip(acts) {
            let mut ty = conv_nobias(&t, l, h, w, *oh, *ow);
            for (tv, &a) in ty.iter_mut().zip(act.iter()) {
                if a < 0.0 {
                    *tv *= self.slope;
                }
            }
            t = ty;
            h = *oh;
            w = *ow;
        }
        t
    }
}

fn out_dim(input: usize, k: usize, s: usize) -> usize {
    let pad = k / 2;
    (input + 2 * pad).saturating_sub(k) / s + 1
}

fn conv_nobias(input: &[f64], l: &FeatureLayer, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (k, s, pad) = (l.kernel, l.stride, (l.kernel / 2) as isize);
    let mut out = vec![0.0; l.out_channels * oh * ow];
    for oc in 0..l.out_channels {
        let out_plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..l.in_channels {
            let w_base = (oc * l.in_channels + ic) * k * k;
            let in_plane = &input[ic * h * w..(ic + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        let iy = (oy * s) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s) as isize + kx as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += l.weight[w_base + ky * k + kx]
                                * in_plane[iy as usize * w + ix as usize];
                        }
                    }
                    out_plane[oy * ow + ox] += acc;
                }
            }
        }
    }
    out
}

fn to_planes(img: &Image) -> Vec<f64> {
    let mut planes = Vec::with_capacity(img.data().len());
    for c in 0..CHANNELS {
        planes.extend(img.channel_plane(c));
    }
    planes
}

/// MSE between frozen feature maps of `img` and `reference`, with
/// directional derivatives obtained by pushing each tangent through the
/// net (leaky gates follow the `img` path's activations).
pub fn feature_mse_loss(
    img: &Image,
    reference: &Image,
    net: &FeatureNet,
    tangents: &[Image],
) -> Result<(f64, [f64; PARAM_COUNT])> {
    img.require_same_shape(reference, "feature_mse_loss")?;
    let (h, w) = (img.height(), img.width());
    let acts_img = net.forward(to_planes(img), h, w);
    let acts_ref = net.forward(to_planes(reference), h, w);
    let (fi, ..) = acts_img.last().expect("nonempty net");
    let (fr, ..) = acts_ref.last().expect("nonempty net");
    let n = fi.len() as f64;
    let residual: Vec<f64> = fi.iter().zip(fr).map(|(a, b)| a - b).collect();
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;
    let mut grad = [0.0; PARAM_COUNT];
    for (k, t) in tangents.iter().enumerate() {
        img.require_same_shape(t, "feature_mse_loss tangent")?;
        let ft = net.forward_tangent(to_planes(t), h, w, &acts_img);
        grad[k] = 2.0 / n
            * residual
                .iter()
                .zip(&ft)
                .map(|(r, tv)| r * tv)
                .sum::<f64>();
    }
    Ok((loss, grad))
}

/// Inner/outer scales of the fixed blob detector.
pub const DOG_SIGMA_INNER: f64 = 1.0;
pub const DOG_SIGMA_OUTER: f64 = 2.0;

/// Separable Gaussian blur with edge replication; kernel radius `⌈3σ⌉`.
fn gaussian_blur_plane(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = math::ceil(3.0 * sigma) as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let c = -0.5 / (sigma * sigma);
    for i in -radius..=radius {
        kernel.push(math::exp((i * i) as f64 * c));
    }
    let norm: f64 = kernel.iter().sum();
    for v in kernel.iter_mut() {
        *v /= norm;
    }
    // horizontal then vertical
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let xx = (x as isize + i as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * plane[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let yy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Difference-of-Gaussians response over luminance (σ 1 vs 2), negative
/// values clipped to zero. Linear in the input up to the clip, so tangent
/// propagation is the same operator gated by positive responses.
pub fn blob_detector(img: &Image) -> Heatmap {
    let (h, w) = (img.height(), img.width());
    let lum = img.luminance();
    let inner = gaussian_blur_plane(&lum, h, w, DOG_SIGMA_INNER);
    let outer = gaussian_blur_plane(&lum, h, w, DOG_SIGMA_OUTER);
    let map: Vec<f64> = inner
        .iter()
        .zip(&outer)
        .map(|(a, b)| (a - b).max(0.0))
        .collect();
    Heatmap::new(h, w, vec![map]).expect("single map")
}

// pre-clip response, needed for the tangent gate
fn dog_response(img: &Image) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let lum = img.luminance();
    let inner = gaussian_blur_plane(&lum, h, w, DOG_SIGMA_INNER);
    let outer = gaussian_blur_plane(&lum, h, w, DOG_SIGMA_OUTER);
    inner.iter().zip(&outer).map(|(a, b)| a - b).collect()
}

/// Render a single-map (K = 1) ground truth for the blob task: a sum of
/// Gaussians (σ in pixels) of the given amplitude at the `(y, x)` centers.
/// A K = 1 map matches [`blob_detector`]'s output shape.
pub fn render_combined_blob_heatmap(
    height: usize,
    width: usize,
    centers: &[(f64, f64)],
    sigma: f64,
    amplitude: f64,
) -> Result<Heatmap> {
    if centers.is_empty() {
        return Err(CoreError::InvalidConfig {
            message: alloc::string::String::from("heatmap rendering needs at least one center"),
        });
    }
    let c = -0.5 / (sigma * sigma);
    let mut m = vec![0.0; height * width];
    for &(cy, cx) in centers {
        for y in 0..height {
            for x in 0..width {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                m[y * width + x] += amplitude * math::exp((dy * dy + dx * dx) * c);
            }
        }
    }
    Heatmap::new(height, width, vec![m])
}

/// Render ground-truth heatmaps as unit-height Gaussians (σ in pixels) at
/// the given `(y, x)` centers, one keypoint per map.
pub fn render_blob_heatmap(
    height: usize,
    width: usize,
    centers: &[(f64, f64)],
    sigma: f64,
) -> Result<Heatmap> {
    if centers.is_empty() {
        return Err(CoreError::InvalidConfig {
            message: alloc::string::String::from("heatmap rendering needs at least one center"),
        });
    }
    let c = -0.5 / (sigma * sigma);
    let maps = centers
        .iter()
        .map(|&(cy, cx)| {
            let mut m = vec![0.0; height * width];
            for y in 0..height {
                for x in 0..width {
                    let dy = y as f64 - cy;
                    let dx = x as f64 - cx;
                    m[y * width + x] = math::exp((dy * dy + dx * dx) * c);
                }
            }
            m
        })
        .collect();
    Heatmap::new(height, width, maps)
}

/// Which frozen loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    RefMse,
    FeatureMse { seed: u64 },
    BlobHeatmap,
}

/// Per-sample frozen ground truth.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskReference {
    Image(Image),
    Heatmap(Heatmap),
}

impl TaskReference {
    pub fn digest(&self) -> u64 {
        match self {
            TaskReference::Image(img) => digest_f64(img.data()),
            TaskReference::Heatmap(hm) => hm.digest(),
        }
    }
}

/// A task kind plus its shared frozen assets (the feature net, when used).
#[derive(Debug, Clone)]
pub struct TaskContext {
    pub kind: TaskKind,
    feature_net: Option<FeatureNet>,
    net_digest: u64,
}

impl TaskContext {
    pub fn new(kind: TaskKind) -> Self {
        let feature_net = match kind {
            TaskKind::FeatureMse { seed } => Some(FeatureNet::random(seed)),
            _ => None,
        };
        let net_digest = feature_net.as_ref().map(|n| n.digest()).unwrap_or(0);
        TaskContext {
            kind,
            feature_net,
            net_digest,
        }
    }

    /// Confirm the frozen net was not mutated since construction.
    pub fn verify_frozen(&self) -> Result<()> {
        let actual = self.feature_net.as_ref().map(|n| n.digest()).unwrap_or(0);
        if actual != self.net_digest {
            return Err(CoreError::DigestMismatch {
                recorded: self.net_digest,
                actual,
            });
        }
        Ok(())
    }

    fn expect_image<'a>(&self, r: &'a TaskReference) -> Result<&'a Image> {
        match r {
            TaskReference::Image(img) => Ok(img),
            TaskReference::Heatmap(_) => Err(CoreError::InvalidConfig {
                message: alloc::format!("{:?} task needs an image reference", self.kind),
            }),
        }
    }

    /// Forward-only loss (used by grid search and evaluation).
    pub fn loss(&self, enhanced: &Image, reference: &TaskReference) -> Result<f64> {
        match self.kind {
            TaskKind::RefMse => {
                let r = self.expect_image(reference)?;
                crate::image::mse(enhanced, r)
            }
            TaskKind::FeatureMse { .. } => {
                let r = self.expect_image(reference)?;
                let net = self.feature_net.as_ref().expect("net built in new()");
                let (loss, _) = feature_mse_loss(enhanced, r, net, &[])?;
                Ok(loss)
            }
            TaskKind::BlobHeatmap => match reference {
                TaskReference::Heatmap(gt) => heatmap_mse_loss(&blob_detector(enhanced), gt),
                TaskReference::Image(_) => Err(CoreError::InvalidConfig {
                    message: alloc::string::String::from(
                        "blob_heatmap task needs a heatmap reference",
                    ),
                }),
            },
        }
    }

    /// Loss plus the exact directional derivative along each tangent.
    pub fn loss_and_grad(
        &self,
        enhanced: &Image,
        reference: &TaskReference,
        tangents: &[Image],
    ) -> Result<(f64, [f64; PARAM_COUNT])> {
        match self.kind {
            TaskKind::RefMse => ref_mse_loss(enhanced, self.expect_image(reference)?, tangents),
            TaskKind::FeatureMse { .. } => {
                let net = self.feature_net.as_ref().expect("net built in new()");
                feature_mse_loss(enhanced, self.expect_image(reference)?, net, tangents)
            }
            TaskKind::BlobHeatmap => {
                let gt = match reference {
                    TaskReference::Heatmap(gt) => gt,
                    TaskReference::Image(_) => {
                        return Err(CoreError::InvalidConfig {
                            message: alloc::string::String::from(
                                "blob_heatmap task needs a heatmap reference",
                            ),
                        })
                    }
                };
                let pred = blob_detector(enhanced);
                let loss = heatmap_mse_loss(&pred, gt)?;
                let gate = dog_response(enhanced);
                let k = gt.keypoints() as f64;
                // dL/dP = (2/K)(P - X), nonzero only where the clip is open
                let mut dldp = vec![0.0; pred.height * pred.width];
                for (m_p, m_x) in pred.maps.iter().zip(&gt.maps) {
                    for (i, (p, x)) in m_p.iter().zip(m_x).enumerate() {
                        if gate[i] > 0.0 {
                            dldp[i] += 2.0 / k * (p - x);
                        }
                    }
                }
                let mut grad = [0.0; PARAM_COUNT];
                for (ki, t) in tangents.iter().enumerate() {
                    enhanced.require_same_shape(t, "blob task tangent")?;
                    let tdog = dog_response(t);
                    grad[ki] = dldp.iter().zip(&tdog).map(|(a, b)| a * b).sum();
                }
                Ok((loss, grad))
            }
        }
    }
}
