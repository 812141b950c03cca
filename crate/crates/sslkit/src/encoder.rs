//! Feature extractor and heads.
//!
//! The reference encoder is two 3x3 stride-2 conv layers with ReLU,
//! global average pooling, and a linear map to the embedding dimension.
//! All gradients are hand-derived; parameters live in flat f64 vectors so
//! the optimizer and checkpoints treat every model uniformly.

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::numeric::{l2_normalize, softmax, Matrix};
use crate::rng::{self, tag};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub d_emb: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_height: 32,
            input_width: 32,
            conv1_channels: 8,
            conv2_channels: 16,
            d_emb: 64,
        }
    }
}

fn conv_out(size: usize) -> usize {
    (size + 2 * PAD - KERNEL) / STRIDE + 1
}

impl EncoderConfig {
    /// Dimensions named after the full-scale configuration this toolkit
    /// scales down from (2048-dim embeddings). Kept for documentation;
    /// desk-scale runs use the default.
    pub fn full_scale_dims() -> (usize, usize) {
        (2048, 128)
    }

    pub fn conv1_out(&self) -> (usize, usize) {
        (conv_out(self.input_height), conv_out(self.input_width))
    }

    pub fn conv2_out(&self) -> (usize, usize) {
        let (h, w) = self.conv1_out();
        (conv_out(h), conv_out(w))
    }

    pub fn param_layout(&self) -> Vec<(&'static str, usize)> {
        let c1 = self.conv1_channels;
        let c2 = self.conv2_channels;
        vec![
            ("conv1_w", c1 * 3 * KERNEL * KERNEL),
            ("conv1_b", c1),
            ("conv2_w", c2 * c1 * KERNEL * KERNEL),
            ("conv2_b", c2),
            ("fc_w", self.d_emb * c2),
            ("fc_b", self.d_emb),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_layout().iter().map(|(_, n)| n).sum()
    }
}

/// Parameters of the reference encoder, stored flat in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub params: Vec<f64>,
}

fn glorot_fill(r: &mut impl Rng, slice: &mut [f64], fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in slice {
        *v = r.random_range(-bound..bound);
    }
}

impl EncoderState {
    pub fn init(config: EncoderConfig, seed: u64) -> Self {
        let mut params = vec![0.0; config.param_count()];
        let mut r = rng::stream(seed, &[tag::INIT, 0]);
        let offsets = offsets(&config);
        let c1 = config.conv1_channels;
        let c2 = config.conv2_channels;
        glorot_fill(&mut r, &mut params[offsets.conv1_w.clone()], 3 * 9, c1 * 9);
        glorot_fill(&mut r, &mut params[offsets.conv2_w.clone()], c1 * 9, c2 * 9);
        glorot_fill(&mut r, &mut params[offsets.fc_w.clone()], c2, config.d_emb);
        EncoderState { config, params }
    }

    pub fn zeroed(config: EncoderConfig) -> Self {
        let params = vec![0.0; config.param_count()];
        EncoderState { config, params }
    }
}

struct Offsets {
    conv1_w: std::ops::Range<usize>,
    conv1_b: std::ops::Range<usize>,
    conv2_w: std::ops::Range<usize>,
    conv2_b: std::ops::Range<usize>,
    fc_w: std::ops::Range<usize>,
    fc_b: std::ops::Range<usize>,
}

fn offsets(config: &EncoderConfig) -> Offsets {
    let mut cursor = 0usize;
    let mut next = |n: usize| {
        let r = cursor..cursor + n;
        cursor += n;
        r
    };
    let layout = config.param_layout();
    Offsets {
        conv1_w: next(layout[0].1),
        conv1_b: next(layout[1].1),
        conv2_w: next(layout[2].1),
        conv2_b: next(layout[3].1),
        fc_w: next(layout[4].1),
        fc_b: next(layout[5].1),
    }
}

/// Intermediate activations kept for the backward pass.
pub struct EncoderCache {
    input_chw: Vec<f64>,
    conv1_pre: Vec<f64>,
    conv1_post: Vec<f64>,
    conv2_pre: Vec<f64>,
    pooled: Vec<f64>,
}

fn conv2d_forward(
    input: &[f64],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    weights: &[f64],
    bias: &[f64],
    out_c: usize,
) -> Vec<f64> {
    let out_h = conv_out(in_h);
    let out_w = conv_out(in_w);
    let mut out = vec![0.0; out_c * out_h * out_w];
    for oc in 0..out_c {
        let b = bias[oc];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = b;
                for ic in 0..in_c {
                    let w_base = ((oc * in_c + ic) * KERNEL) * KERNEL;
                    let in_base = ic * in_h * in_w;
                    for ky in 0..KERNEL {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            acc += weights[w_base + ky * KERNEL + kx]
                                * input[in_base + iy as usize * in_w + ix as usize];
                        }
                    }
                }
                out[(oc * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    input: &[f64],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    weights: &[f64],
    out_c: usize,
    d_out: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let out_h = conv_out(in_h);
    let out_w = conv_out(in_w);
    for oc in 0..out_c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let g = d_out[(oc * out_h + oy) * out_w + ox];
                if g == 0.0 {
                    continue;
                }
                d_bias[oc] += g;
                for ic in 0..in_c {
                    let w_base = ((oc * in_c + ic) * KERNEL) * KERNEL;
                    let in_base = ic * in_h * in_w;
                    for ky in 0..KERNEL {
                        let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            let in_idx = in_base + iy as usize * in_w + ix as usize;
                            d_weights[w_base + ky * KERNEL + kx] += g * input[in_idx];
                            if let Some(d_in) = d_input.as_deref_mut() {
                                d_in[in_idx] += g * weights[w_base + ky * KERNEL + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn hwc_to_chw(image: &ImageSample) -> Vec<f64> {
    let (h, w) = (image.height, image.width);
    let mut out = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[c * h * w + y * w + x] = image.get(y, x, c);
            }
        }
    }
    out
}

/// Map a (standardized) image to its latent vector z.
pub fn encode(image: &ImageSample, state: &EncoderState) -> Result<Vec<f64>> {
    encode_with_cache(image, state).map(|(z, _)| z)
}

/// Forward pass keeping activations for [`encode_backward`].
pub fn encode_with_cache(
    image: &ImageSample,
    state: &EncoderState,
) -> Result<(Vec<f64>, EncoderCache)> {
    let cfg = &state.config;
    if image.height != cfg.input_height || image.width != cfg.input_width {
        return Err(Error::Shape {
            expected: format!("{}x{}x3 input", cfg.input_height, cfg.input_width),
            actual: format!("{}x{}x3", image.height, image.width),
        });
    }
    let off = offsets(cfg);
    let (h1, w1) = cfg.conv1_out();
    let (h2, w2) = cfg.conv2_out();
    let input_chw = hwc_to_chw(image);
    let conv1_pre = conv2d_forward(
        &input_chw,
        3,
        cfg.input_height,
        cfg.input_width,
        &state.params[off.conv1_w.clone()],
        &state.params[off.conv1_b.clone()],
        cfg.conv1_channels,
    );
    let conv1_post: Vec<f64> = conv1_pre.iter().map(|&v| v.max(0.0)).collect();
    let conv2_pre = conv2d_forward(
        &conv1_post,
        cfg.conv1_channels,
        h1,
        w1,
        &state.params[off.conv2_w.clone()],
        &state.params[off.conv2_b.clone()],
        cfg.conv2_channels,
    );
    let spatial = (h2 * w2) as f64;
    let mut pooled = vec![0.0; cfg.conv2_channels];
    for c in 0..cfg.conv2_channels {
        let start = c * h2 * w2;
        pooled[c] = conv2_pre[start..start + h2 * w2]
            .iter()
            .map(|&v| v.max(0.0))
            .sum::<f64>()
            / spatial;
    }
    let fc_w = &state.params[off.fc_w.clone()];
    let fc_b = &state.params[off.fc_b.clone()];
    let mut z = vec![0.0; cfg.d_emb];
    for (e, zv) in z.iter_mut().enumerate() {
        let row = &fc_w[e * cfg.conv2_channels..(e + 1) * cfg.conv2_channels];
        *zv = fc_b[e] + crate::numeric::dot(row, &pooled);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite latent representation"));
    }
    Ok((
        z,
        EncoderCache {
            input_chw,
            conv1_pre,
            conv1_post,
            conv2_pre,
            pooled,
        },
    ))
}

/// Accumulate dLoss/dParams into `grads` given dLoss/dz.
pub fn encode_backward(
    state: &EncoderState,
    cache: &EncoderCache,
    dz: &[f64],
    grads: &mut [f64],
) -> Result<()> {
    let cfg = &state.config;
    if dz.len() != cfg.d_emb || grads.len() != state.params.len() {
        return Err(Error::Shape {
            expected: format!("dz of {} and grads of {}", cfg.d_emb, state.params.len()),
            actual: format!("dz {}, grads {}", dz.len(), grads.len()),
        });
    }
    let off = offsets(cfg);
    let (h1, w1) = cfg.conv1_out();
    let (h2, w2) = cfg.conv2_out();
    let c2 = cfg.conv2_channels;
    let spatial = (h2 * w2) as f64;

    // fc layer
    let mut d_pooled = vec![0.0; c2];
    {
        let fc_w = &state.params[off.fc_w.clone()];
        for (e, &g) in dz.iter().enumerate() {
            grads[off.fc_b.start + e] += g;
            for c in 0..c2 {
                grads[off.fc_w.start + e * c2 + c] += g * cache.pooled[c];
                d_pooled[c] += g * fc_w[e * c2 + c];
            }
        }
    }

    // global average pool + relu over conv2 pre-activations
    let mut d_conv2 = vec![0.0; c2 * h2 * w2];
    for c in 0..c2 {
        let g = d_pooled[c] / spatial;
        for s in 0..h2 * w2 {
            let idx = c * h2 * w2 + s;
            if cache.conv2_pre[idx] > 0.0 {
                d_conv2[idx] = g;
            }
        }
    }

    // conv2
    let mut d_conv1_post = vec![0.0; cfg.conv1_channels * h1 * w1];
    {
        let (d_w, rest) = grads[off.conv2_w.start..off.conv2_b.end].split_at_mut(off.conv2_w.len());
        conv2d_backward(
            &cache.conv1_post,
            cfg.conv1_channels,
            h1,
            w1,
            &state.params[off.conv2_w.clone()],
            c2,
            &d_conv2,
            d_w,
            rest,
            Some(&mut d_conv1_post),
        );
    }

    // relu over conv1
    for (idx, g) in d_conv1_post.iter_mut().enumerate() {
        if cache.conv1_pre[idx] <= 0.0 {
            *g = 0.0;
        }
    }

    // conv1 (input gradient not needed)
    {
        let (d_w, rest) = grads[off.conv1_w.start..off.conv1_b.end].split_at_mut(off.conv1_w.len());
        conv2d_backward(
            &cache.input_chw,
            3,
            cfg.input_height,
            cfg.input_width,
            &state.params[off.conv1_w.clone()],
            cfg.conv1_channels,
            &d_conv1_post,
            d_w,
            rest,
            None,
        );
    }
    Ok(())
}

/// A linear map with flat parameter storage: weights (out x in) then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub params: Vec<f64>,
}

impl LinearLayer {
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut params = vec![0.0; out_dim * in_dim + out_dim];
        let mut r = rng::stream(seed, &[tag::INIT, 1]);
        glorot_fill(&mut r, &mut params[..out_dim * in_dim], in_dim, out_dim);
        LinearLayer {
            in_dim,
            out_dim,
            params,
        }
    }

    pub fn zeroed(in_dim: usize, out_dim: usize) -> Self {
        LinearLayer {
            in_dim,
            out_dim,
            params: vec![0.0; out_dim * in_dim + out_dim],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.out_dim * self.in_dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.out_dim * self.in_dim..]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape {
                expected: format!("input of {}", self.in_dim),
                actual: format!("{}", x.len()),
            });
        }
        let w = self.weights();
        let b = self.bias();
        Ok((0..self.out_dim)
            .map(|o| b[o] + crate::numeric::dot(&w[o * self.in_dim..(o + 1) * self.in_dim], x))
            .collect())
    }

    /// Batch forward: rows of `x` are inputs.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(x.rows(), self.out_dim);
        for i in 0..x.rows() {
            let row = self.forward(x.row(i))?;
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Accumulate parameter gradients and return dLoss/dInput rows.
    pub fn backward_batch(
        &self,
        x: &Matrix,
        d_out: &Matrix,
        grads: &mut [f64],
    ) -> Result<Matrix> {
        if d_out.rows() != x.rows() || d_out.cols() != self.out_dim || x.cols() != self.in_dim {
            return Err(Error::Shape {
                expected: format!("{}x{} input and {}x{} grad", x.rows(), self.in_dim, x.rows(), self.out_dim),
                actual: format!("{}x{} and {}x{}", x.rows(), x.cols(), d_out.rows(), d_out.cols()),
            });
        }
        let w_len = self.out_dim * self.in_dim;
        let mut d_in = Matrix::zeros(x.rows(), self.in_dim);
        let w = self.weights();
        for i in 0..x.rows() {
            let xr = x.row(i);
            let gr = d_out.row(i);
            for (o, &g) in gr.iter().enumerate() {
                grads[w_len + o] += g;
                let w_row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                let d_row = d_in.row_mut(i);
                for k in 0..self.in_dim {
                    grads[o * self.in_dim + k] += g * xr[k];
                    d_row[k] += g * w_row[k];
                }
            }
        }
        Ok(d_in)
    }
}

/// Linear classifier over latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub linear: LinearLayer,
}

impl ClassifierHead {
    pub fn init(d_emb: usize, num_classes: usize, seed: u64) -> Self {
        ClassifierHead {
            linear: LinearLayer::init(d_emb, num_classes, seed),
        }
    }

    pub fn zeroed(d_emb: usize, num_classes: usize) -> Self {
        ClassifierHead {
            linear: LinearLayer::zeroed(d_emb, num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.linear.out_dim
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.linear.forward(z)
    }
}

/// Class probabilities: softmax over w_j^T z + b_j.
pub fn classify(z: &[f64], head: &ClassifierHead) -> Result<Vec<f64>> {
    softmax(&head.logits(z)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Swav,
    Supcon,
}

/// Single linear projection from latent space to the similarity space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub linear: LinearLayer,
    pub kind: ProjectionKind,
}

impl ProjectionHead {
    pub fn init(d_emb: usize, d_proj: usize, kind: ProjectionKind, seed: u64) -> Self {
        ProjectionHead {
            linear: LinearLayer::init(d_emb, d_proj, seed),
            kind,
        }
    }

    pub fn d_proj(&self) -> usize {
        self.linear.out_dim
    }
}

/// Project z, optionally scaling the result to unit norm.
pub fn project(z: &[f64], head: &ProjectionHead, normalize: bool) -> Result<Vec<f64>> {
    let raw = head.linear.forward(z)?;
    if normalize {
        l2_normalize(&raw)
    } else {
        Ok(raw)
    }
}

/// Backprop through u = raw/||raw||: d_raw = (du - u (u . du)) / ||raw||.
pub fn l2_normalize_backward(raw: &[f64], du: &[f64]) -> Vec<f64> {
    let n = crate::numeric::norm2(raw);
    let u: Vec<f64> = raw.iter().map(|&v| v / n).collect();
    let proj = crate::numeric::dot(&u, du);
    u.iter()
        .zip(du)
        .map(|(&ui, &dui)| (dui - ui * proj) / n)
        .collect()
}
