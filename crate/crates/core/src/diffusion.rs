//! Conditional DDPM over action windows with a feedforward noise predictor,
//! hand-written backpropagation, Adam, EMA weights and a finite-difference
//! gradient check.
//!
//! The condition vector is the normalized observation history followed by
//! the normalized action history, both of length `t_o`. An optional point
//! encoder (per-point linear map, max pooled) appends a geometry feature.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot6d_decode, rot6d_encode};
use crate::perception::{normalize, NormStats};
use crate::rng::{self, tag};

pub const ACTION_DIM: usize = 10;
pub const MODEL_SCHEMA_VERSION: u32 = 1;
/// Squared-cosine offset.
pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;
/// Rows per gradient chunk; chunk results are summed in index order so the
/// gradient does not depend on the thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointCloudConfig {
    /// Points kept after farthest point sampling.
    pub points: usize,
    /// Points drawn from the surfaces before downsampling.
    pub raw_points: usize,
    /// Feature width of the per-point map.
    pub width: usize,
}

impl Default for PointCloudConfig {
    fn default() -> Self {
        Self {
            points: 4096,
            raw_points: 8192,
            width: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub t_o: usize,
    pub t_p: usize,
    pub t_a: usize,
    /// Diffusion steps K.
    pub k: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_embed_dim: usize,
    pub lr: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub lr_cosine: bool,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ema_decay: f64,
    pub seed: u64,
    pub point_cloud: Option<PointCloudConfig>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            t_o: 4,
            t_p: 4,
            t_a: 2,
            k: 100,
            hidden: vec![256, 256],
            activation: Activation::Silu,
            time_embed_dim: 32,
            lr: 1e-4,
            lr_cosine: false,
            weight_decay: 1e-6,
            batch_size: 64,
            epochs: 500,
            ema_decay: 0.995,
            seed: 0,
            point_cloud: None,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.t_a < 1 || self.t_a > self.t_p {
            return bad("need 1 <= t_a <= t_p");
        }
        if self.t_o < 1 || self.k < 1 || self.batch_size < 1 {
            return bad("t_o, k and batch_size must be positive");
        }
        if self.time_embed_dim % 2 != 0 {
            return bad("time_embed_dim must be even");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.ema_decay) {
            return bad("lr > 0, weight_decay >= 0 and ema_decay in [0, 1) required");
        }
        if let Some(pc) = &self.point_cloud {
            if pc.points == 0 || pc.width == 0 || pc.raw_points < pc.points {
                return bad("point cloud needs 0 < points <= raw_points and width > 0");
            }
        }
        Ok(())
    }

    pub fn window_dim(&self) -> usize {
        self.t_p * ACTION_DIM
    }

    pub fn cond_dim(&self, obs_dim: usize) -> usize {
        self.t_o * (obs_dim + ACTION_DIM)
    }
}

/// Per-step coefficients, stored for k = 1..=K at index k - 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn make_schedule(k: usize) -> NoiseSchedule {
    let f = |t: f64| {
        let x =
            (t / k as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let mut beta = Vec::with_capacity(k);
    for i in 1..=k {
        let b = 1.0 - f(i as f64) / f(i as f64 - 1.0);
        beta.push(b.clamp(0.0, MAX_BETA));
    }
    let mut alpha_bar = Vec::with_capacity(k);
    let mut acc = 1.0;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    let mut alpha = Vec::with_capacity(k);
    let mut gamma = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    for i in 0..k {
        let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
        alpha.push(1.0 / (1.0 - beta[i]).sqrt());
        gamma.push(beta[i] / (1.0 - alpha_bar[i]).sqrt());
        sigma.push((beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])).sqrt());
    }
    NoiseSchedule {
        beta,
        alpha_bar,
        alpha,
        gamma,
        sigma,
    }
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }
}

/// `sqrt(abar_k) * a0 + sqrt(1 - abar_k) * eps`.
pub fn q_sample(a0: &[f64], k: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if a0.len() != eps.len() {
        return Err(Error::ShapeMismatch {
            expected: a0.len(),
            actual: eps.len(),
        });
    }
    if k == 0 || k > schedule.steps() {
        return Err(Error::InvalidConfig(format!(
            "diffusion step {k} out of range"
        )));
    }
    let ab = schedule.alpha_bar[k - 1];
    let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(a0.iter().zip(eps).map(|(a, e)| c0 * a + c1 * e).collect())
}

/// One reverse step `alpha (x - gamma eps_hat) + sigma z`; the noise term is
/// skipped (and no draw is made) when `sigma == 0`.
pub fn reverse_update<R: Rng>(
    x: &mut [f64],
    eps_hat: &[f64],
    alpha: f64,
    gamma: f64,
    sigma: f64,
    rng: &mut R,
) {
    for (xi, e) in x.iter_mut().zip(eps_hat) {
        *xi = alpha * (*xi - gamma * e);
        if sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            *xi += sigma * z;
        }
    }
}

/// Clamp the clean-window estimate implied by `eps_hat` to `range` (one
/// interval per action dimension, cycling over the window) and rewrite
/// `eps_hat` to match. Elements whose estimate is inside the range are left
/// untouched, so the following reverse step is unchanged for them.
///
/// The last steps of a capped cosine schedule multiply any error in
/// `eps_hat` by up to `1/sqrt(1 - beta_max)`; without this the first step
/// from pure noise lands far outside the data.
pub fn clamp_eps(x: &[f64], eps_hat: &mut [f64], alpha_bar: f64, range: &[[f64; 2]]) {
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    for (i, (xi, e)) in x.iter().zip(eps_hat.iter_mut()).enumerate() {
        let [lo, hi] = range[i % range.len()];
        let x0 = (xi - sn * *e) / sa;
        if x0 < lo || x0 > hi {
            *e = (xi - sa * x0.clamp(lo, hi)) / sn;
        }
    }
}

pub fn timestep_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = k as f64 * freq;
        out[i] = a.sin();
        out[half + i] = a.cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShapes {
    pub window_dim: usize,
    pub time_embed_dim: usize,
    pub cond_dim: usize,
    /// Width of the pooled point feature, 0 when unused.
    pub point_width: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl NetShapes {
    pub fn input_dim(&self) -> usize {
        self.window_dim + self.time_embed_dim + self.cond_dim + self.point_width
    }

    /// `(fan_in, fan_out)` of each dense layer, input to output.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden);
        dims.push(self.window_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn point_offset(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn param_count(&self) -> usize {
        self.point_offset()
            + if self.point_width > 0 {
                4 * self.point_width
            } else {
                0
            }
    }
}

/// Training or sampling rows: noisy windows are supplied separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Clean normalized windows, `B x window_dim`.
    pub a0: Array2<f64>,
    /// `B x cond_dim`.
    pub cond: Array2<f64>,
    /// One cloud per row when the point encoder is enabled.
    pub clouds: Option<Vec<Vec<[f64; 3]>>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.a0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self, r: std::ops::Range<usize>) -> Batch {
        Batch {
            a0: self.a0.slice(s![r.clone(), ..]).to_owned(),
            cond: self.cond.slice(s![r.clone(), ..]).to_owned(),
            clouds: self.clouds.as_ref().map(|c| c[r].to_vec()),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            a0: self.a0.select(Axis(0), idx),
            cond: self.cond.select(Axis(0), idx),
            clouds: self
                .clouds
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i].clone()).collect()),
        }
    }
}

/// Per-row diffusion step and injected noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub k: Vec<usize>,
    pub eps: Array2<f64>,
}

impl NoiseDraw {
    pub fn sample<R: Rng>(rows: usize, dim: usize, steps: usize, rng: &mut R) -> NoiseDraw {
        let k = (0..rows).map(|_| rng.random_range(1..=steps)).collect();
        let eps = Array2::from_shape_simple_fn((rows, dim), || rng.sample(StandardNormal));
        NoiseDraw { k, eps }
    }

    fn rows(&self, r: std::ops::Range<usize>) -> NoiseDraw {
        NoiseDraw {
            k: self.k[r.clone()].to_vec(),
            eps: self.eps.slice(s![r, ..]).to_owned(),
        }
    }
}

struct Cache {
    /// Input of each dense layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
    /// Per row and channel, index of the winning point.
    argmax: Vec<Vec<usize>>,
}

/// Noise predictor: MLP over `[noisy window | time embedding | condition |
/// point feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    pub shapes: NetShapes,
}

impl DenoiserNet {
    pub fn new(shapes: NetShapes) -> Self {
        Self { shapes }
    }

    pub fn from_config(cfg: &PolicyConfig, obs_dim: usize) -> Self {
        Self::new(NetShapes {
            window_dim: cfg.window_dim(),
            time_embed_dim: cfg.time_embed_dim,
            cond_dim: cfg.cond_dim(obs_dim),
            point_width: cfg.point_cloud.as_ref().map_or(0, |p| p.width),
            hidden: cfg.hidden.clone(),
            activation: cfg.activation,
        })
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.shapes.param_count());
        let mut fill = |fan_in: usize, n: usize, p: &mut Vec<f64>| {
            let b = 1.0 / (fan_in as f64).sqrt();
            p.extend((0..n).map(|_| rng.random_range(-b..b)));
        };
        for (i, o) in self.shapes.layers() {
            fill(i, i * o + o, &mut p);
        }
        if self.shapes.point_width > 0 {
            fill(3, 4 * self.shapes.point_width, &mut p);
        }
        p
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.shapes.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.shapes.param_count(),
                actual: params.len(),
            });
        }
        Ok(())
    }

    fn point_features(
        &self,
        params: &[f64],
        clouds: &[Vec<[f64; 3]>],
    ) -> (Array2<f64>, Vec<Vec<usize>>) {
        let w = self.shapes.point_width;
        let off = self.shapes.point_offset();
        let wm = &params[off..off + 3 * w];
        let bias = &params[off + 3 * w..off + 4 * w];
        let mut feat = Array2::zeros((clouds.len(), w));
        let mut argmax = Vec::with_capacity(clouds.len());
        for (r, cloud) in clouds.iter().enumerate() {
            let mut best = vec![f64::NEG_INFINITY; w];
            let mut idx = vec![0usize; w];
            for (i, p) in cloud.iter().enumerate() {
                for c in 0..w {
                    let v = p[0] * wm[c] + p[1] * wm[w + c] + p[2] * wm[2 * w + c] + bias[c];
                    if v > best[c] {
                        best[c] = v;
                        idx[c] = i;
                    }
                }
            }
            for c in 0..w {
                feat[[r, c]] = best[c];
            }
            argmax.push(idx);
        }
        (feat, argmax)
    }

    fn assemble(
        &self,
        params: &[f64],
        noisy: ArrayView2<f64>,
        k: &[usize],
        cond: ArrayView2<f64>,
        clouds: Option<&[Vec<[f64; 3]>]>,
    ) -> Result<(Array2<f64>, Vec<Vec<usize>>)> {
        let sh = &self.shapes;
        let b = noisy.nrows();
        if noisy.ncols() != sh.window_dim
            || cond.ncols() != sh.cond_dim
            || cond.nrows() != b
            || k.len() != b
        {
            return Err(Error::ShapeMismatch {
                expected: sh.window_dim + sh.cond_dim,
                actual: noisy.ncols() + cond.ncols(),
            });
        }
        let mut x = Array2::zeros((b, sh.input_dim()));
        x.slice_mut(s![.., ..sh.window_dim]).assign(&noisy);
        let t0 = sh.window_dim;
        for (r, &kk) in k.iter().enumerate() {
            let e = timestep_embedding(kk, sh.time_embed_dim);
            for (j, v) in e.into_iter().enumerate() {
                x[[r, t0 + j]] = v;
            }
        }
        let c0 = t0 + sh.time_embed_dim;
        x.slice_mut(s![.., c0..c0 + sh.cond_dim]).assign(&cond);
        let mut argmax = Vec::new();
        if sh.point_width > 0 {
            let clouds = clouds.ok_or(Error::InvalidConfig("point encoder needs clouds".into()))?;
            if clouds.len() != b || clouds.iter().any(|c| c.is_empty()) {
                return Err(Error::Empty("point cloud"));
            }
            let (feat, am) = self.point_features(params, clouds);
            let p0 = c0 + sh.cond_dim;
            x.slice_mut(s![.., p0..]).assign(&feat);
            argmax = am;
        }
        Ok((x, argmax))
    }

    fn forward_cached(
        &self,
        params: &[f64],
        noisy: ArrayView2<f64>,
        k: &[usize],
        cond: ArrayView2<f64>,
        clouds: Option<&[Vec<[f64; 3]>]>,
    ) -> Result<(Array2<f64>, Cache)> {
        self.check(params)?;
        let (mut h, argmax) = self.assemble(params, noisy, k, cond, clouds)?;
        let layers = self.shapes.layers();
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len() - 1);
        let mut off = 0;
        for (li, &(fi, fo)) in layers.iter().enumerate() {
            let w = ArrayView2::from_shape((fi, fo), &params[off..off + fi * fo]).expect("layout");
            let b = ArrayView2::from_shape((1, fo), &params[off + fi * fo..off + fi * fo + fo])
                .expect("layout");
            off += fi * fo + fo;
            let z = h.dot(&w) + &b;
            inputs.push(h);
            if li + 1 < layers.len() {
                let act = self.shapes.activation;
                h = z.mapv(|v| act.apply(v));
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((
            h,
            Cache {
                inputs,
                pre,
                argmax,
            },
        ))
    }

    /// Predicted noise for each row.
    pub fn forward(
        &self,
        params: &[f64],
        noisy: ArrayView2<f64>,
        k: &[usize],
        cond: ArrayView2<f64>,
        clouds: Option<&[Vec<[f64; 3]>]>,
    ) -> Result<Array2<f64>> {
        Ok(self.forward_cached(params, noisy, k, cond, clouds)?.0)
    }

    fn backward(
        &self,
        params: &[f64],
        cache: &Cache,
        dout: Array2<f64>,
        clouds: Option<&[Vec<[f64; 3]>]>,
    ) -> Vec<f64> {
        let layers = self.shapes.layers();
        let mut grad = vec![0.0; params.len()];
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(fi, fo) in &layers {
            offsets.push(off);
            off += fi * fo + fo;
        }
        let mut d = dout;
        for li in (0..layers.len()).rev() {
            let (fi, fo) = layers[li];
            let off = offsets[li];
            let x = &cache.inputs[li];
            let gw = x.t().dot(&d);
            grad[off..off + fi * fo].copy_from_slice(gw.as_slice().expect("standard layout"));
            let gb = d.sum_axis(Axis(0));
            grad[off + fi * fo..off + fi * fo + fo]
                .copy_from_slice(gb.as_slice().expect("contiguous"));
            let w = ArrayView2::from_shape((fi, fo), &params[off..off + fi * fo]).expect("layout");
            let mut dx = d.dot(&w.t());
            if li > 0 {
                let act = self.shapes.activation;
                dx.zip_mut_with(&cache.pre[li - 1], |g, &z| *g *= act.derivative(z));
            } else if self.shapes.point_width > 0 {
                let pw = self.shapes.point_width;
                let p0 = self.shapes.input_dim() - pw;
                let poff = self.shapes.point_offset();
                let clouds = clouds.expect("clouds present when encoder enabled");
                for (r, idx) in cache.argmax.iter().enumerate() {
                    for c in 0..pw {
                        let g = dx[[r, p0 + c]];
                        let p = clouds[r][idx[c]];
                        grad[poff + c] += g * p[0];
                        grad[poff + pw + c] += g * p[1];
                        grad[poff + 2 * pw + c] += g * p[2];
                        grad[poff + 3 * pw + c] += g;
                    }
                }
            }
            d = dx;
        }
        grad
    }

    /// Sum over rows of the squared noise-prediction error, and its gradient.
    fn chunk_loss_grad(
        &self,
        params: &[f64],
        batch: &Batch,
        draw: &NoiseDraw,
        schedule: &NoiseSchedule,
    ) -> Result<(f64, Vec<f64>)> {
        let b = batch.len();
        let mut noisy = Array2::zeros(batch.a0.raw_dim());
        for r in 0..b {
            let ab = schedule.alpha_bar[draw.k[r] - 1];
            let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
            for j in 0..batch.a0.ncols() {
                noisy[[r, j]] = c0 * batch.a0[[r, j]] + c1 * draw.eps[[r, j]];
            }
        }
        let clouds = batch.clouds.as_deref();
        let (out, cache) =
            self.forward_cached(params, noisy.view(), &draw.k, batch.cond.view(), clouds)?;
        let diff = out - &draw.eps;
        let loss = diff.iter().map(|d| d * d).sum::<f64>();
        let grad = self.backward(params, &cache, diff * 2.0, clouds);
        Ok((loss, grad))
    }

    /// Batch-mean over rows of `||eps - eps_theta||^2` with fixed draws, and
    /// its exact gradient.
    pub fn loss_and_grad_with(
        &self,
        params: &[f64],
        batch: &Batch,
        draw: &NoiseDraw,
        schedule: &NoiseSchedule,
    ) -> Result<(f64, Vec<f64>)> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::Empty("batch"));
        }
        if draw.k.iter().any(|&k| k == 0 || k > schedule.steps()) {
            return Err(Error::InvalidConfig("diffusion step out of range".into()));
        }
        let chunks: Vec<std::ops::Range<usize>> = (0..b)
            .step_by(CHUNK)
            .map(|s| s..(s + CHUNK).min(b))
            .collect();
        let parts: Vec<(f64, Vec<f64>)> = chunks
            .par_iter()
            .map(|r| {
                self.chunk_loss_grad(
                    params,
                    &batch.rows(r.clone()),
                    &draw.rows(r.clone()),
                    schedule,
                )
            })
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for (l, g) in parts {
            loss += l;
            for (a, x) in grad.iter_mut().zip(g) {
                *a += x;
            }
        }
        let inv = 1.0 / b as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }

    pub fn loss_with(
        &self,
        params: &[f64],
        batch: &Batch,
        draw: &NoiseDraw,
        schedule: &NoiseSchedule,
    ) -> Result<f64> {
        let mut noisy = batch.a0.clone();
        for (r, mut row) in noisy.rows_mut().into_iter().enumerate() {
            let ab = schedule.alpha_bar[draw.k[r] - 1];
            row.zip_mut_with(&draw.eps.row(r), |a, e| {
                *a = ab.sqrt() * *a + (1.0 - ab).sqrt() * e
            });
        }
        let out = self.forward(
            params,
            noisy.view(),
            &draw.k,
            batch.cond.view(),
            batch.clouds.as_deref(),
        )?;
        Ok((out - &draw.eps).iter().map(|d| d * d).sum::<f64>() / batch.len() as f64)
    }

    /// Draws per-row `k ~ U{1..K}` and Gaussian noise, then evaluates the loss.
    pub fn loss_and_grad<R: Rng>(
        &self,
        params: &[f64],
        batch: &Batch,
        schedule: &NoiseSchedule,
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        let draw = NoiseDraw::sample(batch.len(), self.shapes.window_dim, schedule.steps(), rng);
        self.loss_and_grad_with(params, batch, &draw, schedule)
    }
}

/// Largest relative error between the analytic gradient and central
/// differences over `samples` random parameters, denominator
/// `max(|analytic|, 1e-8)`. `corrupt` may tamper with the analytic gradient
/// (negative control).
pub fn grad_check(
    net: &DenoiserNet,
    params: &[f64],
    batch: &Batch,
    draw: &NoiseDraw,
    schedule: &NoiseSchedule,
    samples: usize,
    h: f64,
    seed: u64,
    corrupt: Option<&dyn Fn(&mut [f64])>,
) -> Result<f64> {
    let (_, mut grad) = net.loss_and_grad_with(params, batch, draw, schedule)?;
    if let Some(f) = corrupt {
        f(&mut grad);
    }
    let mut s = rng::stream(&[tag::INIT, seed, 0x6c]);
    let mut idx: Vec<usize> = (0..params.len()).collect();
    idx.shuffle(&mut s);
    idx.truncate(samples.min(params.len()));
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in idx {
        let orig = p[i];
        p[i] = orig + h;
        let up = net.loss_with(&p, batch, draw, schedule)?;
        p[i] = orig - h;
        let down = net.loss_with(&p, batch, draw, schedule)?;
        p[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One step with L2 weight decay added to the gradient.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i] + weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

pub fn ema_update(shadow: &mut [f64], params: &[f64], decay: f64) {
    for (s, p) in shadow.iter_mut().zip(params) {
        *s = decay * *s + (1.0 - decay) * p;
    }
}

/// Trained policy: network layout, raw and EMA parameters, schedule and the
/// normalization statistics of its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy {
    pub cfg: PolicyConfig,
    pub net: DenoiserNet,
    pub params: Vec<f64>,
    pub ema: Vec<f64>,
    pub schedule: NoiseSchedule,
    pub obs_stats: NormStats,
    pub act_stats: NormStats,
    /// Per action dimension range of the normalized training windows; the
    /// sampler keeps its clean-window estimates inside it.
    pub x0_range: Option<Vec<[f64; 2]>>,
    /// Free-form settings echoed into the model file (e.g. object generation).
    pub extra: serde_json::Value,
}

impl DiffusionPolicy {
    pub fn init(cfg: &PolicyConfig, obs_stats: NormStats, act_stats: NormStats) -> Result<Self> {
        cfg.validate()?;
        if act_stats.dim() != ACTION_DIM {
            return Err(Error::ShapeMismatch {
                expected: ACTION_DIM,
                actual: act_stats.dim(),
            });
        }
        let net = DenoiserNet::from_config(cfg, obs_stats.dim());
        let params = net.init_params(&mut rng::stream(&[tag::INIT, cfg.seed]));
        Ok(Self {
            cfg: cfg.clone(),
            ema: params.clone(),
            params,
            net,
            schedule: make_schedule(cfg.k),
            obs_stats,
            act_stats,
            x0_range: None,
            extra: serde_json::Value::Null,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_stats.dim()
    }

    /// Normalized condition vector from raw histories of length `t_o`.
    pub fn condition(&self, obs_hist: &[Vec<f64>], act_hist: &[[f64; 10]]) -> Result<Vec<f64>> {
        build_condition(
            &self.cfg,
            obs_hist,
            act_hist,
            &self.obs_stats,
            &self.act_stats,
        )
    }

    /// Reverse-diffuse one window per condition row with the EMA weights,
    /// returning normalized windows (one row each).
    pub fn sample_normalized<R: Rng>(
        &self,
        cond: &Array2<f64>,
        clouds: Option<&[Vec<[f64; 3]>]>,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let b = cond.nrows();
        let w = self.cfg.window_dim();
        let mut x = Array2::from_shape_simple_fn((b, w), || rng.sample(StandardNormal));
        let sch = &self.schedule;
        for k in (1..=sch.steps()).rev() {
            let ks = vec![k; b];
            let eps = self
                .net
                .forward(&self.ema, x.view(), &ks, cond.view(), clouds)?;
            let (a, g, sg) = (sch.alpha[k - 1], sch.gamma[k - 1], sch.sigma[k - 1]);
            for r in 0..b {
                let mut row = x.row(r).to_vec();
                let mut e = eps.row(r).to_vec();
                if let Some(range) = &self.x0_range {
                    clamp_eps(&row, &mut e, sch.alpha_bar[k - 1], range);
                }
                reverse_update(&mut row, &e, a, g, sg, rng);
                x.row_mut(r).assign(&Array1::from(row));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite sample at diffusion step {k}"
                )));
            }
        }
        Ok(x)
    }

    /// [`Self::sample_normalized`], denormalized, with rotations projected
    /// back onto valid rotation matrices.
    pub fn sample_batch<R: Rng>(
        &self,
        cond: &Array2<f64>,
        clouds: Option<&[Vec<[f64; 3]>]>,
        rng: &mut R,
    ) -> Result<Vec<Vec<[f64; 10]>>> {
        let x = self.sample_normalized(cond, clouds, rng)?;
        let b = x.nrows();
        let mut out = Vec::with_capacity(b);
        for r in 0..b {
            let mut window = Vec::with_capacity(self.cfg.t_p);
            for t in 0..self.cfg.t_p {
                let z = x
                    .slice(s![r, t * ACTION_DIM..(t + 1) * ACTION_DIM])
                    .to_vec();
                let raw = crate::perception::denormalize(&z, &self.act_stats)?;
                let rot = rot6d_decode(&raw[3..9])?;
                let mut a = [0.0; 10];
                a.copy_from_slice(&raw);
                a[3..9].copy_from_slice(&rot6d_encode(&rot));
                window.push(a);
            }
            out.push(window);
        }
        Ok(out)
    }

    pub fn sample<R: Rng>(
        &self,
        obs_hist: &[Vec<f64>],
        act_hist: &[[f64; 10]],
        cloud: Option<&Vec<[f64; 3]>>,
        rng: &mut R,
    ) -> Result<Vec<[f64; 10]>> {
        let c = self.condition(obs_hist, act_hist)?;
        let cond = Array2::from_shape_vec((1, c.len()), c).expect("row");
        let clouds = cloud.map(|c| vec![c.clone()]);
        Ok(self.sample_batch(&cond, clouds.as_deref(), rng)?.remove(0))
    }

    /// Minibatch Adam on the Eq. 2 objective with EMA tracking. Calls
    /// `on_epoch(epoch, mean_loss)` after every epoch.
    pub fn train(
        &mut self,
        data: &Batch,
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<Vec<f64>> {
        let cfg = self.cfg.clone();
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if data.a0.ncols() != cfg.window_dim() || data.cond.ncols() != self.net.shapes.cond_dim {
            return Err(Error::ShapeMismatch {
                expected: self.net.shapes.cond_dim,
                actual: data.cond.ncols(),
            });
        }
        let mut range = vec![[f64::INFINITY, f64::NEG_INFINITY]; ACTION_DIM];
        for row in data.a0.rows() {
            for (i, v) in row.iter().enumerate() {
                let r = &mut range[i % ACTION_DIM];
                r[0] = r[0].min(*v);
                r[1] = r[1].max(*v);
            }
        }
        self.x0_range = Some(range);
        let mut s = rng::stream(&[tag::TRAIN, cfg.seed]);
        let mut adam = Adam::new(self.params.len());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut losses = Vec::with_capacity(cfg.epochs);
        let total_steps = cfg.epochs * data.len().div_ceil(cfg.batch_size);
        let mut step = 0;
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut s);
            let mut total = 0.0;
            let mut batches = 0;
            for idx in order.chunks(cfg.batch_size) {
                let batch = data.select(idx);
                let (loss, grad) =
                    self.net
                        .loss_and_grad(&self.params, &batch, &self.schedule, &mut s)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged(format!(
                        "loss {loss} at epoch {epoch}, batch {batches}"
                    )));
                }
                let lr = if cfg.lr_cosine {
                    let t = step as f64 / total_steps as f64;
                    0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * t).cos())
                } else {
                    cfg.lr
                };
                step += 1;
                adam.step(&mut self.params, &grad, lr, cfg.weight_decay);
                ema_update(&mut self.ema, &self.params, cfg.ema_decay);
                total += loss;
                batches += 1;
            }
            let mean = total / batches as f64;
            on_epoch(epoch, mean);
            losses.push(mean);
        }
        Ok(losses)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ModelHeader {
            v: MODEL_SCHEMA_VERSION,
            cfg: self.cfg.clone(),
            shapes: self.net.shapes.clone(),
            layers: self.net.shapes.layers(),
            schedule: ScheduleEcho {
                kind: "squaredcos_cap_v2".into(),
                steps: self.cfg.k,
                offset: COSINE_OFFSET,
                max_beta: MAX_BETA,
            },
            obs_stats: self.obs_stats.clone(),
            act_stats: self.act_stats.clone(),
            n_params: self.params.len(),
            x0_range: self.x0_range.clone(),
            extra: self.extra.clone(),
        };
        let h = serde_json::to_vec(&header)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&(h.len() as u64).to_le_bytes())?;
        f.write_all(&h)?;
        for x in self.params.iter().chain(&self.ema) {
            f.write_all(&x.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut len = [0u8; 8];
        f.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 26 {
            return Err(Error::Format {
                what: "model file",
                detail: "header length implausible".into(),
            });
        }
        let mut h = vec![0u8; len];
        f.read_exact(&mut h)?;
        let header: ModelHeader = serde_json::from_slice(&h)?;
        if header.v != MODEL_SCHEMA_VERSION {
            return Err(Error::Format {
                what: "model file",
                detail: format!("unsupported version {}", header.v),
            });
        }
        let net = DenoiserNet::new(header.shapes);
        if net.shapes.param_count() != header.n_params {
            return Err(Error::Format {
                what: "model file",
                detail: "parameter count does not match layer shapes".into(),
            });
        }
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; 8 * n];
            f.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let params = read(header.n_params)?;
        let ema = read(header.n_params)?;
        Ok(Self {
            schedule: make_schedule(header.cfg.k),
            cfg: header.cfg,
            net,
            params,
            ema,
            obs_stats: header.obs_stats,
            act_stats: header.act_stats,
            x0_range: header.x0_range,
            extra: header.extra,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleEcho {
    kind: String,
    steps: usize,
    offset: f64,
    max_beta: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    v: u32,
    cfg: PolicyConfig,
    shapes: NetShapes,
    layers: Vec<(usize, usize)>,
    schedule: ScheduleEcho,
    obs_stats: NormStats,
    act_stats: NormStats,
    n_params: usize,
    #[serde(default)]
    x0_range: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Normalized `[obs history | action history]`, each of length `t_o`.
pub fn build_condition(
    cfg: &PolicyConfig,
    obs_hist: &[Vec<f64>],
    act_hist: &[[f64; 10]],
    obs_stats: &NormStats,
    act_stats: &NormStats,
) -> Result<Vec<f64>> {
    if obs_hist.len() != cfg.t_o || act_hist.len() != cfg.t_o {
        return Err(Error::ShapeMismatch {
            expected: cfg.t_o,
            actual: obs_hist.len().min(act_hist.len()),
        });
    }
    let mut c = Vec::with_capacity(cfg.cond_dim(obs_stats.dim()));
    for o in obs_hist {
        c.extend(normalize(o, obs_stats)?);
    }
    for a in act_hist {
        c.extend(normalize(a, act_stats)?);
    }
    Ok(c)
}

/// The `t_o` most recent entries ending at `t` (inclusive), padded at the
/// front with `pad` when fewer exist.
pub fn history<T: Clone>(items: &[T], t: usize, len: usize, pad: &T) -> Vec<T> {
    (0..len)
        .map(|i| {
            let back = len - 1 - i;
            if back > t {
                pad.clone()
            } else {
                items.get(t - back).cloned().unwrap_or_else(|| pad.clone())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_cfg(act: Activation) -> PolicyConfig {
        PolicyConfig {
            t_o: 2,
            t_p: 2,
            t_a: 1,
            k: 20,
            hidden: vec![16, 16],
            activation: act,
            time_embed_dim: 8,
            ..Default::default()
        }
    }

    fn toy_batch(net: &DenoiserNet, rows: usize, seed: u64) -> (Batch, NoiseDraw) {
        let mut s = rng::stream(&[seed]);
        let a0 = Array2::from_shape_simple_fn((rows, net.shapes.window_dim), || {
            s.random_range(-1.0..1.0)
        });
        let cond =
            Array2::from_shape_simple_fn((rows, net.shapes.cond_dim), || s.random_range(-1.0..1.0));
        let draw = NoiseDraw::sample(rows, net.shapes.window_dim, 20, &mut s);
        (
            Batch {
                a0,
                cond,
                clouds: None,
            },
            draw,
        )
    }

    #[test]
    fn schedule_invariants() {
        let s = make_schedule(100);
        assert_eq!(s.steps(), 100);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar[0] >= 0.99);
        assert!(s.alpha_bar[99] < 0.01);
        assert_eq!(s.sigma[0], 0.0);
        assert!(s.beta.iter().all(|&b| b > 0.0 && b <= MAX_BETA));
        for i in 1..100 {
            assert!(s.alpha[i].is_finite() && s.gamma[i] > 0.0 && s.sigma[i] > 0.0);
        }
        let one = make_schedule(1);
        assert_eq!(one.sigma, [0.0]);
    }

    #[test]
    fn q_sample_limits() {
        let s = make_schedule(100);
        let a0 = [0.5, -1.0];
        let z = q_sample(&a0, 3, &[0.0, 0.0], &s).unwrap();
        let c = s.alpha_bar[2].sqrt();
        assert_eq!(z, vec![c * 0.5, -c]);
        let near = q_sample(&a0, 1, &[1.0, 1.0], &s).unwrap();
        assert!((near[0] - 0.5).abs() < 0.03);
        assert!(q_sample(&a0, 1, &[1.0], &s).is_err());
    }

    #[test]
    fn q_sample_variance_matches() {
        let s = make_schedule(100);
        let k = 40;
        let mut r = rng::stream(&[5]);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = r.sample(StandardNormal);
                q_sample(&[0.7], k, &[e], &s).unwrap()[0]
            })
            .collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        let expect = 1.0 - s.alpha_bar[k - 1];
        assert!((v / expect - 1.0).abs() < 0.05, "{v} vs {expect}");
    }

    #[test]
    fn reverse_update_hand_values() {
        let mut x = [3.0];
        reverse_update(&mut x, &[1.0], 2.0, 0.5, 0.0, &mut rng::stream(&[0]));
        assert_eq!(x, [5.0]);
        let mut x = [3.0, -1.0];
        reverse_update(&mut x, &[0.0, 0.0], 1.0, 0.7, 0.0, &mut rng::stream(&[0]));
        assert_eq!(x, [3.0, -1.0]);
    }

    #[test]
    fn clamp_eps_only_touches_out_of_range_estimates() {
        let ab: f64 = 0.25;
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        // x0 estimates: 0.5 (inside), 4.0 (above), -3.0 (below)
        let x0 = [0.5, 4.0, -3.0];
        let eps = [0.2, -0.1, 0.3];
        let x: Vec<f64> = x0.iter().zip(&eps).map(|(a, e)| sa * a + sn * e).collect();
        let mut e = eps.to_vec();
        clamp_eps(&x, &mut e, ab, &[[-1.0, 1.0]]);
        assert_eq!(e[0], eps[0]);
        let back: Vec<f64> = x
            .iter()
            .zip(&e)
            .map(|(xi, ei)| (xi - sn * ei) / sa)
            .collect();
        assert!((back[1] - 1.0).abs() < 1e-12);
        assert!((back[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_net_loss_is_window_dim() {
        let cfg = PolicyConfig {
            t_p: 4,
            ..small_cfg(Activation::Silu)
        };
        let net = DenoiserNet::from_config(&cfg, 5);
        let params = vec![0.0; net.shapes.param_count()];
        let (batch, _) = toy_batch(&net, 4096, 1);
        let (loss, _) = net
            .loss_and_grad(&params, &batch, &make_schedule(20), &mut rng::stream(&[2]))
            .unwrap();
        assert!((loss / 40.0 - 1.0).abs() < 0.05, "{loss}");
    }

    #[test]
    fn duplicated_rows_contribute_equally() {
        let net = DenoiserNet::from_config(&small_cfg(Activation::Silu), 3);
        let params = net.init_params(&mut rng::stream(&[1]));
        let (batch, draw) = toy_batch(&net, 1, 3);
        let twice = batch.select(&[0, 0]);
        let draw2 = NoiseDraw {
            k: vec![draw.k[0]; 2],
            eps: draw.eps.select(Axis(0), &[0, 0]),
        };
        let s = make_schedule(20);
        let (l1, g1) = net.loss_and_grad_with(&params, &batch, &draw, &s).unwrap();
        let (l2, g2) = net.loss_and_grad_with(&params, &twice, &draw2, &s).unwrap();
        assert_relative_eq!(l1, l2, epsilon = 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = DenoiserNet::from_config(&small_cfg(Activation::Silu), 3);
        let params = net.init_params(&mut rng::stream(&[1]));
        let (batch, draw) = toy_batch(&net, 16, 4);
        let s = make_schedule(20);
        let err = grad_check(&net, &params, &batch, &draw, &s, 200, 1e-5, 0, None).unwrap();
        assert!(err < 1e-4, "{err}");
        let corrupt = |g: &mut [f64]| g.iter_mut().for_each(|x| *x *= 1.05);
        let bad = grad_check(
            &net,
            &params,
            &batch,
            &draw,
            &s,
            200,
            1e-5,
            0,
            Some(&corrupt),
        )
        .unwrap();
        assert!(bad > 1e-2, "{bad}");
    }

    #[test]
    fn linear_net_gradient_is_exact() {
        let cfg = PolicyConfig {
            t_o: 1,
            t_p: 1,
            hidden: vec![4],
            ..small_cfg(Activation::Identity)
        };
        let net = DenoiserNet::from_config(&cfg, 2);
        let params = net.init_params(&mut rng::stream(&[7]));
        let (batch, draw) = toy_batch(&net, 4, 8);
        // the loss is quadratic in every parameter, so central differences
        // are exact for any step; a wide step keeps roundoff out of the way
        let err = grad_check(
            &net,
            &params,
            &batch,
            &draw,
            &make_schedule(20),
            200,
            1e-1,
            1,
            None,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn point_encoder_gradient() {
        let cfg = PolicyConfig {
            point_cloud: Some(PointCloudConfig {
                points: 12,
                raw_points: 12,
                width: 6,
            }),
            ..small_cfg(Activation::Silu)
        };
        let net = DenoiserNet::from_config(&cfg, 3);
        let params = net.init_params(&mut rng::stream(&[2]));
        let (mut batch, draw) = toy_batch(&net, 8, 5);
        let mut s = rng::stream(&[6]);
        batch.clouds = Some(
            (0..8)
                .map(|_| {
                    (0..12)
                        .map(|_| [s.random(), s.random(), s.random()])
                        .collect()
                })
                .collect(),
        );
        let err = grad_check(
            &net,
            &params,
            &batch,
            &draw,
            &make_schedule(20),
            200,
            1e-5,
            2,
            None,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn history_pads_front() {
        let items = [1, 2, 3];
        assert_eq!(history(&items, 0, 4, &0), [0, 0, 0, 1]);
        assert_eq!(history(&items, 2, 2, &0), [2, 3]);
    }

    #[test]
    fn epochs_zero_returns_init_and_save_load_roundtrip() {
        let cfg = PolicyConfig {
            epochs: 0,
            ..small_cfg(Activation::Silu)
        };
        let obs = NormStats {
            mean: vec![0.0; 3],
            std: vec![1.0; 3],
        };
        let act = NormStats {
            mean: vec![0.0; 10],
            std: vec![1.0; 10],
        };
        let mut p = DiffusionPolicy::init(&cfg, obs, act).unwrap();
        let before = p.clone();
        let (batch, _) = toy_batch(&p.net, 8, 1);
        let batch = Batch {
            a0: Array2::zeros((8, cfg.window_dim())),
            ..batch
        };
        p.train(&batch, |_, _| {}).unwrap();
        assert_eq!(p.params, before.params);
        assert_eq!(p.ema, before.ema);
        assert_eq!(p.x0_range, Some(vec![[0.0, 0.0]; ACTION_DIM]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        p.save(&path).unwrap();
        assert_eq!(DiffusionPolicy::load(&path).unwrap(), p);
    }

    #[test]
    fn untrained_sampling_is_deterministic_and_valid() {
        let cfg = small_cfg(Activation::Silu);
        let obs = NormStats {
            mean: vec![0.0; 3],
            std: vec![1.0; 3],
        };
        let act = NormStats {
            mean: vec![0.0; 10],
            std: vec![1.0; 10],
        };
        let p = DiffusionPolicy::init(&cfg, obs, act).unwrap();
        let oh = vec![vec![0.1, 0.2, 0.3]; 2];
        let ah = vec![[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]; 2];
        let a = p.sample(&oh, &ah, None, &mut rng::stream(&[9])).unwrap();
        let b = p.sample(&oh, &ah, None, &mut rng::stream(&[9])).unwrap();
        assert_eq!(a, b);
        for act in &a {
            let r = rot6d_decode(&act[3..9]).unwrap();
            let m = r.matrix();
            assert_relative_eq!(
                m.transpose() * m,
                nalgebra::Matrix3::identity(),
                epsilon = 1e-9
            );
            assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-9);
        }
    }
}
