//! Fréchet auto-encoder distance.
//!
//! A small convolutional auto-encoder is trained to reconstruct RGB-D
//! panoramas. Its latent maps are averaged along longitude, weighted by the
//! cosine of each latent row's latitude and flattened; a Gaussian is fitted
//! to these vectors per corpus and two corpora are compared with the
//! Fréchet distance between their Gaussians.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::row_weights;
use crate::grid::ErpGrid;
use crate::io::WeightsFile;
use crate::linalg::{matmul, psd_sqrt, symmetric_eigen, trace};
use crate::scalar::Scalar;
use crate::sensor::Seed;
use crate::tensor::nn::{Activation, Conv2d, UpConv};
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};

/// Depth normalization used for network inputs, in meters.
pub const DEPTH_SCALE: f64 = 10.0;
/// Ridge added to every covariance estimate.
pub const COV_SHRINK: f64 = 1e-6;
/// Cumulative longitudinal stride of the encoder.
pub const ENCODER_STRIDE: usize = 16;
pub const LATENT_CHANNELS: usize = 64;
pub const ARCHITECTURE: &str = "faed-autoencoder-v1";

const ENCODER_WIDTHS: [usize; 5] = [4, 16, 32, 64, LATENT_CHANNELS];
const DECODER_WIDTHS: [usize; 5] = [LATENT_CHANNELS, 64, 32, 16, 4];

/// Gaussian summary of pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats<T> {
    pub dim: usize,
    pub count: usize,
    pub mean: Vec<T>,
    /// Row-major `dim x dim`.
    pub cov: Vec<T>,
}

impl<T: Scalar> FeatureStats<T> {
    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.dim || self.cov.len() != self.dim * self.dim {
            return Err(Error::Dimension(format!(
                "stats of dim {} carry {} mean and {} covariance entries",
                self.dim,
                self.mean.len(),
                self.cov.len()
            )));
        }
        if self.mean.iter().chain(&self.cov).any(|v| !v.is_finite()) {
            return Err(Error::Data("statistics contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Streaming mean/co-moment accumulator. Partial accumulators merge with
/// the pairwise update, so parallel reductions in a fixed order give the
/// same result as one pass up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    dim: usize,
    count: usize,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push<T: Scalar>(&mut self, v: &[T]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "feature of length {} pushed into dim {}",
                v.len(),
                self.dim
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x.as_f64() - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        // Welford: M += (x - mean_old)(x - mean_new)^T
        let after: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x.as_f64() - m).collect();
        for i in 0..self.dim {
            let row = &mut self.comoment[i * self.dim..(i + 1) * self.dim];
            for (c, a) in row.iter_mut().zip(&after) {
                *c += delta[i] * a;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Dimension(format!("merging dim {} into {}", other.dim, self.dim)));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let k = na * nb / n;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let idx = i * self.dim + j;
                self.comoment[idx] += other.comoment[idx] + delta[i] * delta[j] * k;
            }
        }
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    /// Mean and unbiased covariance plus [`COV_SHRINK`] on the diagonal.
    pub fn finish(&self) -> Result<FeatureStats<f64>> {
        if self.count < 2 {
            return Err(Error::InsufficientData(format!(
                "covariance needs at least 2 samples, got {}",
                self.count
            )));
        }
        let d = self.dim;
        let denom = (self.count - 1) as f64;
        let mut cov: Vec<f64> = self.comoment.iter().map(|c| c / denom).collect();
        for i in 0..d {
            for j in 0..i {
                let m = 0.5 * (cov[i * d + j] + cov[j * d + i]);
                cov[i * d + j] = m;
                cov[j * d + i] = m;
            }
            cov[i * d + i] += COV_SHRINK;
        }
        Ok(FeatureStats {
            dim: d,
            count: self.count,
            mean: self.mean.clone(),
            cov,
        })
    }
}

/// Fits the Gaussian summary of a set of equal-length vectors.
pub fn accumulate_stats<T: Scalar, V: AsRef<[T]>>(vectors: &[V]) -> Result<FeatureStats<f64>> {
    let dim = vectors.first().map(|v| v.as_ref().len()).unwrap_or(0);
    let mut acc = StatsAccumulator::new(dim);
    for v in vectors {
        acc.push(v.as_ref())?;
    }
    acc.finish()
}

/// Squared Fréchet distance between two Gaussians,
/// `|m - m'|^2 + Tr C + Tr C' - 2 Tr (C^1/2 C' C^1/2)^1/2`, clamped at 0.
pub fn frechet_distance<T: Scalar>(a: &FeatureStats<T>, b: &FeatureStats<T>) -> Result<T> {
    a.validate()?;
    b.validate()?;
    if a.dim != b.dim {
        return Err(Error::Dimension(format!("stats dims {} and {}", a.dim, b.dim)));
    }
    let n = a.dim;
    let root_a = psd_sqrt(&a.cov, n)?;
    let inner = matmul(&matmul(&root_a, &b.cov, n), &root_a, n);
    let cross: T = symmetric_eigen(&inner, n)?
        .values
        .iter()
        .map(|&l| l.max(T::zero()).sqrt())
        .sum();
    let mean_term: T = a.mean.iter().zip(&b.mean).map(|(&x, &y)| (x - y) * (x - y)).sum();
    let d2 = mean_term + trace(&a.cov, n) + trace(&b.cov, n) - T::of(2.0) * cross;
    Ok(d2.max(T::zero()))
}

/// Longitudinal mean of each latent row, weighted by the cosine of that
/// row's latitude on an `H'`-row grid; `c` outer, `h` inner.
pub fn pool_features<T: Scalar>(latent: &Tensor<T>) -> Result<Vec<T>> {
    let (c, h, w) = match *latent.shape() {
        [c, h, w] => (c, h, w),
        [1, c, h, w] => (c, h, w),
        ref s => return Err(Error::Shape(format!("latent of shape {s:?}, expected (C, H, W)"))),
    };
    if latent.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("latent features are not finite".into()));
    }
    let weights = row_weights(h);
    let inv_w = T::one() / T::of(w as f64);
    let mut out = Vec::with_capacity(c * h);
    for row in latent.data().chunks_exact(w).take(c * h).enumerate() {
        let (idx, vals) = row;
        let mean = vals.iter().copied().sum::<T>() * inv_w;
        out.push(mean * T::of(weights[idx % h]));
    }
    Ok(out)
}

/// Turns an RGB-D panorama (RGB then depth in meters) into the 4-channel
/// network input: RGB as is, depth divided by [`DEPTH_SCALE`] and clamped
/// to `[0, 1]`.
pub fn autoencoder_input<T: Scalar>(rgbd: &ErpGrid<T>) -> Result<Tensor<T>> {
    if rgbd.channels() != 4 {
        return Err(Error::Dimension(format!(
            "auto-encoder input needs RGB + depth, got {} channels",
            rgbd.channels()
        )));
    }
    let scale = T::of(DEPTH_SCALE);
    let (h, w) = (rgbd.height(), rgbd.width());
    let mut planar = rgbd.to_planar();
    for v in &mut planar[3 * h * w..] {
        *v = (*v / scale).max(T::zero()).min(T::one());
    }
    Tensor::from_vec(&[1, 4, h, w], planar)
}

/// Four stride-2 downsampling convolutions and a mirrored upsampling decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AutoEncoder {
    pub encoder: Vec<Conv2d>,
    pub decoder: Vec<UpConv>,
}

impl AutoEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let encoder = ENCODER_WIDTHS
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::new(store, &mut rng, &format!("enc{i}"), w[0], w[1], 3, 2, Activation::LeakyRelu))
            .collect();
        let last = DECODER_WIDTHS.len() - 2;
        let decoder = DECODER_WIDTHS
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Sigmoid } else { Activation::Relu };
                UpConv::new(store, &mut rng, &format!("dec{i}"), w[0], w[1], 3, act)
            })
            .collect();
        Self { encoder, decoder }
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self.encoder.iter().try_fold(x, |h, layer| layer.forward(g, h))
    }

    pub fn decode<T: Scalar>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        self.decoder.iter().try_fold(z, |h, layer| layer.forward(g, h))
    }

    /// Mean squared reconstruction error of a batch.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let z = self.encode(g, x)?;
        let y = self.decode(g, z)?;
        let d = g.sub(y, x)?;
        let d = g.square(d);
        Ok(g.mean(d))
    }
}

/// Auto-encoder architecture together with its parameters.
#[derive(Debug, Clone)]
pub struct FaedModel {
    pub net: AutoEncoder,
    pub params: ParamStore<f32>,
}

impl FaedModel {
    pub fn new(seed: Seed) -> Self {
        let mut params = ParamStore::new();
        let net = AutoEncoder::new(&mut params, seed);
        Self { net, params }
    }

    pub fn weights(&self) -> WeightsFile {
        WeightsFile::from_store(ARCHITECTURE, &self.params)
    }

    pub fn from_weights(weights: &WeightsFile) -> Result<Self> {
        let mut model = Self::new(Seed(0));
        weights.load_into(ARCHITECTURE, &mut model.params)?;
        Ok(model)
    }

    /// Latent map `(64, H/16, W/16)` of one panorama.
    pub fn encode(&self, rgbd: &ErpGrid<f32>) -> Result<Tensor<f32>> {
        check_height(rgbd.height())?;
        let x = autoencoder_input(rgbd)?;
        let mut g = Graph::new(&self.params);
        let x = g.input(x);
        let z = self.net.encode(&mut g, x)?;
        let z = g.value(z);
        let (_, c, h, w) = z.dims4()?;
        Tensor::from_vec(&[c, h, w], z.data().to_vec())
    }

    /// Pooled feature vector of one panorama.
    pub fn features(&self, rgbd: &ErpGrid<f32>) -> Result<Vec<f32>> {
        pool_features(&self.encode(rgbd)?)
    }

    /// Gaussian statistics of a corpus. Panoramas are encoded in parallel;
    /// accumulation runs in corpus order.
    pub fn corpus_stats(&self, corpus: &[ErpGrid<f32>]) -> Result<FeatureStats<f64>> {
        let feats: Vec<Vec<f32>> = corpus.par_iter().map(|p| self.features(p)).collect::<Result<_>>()?;
        let first = feats
            .first()
            .ok_or_else(|| Error::InsufficientData("empty corpus".into()))?;
        if feats.len() < first.len() / 4 {
            log::warn!(
                "{} samples for {}-dimensional features; covariance is poorly determined",
                feats.len(),
                first.len()
            );
        }
        accumulate_stats(&feats)
    }
}

fn check_height(height: usize) -> Result<()> {
    if height == 0 || height % ENCODER_STRIDE != 0 {
        return Err(Error::Shape(format!(
            "panorama height {height} is not a positive multiple of {ENCODER_STRIDE}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub seed: Seed,
    pub adam: AdamConfig,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 4,
            seed: Seed(0),
            adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                ..AdamConfig::default()
            },
        }
    }
}

/// Trains a fresh auto-encoder on `corpus` (RGB-D panoramas). Returns the
/// model and the loss of every step.
pub fn train_autoencoder(corpus: &[ErpGrid<f32>], cfg: &AeTrainConfig) -> Result<(FaedModel, Vec<f32>)> {
    if corpus.is_empty() {
        return Err(Error::InsufficientData("auto-encoder training corpus is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    for p in corpus {
        check_height(p.height())?;
    }
    let inputs: Vec<Tensor<f32>> = corpus.iter().map(autoencoder_input).collect::<Result<_>>()?;
    let mut model = FaedModel::new(cfg.seed.derive(1));
    let mut state = AdamState::new(&model.params);
    let mut rng = cfg.seed.derive(2).rng();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(inputs[order[cursor]].clone());
            cursor += 1;
        }
        let x = Tensor::stack_batch(&batch)?;
        let grads = {
            let mut g = Graph::new(&model.params);
            let x = g.input(x);
            let loss = model.net.loss(&mut g, x)?;
            losses.push(g.value(loss).item()?);
            g.backward(loss)?.into_params()
        };
        adam_step(&mut model.params, &grads, &mut state, &cfg.adam)?;
    }
    Ok((model, losses))
}

/// FAED between two corpora of RGB-D panoramas.
pub fn compute_faed(model: &FaedModel, real: &[ErpGrid<f32>], generated: &[ErpGrid<f32>]) -> Result<f64> {
    let a = model.corpus_stats(real)?;
    let b = model.corpus_stats(generated)?;
    frechet_distance(&a, &b)
}
