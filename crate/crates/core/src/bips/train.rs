//! Adversarial training and inference.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    adversarial_losses, discriminator_input, generator_loss, lsgan_term, pixel_loss, Discriminator, Generator,
    TargetVars, Variant,
};
use crate::error::{Error, Result};
use crate::grid::ErpGrid;
use crate::io::WeightsFile;
use crate::metrics::{extract_floor_polygon, layout_iou2d};
use crate::scene::{decompose_depth, RgbdScene};
use crate::sensor::{apply_masks, masks_for, sample_config, SensorConfig, Seed};
use crate::scalar::Scalar;
use crate::tensor::{adam_step_range, AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};

/// Rays and start angle below the horizon for [`layout_iou`]. Shallow
/// enough that the start row sees walls in rooms up to ~15 m across.
pub const EVAL_RAYS: usize = 128;
pub const EVAL_DEPRESSION_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Weight of the pixel loss against the adversarial loss.
    pub lambda: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: Seed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            lambda: 100.0,
            steps: 1000,
            batch: 1,
            lr: AdamConfig::default().lr,
            seed: Seed(0),
        }
    }
}

/// Ground truth of one panorama in network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// RGB then depth in meters, for masking.
    pub rgbd: ErpGrid<f32>,
    pub validity: ErpGrid<f32>,
    pub rgb: Tensor<f32>,
    pub layout: Tensor<f32>,
    pub residual: Tensor<f32>,
    pub total: Tensor<f32>,
}

fn planar(grid: &ErpGrid<f32>) -> Result<Tensor<f32>> {
    Tensor::from_vec(&[1, grid.channels(), grid.height(), grid.width()], grid.to_planar())
}

impl TrainingSample {
    pub fn from_scene(scene: &RgbdScene<f32>) -> Result<Self> {
        let (layout, residual) = decompose_depth(&scene.depth, &scene.layout)?;
        Ok(Self {
            rgbd: scene.rgbd()?,
            validity: scene.validity.clone(),
            rgb: planar(&scene.rgb)?,
            layout: planar(&layout)?,
            residual: planar(&residual)?,
            total: planar(&scene.depth)?,
        })
    }

    pub fn height(&self) -> usize {
        self.rgbd.height()
    }
}

/// Masked generator inputs `(B=1)` for a sensor configuration, plus the
/// depth mask actually applied (sensor mask times validity).
pub fn generator_inputs(
    sample: &TrainingSample,
    cfg: &SensorConfig,
) -> Result<(Tensor<f32>, Tensor<f32>, ErpGrid<f32>)> {
    let (h, w) = (sample.rgbd.height(), sample.rgbd.width());
    let (rgb_mask, depth_mask) = masks_for::<f32>(cfg, h, w)?;
    let depth_mask = depth_mask.zip_map(&sample.validity, |a, b| a * b)?;
    let (rgb_in, d_in) = apply_masks(&sample.rgbd, &rgb_mask, &depth_mask)?;
    Ok((planar(&rgb_in)?, planar(&d_in)?, depth_mask))
}

/// Losses of one training step. `invisible_depth_l1` is the mean absolute
/// total-depth error in meters over pixels the depth input did not cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub rgb: f64,
    pub layout: f64,
    pub residual: f64,
    pub pixel: f64,
    pub adv_g: f64,
    pub generator: f64,
    pub discriminator: f64,
    pub invisible_depth_l1: f64,
}

/// Generator and discriminator sharing one parameter store; generator
/// tensors come first.
#[derive(Debug, Clone)]
pub struct BipsModel {
    pub variant: Variant,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub params: ParamStore<f32>,
    pub generator_params: Range<usize>,
    pub discriminator_params: Range<usize>,
}

impl BipsModel {
    pub fn new(variant: Variant, seed: Seed) -> Self {
        let mut params = ParamStore::new();
        let generator = Generator::new(&mut params, variant, seed.derive(1));
        let split = params.len();
        let discriminator = Discriminator::new(&mut params, variant.discriminator_channels(), seed.derive(2));
        let end = params.len();
        Self {
            variant,
            generator,
            discriminator,
            params,
            generator_params: 0..split,
            discriminator_params: split..end,
        }
    }

    pub fn architecture(variant: Variant) -> String {
        format!("bips-{}-v1", variant.name())
    }

    pub fn weights(&self) -> WeightsFile {
        WeightsFile::from_store(&Self::architecture(self.variant), &self.params)
    }

    /// Rebuilds a model from saved weights; the variant is read from the
    /// architecture name.
    pub fn from_weights(weights: &WeightsFile) -> Result<Self> {
        let variant = Variant::ALL
            .into_iter()
            .find(|&v| Self::architecture(v) == weights.architecture)
            .ok_or_else(|| Error::Data(format!("unknown architecture {:?}", weights.architecture)))?;
        let mut model = Self::new(variant, Seed(0));
        weights.load_into(&weights.architecture, &mut model.params)?;
        Ok(model)
    }
}

/// Generator outputs as panoramas. Depths in meters; `layout` and
/// `residual` are absent for [`Variant::NoRdal`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOutput {
    pub rgb: ErpGrid<f32>,
    pub layout: Option<ErpGrid<f32>>,
    pub residual: Option<ErpGrid<f32>>,
    pub total: ErpGrid<f32>,
}

fn to_grid(t: &Tensor<f32>) -> Result<ErpGrid<f32>> {
    let (b, c, h, _) = t.dims4()?;
    if b != 1 {
        return Err(Error::Shape(format!("expected one panorama, got a batch of {b}")));
    }
    ErpGrid::from_planar(h, c, t.data())
}

/// Runs the generator on one masked input pair.
pub fn infer(model: &BipsModel, rgb_in: &Tensor<f32>, depth_in: &Tensor<f32>) -> Result<GeneratorOutput> {
    let mut g = Graph::new(&model.params);
    let x = g.input(rgb_in.clone());
    let d = g.input(depth_in.clone());
    let out = model.generator.forward(&mut g, x, d)?;
    let opt = |v: Option<Var>| v.map(|v| to_grid(g.value(v))).transpose();
    Ok(GeneratorOutput {
        rgb: to_grid(g.value(out.rgb))?,
        layout: opt(out.layout)?,
        residual: opt(out.residual)?,
        total: to_grid(g.value(out.total))?,
    })
}

/// Floor-plan IoU of the layout recovered from the predicted depth (the
/// layout head, or total depth without one) against the true floor
/// polygon. The camera height is taken from the annotation.
pub fn layout_iou(model: &BipsModel, scene: &RgbdScene<f32>, sensors: &SensorConfig) -> Result<f64> {
    let sample = TrainingSample::from_scene(scene)?;
    let (x, d, _) = generator_inputs(&sample, sensors)?;
    let out = infer(model, &x, &d)?;
    let depth = out.layout.as_ref().unwrap_or(&out.total);
    let pred = extract_floor_polygon(depth, scene.layout.camera_height, EVAL_RAYS, EVAL_DEPRESSION_DEG.to_radians())?;
    layout_iou2d(&pred, &scene.layout.corners_xz)
}

fn stack(parts: Vec<Tensor<f32>>) -> Result<Tensor<f32>> {
    Tensor::stack_batch(&parts)
}

/// Network inputs and targets for a group of samples, each seen through its
/// own sensor configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rgb_in: Tensor<f32>,
    pub depth_in: Tensor<f32>,
    pub rgb: Tensor<f32>,
    pub layout: Tensor<f32>,
    pub residual: Tensor<f32>,
    pub total: Tensor<f32>,
    /// Depth masks applied, one per item.
    pub depth_masks: Vec<ErpGrid<f32>>,
}

impl Batch {
    pub fn new(items: &[(&TrainingSample, SensorConfig)]) -> Result<Self> {
        let mut rgb_in = Vec::with_capacity(items.len());
        let mut depth_in = Vec::with_capacity(items.len());
        let mut depth_masks = Vec::with_capacity(items.len());
        for (s, sensors) in items {
            let (x, d, m) = generator_inputs(s, sensors)?;
            rgb_in.push(x);
            depth_in.push(d);
            depth_masks.push(m);
        }
        Ok(Self {
            rgb_in: stack(rgb_in)?,
            depth_in: stack(depth_in)?,
            rgb: stack(items.iter().map(|(s, _)| s.rgb.clone()).collect())?,
            layout: stack(items.iter().map(|(s, _)| s.layout.clone()).collect())?,
            residual: stack(items.iter().map(|(s, _)| s.residual.clone()).collect())?,
            total: stack(items.iter().map(|(s, _)| s.total.clone()).collect())?,
            depth_masks,
        })
    }
}

struct GeneratorPass {
    out: super::GeneratorVars,
    pixel: super::PixelLossVars,
    adv_g: Var,
    loss: Var,
    fake: Var,
    real: Var,
    gt_total: Var,
}

fn generator_pass<T: Scalar>(
    g: &mut Graph<'_, T>,
    model: &BipsModel,
    batch: &Batch,
    lambda: f64,
) -> Result<GeneratorPass> {
    let x = g.input(batch.rgb_in.cast());
    let d = g.input(batch.depth_in.cast());
    let gt = TargetVars {
        rgb: g.input(batch.rgb.cast()),
        layout: g.input(batch.layout.cast()),
        residual: g.input(batch.residual.cast()),
        total: g.input(batch.total.cast()),
    };
    let out = model.generator.forward(g, x, d)?;
    let pixel = pixel_loss(g, &out, &gt)?;
    let fake = discriminator_input(g, &out)?;
    let real = match model.variant {
        Variant::NoRdal => g.concat(&[gt.rgb, gt.total])?,
        _ => g.concat(&[gt.rgb, gt.layout, gt.residual])?,
    };
    let scores = model.discriminator.forward(g, fake)?;
    let adv_g = lsgan_term(g, &scores, T::one())?;
    let loss = generator_loss(g, &pixel, adv_g, T::of(lambda))?;
    Ok(GeneratorPass {
        out,
        pixel,
        adv_g,
        loss,
        fake,
        real,
        gt_total: gt.total,
    })
}

/// Generator loss terms for `batch`, evaluated with `params` (the model's
/// store, possibly cast to another precision). The discriminator loss is
/// left at 0.
pub fn generator_losses<T: Scalar>(
    model: &BipsModel,
    params: &ParamStore<T>,
    batch: &Batch,
    lambda: f64,
) -> Result<LossRecord> {
    if params.len() != model.params.len() {
        return Err(Error::Shape(format!(
            "parameter store has {} tensors, model needs {}",
            params.len(),
            model.params.len()
        )));
    }
    let mut g = Graph::new(params);
    let pass = generator_pass(&mut g, model, batch, lambda)?;
    record(&g, &pass, batch, 0)
}

fn record<T: Scalar>(g: &Graph<'_, T>, pass: &GeneratorPass, batch: &Batch, step: usize) -> Result<LossRecord> {
    let item = |v| g.value(v).item().map(|x: T| x.as_f64());
    Ok(LossRecord {
        step,
        rgb: item(pass.pixel.rgb)?,
        layout: item(pass.pixel.layout)?,
        residual: item(pass.pixel.residual)?,
        pixel: item(pass.pixel.total)?,
        adv_g: item(pass.adv_g)?,
        generator: item(pass.loss)?,
        discriminator: 0.0,
        invisible_depth_l1: invisible_l1(g.value(pass.out.total), g.value(pass.gt_total), &batch.depth_masks),
    })
}

/// Trains a generator/discriminator pair. Every step draws `batch`
/// samples and a fresh sensor configuration for each, takes one generator
/// step against the current discriminator, then one discriminator step on
/// the same (detached) fakes.
pub fn train(samples: &[TrainingSample], cfg: &TrainConfig) -> Result<(BipsModel, Vec<LossRecord>)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no training samples".into()));
    }
    if cfg.batch == 0 || !(cfg.lambda >= 0.0) || !(cfg.lr > 0.0) {
        return Err(Error::Parameter(format!(
            "batch {} lambda {} lr {} (need batch > 0, lambda >= 0, lr > 0)",
            cfg.batch, cfg.lambda, cfg.lr
        )));
    }
    let height = samples[0].height();
    if samples.iter().any(|s| s.height() != height) {
        return Err(Error::Shape("training samples differ in resolution".into()));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut model = BipsModel::new(cfg.variant, cfg.seed.derive(1));
    let mut g_state = AdamState::new(&model.params);
    let mut d_state = AdamState::new(&model.params);
    let mut rng = cfg.seed.derive(2).rng();
    let sensor_seed = cfg.seed.derive(3);
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let items: Vec<(&TrainingSample, SensorConfig)> = (0..cfg.batch)
            .map(|j| {
                let s = &samples[rng.random_range(0..samples.len())];
                (s, sample_config(sensor_seed.derive((step * cfg.batch + j) as u64)))
            })
            .collect();
        let batch = Batch::new(&items)?;

        let (rec, fake, real, grads) = {
            let mut g = Graph::new(&model.params);
            let pass = generator_pass(&mut g, &model, &batch, cfg.lambda)?;
            let rec = record(&g, &pass, &batch, step)?;
            let grads = g.backward(pass.loss)?.into_params();
            (rec, g.value(pass.fake).clone(), g.value(pass.real).clone(), grads)
        };
        adam_step_range(&mut model.params, &grads, &mut g_state, &adam, model.generator_params.clone())?;

        let (l_d, grads) = {
            let mut g = Graph::new(&model.params);
            let fake = g.input(fake);
            let real = g.input(real);
            let (_, l_d) = adversarial_losses(&mut g, &model.discriminator, fake, real)?;
            (f64::from(g.value(l_d).item()?), g.backward(l_d)?.into_params())
        };
        adam_step_range(&mut model.params, &grads, &mut d_state, &adam, model.discriminator_params.clone())?;
        records.push(LossRecord {
            discriminator: l_d,
            ..rec
        });
        if (step + 1) % 100 == 0 {
            log::debug!("step {}: {:?}", step + 1, records.last());
        }
    }
    Ok((model, records))
}

fn invisible_l1<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, masks: &[ErpGrid<f32>]) -> f64 {
    let plane = masks[0].data().len();
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, mask) in masks.iter().enumerate() {
        for (i, &m) in mask.data().iter().enumerate() {
            if m == 0.0 {
                let k = b * plane + i;
                total += (pred.data()[k] - gt.data()[k]).abs().as_f64();
                count += 1;
            }
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        total / count as f64
    }
}

/// Trailing moving average over `window` entries (fewer at the start),
/// skipping non-finite values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let (sum, n) = values[lo..=i]
                .iter()
                .filter(|v| v.is_finite())
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            if n == 0 {
                f64::NAN
            } else {
                sum / n as f64
            }
        })
        .collect()
}
