//! Bi-modal panorama generator, multi-scale patch discriminator and their
//! losses, at desk scale.
//!
//! The generator encodes the masked RGB and depth inputs in separate
//! branches, fuses them in a two-stream encoder-decoder that swaps features
//! at its bottleneck, and decodes RGB, layout depth and residual depth in
//! three heads. Total depth is layout plus residual.

mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faed::DEPTH_SCALE;
use crate::scalar::Scalar;
use crate::sensor::Seed;
use crate::tensor::nn::{Activation, Conv2d, UpConv};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub use train::{
    generator_inputs, generator_losses, infer, layout_iou, moving_average, train, Batch, BipsModel, GeneratorOutput, LossRecord,
    TrainConfig, TrainingSample, EVAL_DEPRESSION_DEG, EVAL_RAYS,
};

/// Cumulative longitudinal stride of the generator.
pub const GENERATOR_STRIDE: usize = 16;
/// Discriminator input: RGB, layout depth, residual depth.
pub const DISCRIMINATOR_CHANNELS: usize = 5;

const IN_KERNELS: [usize; 3] = [7, 3, 3];
const IN_STRIDES: [usize; 3] = [1, 2, 2];
const IN_WIDTHS: [usize; 3] = [16, 32, 32];
const STREAM_WIDTH: usize = 64;
const HEAD_WIDTHS: [usize; 2] = [16, 8];
const DISC_WIDTHS: [usize; 4] = [16, 32, 64, 1];

/// Model variants for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// One fusion stream on the concatenated branch features.
    NoBff,
    /// A single total-depth head instead of layout and residual heads.
    NoRdal,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoBff, Variant::NoRdal];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoBff => "no_bff",
            Variant::NoRdal => "no_rdal",
        }
    }

    pub fn num_heads(self) -> usize {
        match self {
            Variant::NoRdal => 2,
            _ => 3,
        }
    }

    /// Channels the matching discriminator sees.
    pub fn discriminator_channels(self) -> usize {
        match self {
            Variant::NoRdal => 4,
            _ => DISCRIMINATOR_CHANNELS,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown model variant {s:?}")))
    }
}

/// Parses an ablation mode name.
pub fn ablate(mode: &str) -> Result<Variant> {
    mode.parse()
}

/// Constant `(B, C, H, W)` tensor scaling channel `c` by `factors[c]`.
fn channel_scale<T: Scalar>(shape: &[usize], factors: &[f64]) -> Tensor<T> {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut data = Vec::with_capacity(b * c * h * w);
    for _ in 0..b {
        for f in factors.iter().take(c) {
            data.extend(std::iter::repeat_n(T::of(*f), h * w));
        }
    }
    Tensor::from_vec(shape, data).expect("sized")
}

fn check_input<T: Scalar>(g: &Graph<'_, T>, x: Var, channels: usize, what: &str) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = g.value(x).dims4()?;
    if c != channels {
        return Err(Error::Shape(format!("{what} needs {channels} channels, got {c}")));
    }
    Ok((b, h, w))
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Stream {
    down1: Conv2d,
    down2: Conv2d,
    up1: UpConv,
    up2: UpConv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Head {
    up1: UpConv,
    up2: UpConv,
    out: Conv2d,
}

impl Head {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl rand::Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        act: Activation,
    ) -> Self {
        Self {
            up1: UpConv::new(store, rng, &format!("{name}.up1"), in_ch, HEAD_WIDTHS[0], 3, Activation::Relu),
            up2: UpConv::new(store, rng, &format!("{name}.up2"), HEAD_WIDTHS[0], HEAD_WIDTHS[1], 3, Activation::Relu),
            out: Conv2d::new(store, rng, &format!("{name}.out"), HEAD_WIDTHS[1], out_ch, 3, 1, act),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let x = self.up1.forward(g, x)?;
        let x = self.up2.forward(g, x)?;
        self.out.forward(g, x)
    }
}

/// Generator outputs as graph variables. `layout` and `residual` are
/// `None` for [`Variant::NoRdal`], whose single depth head is `total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorVars {
    pub rgb: Var,
    pub layout: Option<Var>,
    pub residual: Option<Var>,
    pub total: Var,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generator {
    pub variant: Variant,
    rgb_in: Vec<Conv2d>,
    depth_in: Vec<Conv2d>,
    streams: Vec<Stream>,
    heads: Vec<Head>,
}

impl Generator {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, variant: Variant, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let branch = |store: &mut ParamStore<T>, rng: &mut rand_chacha::ChaCha8Rng, name: &str, in_ch: usize| {
            let mut prev = in_ch;
            (0..3)
                .map(|i| {
                    let layer = Conv2d::new(
                        store,
                        rng,
                        &format!("{name}{i}"),
                        prev,
                        IN_WIDTHS[i],
                        IN_KERNELS[i],
                        IN_STRIDES[i],
                        Activation::LeakyRelu,
                    );
                    prev = IN_WIDTHS[i];
                    layer
                })
                .collect::<Vec<_>>()
        };
        let rgb_in = branch(store, &mut rng, "g.rgb_in", 4);
        let depth_in = branch(store, &mut rng, "g.depth_in", 2);
        let branch_out = IN_WIDTHS[2];
        let (n_streams, stream_in) = match variant {
            Variant::NoBff => (1, 2 * branch_out),
            _ => (2, branch_out),
        };
        // with two streams each bottleneck sees its own and the other's code
        let bottleneck_in = if n_streams == 2 { 2 * STREAM_WIDTH } else { STREAM_WIDTH };
        let streams = (0..n_streams)
            .map(|s| {
                let name = format!("g.bff{s}");
                Stream {
                    down1: Conv2d::new(store, &mut rng, &format!("{name}.down1"), stream_in, STREAM_WIDTH, 3, 2, Activation::LeakyRelu),
                    down2: Conv2d::new(store, &mut rng, &format!("{name}.down2"), STREAM_WIDTH, STREAM_WIDTH, 3, 2, Activation::LeakyRelu),
                    up1: UpConv::new(store, &mut rng, &format!("{name}.up1"), bottleneck_in, STREAM_WIDTH, 3, Activation::Relu),
                    up2: UpConv::new(store, &mut rng, &format!("{name}.up2"), STREAM_WIDTH, stream_in, 3, Activation::Relu),
                }
            })
            .collect();
        let fused = 2 * branch_out;
        let mut heads = vec![Head::new(store, &mut rng, "g.head_rgb", fused, 3, Activation::Sigmoid)];
        match variant {
            Variant::NoRdal => heads.push(Head::new(store, &mut rng, "g.head_depth", fused, 1, Activation::Identity)),
            _ => {
                heads.push(Head::new(store, &mut rng, "g.head_layout", fused, 1, Activation::Identity));
                heads.push(Head::new(store, &mut rng, "g.head_residual", fused, 1, Activation::Identity));
            }
        }
        Self {
            variant,
            rgb_in,
            depth_in,
            streams,
            heads,
        }
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// `rgb_in` is `(B, 4, H, W)` (masked RGB and its mask), `depth_in`
    /// `(B, 2, H, W)` (masked depth in meters and its mask). `H` must be a
    /// multiple of [`GENERATOR_STRIDE`].
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, rgb_in: Var, depth_in: Var) -> Result<GeneratorVars> {
        let (b, h, w) = check_input(g, rgb_in, 4, "RGB input")?;
        let (bd, hd, wd) = check_input(g, depth_in, 2, "depth input")?;
        if (b, h, w) != (bd, hd, wd) {
            return Err(Error::Shape(format!(
                "RGB input {b}x{h}x{w} vs depth input {bd}x{hd}x{wd}"
            )));
        }
        if h == 0 || h % GENERATOR_STRIDE != 0 || w % GENERATOR_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not a multiple of the generator stride {GENERATOR_STRIDE}"
            )));
        }
        let norm = g.input(channel_scale(&[b, 2, h, w], &[1.0 / DEPTH_SCALE, 1.0]));
        let depth_in = g.mul(depth_in, norm)?;
        let mut fr = rgb_in;
        for layer in &self.rgb_in {
            fr = layer.forward(g, fr)?;
        }
        let mut fd = depth_in;
        for layer in &self.depth_in {
            fd = layer.forward(g, fd)?;
        }
        let fused = match self.variant {
            Variant::NoBff => {
                let x = g.concat(&[fr, fd])?;
                Self::stream_forward(g, &self.streams[0], x)?
            }
            _ => {
                let (s0, s1) = (&self.streams[0], &self.streams[1]);
                let a1 = s0.down1.forward(g, fr)?;
                let a2 = s0.down2.forward(g, a1)?;
                let b1 = s1.down1.forward(g, fd)?;
                let b2 = s1.down2.forward(g, b1)?;
                let ca = g.concat(&[a2, b2])?;
                let cb = g.concat(&[b2, a2])?;
                let ra = Self::decode_stream(g, s0, ca, a1, fr)?;
                let rb = Self::decode_stream(g, s1, cb, b1, fd)?;
                g.concat(&[ra, rb])?
            }
        };
        let rgb = self.heads[0].forward(g, fused)?;
        let meters = T::of(DEPTH_SCALE);
        Ok(match self.variant {
            Variant::NoRdal => {
                let total = self.heads[1].forward(g, fused)?;
                let total = g.scale(total, meters);
                GeneratorVars {
                    rgb,
                    layout: None,
                    residual: None,
                    total,
                }
            }
            _ => {
                let layout = self.heads[1].forward(g, fused)?;
                let layout = g.scale(layout, meters);
                let residual = self.heads[2].forward(g, fused)?;
                let residual = g.scale(residual, meters);
                let total = g.add(layout, residual)?;
                GeneratorVars {
                    rgb,
                    layout: Some(layout),
                    residual: Some(residual),
                    total,
                }
            }
        })
    }

    fn stream_forward<T: Scalar>(g: &mut Graph<'_, T>, s: &Stream, x: Var) -> Result<Var> {
        let d1 = s.down1.forward(g, x)?;
        let d2 = s.down2.forward(g, d1)?;
        Self::decode_stream(g, s, d2, d1, x)
    }

    /// Bottleneck `code` up through the stream with skips from the first
    /// down block and from the stream input.
    fn decode_stream<T: Scalar>(g: &mut Graph<'_, T>, s: &Stream, code: Var, skip: Var, input: Var) -> Result<Var> {
        let u1 = s.up1.forward(g, code)?;
        let u1 = g.add(u1, skip)?;
        let u2 = s.up2.forward(g, u1)?;
        g.add(u2, input)
    }
}

/// Two-scale patch discriminator: the input and its 2x average-pooled
/// copy, each through four stride-2 convolutions to a one-channel score
/// map. Depth channels (from index 3 on) are divided by the depth scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discriminator {
    pub in_channels: usize,
    scales: Vec<Vec<Conv2d>>,
}

impl Discriminator {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, in_channels: usize, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let scales = (0..2)
            .map(|s| {
                let mut prev = in_channels;
                DISC_WIDTHS
                    .iter()
                    .enumerate()
                    .map(|(i, &out)| {
                        let act = if i + 1 == DISC_WIDTHS.len() {
                            Activation::Identity
                        } else {
                            Activation::LeakyRelu
                        };
                        let layer = Conv2d::new(store, &mut rng, &format!("d.s{s}.conv{i}"), prev, out, 3, 2, act);
                        prev = out;
                        layer
                    })
                    .collect()
            })
            .collect();
        Self { in_channels, scales }
    }

    /// Score maps, one per scale.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Vec<Var>> {
        let (b, h, w) = check_input(g, x, self.in_channels, "discriminator input")?;
        let factors: Vec<f64> = (0..self.in_channels)
            .map(|c| if c < 3 { 1.0 } else { 1.0 / DEPTH_SCALE })
            .collect();
        let norm = g.input(channel_scale(&[b, self.in_channels, h, w], &factors));
        let mut x = g.mul(x, norm)?;
        let mut outs = Vec::with_capacity(self.scales.len());
        for (s, layers) in self.scales.iter().enumerate() {
            if s > 0 {
                x = g.avg_pool2(x)?;
            }
            let mut y = x;
            for layer in layers {
                y = layer.forward(g, y)?;
            }
            outs.push(y);
        }
        Ok(outs)
    }
}

/// Pixel losses as graph variables; see [`pixel_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelLossVars {
    pub rgb: Var,
    pub layout: Var,
    pub residual: Var,
    pub total: Var,
}

/// Ground truth as graph inputs: RGB `(B,3,H,W)`, depths `(B,1,H,W)` in
/// meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetVars {
    pub rgb: Var,
    pub layout: Var,
    pub residual: Var,
    pub total: Var,
}

/// Mean absolute errors of RGB, layout depth and residual depth (depths in
/// units of the depth scale) and their sum. For [`Variant::NoRdal`] the
/// `layout` slot holds the total-depth term and `residual` is zero.
pub fn pixel_loss<T: Scalar>(g: &mut Graph<'_, T>, out: &GeneratorVars, gt: &TargetVars) -> Result<PixelLossVars> {
    let inv = T::one() / T::of(DEPTH_SCALE);
    let l1 = |g: &mut Graph<'_, T>, a: Var, b: Var, k: T| -> Result<Var> {
        let d = g.sub(a, b)?;
        let d = g.abs(d);
        let m = g.mean(d);
        Ok(if k == T::one() { m } else { g.scale(m, k) })
    };
    let rgb = l1(g, out.rgb, gt.rgb, T::one())?;
    let (layout, residual) = match (out.layout, out.residual) {
        (Some(lay), Some(res)) => (l1(g, lay, gt.layout, inv)?, l1(g, res, gt.residual, inv)?),
        _ => {
            let lay = l1(g, out.total, gt.total, inv)?;
            let zero = g.input(Tensor::scalar(T::zero()));
            (lay, zero)
        }
    };
    let s = g.add(rgb, layout)?;
    let total = g.add(s, residual)?;
    Ok(PixelLossVars {
        rgb,
        layout,
        residual,
        total,
    })
}

/// Channel concatenation fed to the discriminator: RGB, then layout and
/// residual depth, or total depth for [`Variant::NoRdal`].
pub fn discriminator_input<T: Scalar>(g: &mut Graph<'_, T>, out: &GeneratorVars) -> Result<Var> {
    match (out.layout, out.residual) {
        (Some(l), Some(r)) => g.concat(&[out.rgb, l, r]),
        _ => g.concat(&[out.rgb, out.total]),
    }
}

/// Least-squares adversarial terms: `L_adv_G = 1/2 mean_s mean (D(fake) - 1)^2`
/// and `L_D = 1/2 [mean_s mean (D(real) - 1)^2 + mean_s mean D(fake)^2]`,
/// with `mean_s` the mean over scales.
pub fn adversarial_losses<T: Scalar>(
    g: &mut Graph<'_, T>,
    d: &Discriminator,
    fake: Var,
    real: Var,
) -> Result<(Var, Var)> {
    let fake_scores = d.forward(g, fake)?;
    let real_scores = d.forward(g, real)?;
    let adv_g = lsgan_term(g, &fake_scores, T::one())?;
    let d_real = lsgan_term(g, &real_scores, T::one())?;
    let d_fake = lsgan_term(g, &fake_scores, T::zero())?;
    let l_d = g.add(d_real, d_fake)?;
    Ok((adv_g, l_d))
}

/// `1/2 mean over scales of mean (score - target)^2`.
pub fn lsgan_term<T: Scalar>(g: &mut Graph<'_, T>, scores: &[Var], target: T) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &s in scores {
        let d = g.add_scalar(s, -target);
        let d = g.square(d);
        let m = g.mean(d);
        acc = Some(match acc {
            Some(a) => g.add(a, m)?,
            None => m,
        });
    }
    let acc = acc.ok_or_else(|| Error::Shape("no discriminator scales".into()))?;
    Ok(g.scale(acc, T::of(0.5 / scores.len() as f64)))
}

/// `L_G = lambda * L_pixel + L_adv_G`.
pub fn generator_loss<T: Scalar>(g: &mut Graph<'_, T>, pixel: &PixelLossVars, adv_g: Var, lambda: T) -> Result<Var> {
    let weighted = g.scale(pixel.total, lambda);
    g.add(weighted, adv_g)
}
