//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panorad_core::bips::{Discriminator, Generator, Variant};
use panorad_core::faed::FeatureStats;
use panorad_core::scene::{Aabb, SceneAnnotation};
use panorad_core::tensor::nn::{Activation, Conv2d, UpConv};
use panorad_core::tensor::{GradcheckConfig, Graph, Objective, ParamId, ParamStore, Tensor, Var};
use panorad_core::{Result, Scalar, Seed};

/// Fréchet distance through a Cholesky factorization and an SVD:
/// with `C_a = L_a L_aᵀ`, `tr (C_a C_b)^½` is the nuclear norm of
/// `L_aᵀ L_b`.
pub fn frechet_oracle(a: &FeatureStats<f64>, b: &FeatureStats<f64>) -> f64 {
    let n = a.dim;
    let ca = DMatrix::from_row_slice(n, n, &a.cov);
    let cb = DMatrix::from_row_slice(n, n, &b.cov);
    let la = ca.clone().cholesky().expect("SPD").l();
    let lb = cb.clone().cholesky().expect("SPD").l();
    let nuclear: f64 = (la.transpose() * lb).singular_values().iter().sum();
    let mean: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    mean + ca.trace() + cb.trace() - 2.0 * nuclear
}

/// Random SPD matrix `A Aᵀ + 0.1 I` with its random mean, as stats.
pub fn random_stats(rng: &mut ChaCha8Rng, dim: usize) -> FeatureStats<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let cov = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1;
    FeatureStats {
        dim,
        count: 1000,
        mean: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        cov: cov.transpose().as_slice().to_vec(),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn inside(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    // even-odd crossing count along +x
    let mut c = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if x > p[0] {
                c = !c;
            }
        }
    }
    c
}

/// Nearest positive intersection of the ray `t * dir` with every face of
/// the room and the boxes, testing each face as a bounded planar patch.
pub fn brute_force_depth(ann: &SceneAnnotation, boxes: &[Aabb], dir: [f64; 3]) -> f64 {
    let floor = -ann.camera_height;
    let ceiling = ann.ceiling_height - ann.camera_height;
    let mut best = f64::INFINITY;
    let mut consider = |t: f64| {
        if t > 0.0 && t < best {
            best = t;
        }
    };
    for (y, _) in [(floor, 0), (ceiling, 1)] {
        if dir[1] != 0.0 {
            let t = y / dir[1];
            if t > 0.0 && inside([t * dir[0], t * dir[2]], &ann.corners_xz) {
                consider(t);
            }
        }
    }
    let n = ann.corners_xz.len();
    for i in 0..n {
        let p = ann.corners_xz[i];
        let q = ann.corners_xz[(i + 1) % n];
        // wall plane: normal perpendicular to the edge in (x, z)
        let nx = q[1] - p[1];
        let nz = p[0] - q[0];
        let denom = nx * dir[0] + nz * dir[2];
        if denom == 0.0 {
            continue;
        }
        let t = (nx * p[0] + nz * p[1]) / denom;
        let hit = [t * dir[0], t * dir[1], t * dir[2]];
        let e = [q[0] - p[0], q[1] - p[1]];
        let s = ((hit[0] - p[0]) * e[0] + (hit[2] - p[1]) * e[1]) / (e[0] * e[0] + e[1] * e[1]);
        if (-1e-9..=1.0 + 1e-9).contains(&s) && hit[1] >= floor - 1e-9 && hit[1] <= ceiling + 1e-9 {
            consider(t);
        }
    }
    for b in boxes {
        for axis in 0..3 {
            if dir[axis] == 0.0 {
                continue;
            }
            for plane in [b.min[axis], b.max[axis]] {
                let t = plane / dir[axis];
                let hit = [t * dir[0], t * dir[1], t * dir[2]];
                let ok = (0..3)
                    .filter(|&k| k != axis)
                    .all(|k| hit[k] >= b.min[k] - 1e-12 && hit[k] <= b.max[k] + 1e-12);
                if ok {
                    consider(t);
                }
            }
        }
    }
    best
}

/// Unit direction of pixel center `(h, w)`, computed from scratch.
pub fn pixel_direction(h: usize, w: usize, height: usize) -> [f64; 3] {
    use std::f64::consts::PI;
    let width = 2 * height;
    let lat = PI / 2.0 - PI * (h as f64 + 0.5) / height as f64;
    let lon = -PI + 2.0 * PI * (w as f64 + 0.5) / width as f64;
    [lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()]
}

/// Exact distance from the camera to an axis-aligned box room
/// `[-sx/2, sx/2] x [floor, ceiling] x [-sz/2, sz/2]`.
pub fn cuboid_depth(sx: f64, sz: f64, camera_height: f64, ceiling_height: f64, dir: [f64; 3]) -> f64 {
    let bounds = [
        (sx / 2.0, -sx / 2.0),
        (ceiling_height - camera_height, -camera_height),
        (sz / 2.0, -sz / 2.0),
    ];
    (0..3)
        .filter(|&k| dir[k] != 0.0)
        .map(|k| {
            let (hi, lo) = bounds[k];
            if dir[k] > 0.0 {
                hi / dir[k]
            } else {
                lo / dir[k]
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Every differentiable operation, plus the two composite layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Layer {
    Conv { kernel: usize, stride: usize },
    Bias,
    Upsample,
    AvgPool,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    LeakyRelu,
    Relu,
    Sigmoid,
    Abs,
    Square,
    Mean,
    Sum,
    Concat,
    Conv2dLayer,
    UpConvLayer,
}

pub const ALL_LAYERS: [Layer; 21] = [
    Layer::Conv { kernel: 3, stride: 1 },
    Layer::Conv { kernel: 3, stride: 2 },
    Layer::Conv { kernel: 5, stride: 1 },
    Layer::Bias,
    Layer::Upsample,
    Layer::AvgPool,
    Layer::Add,
    Layer::Sub,
    Layer::Mul,
    Layer::Scale,
    Layer::AddScalar,
    Layer::LeakyRelu,
    Layer::Relu,
    Layer::Sigmoid,
    Layer::Abs,
    Layer::Square,
    Layer::Mean,
    Layer::Sum,
    Layer::Concat,
    Layer::Conv2dLayer,
    Layer::UpConvLayer,
];

pub struct LayerObjective {
    layer: Layer,
    a: ParamId,
    b: Option<ParamId>,
    conv: Option<Conv2d>,
    up: Option<UpConv>,
    seed: u64,
}

/// Values in `±[0.1, 1]`, away from activation kinks.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(0.1..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Parameters and objective for one layer: inputs are parameters too, so
/// input gradients are checked alongside weight gradients.
pub fn layer_case(layer: Layer) -> (ParamStore<f64>, LayerObjective) {
    let mut store = ParamStore::new();
    let mut r = rng(99);
    let x_shape = [2, 3, 6, 12];
    let small = [1, 2, 3, 4];
    let (a, b, conv, up) = match layer {
        Layer::Conv { kernel, .. } => {
            let a = store.add("x", away_from_zero(&x_shape, 1));
            let b = store.add("w", away_from_zero(&[4, 3, kernel, kernel], 2));
            (a, Some(b), None, None)
        }
        Layer::Bias => {
            let a = store.add("x", away_from_zero(&x_shape, 1));
            (a, Some(store.add("b", away_from_zero(&[3], 2))), None, None)
        }
        Layer::Upsample | Layer::AvgPool => (store.add("x", away_from_zero(&[1, 2, 4, 8], 1)), None, None, None),
        Layer::Add | Layer::Sub | Layer::Mul => {
            let a = store.add("a", away_from_zero(&small, 1));
            (a, Some(store.add("b", away_from_zero(&small, 2))), None, None)
        }
        Layer::Concat => {
            let a = store.add("a", away_from_zero(&small, 1));
            (a, Some(store.add("b", away_from_zero(&[1, 1, 3, 4], 2))), None, None)
        }
        Layer::Conv2dLayer => {
            let a = store.add("x", away_from_zero(&x_shape, 1));
            let c = Conv2d::new(&mut store, &mut r, "conv", 3, 4, 3, 2, Activation::LeakyRelu);
            (a, None, Some(c), None)
        }
        Layer::UpConvLayer => {
            let a = store.add("x", away_from_zero(&[1, 3, 3, 6], 1));
            let u = UpConv::new(&mut store, &mut r, "up", 3, 2, 3, Activation::Sigmoid);
            (a, None, None, Some(u))
        }
        _ => (store.add("a", away_from_zero(&small, 1)), None, None, None),
    };
    // nonzero biases so bias gradients pass through a real activation
    for v in store.values_mut() {
        if v.shape().len() == 1 {
            *v = away_from_zero(v.shape(), 7);
        }
    }
    (
        store,
        LayerObjective {
            layer,
            a,
            b,
            conv,
            up,
            seed: 50,
        },
    )
}

impl Objective for LayerObjective {
    fn loss<S: Scalar>(&self, g: &mut Graph<'_, S>) -> Result<Var> {
        let a = g.param(self.a);
        let b = self.b.map(|b| g.param(b));
        let out = match self.layer {
            Layer::Conv { kernel, stride } => g.conv2d(a, b.unwrap(), stride, kernel / 2)?,
            Layer::Bias => g.add_bias(a, b.unwrap())?,
            Layer::Upsample => g.upsample2(a)?,
            Layer::AvgPool => g.avg_pool2(a)?,
            Layer::Add => g.add(a, b.unwrap())?,
            Layer::Sub => g.sub(a, b.unwrap())?,
            Layer::Mul => g.mul(a, b.unwrap())?,
            Layer::Scale => g.scale(a, S::of(-1.7)),
            Layer::AddScalar => g.add_scalar(a, S::of(0.3)),
            Layer::LeakyRelu => g.leaky_relu(a, S::of(0.2)),
            Layer::Relu => g.relu(a),
            Layer::Sigmoid => g.sigmoid(a),
            Layer::Abs => g.abs(a),
            Layer::Square => g.square(a),
            Layer::Mean => g.mean(a),
            Layer::Sum => g.sum(a),
            Layer::Concat => g.concat(&[a, b.unwrap()])?,
            Layer::Conv2dLayer => self.conv.unwrap().forward(g, a)?,
            Layer::UpConvLayer => self.up.unwrap().forward(g, a)?,
        };
        let shape = g.value(out).shape().to_vec();
        let w = g.input(away_from_zero(&shape, self.seed).cast());
        let p = g.mul(out, w)?;
        Ok(g.sum(p))
    }
}

/// Linear read-out of every generator head.
pub struct GeneratorObjective {
    pub generator: Generator,
    pub rgb: Tensor<f64>,
    pub depth: Tensor<f64>,
}

impl Objective for GeneratorObjective {
    fn loss<S: Scalar>(&self, g: &mut Graph<'_, S>) -> Result<Var> {
        let x = g.input(self.rgb.cast());
        let d = g.input(self.depth.cast());
        let out = self.generator.forward(g, x, d)?;
        let heads = [Some(out.rgb), out.layout, out.residual, Some(out.total)];
        readout(g, heads.into_iter().flatten().collect(), 40)
    }
}

/// Linear read-out of every discriminator scale.
pub struct DiscriminatorObjective {
    pub discriminator: Discriminator,
    pub x: Tensor<f64>,
}

impl Objective for DiscriminatorObjective {
    fn loss<S: Scalar>(&self, g: &mut Graph<'_, S>) -> Result<Var> {
        let x = g.input(self.x.cast());
        let scores = self.discriminator.forward(g, x)?;
        readout(g, scores, 60)
    }
}

// positive weights: signed ones cancel across thousands of pixels and leave
// single-precision sums dominated by roundoff
fn readout<S: Scalar>(g: &mut Graph<'_, S>, vars: Vec<Var>, seed: u64) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (i, v) in vars.into_iter().enumerate() {
        let shape = g.value(v).shape().to_vec();
        let w = g.input(away_from_zero(&shape, seed + i as u64).map(f64::abs).cast());
        let p = g.mul(v, w)?;
        let p = g.mean(p);
        acc = Some(match acc {
            Some(a) => g.add(a, p)?,
            None => p,
        });
    }
    Ok(acc.expect("at least one output"))
}

/// Masked generator inputs at `height x 2 height` with half the pixels
/// observed.
pub fn generator_case(variant: Variant, height: usize) -> (ParamStore<f64>, GeneratorObjective) {
    let width = 2 * height;
    let mut r = rng(30);
    let mask: Vec<f64> = (0..height * width).map(|_| f64::from(u8::from(r.random_bool(0.5)))).collect();
    let masked = |channels: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng| {
        let mut data: Vec<f64> = (0..channels * height * width)
            .map(|k| r.random_range(lo..hi) * mask[k % (height * width)])
            .collect();
        data.extend_from_slice(&mask);
        Tensor::from_vec(&[1, channels + 1, height, width], data).unwrap()
    };
    let rgb = masked(3, 0.0, 1.0, &mut r);
    let depth = masked(1, 0.5, 6.0, &mut r);
    let mut store = ParamStore::new();
    let generator = Generator::new(&mut store, variant, Seed(17));
    (store, GeneratorObjective { generator, rgb, depth })
}

pub fn discriminator_case(channels: usize, height: usize) -> (ParamStore<f64>, DiscriminatorObjective) {
    let mut store = ParamStore::new();
    let discriminator = Discriminator::new(&mut store, channels, Seed(9));
    let x = away_from_zero(&[1, channels, height, 2 * height], 10).map(f64::abs);
    (store, DiscriminatorObjective { discriminator, x })
}

/// Gradcheck settings for one layer at the given tolerance.
pub fn layer_config(layer: Layer, tolerance: f64) -> GradcheckConfig {
    let composite = matches!(layer, Layer::Conv2dLayer | Layer::UpConvLayer);
    GradcheckConfig {
        // composite layers have activation kinks at data-dependent points
        step: if composite { 1e-6 } else { 1e-5 },
        tolerance,
        ..GradcheckConfig::default()
    }
}

/// Gradcheck settings for whole networks; the small step keeps central
/// differences on one side of every ReLU kink.
pub fn network_config(tolerance: f64) -> GradcheckConfig {
    GradcheckConfig {
        step: 2e-6,
        tolerance,
        max_per_tensor: 4,
        ..GradcheckConfig::default()
    }
}
