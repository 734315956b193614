//! Disturbances with a severity level in `0..=4`, applied to either the RGB
//! or the depth channel of a scene.
//!
//! For a fixed seed every level draws the same random numbers and only the
//! magnitude changes, so the corrupted images are nested in severity.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ErpGrid;
use crate::scalar::Scalar;
use crate::scene::RgbdScene;
use crate::sensor::Seed;

pub const MAX_LEVEL: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianBlur,
    GaussianNoise,
    UniformPatches,
    Swirl,
    SaltPepper,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussianBlur,
        CorruptionKind::GaussianNoise,
        CorruptionKind::UniformPatches,
        CorruptionKind::Swirl,
        CorruptionKind::SaltPepper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::UniformPatches => "uniform_patches",
            CorruptionKind::Swirl => "swirl",
            CorruptionKind::SaltPepper => "salt_pepper",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown corruption kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Rgb,
    Depth,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Rgb, Target::Depth];

    pub fn name(self) -> &'static str {
        match self {
            Target::Rgb => "rgb",
            Target::Depth => "depth",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown corruption target {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub level: u8,
    pub target: Target,
    pub seed: Seed,
}

/// Applies `c` to the targeted channel of `scene`; everything else is
/// copied unchanged.
pub fn corrupt<T: Scalar>(scene: &RgbdScene<T>, c: &Corruption) -> Result<RgbdScene<T>> {
    let mut out = scene.clone();
    match c.target {
        Target::Rgb => out.rgb = corrupt_grid(&scene.rgb, c, (0.0, 1.0))?,
        Target::Depth => {
            let range = value_range(&scene.depth, Some(&scene.validity));
            out.depth = corrupt_grid(&scene.depth, c, range)?;
        }
    }
    Ok(out)
}

/// `(min, max)` over pixels with nonzero validity; `(0, 0)` if none.
pub fn value_range<T: Scalar>(grid: &ErpGrid<T>, validity: Option<&ErpGrid<T>>) -> (f64, f64) {
    let c = grid.channels();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, v) in grid.data().iter().enumerate() {
        if validity.is_some_and(|m| m.data()[i / c] == T::zero()) {
            continue;
        }
        lo = lo.min(v.as_f64());
        hi = hi.max(v.as_f64());
    }
    if lo > hi {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// Corrupts every channel of `grid`. `range` is the nominal value range:
/// it scales the noise, bounds the output and provides the salt and
/// pepper values and the patch fill distribution.
pub fn corrupt_grid<T: Scalar>(grid: &ErpGrid<T>, c: &Corruption, range: (f64, f64)) -> Result<ErpGrid<T>> {
    if c.level > MAX_LEVEL {
        return Err(Error::Parameter(format!("corruption level {} outside 0..={MAX_LEVEL}", c.level)));
    }
    if !(range.0 <= range.1) {
        return Err(Error::Parameter(format!("invalid value range {range:?}")));
    }
    if c.level == 0 {
        return Ok(grid.clone());
    }
    let level = c.level as f64;
    let mut rng = c.seed.rng();
    Ok(match c.kind {
        CorruptionKind::GaussianBlur => gaussian_blur(grid, level * 0.01 * grid.width() as f64),
        CorruptionKind::GaussianNoise => {
            let sigma = level * 0.05 * (range.1 - range.0);
            let mut out = grid.clone();
            for v in out.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = T::of((v.as_f64() + sigma * z).clamp(range.0, range.1));
            }
            out
        }
        CorruptionKind::UniformPatches => uniform_patches(grid, c.level as usize * 3, range, &mut rng),
        CorruptionKind::Swirl => swirl(grid, level * 0.2, &mut rng),
        CorruptionKind::SaltPepper => {
            let p = level * 0.05;
            let mut out = grid.clone();
            let ch = grid.channels();
            for px in out.data_mut().chunks_exact_mut(ch) {
                let u: f64 = rng.random();
                let salt: bool = rng.random();
                if u < p {
                    let v = T::of(if salt { range.1 } else { range.0 });
                    px.fill(v);
                }
            }
            out
        }
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur, circular along longitude and edge-clamped along
/// latitude.
pub fn gaussian_blur<T: Scalar>(grid: &ErpGrid<T>, sigma: f64) -> ErpGrid<T> {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, c) = (grid.height(), grid.width(), grid.channels());
    let mut tmp = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xs = (x as isize + i as isize - r).rem_euclid(w as isize) as usize;
                    acc += kv * grid.get(y, xs, ch).as_f64();
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = grid.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let ys = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[(ys * w + x) * c + ch];
                }
                out.set(y, x, ch, T::of(acc));
            }
        }
    }
    out
}

fn uniform_patches<T: Scalar>(grid: &ErpGrid<T>, count: usize, range: (f64, f64), rng: &mut impl Rng) -> ErpGrid<T> {
    let (h, w) = (grid.height(), grid.width());
    let max_count = MAX_LEVEL as usize * 3;
    // Draw every patch a maximal level would use, then paint the first
    // `count` with earlier patches on top, so raising the level only adds
    // paint where the image was still clean.
    let patches: Vec<(usize, usize, usize, usize, f64)> = (0..max_count)
        .map(|_| {
            let pw = ((rng.random_range(0.05..=0.15) * w as f64).round() as usize).max(1);
            let ph = ((rng.random_range(0.05..=0.15) * w as f64).round() as usize).clamp(1, h);
            let x0 = rng.random_range(0..w);
            let y0 = rng.random_range(0..=h - ph);
            let fill = range.0 + (range.1 - range.0) * rng.random::<f64>();
            (x0, y0, pw, ph, fill)
        })
        .collect();
    let mut out = grid.clone();
    for &(x0, y0, pw, ph, fill) in patches[..count].iter().rev() {
        for y in y0..y0 + ph {
            for dx in 0..pw {
                let x = (x0 + dx) % w;
                for ch in 0..grid.channels() {
                    out.set(y, x, ch, T::of(fill));
                }
            }
        }
    }
    out
}

/// Rotates content around a random center by `strength * exp(-rho / R)`,
/// `rho` the pixel distance to the center and `R = H / 4`.
fn swirl<T: Scalar>(grid: &ErpGrid<T>, strength: f64, rng: &mut impl Rng) -> ErpGrid<T> {
    let (h, w, c) = (grid.height(), grid.width(), grid.channels());
    let cy = rng.random_range(0.25..0.75) * h as f64;
    let cx = rng.random_range(0.0..1.0) * w as f64;
    let radius = 0.25 * h as f64;
    let mut out = grid.clone();
    for y in 0..h {
        for x in 0..w {
            let py = y as f64 + 0.5 - cy;
            let mut px = x as f64 + 0.5 - cx;
            // nearest horizontal offset on the wrapped axis
            px -= (px / w as f64).round() * w as f64;
            let rho = py.hypot(px);
            let theta = strength * (-rho / radius).exp();
            let (s, co) = theta.sin_cos();
            let sx = cx + co * px - s * py - 0.5;
            let sy = cy + s * px + co * py - 0.5;
            for ch in 0..c {
                out.set(y, x, ch, T::of(bilinear(grid, sy, sx, ch)));
            }
        }
    }
    out
}

fn bilinear<T: Scalar>(grid: &ErpGrid<T>, y: f64, x: f64, ch: usize) -> f64 {
    let (h, w) = (grid.height() as isize, grid.width() as isize);
    let y = y.clamp(0.0, (h - 1) as f64);
    let y0 = y.floor() as isize;
    let y1 = (y0 + 1).min(h - 1);
    let fy = y - y0 as f64;
    let x0f = x.floor();
    let fx = x - x0f;
    let x0 = (x0f as isize).rem_euclid(w);
    let x1 = (x0 + 1).rem_euclid(w);
    let at = |yy: isize, xx: isize| grid.get(yy as usize, xx as usize, ch).as_f64();
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Mean absolute difference between two equally shaped grids.
pub fn mean_abs_deviation<T: Scalar>(a: &ErpGrid<T>, b: &ErpGrid<T>) -> Result<f64> {
    a.ensure_same_shape(b, "deviation")?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .sum();
    Ok(total / a.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cyclic_shift;
    use crate::scene::generate_scene;

    fn scene() -> RgbdScene<f32> {
        generate_scene(Seed(11), 64, 128).unwrap()
    }

    fn make(kind: CorruptionKind, level: u8, target: Target) -> Corruption {
        Corruption {
            kind,
            level,
            target,
            seed: Seed(3),
        }
    }

    #[test]
    fn level_zero_is_identity() {
        let s = scene();
        for kind in CorruptionKind::ALL {
            for target in Target::ALL {
                assert_eq!(corrupt(&s, &make(kind, 0, target)).unwrap(), s);
            }
        }
    }

    #[test]
    fn salt_pepper_fraction() {
        let s = scene();
        let out = corrupt(&s, &make(CorruptionKind::SaltPepper, 2, Target::Rgb)).unwrap();
        let changed = (0..64)
            .flat_map(|h| (0..128).map(move |w| (h, w)))
            .filter(|&(h, w)| out.rgb.pixel(h, w) != s.rgb.pixel(h, w))
            .count();
        let frac = changed as f64 / (64.0 * 128.0);
        assert!((frac - 0.10).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn target_isolation() {
        let s = scene();
        for kind in CorruptionKind::ALL {
            let d = corrupt(&s, &make(kind, 3, Target::Depth)).unwrap();
            assert_eq!(d.rgb, s.rgb);
            assert_ne!(d.depth, s.depth, "{kind}");
            let r = corrupt(&s, &make(kind, 3, Target::Rgb)).unwrap();
            assert_eq!(r.depth, s.depth);
            assert_ne!(r.rgb, s.rgb, "{kind}");
        }
    }

    #[test]
    fn invalid_level_rejected() {
        let err = corrupt(&scene(), &make(CorruptionKind::Swirl, 5, Target::Rgb)).unwrap_err();
        assert!(err.is_usage());
        assert!("blur".parse::<CorruptionKind>().is_err());
        assert_eq!("swirl".parse::<CorruptionKind>().unwrap(), CorruptionKind::Swirl);
    }

    #[test]
    fn severity_is_monotone() {
        for seed in 0..32u64 {
            let s: RgbdScene<f32> = generate_scene(Seed(100 + seed), 32, 64).unwrap();
            for kind in CorruptionKind::ALL {
                for target in Target::ALL {
                    let mut prev = 0.0;
                    for level in 1..=MAX_LEVEL {
                        let c = Corruption {
                            kind,
                            level,
                            target,
                            seed: Seed(seed),
                        };
                        let out = corrupt(&s, &c).unwrap();
                        let dev = match target {
                            Target::Rgb => mean_abs_deviation(&out.rgb, &s.rgb).unwrap(),
                            Target::Depth => mean_abs_deviation(&out.depth, &s.depth).unwrap(),
                        };
                        assert!(dev >= prev, "{kind} {target} seed {seed} level {level}: {dev} < {prev}");
                        prev = dev;
                    }
                }
            }
        }
    }

    #[test]
    fn blur_commutes_with_shift() {
        let s = scene();
        for k in [1i64, 5, 64] {
            let a = gaussian_blur(&cyclic_shift(&s.rgb, k), 2.56);
            let b = cyclic_shift(&gaussian_blur(&s.rgb, 2.56), k);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let g = ErpGrid::filled(16, 2, 0.25f64).unwrap();
        let b = gaussian_blur(&g, 3.0);
        assert!(b.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn deterministic() {
        let s = scene();
        for kind in CorruptionKind::ALL {
            let c = make(kind, 4, Target::Rgb);
            assert_eq!(corrupt(&s, &c).unwrap(), corrupt(&s, &c).unwrap());
        }
    }
}
