//! Procedural rooms with analytic depth, and the layout/residual split.
//!
//! Coordinates are camera-centered meters: y up, z forward, the camera at
//! the origin. A room is a vertical prism over a floor polygon, from
//! `y = -camera_height` to `y = ceiling_height - camera_height`.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{column_longitude, row_latitude};
use crate::grid::ErpGrid;
use crate::scalar::Scalar;
use crate::sensor::Seed;

/// Depths are snapped to multiples of 2^-24 m (about 60 nm). With every
/// depth below 2^8 m the values carry at most 32 significant bits, so in
/// `f64` the difference of two depths and the sum back are both exact.
pub const DEPTH_QUANTUM: f64 = 1.0 / (1u64 << 24) as f64;

#[inline]
pub fn quantize_depth(d: f64) -> f64 {
    (d / DEPTH_QUANTUM).round() * DEPTH_QUANTUM
}

/// Floor-plan annotation of a single room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    /// Floor polygon vertices `(x, z)` in meters, counter-clockwise
    /// (positive shoelace area in `(x, z)`).
    pub corners_xz: Vec<[f64; 2]>,
    pub camera_height: f64,
    pub ceiling_height: f64,
}

/// Axis-aligned furniture box in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Which surface a ray struck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Wall(usize),
    Floor,
    Ceiling,
    Furniture(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub surface: Surface,
    /// Unit normal facing the camera.
    pub normal: [f64; 3],
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub(crate) fn shoelace(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| cross2(poly[i], poly[(i + 1) % n])).sum::<f64>() / 2.0
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (ap[0] - s * ab[0]).hypot(ap[1] - s * ab[1])
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let sub = |p: [f64; 2], q: [f64; 2]| [p[0] - q[0], p[1] - q[1]];
    let d1 = cross2(sub(b, a), sub(c, a));
    let d2 = cross2(sub(b, a), sub(d, a));
    let d3 = cross2(sub(d, c), sub(a, c));
    let d4 = cross2(sub(d, c), sub(b, c));
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0
}

impl SceneAnnotation {
    /// Axis-aligned cuboid room of `size_x` by `size_z` meters centered on
    /// the camera.
    pub fn cuboid(size_x: f64, size_z: f64, camera_height: f64, ceiling_height: f64) -> Self {
        let (x, z) = (size_x / 2.0, size_z / 2.0);
        Self {
            corners_xz: vec![[x, -z], [x, z], [-x, z], [-x, -z]],
            camera_height,
            ceiling_height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let poly = &self.corners_xz;
        if poly.len() < 3 {
            return Err(Error::Annotation(format!(
                "floor polygon needs at least 3 corners, got {}",
                poly.len()
            )));
        }
        if poly.iter().flatten().any(|v| !v.is_finite())
            || !self.camera_height.is_finite()
            || !self.ceiling_height.is_finite()
        {
            return Err(Error::Annotation("non-finite coordinates".into()));
        }
        if !(self.camera_height > 0.0 && self.camera_height < self.ceiling_height) {
            return Err(Error::Annotation(format!(
                "need 0 < camera height ({}) < ceiling height ({})",
                self.camera_height, self.ceiling_height
            )));
        }
        if shoelace(poly) <= 0.0 {
            return Err(Error::Annotation(
                "floor polygon must be counter-clockwise with positive area".into(),
            ));
        }
        let n = poly.len();
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                    return Err(Error::Annotation(format!(
                        "floor polygon edges {i} and {j} intersect"
                    )));
                }
            }
        }
        let origin = [0.0, 0.0];
        let on_edge = (0..n).any(|i| segment_distance(origin, poly[i], poly[(i + 1) % n]) < 1e-9);
        if on_edge || !point_in_polygon(origin, poly) {
            return Err(Error::Annotation(
                "camera must lie strictly inside the floor polygon".into(),
            ));
        }
        Ok(())
    }

    /// Copy of the annotation rotated about the vertical axis so that a
    /// direction at longitude `theta` moves to `theta + angle`.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            corners_xz: self
                .corners_xz
                .iter()
                .map(|&[x, z]| [x * c + z * s, z * c - x * s])
                .collect(),
            ..self.clone()
        }
    }

    fn floor_y(&self) -> f64 {
        -self.camera_height
    }

    fn ceiling_y(&self) -> f64 {
        self.ceiling_height - self.camera_height
    }

    /// First intersection of the ray `t * dir` (unit `dir`) with the shell.
    pub fn cast(&self, dir: [f64; 3]) -> Hit {
        let mut best = Hit {
            distance: f64::INFINITY,
            surface: Surface::Floor,
            normal: [0.0, 1.0, 0.0],
        };
        if dir[1] < 0.0 {
            best.distance = self.floor_y() / dir[1];
        } else if dir[1] > 0.0 {
            best = Hit {
                distance: self.ceiling_y() / dir[1],
                surface: Surface::Ceiling,
                normal: [0.0, -1.0, 0.0],
            };
        }
        let d2 = [dir[0], dir[2]];
        let n = self.corners_xz.len();
        for i in 0..n {
            let p = self.corners_xz[i];
            let q = self.corners_xz[(i + 1) % n];
            let e = [q[0] - p[0], q[1] - p[1]];
            let denom = cross2(d2, e);
            if denom == 0.0 {
                continue;
            }
            let t = cross2(p, e) / denom;
            let s = cross2(p, d2) / denom;
            if t > 0.0 && t < best.distance && (-1e-12..=1.0 + 1e-12).contains(&s) {
                let len = e[0].hypot(e[1]);
                let mut normal = [-e[1] / len, 0.0, e[0] / len];
                if normal[0] * dir[0] + normal[2] * dir[2] > 0.0 {
                    normal = [-normal[0], 0.0, -normal[2]];
                }
                best = Hit {
                    distance: t,
                    surface: Surface::Wall(i),
                    normal,
                };
            }
        }
        best
    }
}

impl Aabb {
    /// Slab-test entry distance of `t * dir`, if the ray hits from outside.
    pub fn intersect(&self, dir: [f64; 3]) -> Option<(f64, [f64; 3])> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut axis = 0;
        for k in 0..3 {
            if dir[k] == 0.0 {
                if 0.0 < self.min[k] || 0.0 > self.max[k] {
                    return None;
                }
                continue;
            }
            let a = self.min[k] / dir[k];
            let b = self.max[k] / dir[k];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if lo > t_near {
                t_near = lo;
                axis = k;
            }
            t_far = t_far.min(hi);
        }
        if t_near > 0.0 && t_near <= t_far {
            let mut normal = [0.0; 3];
            normal[axis] = -dir[axis].signum();
            Some((t_near, normal))
        } else {
            None
        }
    }
}

/// Ray-cast distance to the room shell for every pixel center.
pub fn layout_depth<T: Scalar>(ann: &SceneAnnotation, height: usize, width: usize) -> Result<ErpGrid<T>> {
    ann.validate()?;
    if width != 2 * height {
        return Err(Error::Shape(format!("ERP raster needs W = 2H, got {height}x{width}")));
    }
    let cols: Vec<(f64, f64)> = (0..width).map(|w| column_longitude(w, width).sin_cos()).collect();
    let mut out = ErpGrid::<T>::zeros(height, 1)?;
    for h in 0..height {
        let (sp, cp) = row_latitude(h, height).sin_cos();
        for (w, &(st, ct)) in cols.iter().enumerate() {
            let d = ann.cast([cp * st, sp, cp * ct]).distance;
            out.set(h, w, 0, T::of(quantize_depth(d)));
        }
    }
    Ok(out)
}

/// Splits total depth into the shell depth and the (non-positive) residual
/// left by interior objects.
pub fn decompose_depth<T: Scalar>(
    total: &ErpGrid<T>,
    ann: &SceneAnnotation,
) -> Result<(ErpGrid<T>, ErpGrid<T>)> {
    if total.channels() != 1 {
        return Err(Error::Dimension(format!(
            "depth must have one channel, got {}",
            total.channels()
        )));
    }
    let layout = layout_depth::<T>(ann, total.height(), total.width())?;
    let residual = total.zip_map(&layout, |t, l| t - l)?;
    Ok((layout, residual))
}

/// `max(layout + residual, 0)` elementwise.
pub fn recompose_depth<T: Scalar>(layout: &ErpGrid<T>, residual: &ErpGrid<T>) -> Result<ErpGrid<T>> {
    layout.zip_map(residual, |l, r| (l + r).max(T::zero()))
}

/// Synthetic RGB-D panorama with its ground-truth geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdScene<T> {
    pub rgb: ErpGrid<T>,
    pub depth: ErpGrid<T>,
    pub validity: ErpGrid<T>,
    pub layout: SceneAnnotation,
    pub furniture: Vec<Aabb>,
}

impl<T: Scalar> RgbdScene<T> {
    /// RGB and depth stacked into one 4-channel grid.
    pub fn rgbd(&self) -> Result<ErpGrid<T>> {
        ErpGrid::stack(&[&self.rgb, &self.depth])
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }
}

/// Nearest hit among the shell and the furniture.
pub fn cast_scene(ann: &SceneAnnotation, furniture: &[Aabb], dir: [f64; 3]) -> Hit {
    let mut hit = ann.cast(dir);
    for (i, b) in furniture.iter().enumerate() {
        if let Some((t, normal)) = b.intersect(dir) {
            if t < hit.distance {
                hit = Hit {
                    distance: t,
                    surface: Surface::Furniture(i),
                    normal,
                };
            }
        }
    }
    hit
}

const LIGHT: [f64; 3] = [0.267_261_241_912_424_4, 0.801_783_725_737_273_1, 0.534_522_483_824_848_8];
const AMBIENT: f64 = 0.35;

fn random_room(rng: &mut impl Rng) -> SceneAnnotation {
    loop {
        let k = rng.random_range(4..=8);
        let offset = rng.random_range(0.0..TAU);
        let step = TAU / k as f64;
        let corners: Vec<[f64; 2]> = (0..k)
            .map(|i| {
                let a = offset + step * (i as f64 + rng.random_range(-0.3..0.3));
                let r = rng.random_range(1.5..5.0);
                // longitude convention: x = r sin a, z = r cos a
                [r * a.sin(), r * a.cos()]
            })
            .collect();
        // increasing longitude runs clockwise in (x, z); flip to CCW
        let corners: Vec<[f64; 2]> = corners.into_iter().rev().collect();
        let xs = corners.iter().map(|c| c[0]);
        let zs = corners.iter().map(|c| c[1]);
        let ext_x = xs.clone().fold(f64::MIN, f64::max) - xs.fold(f64::MAX, f64::min);
        let ext_z = zs.clone().fold(f64::MIN, f64::max) - zs.fold(f64::MAX, f64::min);
        let n = corners.len();
        let margin = (0..n)
            .map(|i| segment_distance([0.0, 0.0], corners[i], corners[(i + 1) % n]))
            .fold(f64::MAX, f64::min);
        let camera_height = rng.random_range(1.2..=1.8);
        let ceiling_height = rng.random_range(2.4..=3.5);
        let ann = SceneAnnotation {
            corners_xz: corners,
            camera_height,
            ceiling_height,
        };
        if (3.0..=10.0).contains(&ext_x)
            && (3.0..=10.0).contains(&ext_z)
            && margin > 0.6
            && ann.validate().is_ok()
        {
            return ann;
        }
    }
}

fn random_furniture(rng: &mut impl Rng, ann: &SceneAnnotation) -> Vec<Aabb> {
    let count = rng.random_range(0..=6);
    let poly = &ann.corners_xz;
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for c in poly {
        for k in 0..2 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let floor = -ann.camera_height;
    let mut boxes = Vec::with_capacity(count);
    for _ in 0..count {
        for _attempt in 0..64 {
            let sx = rng.random_range(0.4..1.5);
            let sz = rng.random_range(0.4..1.5);
            let top = rng.random_range(0.4..(ann.ceiling_height - 0.3).min(2.0));
            let cx = rng.random_range(lo[0]..hi[0]);
            let cz = rng.random_range(lo[1]..hi[1]);
            let (x0, x1, z0, z1) = (cx - sx / 2.0, cx + sx / 2.0, cz - sz / 2.0, cz + sz / 2.0);
            let feet = [[x0, z0], [x1, z0], [x1, z1], [x0, z1]];
            let keep_clear = x0 < 0.5 && x1 > -0.5 && z0 < 0.5 && z1 > -0.5;
            if keep_clear || !feet.iter().all(|&p| point_in_polygon(p, poly)) {
                continue;
            }
            boxes.push(Aabb {
                min: [x0, floor, z0],
                max: [x1, floor + top, z1],
            });
            break;
        }
    }
    boxes
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [
        rng.random_range(0.15..0.9),
        rng.random_range(0.15..0.9),
        rng.random_range(0.15..0.9),
    ]
}

/// Generates a furnished room and renders it.
///
/// Rooms have 4 to 8 corners arranged around the camera with extents of 3
/// to 10 m, camera height in [1.2, 1.8] m and ceiling in [2.4, 3.5] m, and
/// up to 6 boxes standing on the floor. Surfaces get flat colors with
/// Lambertian shading under a fixed light direction.
pub fn generate_scene<T: Scalar>(seed: Seed, height: usize, width: usize) -> Result<RgbdScene<T>> {
    let mut rng = seed.rng();
    let ann = random_room(&mut rng);
    let furniture = random_furniture(&mut rng, &ann);
    render_scene(&ann, furniture, &mut rng, height, width)
}

/// Renders a given room and furniture set with random surface colors.
pub fn render_scene<T: Scalar>(
    ann: &SceneAnnotation,
    furniture: Vec<Aabb>,
    rng: &mut impl Rng,
    height: usize,
    width: usize,
) -> Result<RgbdScene<T>> {
    ann.validate()?;
    if width != 2 * height {
        return Err(Error::Shape(format!("ERP raster needs W = 2H, got {height}x{width}")));
    }
    let wall_colors: Vec<[f64; 3]> = (0..ann.corners_xz.len()).map(|_| random_color(rng)).collect();
    let floor_color = random_color(rng);
    let ceiling_color = random_color(rng);
    let box_colors: Vec<[f64; 3]> = (0..furniture.len()).map(|_| random_color(rng)).collect();

    let mut rgb = ErpGrid::<T>::zeros(height, 3)?;
    let mut depth = ErpGrid::<T>::zeros(height, 1)?;
    let cols: Vec<(f64, f64)> = (0..width).map(|w| column_longitude(w, width).sin_cos()).collect();
    for h in 0..height {
        let (sp, cp) = row_latitude(h, height).sin_cos();
        for (w, &(st, ct)) in cols.iter().enumerate() {
            let hit = cast_scene(ann, &furniture, [cp * st, sp, cp * ct]);
            let color = match hit.surface {
                Surface::Wall(i) => wall_colors[i],
                Surface::Floor => floor_color,
                Surface::Ceiling => ceiling_color,
                Surface::Furniture(i) => box_colors[i],
            };
            let lambert = (hit.normal[0] * LIGHT[0] + hit.normal[1] * LIGHT[1] + hit.normal[2] * LIGHT[2]).max(0.0);
            let shade = AMBIENT + (1.0 - AMBIENT) * lambert;
            for (k, c) in color.iter().enumerate() {
                rgb.set(h, w, k, T::of((c * shade).clamp(0.0, 1.0)));
            }
            depth.set(h, w, 0, T::of(quantize_depth(hit.distance)));
        }
    }
    Ok(RgbdScene {
        rgb,
        depth,
        validity: ErpGrid::filled(height, 1, T::one())?,
        layout: ann.clone(),
        furniture,
    })
}

/// A furniture-free room, useful as held-out layout probes.
pub fn generate_empty_room<T: Scalar>(seed: Seed, height: usize, width: usize) -> Result<RgbdScene<T>> {
    let mut rng = seed.rng();
    let ann = random_room(&mut rng);
    render_scene(&ann, Vec::new(), &mut rng, height, width)
}
