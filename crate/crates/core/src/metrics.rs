//! Full-reference image and depth metrics, plus floor-plan layout metrics.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::row_latitude;
use crate::grid::ErpGrid;
use crate::scalar::Scalar;
use crate::scene::{point_in_polygon, shoelace};

/// Reported when prediction and reference are identical.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
pub const IOU_RASTER: usize = 512;

/// Metrics present only when their inputs were supplied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub absrel: Option<f64>,
    /// Millimeters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou2d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corner_err: Option<f64>,
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(pred: &ErpGrid<T>, gt: &ErpGrid<T>) -> Result<f64> {
    pred.ensure_same_shape(gt, "psnr")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| {
            let d = p.as_f64() - g.as_f64();
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sum / pred.data().len() as f64))
}

fn channel_mean<T: Scalar>(g: &ErpGrid<T>) -> Vec<f64> {
    let c = g.channels();
    g.data()
        .chunks_exact(c)
        .map(|px| px.iter().map(|v| v.as_f64()).sum::<f64>() / c as f64)
        .collect()
}

/// Gaussian-window filter: circular along width, only rows where the
/// window fits vertically.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let mut horiz = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xs = (x + w + i - r) % w;
                acc += kv * img[y * w + xs];
            }
            horiz[y * w + x] = acc;
        }
    }
    let out_h = h + 1 - k.len();
    let mut out = vec![0.0; out_h * w];
    for y in 0..out_h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * horiz[(y + i) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn ssim_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - r;
            (-0.5 * x * x / (SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean structural similarity of the channel-mean luminance, 11x11
/// Gaussian window with sigma 1.5, wrapping along longitude.
pub fn ssim<T: Scalar>(pred: &ErpGrid<T>, gt: &ErpGrid<T>) -> Result<f64> {
    pred.ensure_same_shape(gt, "ssim")?;
    let (h, w) = (pred.height(), pred.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let x = channel_mean(pred);
    let y = channel_mean(gt);
    let k = ssim_kernel();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &k);
    let my = filter_valid(&y, h, w, &k);
    let mxx = filter_valid(&prod(&x, &x), h, w, &k);
    let myy = filter_valid(&prod(&y, &y), h, w, &k);
    let mxy = filter_valid(&prod(&x, &y), h, w, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cov = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

fn valid_pairs<'a, T: Scalar>(
    pred: &'a ErpGrid<T>,
    gt: &'a ErpGrid<T>,
    validity: Option<&'a ErpGrid<T>>,
) -> Result<Vec<(f64, f64)>> {
    pred.ensure_same_shape(gt, "depth")?;
    if let Some(v) = validity {
        pred.ensure_same_shape(v, "validity")?;
    }
    let pairs: Vec<(f64, f64)> = pred
        .data()
        .iter()
        .zip(gt.data())
        .enumerate()
        .filter(|(i, _)| validity.is_none_or(|v| v.data()[*i] != T::zero()))
        .map(|(_, (p, g))| (p.as_f64(), g.as_f64()))
        .collect();
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no valid depth pixels".into()));
    }
    Ok(pairs)
}

/// Mean of `|pred - gt| / gt` over valid pixels.
pub fn absrel<T: Scalar>(pred: &ErpGrid<T>, gt: &ErpGrid<T>, validity: Option<&ErpGrid<T>>) -> Result<f64> {
    let pairs = valid_pairs(pred, gt, validity)?;
    if pairs.iter().any(|&(_, g)| g <= 0.0) {
        return Err(Error::Data("reference depth must be positive on valid pixels".into()));
    }
    Ok(pairs.iter().map(|(p, g)| (p - g).abs() / g).sum::<f64>() / pairs.len() as f64)
}

/// Root mean squared depth error over valid pixels, in millimeters.
pub fn rmse<T: Scalar>(pred: &ErpGrid<T>, gt: &ErpGrid<T>, validity: Option<&ErpGrid<T>>) -> Result<f64> {
    let pairs = valid_pairs(pred, gt, validity)?;
    let mse = pairs.iter().map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pairs.len() as f64;
    Ok(mse.sqrt() * 1000.0)
}

/// Intersection over union of two floor polygons, rasterized on a
/// 512x512 grid spanning their joint bounding box.
pub fn layout_iou2d(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    for p in [a, b] {
        if p.len() < 3 || shoelace(p).abs() < 1e-12 {
            return Err(Error::Annotation("degenerate polygon".into()));
        }
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in a.iter().chain(b) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let n = IOU_RASTER;
    let (dx, dz) = ((hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64);
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..n {
        let z = lo[1] + (i as f64 + 0.5) * dz;
        for j in 0..n {
            let q = [lo[0] + (j as f64 + 0.5) * dx, z];
            let (ia, ib) = (point_in_polygon(q, a), point_in_polygon(q, b));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Floor polygon recovered from a depth panorama.
///
/// Rays go out at `n_rays` evenly spaced longitudes, starting
/// `depression` radians below the horizon. A sample lying on the floor
/// plane (`depth * sin(-latitude)` within 0.1% of `camera_height`) says
/// nothing about the wall, so the ray climbs row by row toward the horizon
/// until it meets a wall; the wall point's horizontal distance
/// `depth * cos(latitude)` is exact for vertical walls. Columns are
/// interpolated linearly in distance. The result is counter-clockwise.
pub fn extract_floor_polygon<T: Scalar>(
    depth: &ErpGrid<T>,
    camera_height: f64,
    n_rays: usize,
    depression: f64,
) -> Result<Vec<[f64; 2]>> {
    if depth.channels() != 1 {
        return Err(Error::Dimension(format!("depth has {} channels", depth.channels())));
    }
    if n_rays < 3 || !(0.0..PI / 2.0).contains(&depression) || camera_height <= 0.0 {
        return Err(Error::Parameter(format!(
            "need >= 3 rays, depression in [0, pi/2) and positive camera height; got {n_rays}, {depression}, {camera_height}"
        )));
    }
    let (h, w) = (depth.height(), depth.width());
    let start = (((PI / 2.0 + depression) / PI * h as f64 - 0.5).round() as usize).min(h - 1);
    let column_distance = |col: usize| -> Option<f64> {
        let mut row = start;
        loop {
            let d = depth.get(row, col, 0).as_f64();
            if !d.is_finite() || d <= 0.0 {
                return None;
            }
            let lat = row_latitude(row, h);
            let on_floor = lat < 0.0 && d * (-lat).sin() >= camera_height * (1.0 - 1e-3);
            if !on_floor {
                return Some(d * lat.cos());
            }
            if row == 0 || row_latitude(row - 1, h) >= 0.0 {
                return Some(d * lat.cos());
            }
            row -= 1;
        }
    };
    let distances: Vec<Option<f64>> = (0..w).map(column_distance).collect();
    let mut points = Vec::with_capacity(n_rays);
    let mut invalid = 0;
    for i in 0..n_rays {
        let theta = -PI + TAU * (i as f64 + 0.5) / n_rays as f64;
        let u = (theta + PI) / TAU * w as f64 - 0.5;
        let c0 = u.floor();
        let f = u - c0;
        let a = (c0 as i64).rem_euclid(w as i64) as usize;
        let b = (a + 1) % w;
        let r = match (distances[a], distances[b]) {
            (Some(x), Some(y)) => x * (1.0 - f) + y * f,
            (Some(x), None) if f < 0.5 => x,
            (None, Some(y)) if f >= 0.5 => y,
            _ => {
                invalid += 1;
                continue;
            }
        };
        points.push([r * theta.sin(), r * theta.cos()]);
    }
    if invalid * 10 > n_rays {
        return Err(Error::Data(format!("{invalid} of {n_rays} rays hit invalid depth")));
    }
    // increasing longitude turns clockwise in (x, z)
    points.reverse();
    Ok(points)
}

/// Corner error and whether the two sets had different sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerError {
    pub value: f64,
    pub count_mismatch: bool,
}

/// Mean distance between matched corners over the best cyclic alignment in
/// either orientation, divided by the diagonal of the reference bounding
/// box. With different counts every corner of the smaller set is matched
/// to its nearest counterpart and the result is flagged.
pub fn corner_error(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<CornerError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::InsufficientData("corner sets must be non-empty".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in gt {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let diag = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
    if diag <= 0.0 {
        return Err(Error::Annotation("reference corners span no area".into()));
    }
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    if pred.len() != gt.len() {
        let (small, large) = if pred.len() < gt.len() { (pred, gt) } else { (gt, pred) };
        let total: f64 = small
            .iter()
            .map(|&p| large.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .sum();
        return Ok(CornerError {
            value: total / small.len() as f64 / diag,
            count_mismatch: true,
        });
    }
    let n = gt.len();
    let mut best = f64::INFINITY;
    for shift in 0..n {
        for reversed in [false, true] {
            let total: f64 = (0..n)
                .map(|i| {
                    let j = if reversed { (shift + n - i) % n } else { (shift + i) % n };
                    dist(pred[j], gt[i])
                })
                .sum();
            best = best.min(total / n as f64);
        }
    }
    Ok(CornerError {
        value: best / diag,
        count_mismatch: false,
    })
}
