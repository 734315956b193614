//! Spherical/pixel mapping and sensor visibility rasterization on ERP grids.
//!
//! Frame convention: y up, z forward. A direction with latitude `phi` and
//! longitude `theta` is the unit vector
//! `(cos phi sin theta, sin phi, cos phi cos theta)`. Pixel centers sit at
//! half-integer offsets so no sample lands on a pole or on the date line.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::grid::ErpGrid;
use crate::scalar::Scalar;

/// A viewing direction on the unit sphere, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalDirection {
    /// In `[-pi/2, pi/2]`, positive up.
    pub latitude: f64,
    /// In `[-pi, pi)`, zero along +z, increasing toward +x.
    pub longitude: f64,
}

impl SphericalDirection {
    pub fn new(latitude: f64, longitude: f64) -> Self {
        Self {
            latitude,
            longitude,
        }
    }

    pub fn to_vector(self) -> [f64; 3] {
        let (sp, cp) = self.latitude.sin_cos();
        let (st, ct) = self.longitude.sin_cos();
        [cp * st, sp, cp * ct]
    }

    /// Direction of a (not necessarily unit) vector. The zero vector maps to
    /// latitude 0, longitude 0.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let horiz = v[0].hypot(v[2]);
        let latitude = v[1].atan2(horiz);
        let mut longitude = v[0].atan2(v[2]);
        if longitude >= PI {
            longitude -= TAU;
        }
        Self {
            latitude,
            longitude,
        }
    }
}

fn check_raster(height: usize, width: usize) -> Result<()> {
    if height == 0 || width != 2 * height {
        return Err(Error::Shape(format!(
            "ERP raster must satisfy W = 2H > 0, got {height}x{width}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn row_latitude(h: usize, height: usize) -> f64 {
    // pi/2 - pi (h + 0.5) / H with an odd integer numerator, so rows h and
    // H - 1 - h get exactly opposite latitudes
    PI * (height as f64 - 2.0 * h as f64 - 1.0) / (2.0 * height as f64)
}

#[inline]
pub(crate) fn column_longitude(w: usize, width: usize) -> f64 {
    -PI + TAU * (w as f64 + 0.5) / width as f64
}

/// Direction through the center of pixel `(h, w)`.
pub fn pixel_to_dir(h: usize, w: usize, height: usize, width: usize) -> Result<SphericalDirection> {
    check_raster(height, width)?;
    if h >= height || w >= width {
        return Err(Error::Index(format!(
            "pixel ({h}, {w}) outside {height}x{width}"
        )));
    }
    Ok(SphericalDirection::new(
        row_latitude(h, height),
        column_longitude(w, width),
    ))
}

/// The pixel containing `dir`; the inverse of [`pixel_to_dir`] on centers.
pub fn dir_to_pixel(dir: SphericalDirection, height: usize, width: usize) -> (usize, usize) {
    let row = ((FRAC_PI_2 - dir.latitude) / PI * height as f64).floor();
    let h = (row.max(0.0) as usize).min(height - 1);
    let col = ((dir.longitude + PI) / TAU * width as f64).floor() as i64;
    let w = col.rem_euclid(width as i64) as usize;
    (h, w)
}

/// Relative solid angle `cos(phi)` of row `h` on an `height`-row grid.
pub fn solid_angle_weight(h: usize, height: usize) -> Result<f64> {
    if h >= height {
        return Err(Error::Index(format!("row {h} outside 0..{height}")));
    }
    Ok(row_latitude(h, height).cos())
}

/// All row weights of a grid at once.
pub fn row_weights(height: usize) -> Vec<f64> {
    (0..height).map(|h| row_latitude(h, height).cos()).collect()
}

/// Fraction of the sphere covered by a one-channel mask, weighting each
/// pixel by its solid angle.
pub fn weighted_coverage<T: Scalar>(mask: &ErpGrid<T>) -> f64 {
    let weights = row_weights(mask.height());
    let mut covered = 0.0;
    let mut total = 0.0;
    for (h, wgt) in weights.iter().enumerate() {
        for w in 0..mask.width() {
            total += wgt;
            if mask.get(h, w, 0) != T::zero() {
                covered += wgt;
            }
        }
    }
    covered / total
}

/// Rotates the panorama about the vertical axis: output column `w` takes
/// input column `(w - shift) mod W`.
pub fn cyclic_shift<T: Scalar>(grid: &ErpGrid<T>, shift: i64) -> ErpGrid<T> {
    let (h, w, c) = (grid.height(), grid.width(), grid.channels());
    let s = shift.rem_euclid(w as i64) as usize;
    if s == 0 {
        return grid.clone();
    }
    let mut out = grid.clone();
    let src = grid.data();
    let dst = out.data_mut();
    for row in 0..h {
        let base = row * w * c;
        // dst[s..] <- src[..w-s], dst[..s] <- src[w-s..]
        dst[base + s * c..base + w * c].copy_from_slice(&src[base..base + (w - s) * c]);
        dst[base..base + s * c].copy_from_slice(&src[base + (w - s) * c..base + w * c]);
    }
    out
}

/// Splits a yaw angle into a whole number of columns plus a remainder
/// below one column, so yaw offsets of whole columns become exact shifts.
fn split_yaw(yaw: f64, width: usize) -> (i64, f64) {
    let step = TAU / width as f64;
    let cols = (yaw / step).round();
    (cols as i64, yaw - cols * step)
}

/// `R_yaw(yaw) * R_pitch(pitch) * v`.
#[inline]
fn sensor_to_world(v: [f64; 3], pitch: (f64, f64), yaw: (f64, f64)) -> [f64; 3] {
    let (sp, cp) = pitch;
    let (sy, cy) = yaw;
    let y = v[1] * cp + v[2] * sp;
    let z = -v[1] * sp + v[2] * cp;
    let x = v[0];
    [x * cy + z * sy, y, -x * sy + z * cy]
}

/// Inverse of [`sensor_to_world`].
#[inline]
fn world_to_sensor(v: [f64; 3], pitch: (f64, f64), yaw: (f64, f64)) -> [f64; 3] {
    let (sp, cp) = pitch;
    let (sy, cy) = yaw;
    let x = v[0] * cy - v[2] * sy;
    let z = v[0] * sy + v[2] * cy;
    let y = v[1];
    [x, y * cp - z * sp, y * sp + z * cp]
}

/// Visibility of a pinhole camera with horizontal/vertical field of view
/// `fov_h`, `fov_v`, pitched by `pitch` above the equator and yawed by `yaw`.
pub fn camera_mask<T: Scalar>(
    fov_h: f64,
    fov_v: f64,
    pitch: f64,
    yaw: f64,
    height: usize,
    width: usize,
) -> Result<ErpGrid<T>> {
    check_raster(height, width)?;
    for (name, fov) in [("horizontal", fov_h), ("vertical", fov_v)] {
        if !(fov > 0.0 && fov < PI) {
            return Err(Error::Parameter(format!(
                "{name} field of view {fov} rad outside (0, pi)"
            )));
        }
    }
    let (shift, rem) = split_yaw(yaw, width);
    let th = (fov_h / 2.0).tan();
    let tv = (fov_v / 2.0).tan();
    let pitch_sc = pitch.sin_cos();
    let yaw_sc = rem.sin_cos();
    let cols: Vec<(f64, f64)> = (0..width).map(|w| column_longitude(w, width).sin_cos()).collect();
    let mut mask = ErpGrid::<T>::zeros(height, 1)?;
    for h in 0..height {
        let (sp, cp) = row_latitude(h, height).sin_cos();
        for (w, &(st, ct)) in cols.iter().enumerate() {
            let d = world_to_sensor([cp * st, sp, cp * ct], pitch_sc, yaw_sc);
            if d[2] > 0.0 && (d[0] / d[2]).abs() <= th && (d[1] / d[2]).abs() <= tv {
                mask.set(h, w, 0, T::one());
            }
        }
    }
    Ok(cyclic_shift(&mask, shift))
}

/// Sensor-frame elevations of the scan rings of an `channels`-line LiDAR.
pub fn lidar_ring_elevations(lower_fov: f64, upper_fov: f64, channels: usize) -> Vec<f64> {
    match channels {
        0 => Vec::new(),
        1 => vec![(upper_fov - lower_fov) / 2.0],
        n => (0..n)
            .map(|i| -lower_fov + (lower_fov + upper_fov) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Scan-ring visibility of a spinning LiDAR with `channels` lines spread
/// over `[-lower_fov, upper_fov]`, pitched by `pitch` and yawed by `yaw`.
///
/// Each ring is sampled at `4W` azimuths and every sample marks the pixel
/// it falls in, giving one-pixel-wide rings.
pub fn lidar_mask<T: Scalar>(
    lower_fov: f64,
    upper_fov: f64,
    pitch: f64,
    yaw: f64,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<ErpGrid<T>> {
    check_raster(height, width)?;
    if channels == 0 {
        return Err(Error::Parameter("LiDAR needs at least one channel".into()));
    }
    if !(lower_fov >= 0.0 && upper_fov >= 0.0) {
        return Err(Error::Parameter(format!(
            "LiDAR field of view must be non-negative, got lower {lower_fov}, upper {upper_fov}"
        )));
    }
    let (shift, rem) = split_yaw(yaw, width);
    let pitch_sc = pitch.sin_cos();
    let yaw_sc = rem.sin_cos();
    let samples = 4 * width;
    let azimuths: Vec<(f64, f64)> = (0..samples)
        .map(|j| (TAU * j as f64 / samples as f64).sin_cos())
        .collect();
    let mut mask = ErpGrid::<T>::zeros(height, 1)?;
    for e in lidar_ring_elevations(lower_fov, upper_fov, channels) {
        let (se, ce) = e.sin_cos();
        for &(sa, ca) in &azimuths {
            let d = sensor_to_world([ce * sa, se, ce * ca], pitch_sc, yaw_sc);
            let (h, w) = dir_to_pixel(SphericalDirection::from_vector(d), height, width);
            mask.set(h, w, 0, T::one());
        }
    }
    Ok(cyclic_shift(&mask, shift))
}
