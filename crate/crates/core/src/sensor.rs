//! Random sensor rigs and the visibility masks they induce.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{camera_mask, lidar_mask};
use crate::grid::ErpGrid;
use crate::scalar::Scalar;

/// Seed for every stochastic routine in the crate.
///
/// Streams come from ChaCha8 keyed by the seed; [`Seed::derive`] splits
/// independent child seeds with a SplitMix64 finalizer, so a run is fully
/// reproducible from one integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Child seed for sub-task `tag`.
    pub fn derive(self, tag: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    RgbOnly,
    DepthOnly,
    Both,
}

impl Modality {
    pub fn has_rgb(self) -> bool {
        !matches!(self, Modality::DepthOnly)
    }

    pub fn has_depth(self) -> bool {
        !matches!(self, Modality::RgbOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthKind {
    Lidar,
    Perspective,
}

/// Ring of identical pinhole cameras sharing a pitch. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub fov_h: f64,
    pub fov_v: f64,
    pub pitch: f64,
    pub views: usize,
    pub global_yaw: f64,
}

/// Spinning multi-line LiDAR. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarRig {
    pub lower_fov: f64,
    pub upper_fov: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub modality: Modality,
    pub depth_kind: DepthKind,
    pub camera: CameraRig,
    pub lidar: LidarRig,
}

pub const LIDAR_CHANNEL_CHOICES: [usize; 4] = [2, 4, 8, 16];

/// Draws a sensor configuration.
///
/// Cameras: horizontal and vertical FoV uniform in [60, 90] degrees, pitch
/// uniform in [-90, 90] degrees, 1 to 4 views, plus a uniform global yaw.
/// LiDAR: pitch uniform in [-90, 90] degrees, yaw uniform in [0, 360),
/// channel count from {2, 4, 8, 16}, lower and upper FoV each from
/// {eta, 2 eta, 3 eta} degrees. Modality and depth kind are uniform.
pub fn sample_config(seed: Seed) -> SensorConfig {
    let mut rng = seed.rng();
    let modality = match rng.random_range(0..3) {
        0 => Modality::RgbOnly,
        1 => Modality::DepthOnly,
        _ => Modality::Both,
    };
    let depth_kind = if rng.random_bool(0.5) {
        DepthKind::Lidar
    } else {
        DepthKind::Perspective
    };
    let deg = f64::to_radians;
    let camera = CameraRig {
        fov_h: deg(rng.random_range(60.0..=90.0)),
        fov_v: deg(rng.random_range(60.0..=90.0)),
        pitch: deg(rng.random_range(-90.0..=90.0)),
        views: rng.random_range(1..=4),
        global_yaw: rng.random_range(0.0..TAU),
    };
    let pitch = deg(rng.random_range(-90.0..=90.0));
    let yaw = deg(rng.random_range(0.0..360.0));
    let channels = LIDAR_CHANNEL_CHOICES[rng.random_range(0..LIDAR_CHANNEL_CHOICES.len())];
    let eta = channels as f64;
    let lower_fov = deg(eta * rng.random_range(1..=3) as f64);
    let upper_fov = deg(eta * rng.random_range(1..=3) as f64);
    SensorConfig {
        modality,
        depth_kind,
        camera,
        lidar: LidarRig {
            lower_fov,
            upper_fov,
            pitch,
            yaw,
            channels,
        },
    }
}

fn camera_ring_mask<T: Scalar>(rig: &CameraRig, height: usize, width: usize) -> Result<ErpGrid<T>> {
    if rig.views == 0 {
        return Err(Error::Parameter("camera ring needs at least one view".into()));
    }
    let mut union = ErpGrid::<T>::zeros(height, 1)?;
    for k in 0..rig.views {
        let yaw = rig.global_yaw + TAU * k as f64 / rig.views as f64;
        let m = camera_mask::<T>(rig.fov_h, rig.fov_v, rig.pitch, yaw, height, width)?;
        for (u, v) in union.data_mut().iter_mut().zip(m.data()) {
            *u = u.max(*v);
        }
    }
    Ok(union)
}

/// Union of the camera ring's frustum masks.
pub fn compose_rgb_mask<T: Scalar>(cfg: &SensorConfig, height: usize, width: usize) -> Result<ErpGrid<T>> {
    if !cfg.modality.has_rgb() {
        return Err(Error::Usage("RGB mask requested for a depth-only rig".into()));
    }
    camera_ring_mask(&cfg.camera, height, width)
}

/// Depth visibility: the camera-ring geometry for perspective depth
/// sensors, the scan rings for a LiDAR.
pub fn compose_depth_mask<T: Scalar>(cfg: &SensorConfig, height: usize, width: usize) -> Result<ErpGrid<T>> {
    if !cfg.modality.has_depth() {
        return Err(Error::Usage("depth mask requested for an RGB-only rig".into()));
    }
    match cfg.depth_kind {
        DepthKind::Perspective => camera_ring_mask(&cfg.camera, height, width),
        DepthKind::Lidar => {
            let l = &cfg.lidar;
            lidar_mask(l.lower_fov, l.upper_fov, l.pitch, l.yaw, l.channels, height, width)
        }
    }
}

/// Both masks, with an all-zero mask for a missing modality.
pub fn masks_for<T: Scalar>(cfg: &SensorConfig, height: usize, width: usize) -> Result<(ErpGrid<T>, ErpGrid<T>)> {
    let rgb = if cfg.modality.has_rgb() {
        compose_rgb_mask(cfg, height, width)?
    } else {
        ErpGrid::zeros(height, 1)?
    };
    let depth = if cfg.modality.has_depth() {
        compose_depth_mask(cfg, height, width)?
    } else {
        ErpGrid::zeros(height, 1)?
    };
    Ok((rgb, depth))
}

/// Masks an RGB-D panorama into generator inputs.
///
/// Returns `(rgb * rgb_mask ++ rgb_mask, depth * depth_mask ++ depth_mask)`,
/// i.e. a 4-channel and a 2-channel grid.
pub fn apply_masks<T: Scalar>(
    pano: &ErpGrid<T>,
    rgb_mask: &ErpGrid<T>,
    depth_mask: &ErpGrid<T>,
) -> Result<(ErpGrid<T>, ErpGrid<T>)> {
    if pano.channels() < 4 {
        return Err(Error::Dimension(format!(
            "RGB-D panorama needs 4 channels, got {}",
            pano.channels()
        )));
    }
    for m in [rgb_mask, depth_mask] {
        pano.ensure_same_raster(m, "mask vs panorama")?;
        if m.channels() != 1 {
            return Err(Error::Dimension("masks must have one channel".into()));
        }
        if !m.is_binary() {
            return Err(Error::Data("mask values must be 0 or 1".into()));
        }
    }
    let (h, w) = (pano.height(), pano.width());
    let mut rgb = ErpGrid::<T>::zeros(h, 4)?;
    let mut depth = ErpGrid::<T>::zeros(h, 2)?;
    for r in 0..h {
        for c in 0..w {
            let px = pano.pixel(r, c);
            let mr = rgb_mask.get(r, c, 0);
            let md = depth_mask.get(r, c, 0);
            for k in 0..3 {
                rgb.set(r, c, k, px[k] * mr);
            }
            rgb.set(r, c, 3, mr);
            depth.set(r, c, 0, px[3] * md);
            depth.set(r, c, 1, md);
        }
    }
    Ok((rgb, depth))
}
