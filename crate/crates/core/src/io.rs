//! File formats: PNG rasters, TOML manifests and statistics, binary weights.
//!
//! - RGB: 8-bit, 3-channel PNG, values `v / 255`.
//! - Depth: 16-bit grayscale PNG in millimeters, 0 marks an invalid pixel.
//! - Signed depth (residuals): 16-bit grayscale PNG, millimeters offset by
//!   32768.
//! - Masks: 8-bit grayscale PNG, 0 or 255.
//! - Weights: a UTF-8 header terminated by a line `end`, then the tensors
//!   as little-endian `f32` in header order.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageError, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faed::FeatureStats;
use crate::grid::ErpGrid;
use crate::scalar::Scalar;
use crate::scene::SceneAnnotation;
use crate::sensor::SensorConfig;
use crate::tensor::{ParamStore, Tensor};

/// Largest depth a 16-bit millimeter raster can hold.
pub const MAX_DEPTH_M: f64 = 65.535;

fn image_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_error(path, e))
}

fn check_aspect(path: &Path, width: u32, height: u32) -> Result<(usize, usize)> {
    if height == 0 || width != 2 * height {
        return Err(Error::format(
            path,
            format!("panorama must be twice as wide as tall, got {width}x{height}"),
        ));
    }
    Ok((height as usize, width as usize))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_grid_channels<T: Scalar>(grid: &ErpGrid<T>, channels: usize, what: &str) -> Result<()> {
    if grid.channels() != channels {
        return Err(Error::Dimension(format!(
            "{what} raster needs {channels} channel(s), got {}",
            grid.channels()
        )));
    }
    Ok(())
}

pub fn write_rgb<T: Scalar>(path: &Path, rgb: &ErpGrid<T>) -> Result<()> {
    check_grid_channels(rgb, 3, "RGB")?;
    let bytes: Vec<u8> = rgb.data().iter().map(|v| to_u8(v.as_f64())).collect();
    let img = ImageBuffer::<Rgb<u8>, _>::from_raw(rgb.width() as u32, rgb.height() as u32, bytes)
        .expect("buffer matches raster");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

pub fn read_rgb<T: Scalar>(path: &Path) -> Result<ErpGrid<T>> {
    let img = match decode(path)? {
        image::DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(Error::format(
                path,
                format!("expected 8-bit RGB, found {:?}", other.color()),
            ))
        }
    };
    let (h, w) = check_aspect(path, img.width(), img.height())?;
    let data = img.into_raw().into_iter().map(|b| T::of(b as f64 / 255.0)).collect();
    ErpGrid::from_vec(h, w, 3, data)
}

/// Writes depth in millimeters. Pixels with zero validity, non-positive or
/// non-finite depth are stored as 0. Returns the number of pixels clamped
/// to [`MAX_DEPTH_M`].
pub fn write_depth<T: Scalar>(path: &Path, depth: &ErpGrid<T>, validity: Option<&ErpGrid<T>>) -> Result<usize> {
    check_grid_channels(depth, 1, "depth")?;
    if let Some(v) = validity {
        depth.ensure_same_shape(v, "depth validity")?;
    }
    let mut clamped = 0;
    let values: Vec<u16> = depth
        .data()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let d = d.as_f64();
            let valid = validity.is_none_or(|v| v.data()[i] != T::zero());
            if !valid || !d.is_finite() || d <= 0.0 {
                return 0;
            }
            if d > MAX_DEPTH_M {
                clamped += 1;
                return u16::MAX;
            }
            // tiny positive depths stay valid
            ((d * 1000.0).round() as u16).max(1)
        })
        .collect();
    if clamped > 0 {
        log::warn!("{}: {clamped} depth values clamped to {MAX_DEPTH_M} m", path.display());
    }
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, values)
        .expect("buffer matches raster");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_error(path, e))?;
    Ok(clamped)
}

/// Reads depth in meters and the validity mask (stored value != 0).
pub fn read_depth<T: Scalar>(path: &Path) -> Result<(ErpGrid<T>, ErpGrid<T>)> {
    let img = match decode(path)? {
        image::DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(Error::format(
                path,
                format!("expected 16-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    let (h, w) = check_aspect(path, img.width(), img.height())?;
    let raw = img.into_raw();
    let depth = raw.iter().map(|&v| T::of(v as f64 / 1000.0)).collect();
    let valid = raw
        .iter()
        .map(|&v| if v == 0 { T::zero() } else { T::one() })
        .collect();
    Ok((ErpGrid::from_vec(h, w, 1, depth)?, ErpGrid::from_vec(h, w, 1, valid)?))
}

/// Zero point of the signed depth raster, in millimeters.
pub const SIGNED_DEPTH_OFFSET: i32 = 32768;

/// Writes a signed depth map (meters) as offset millimeters. Returns the
/// number of values clamped to the representable range.
pub fn write_signed_depth<T: Scalar>(path: &Path, depth: &ErpGrid<T>) -> Result<usize> {
    check_grid_channels(depth, 1, "signed depth")?;
    let mut clamped = 0;
    let values: Vec<u16> = depth
        .data()
        .iter()
        .map(|d| {
            let mm = (d.as_f64() * 1000.0).round() + SIGNED_DEPTH_OFFSET as f64;
            if !(0.0..=u16::MAX as f64).contains(&mm) {
                clamped += 1;
            }
            // NaN lands on the offset, i.e. zero
            if mm.is_nan() {
                SIGNED_DEPTH_OFFSET as u16
            } else {
                mm.clamp(0.0, u16::MAX as f64) as u16
            }
        })
        .collect();
    if clamped > 0 {
        log::warn!("{}: {clamped} signed depth values clamped", path.display());
    }
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, values)
        .expect("buffer matches raster");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_error(path, e))?;
    Ok(clamped)
}

pub fn read_signed_depth<T: Scalar>(path: &Path) -> Result<ErpGrid<T>> {
    let img = match decode(path)? {
        image::DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(Error::format(
                path,
                format!("expected 16-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    let (h, w) = check_aspect(path, img.width(), img.height())?;
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| T::of((v as i32 - SIGNED_DEPTH_OFFSET) as f64 / 1000.0))
        .collect();
    ErpGrid::from_vec(h, w, 1, data)
}

pub fn write_mask<T: Scalar>(path: &Path, mask: &ErpGrid<T>) -> Result<()> {
    check_grid_channels(mask, 1, "mask")?;
    if !mask.is_binary() {
        return Err(Error::Data("mask is not binary".into()));
    }
    let bytes: Vec<u8> = mask
        .data()
        .iter()
        .map(|&v| if v == T::zero() { 0 } else { 255 })
        .collect();
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer matches raster");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

/// Reads a mask; any nonzero byte is 1.
pub fn read_mask<T: Scalar>(path: &Path) -> Result<ErpGrid<T>> {
    let img = match decode(path)? {
        image::DynamicImage::ImageLuma8(img) => img,
        other => {
            return Err(Error::format(
                path,
                format!("expected 8-bit grayscale mask, found {:?}", other.color()),
            ))
        }
    };
    let (h, w) = check_aspect(path, img.width(), img.height())?;
    let data = img
        .into_raw()
        .into_iter()
        .map(|b| if b == 0 { T::zero() } else { T::one() })
        .collect();
    ErpGrid::from_vec(h, w, 1, data)
}

/// One scene of a dataset. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_rgb_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_depth_path: Option<PathBuf>,
    pub layout: SceneAnnotation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_config: Option<SensorConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
}

/// A manifest entry loaded into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEntry<T> {
    pub id: String,
    pub rgb: ErpGrid<T>,
    pub depth: ErpGrid<T>,
    pub validity: ErpGrid<T>,
    pub layout: SceneAnnotation,
}

impl<T: Scalar> LoadedEntry<T> {
    pub fn rgbd(&self) -> Result<ErpGrid<T>> {
        ErpGrid::stack(&[&self.rgb, &self.depth])
    }
}

impl Manifest {
    fn check_ids(&self, path: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::format(path, format!("duplicate entry id {:?}", e.id)));
            }
        }
        Ok(())
    }

    /// Loads every entry's rasters; `base` is the manifest directory.
    pub fn load_all<T: Scalar>(&self, base: &Path) -> Result<Vec<LoadedEntry<T>>> {
        self.entries
            .iter()
            .map(|e| {
                let rgb = read_rgb(&base.join(&e.rgb_path))?;
                let (depth, validity) = read_depth(&base.join(&e.depth_path))?;
                rgb.ensure_same_raster(&depth, "rgb and depth")?;
                Ok(LoadedEntry {
                    id: e.id.clone(),
                    rgb,
                    depth,
                    validity,
                    layout: e.layout.clone(),
                })
            })
            .collect()
    }
}

/// Reads a manifest and checks that ids are unique and that every
/// referenced file exists.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    manifest.check_ids(path)?;
    let base = manifest_dir(path);
    for e in &manifest.entries {
        let files = [Some(&e.rgb_path), Some(&e.depth_path), e.mask_rgb_path.as_ref(), e.mask_depth_path.as_ref()];
        for f in files.into_iter().flatten() {
            let full = base.join(f);
            if !full.is_file() {
                return Err(Error::format(
                    path,
                    format!("entry {:?}: missing file {}", e.id, full.display()),
                ));
            }
        }
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    manifest.check_ids(path)?;
    write_toml(path, manifest)
}

/// Directory that relative manifest paths resolve against.
pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Serializes any value to a TOML file.
pub fn write_toml<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    dim: usize,
    count: usize,
    mean: Vec<f64>,
    cov: Vec<f64>,
}

/// Writes statistics; floats use shortest round-trip decimals.
pub fn write_stats(path: &Path, stats: &FeatureStats<f64>) -> Result<()> {
    stats.validate()?;
    write_toml(
        path,
        &StatsFile {
            dim: stats.dim,
            count: stats.count,
            mean: stats.mean.clone(),
            cov: stats.cov.clone(),
        },
    )
}

pub fn read_stats(path: &Path) -> Result<FeatureStats<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: StatsFile = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let stats = FeatureStats {
        dim: f.dim,
        count: f.count,
        mean: f.mean,
        cov: f.cov,
    };
    stats.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(stats)
}

const WEIGHTS_MAGIC: &str = "panorad-weights 1";

/// Named `f32` tensors plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub architecture: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl WeightsFile {
    pub fn from_store(architecture: &str, store: &ParamStore<f32>) -> Self {
        Self {
            architecture: architecture.to_string(),
            tensors: store
                .names()
                .iter()
                .cloned()
                .zip(store.values().iter().cloned())
                .collect(),
        }
    }

    /// Copies tensors into `store`, which must expect the same
    /// architecture, names and shapes.
    pub fn load_into(&self, architecture: &str, store: &mut ParamStore<f32>) -> Result<()> {
        if self.architecture != architecture {
            return Err(Error::Data(format!(
                "weights are for {:?}, expected {architecture:?}",
                self.architecture
            )));
        }
        if self.tensors.len() != store.len() {
            return Err(Error::Data(format!(
                "{} tensors in file, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (i, (name, t)) in self.tensors.iter().enumerate() {
            if &store.names()[i] != name || store.values()[i].shape() != t.shape() {
                return Err(Error::Data(format!(
                    "tensor {i}: file has {name} {:?}, model has {} {:?}",
                    t.shape(),
                    store.names()[i],
                    store.values()[i].shape()
                )));
            }
        }
        for (dst, (_, t)) in store.values_mut().iter_mut().zip(&self.tensors) {
            *dst = t.clone();
        }
        Ok(())
    }
}

pub fn write_weights(path: &Path, weights: &WeightsFile) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{WEIGHTS_MAGIC}").expect("vec write");
    writeln!(buf, "architecture {}", weights.architecture).expect("vec write");
    for (name, t) in &weights.tensors {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Data(format!("tensor name {name:?} must be a single word")));
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(buf, "tensor {name} {}", dims.join(" ")).expect("vec write");
    }
    writeln!(buf, "end").expect("vec write");
    for (_, t) in &weights.tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<WeightsFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut lineno = 0;
    let mut next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let rest = &bytes[*pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(path, "truncated header"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::format(path, "header is not UTF-8"))?
            .to_string();
        *pos += end + 1;
        lineno += 1;
        Ok((lineno, line))
    };
    let (_, magic) = next_line(&mut pos)?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::format(path, format!("line 1: expected {WEIGHTS_MAGIC:?}")));
    }
    let (n, arch) = next_line(&mut pos)?;
    let architecture = arch
        .strip_prefix("architecture ")
        .ok_or_else(|| Error::format(path, format!("line {n}: expected `architecture <name>`")))?
        .to_string();
    let mut shapes = Vec::new();
    loop {
        let (n, line) = next_line(&mut pos)?;
        if line == "end" {
            break;
        }
        let mut words = line.split_whitespace();
        if words.next() != Some("tensor") {
            return Err(Error::format(path, format!("line {n}: expected `tensor` or `end`")));
        }
        let name = words
            .next()
            .ok_or_else(|| Error::format(path, format!("line {n}: tensor without a name")))?
            .to_string();
        let shape: Vec<usize> = words
            .map(|w| w.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::format(path, format!("line {n}: tensor {name}: bad dimension: {e}")))?;
        shapes.push((name, shape));
    }
    let payload = &bytes[pos..];
    let expected: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>() * 4).sum();
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("payload has {} bytes, header declares {expected}", payload.len()),
        ));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let tensors = shapes
        .into_iter()
        .map(|(name, shape)| {
            let n = shape.iter().product();
            let data: Vec<f32> = floats.by_ref().take(n).collect();
            Tensor::from_vec(&shape, data).map(|t| (name, t))
        })
        .collect::<Result<_>>()?;
    Ok(WeightsFile {
        architecture,
        tensors,
    })
}
