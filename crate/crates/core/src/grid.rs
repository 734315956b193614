//! Equirectangular rasters.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An `H x W x C` raster covering the full sphere, with `W = 2H`.
///
/// Samples are stored row-major with channels interleaved: the value at row
/// `h`, column `w`, channel `c` lives at `(h * W + w) * C + c`. Row 0 is the
/// top (north) row, column 0 starts at longitude `-pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpGrid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> ErpGrid<T> {
    pub fn zeros(height: usize, channels: usize) -> Result<Self> {
        Self::filled(height, channels, T::zero())
    }

    pub fn filled(height: usize, channels: usize, value: T) -> Result<Self> {
        if height == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "grid needs positive height and channels, got H={height} C={channels}"
            )));
        }
        let width = 2 * height;
        Ok(Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        })
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || channels == 0 || width != 2 * height {
            return Err(Error::Shape(format!(
                "ERP grid must satisfy W = 2H with positive sizes, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "data length {} != {height}*{width}*{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(h, w, c)` at every sample.
    pub fn from_fn(
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut g = Self::zeros(height, channels)?;
        for h in 0..g.height {
            for w in 0..g.width {
                for c in 0..channels {
                    let i = g.index(h, w, c);
                    g.data[i] = f(h, w, c);
                }
            }
        }
        Ok(g)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        debug_assert!(h < self.height && w < self.width && c < self.channels);
        (h * self.width + w) * self.channels + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> T {
        self.data[self.index(h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, c: usize, v: T) {
        let i = self.index(h, w, c);
        self.data[i] = v;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, h: usize, w: usize) -> &[T] {
        let i = self.index(h, w, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    /// Same-resolution check ignoring channel count.
    pub(crate) fn ensure_same_raster(&self, other: &Self, what: &str) -> Result<()> {
        if self.height == other.height && self.width == other.width {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Copies channels `range` into a new grid.
    pub fn select_channels(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.channels {
            return Err(Error::Dimension(format!(
                "channel range {range:?} outside 0..{}",
                self.channels
            )));
        }
        let c = range.len();
        let mut data = Vec::with_capacity(self.height * self.width * c);
        for px in self.data.chunks_exact(self.channels) {
            data.extend_from_slice(&px[range.clone()]);
        }
        Self::from_vec(self.height, self.width, c, data)
    }

    /// Concatenates grids along the channel axis.
    pub fn stack(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack zero grids".into()))?;
        for p in parts {
            first.ensure_same_raster(p, "stack")?;
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(first.height * first.width * channels);
        for i in 0..first.height * first.width {
            for p in parts {
                data.extend_from_slice(&p.data[i * p.channels..(i + 1) * p.channels]);
            }
        }
        Self::from_vec(first.height, first.width, channels, data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_shape(other, "elementwise")?;
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..self.clone()
        })
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == T::zero() || v == T::one())
    }

    pub fn cast<S: Scalar>(&self) -> ErpGrid<S> {
        ErpGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| S::of(v.as_f64())).collect(),
        }
    }

    /// Channel-planar copy `(C, H, W)` for feeding networks.
    pub fn to_planar(&self) -> Vec<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    /// Inverse of [`ErpGrid::to_planar`].
    pub fn from_planar(height: usize, channels: usize, planar: &[T]) -> Result<Self> {
        let width = 2 * height;
        let plane = height * width;
        if planar.len() != plane * channels {
            return Err(Error::Shape(format!(
                "planar buffer of {} values does not hold {channels}x{height}x{width}",
                planar.len()
            )));
        }
        let mut data = vec![T::zero(); plane * channels];
        for c in 0..channels {
            for i in 0..plane {
                data[i * channels + c] = planar[c * plane + i];
            }
        }
        Self::from_vec(height, width, channels, data)
    }
}
