//! Convolution and resampling kernels on `(B, C, H, W)` tensors.
//!
//! Width wraps around (the panorama's longitude is periodic); height is
//! zero-padded.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_v: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad_v: usize) -> Result<Self> {
        let (batch, in_ch, height, width) = match *x {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::Shape(format!("conv input must be rank 4, got {x:?}"))),
        };
        let (out_ch, k) = match *w {
            [o, i, kh, kw] if i == in_ch && kh == kw => (o, kh),
            _ => {
                return Err(Error::Shape(format!(
                    "kernel {w:?} incompatible with input {x:?} (need (C_out, {in_ch}, k, k))"
                )))
            }
        };
        if !(stride == 1 || stride == 2) {
            return Err(Error::Shape(format!("stride must be 1 or 2, got {stride}")));
        }
        if stride == 1 && k % 2 == 0 {
            return Err(Error::Shape(format!("stride-1 kernels must be odd, got {k}")));
        }
        if width % stride != 0 {
            return Err(Error::Shape(format!(
                "width {width} not divisible by stride {stride}"
            )));
        }
        if height + 2 * pad_v < k {
            return Err(Error::Shape(format!(
                "height {height} with padding {pad_v} smaller than kernel {k}"
            )));
        }
        if k > width {
            return Err(Error::Shape(format!("kernel {k} wider than input {width}")));
        }
        Ok(Self {
            batch,
            in_ch,
            out_ch,
            height,
            width,
            kernel: k,
            stride,
            pad_v,
            out_h: (height + 2 * pad_v - k) / stride + 1,
            out_w: width / stride,
        })
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source column for each `(kx, ox)` pair.
    fn column_table(&self) -> Vec<usize> {
        let (k, w) = (self.kernel, self.width);
        let half = k / 2;
        let mut t = Vec::with_capacity(k * self.out_w);
        for kx in 0..k {
            for ox in 0..self.out_w {
                t.push((ox * self.stride + kx + w - half) % w);
            }
        }
        t
    }

    fn source_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let y = (oy * self.stride + ky) as isize - self.pad_v as isize;
        (y >= 0 && (y as usize) < self.height).then_some(y as usize)
    }
}

fn im2col<T: Scalar>(g: &ConvGeometry, cols_table: &[usize], x: &[T], cols: &mut [T]) {
    let (k, ow, plane) = (g.kernel, g.out_w, g.height * g.width);
    let n = g.pixels();
    for c in 0..g.in_ch {
        let xc = &x[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * n..][..n];
                let table = &cols_table[kx * ow..(kx + 1) * ow];
                for oy in 0..g.out_h {
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    match g.source_row(oy, ky) {
                        Some(y) => {
                            let src = &xc[y * g.width..(y + 1) * g.width];
                            for (d, &ix) in dst.iter_mut().zip(table) {
                                *d = src[ix];
                            }
                        }
                        None => dst.fill(T::zero()),
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeometry, cols_table: &[usize], cols: &[T], dx: &mut [T]) {
    let (k, ow, plane) = (g.kernel, g.out_w, g.height * g.width);
    let n = g.pixels();
    for c in 0..g.in_ch {
        let dxc = &mut dx[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * n..][..n];
                let table = &cols_table[kx * ow..(kx + 1) * ow];
                for oy in 0..g.out_h {
                    if let Some(y) = g.source_row(oy, ky) {
                        let dst = &mut dxc[y * g.width..(y + 1) * g.width];
                        for (&v, &ix) in row[oy * ow..(oy + 1) * ow].iter().zip(table) {
                            dst[ix] = dst[ix] + v;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution (cross-correlation) with circular width padding of
/// `k / 2` and `pad_v` rows of zero padding.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize, pad_v: usize) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), kernel.shape(), stride, pad_v)?;
    Ok(conv_forward(&g, x.data(), kernel.data()))
}

pub(crate) fn conv_forward<T: Scalar>(g: &ConvGeometry, x: &[T], w: &[T]) -> Tensor<T> {
    let (p, n) = (g.patch(), g.pixels());
    let table = g.column_table();
    let mut cols = vec![T::zero(); p * n];
    let mut out = Tensor::zeros(&[g.batch, g.out_ch, g.out_h, g.out_w]);
    let in_len = g.in_ch * g.height * g.width;
    let out_len = g.out_ch * n;
    for b in 0..g.batch {
        im2col(g, &table, &x[b * in_len..(b + 1) * in_len], &mut cols);
        T::gemm(
            g.out_ch,
            p,
            n,
            T::one(),
            w,
            p as isize,
            1,
            &cols,
            n as isize,
            1,
            T::zero(),
            &mut out.data_mut()[b * out_len..(b + 1) * out_len],
            n as isize,
            1,
        );
    }
    out
}

/// Gradients of a convolution with respect to its input and kernel.
pub(crate) fn conv_backward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    w: &[T],
    dout: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (p, n) = (g.patch(), g.pixels());
    let table = g.column_table();
    let in_len = g.in_ch * g.height * g.width;
    let out_len = g.out_ch * n;
    let mut cols = vec![T::zero(); p * n];
    let mut dx = want_dx.then(|| vec![T::zero(); g.batch * in_len]);
    let mut dw = want_dw.then(|| vec![T::zero(); g.out_ch * p]);
    for b in 0..g.batch {
        let dout_b = &dout[b * out_len..(b + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            im2col(g, &table, &x[b * in_len..(b + 1) * in_len], &mut cols);
            T::gemm(
                g.out_ch, n, p, T::one(), dout_b, n as isize, 1, &cols, 1, n as isize, T::one(), dw,
                p as isize, 1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                p, g.out_ch, n, T::one(), w, 1, p as isize, dout_b, n as isize, 1, T::zero(), &mut cols,
                n as isize, 1,
            );
            col2im(g, &table, &cols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    (dx, dw)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let mut out = Tensor::zeros(&[b, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..b * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                d[y * 2 * w + xx] = s[(y / 2) * w + xx / 2];
            }
        }
    }
    Ok(out)
}

pub(crate) fn upsample2_backward<T: Scalar>(dout: &[T], b: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); b * c * h * w];
    for plane in 0..b * c {
        let d = &dout[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        let s = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                let i = (y / 2) * w + xx / 2;
                s[i] = s[i] + d[y * 2 * w + xx];
            }
        }
    }
    dx
}

/// 2x2 average pooling; height and width must be even.
pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("avg_pool2 needs even sizes, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..b * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                dst[plane * oh * ow + y * ow + xx] = (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]) * quarter;
            }
        }
    }
    Ok(out)
}

pub(crate) fn avg_pool2_backward<T: Scalar>(dout: &[T], b: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut dx = vec![T::zero(); b * c * h * w];
    for plane in 0..b * c {
        let s = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let v = dout[plane * oh * ow + y * ow + xx] * quarter;
                let i = 2 * y * w + 2 * xx;
                s[i] = v;
                s[i + 1] = v;
                s[i + w] = v;
                s[i + w + 1] = v;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct summation, independent of the im2col path.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad_v: usize) -> Tensor<f64> {
        let (b, ci, h, w) = x.dims4().unwrap();
        let (co, _, ks, _) = k.dims4().unwrap();
        let oh = (h + 2 * pad_v - ks) / stride + 1;
        let ow = w / stride;
        let mut out = Tensor::zeros(&[b, co, oh, ow]);
        for bb in 0..b {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for ky in 0..ks {
                                for kx in 0..ks {
                                    let y = (oy * stride + ky) as isize - pad_v as isize;
                                    if y < 0 || y >= h as isize {
                                        continue;
                                    }
                                    let xx = ((ox * stride + kx) as isize - (ks / 2) as isize).rem_euclid(w as isize);
                                    acc += x.data()[((bb * ci + c) * h + y as usize) * w + xx as usize]
                                        * k.data()[((o * ci + c) * ks + ky) * ks + kx];
                                }
                            }
                        }
                        out.data_mut()[((bb * co + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_summation() {
        for (stride, ks, pad) in [(1, 3, 1), (2, 3, 1), (1, 7, 3), (2, 4, 1), (1, 1, 0)] {
            let x = random(&[2, 3, 8, 16], 1);
            let k = random(&[4, 3, ks, ks], 2);
            let got = conv2d(&x, &k, stride, pad).unwrap();
            let want = naive_conv(&x, &k, stride, pad);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12, "stride {stride} k {ks}");
        }
    }

    #[test]
    fn identity_kernel() {
        let x = random(&[1, 2, 4, 8], 3);
        let mut k = Tensor::zeros(&[2, 2, 1, 1]);
        k.data_mut()[0] = 1.0;
        k.data_mut()[3] = 1.0;
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn constants_have_no_seam() {
        let x = Tensor::full(&[1, 2, 6, 12], 0.5);
        let k = random(&[3, 2, 3, 3], 4);
        // rows away from the zero-padded top/bottom are exactly constant
        let y = conv2d(&x, &k, 1, 1).unwrap();
        for o in 0..3 {
            for r in 1..5 {
                let row = &y.data()[(o * 6 + r) * 12..(o * 6 + r + 1) * 12];
                assert!(row.iter().all(|&v| v == row[0]));
            }
        }
        let u = upsample2(&x).unwrap();
        assert_eq!(u.shape(), &[1, 2, 12, 24]);
        assert!(u.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shift_equivariance() {
        let x = random(&[2, 3, 8, 16], 5);
        let k = random(&[2, 3, 3, 3], 6);
        for stride in [1usize, 2] {
            let y = conv2d(&x, &k, stride, 1).unwrap();
            for s in [1i64, 3, -2] {
                let ys = conv2d(&x.roll_width(s * stride as i64), &k, stride, 1).unwrap();
                assert!(ys.max_abs_diff(&y.roll_width(s)) < 1e-12);
            }
        }
        let u = upsample2(&x).unwrap();
        assert_eq!(upsample2(&x.roll_width(3)).unwrap(), u.roll_width(6));
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = random(&[1, 2, 4, 6], 7);
        let k = random(&[1, 2, 3, 3], 8);
        assert!(conv2d(&random(&[1, 2, 4, 5], 9), &k, 2, 1).is_err());
        assert!(conv2d(&x, &random(&[1, 3, 3, 3], 9), 1, 1).is_err());
        assert!(conv2d(&x, &random(&[1, 2, 2, 2], 9), 1, 1).is_err());
        assert!(avg_pool2(&random(&[1, 1, 3, 4], 1)).is_err());
    }
}
