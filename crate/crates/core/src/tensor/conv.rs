//! 2D convolution and transposed convolution on `N, C, H, W` tensors.
//!
//! Shape formulas (used everywhere, including the network builders):
//!
//! * convolution: `out = (in + 2·padding − kernel) / stride + 1` (floor division),
//!   defined when `in + 2·padding ≥ kernel`.
//! * transposed convolution: `out = (in − 1)·stride − 2·padding + kernel`,
//!   defined when that quantity is ≥ 1.
//!
//! Convolution weights are `[out, in, kh, kw]`. Transposed-convolution weights
//! are `[in, out, kh, kw]`, so a transposed convolution with weights `W` is the
//! exact adjoint of the convolution with the same `W`, stride and padding.

use super::{matmul, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding,
            transposed: false,
        }
    }

    pub fn deconv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            transposed: true,
            ..Self::conv(in_channels, out_channels, kernel, stride, padding)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::invalid(format!("kernel extents must be >= 1, got {:?}", self.kernel)));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be >= 1"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let (kh, kw) = self.kernel;
        if self.transposed {
            [self.in_channels, self.out_channels, kh, kw]
        } else {
            [self.out_channels, self.in_channels, kh, kw]
        }
    }

    /// Number of weights feeding one output value (He initialisation fan-in).
    pub fn fan_in(&self) -> usize {
        let (kh, kw) = self.kernel;
        if self.transposed {
            // Each output receives on average in·kh·kw/stride² taps.
            (self.in_channels * kh * kw / (self.stride * self.stride)).max(1)
        } else {
            self.in_channels * kh * kw
        }
    }

    /// Output spatial extents for the given input extents.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (kh, kw) = self.kernel;
        let (s, p) = (self.stride, self.padding);
        if self.transposed {
            let oh = ((h as isize - 1) * s as isize - 2 * p as isize + kh as isize).max(0) as usize;
            let ow = ((w as isize - 1) * s as isize - 2 * p as isize + kw as isize).max(0) as usize;
            if h == 0 || w == 0 || oh == 0 || ow == 0 {
                return Err(Error::shape(format!(
                    "transposed convolution of {h}x{w} with kernel {kh}x{kw}, stride {s}, padding {p} is empty"
                )));
            }
            Ok((oh, ow))
        } else {
            if h + 2 * p < kh || w + 2 * p < kw {
                return Err(Error::shape(format!(
                    "input {h}x{w} (padding {p}) is smaller than kernel {kh}x{kw}"
                )));
            }
            Ok(((h + 2 * p - kh) / s + 1, (w + 2 * p - kw) / s + 1))
        }
    }

    fn check_operands<T: Scalar>(&self, input: &Tensor<T>, weights: &Tensor<T>, op: &str) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if self.transposed != (op == "deconv2d") {
            return Err(Error::invalid(format!("{op}: spec.transposed is {}", self.transposed)));
        }
        let (n, c, h, w) = input
            .dims4()
            .map_err(|e| Error::shape(format!("{op}: input {e}")))?;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "{op}: input channel dimension (axis 1) is {c} but spec.in_channels is {}",
                self.in_channels
            )));
        }
        let want = self.weight_shape();
        if weights.shape() != want {
            let got = weights.shape();
            let axis = (0..4)
                .find(|&i| got.get(i) != Some(&want[i]))
                .unwrap_or(0);
            return Err(Error::shape(format!(
                "{op}: weight shape {got:?} differs from expected {want:?} at axis {axis}"
            )));
        }
        Ok((n, h, w))
    }
}

/// Geometry shared by im2col/col2im: an "image" of `c×h×w` and a column grid of `oh×ow`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate for column coordinate `o` and tap `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let v = (o * self.stride + k) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < extent).then_some(v as usize)
    }
}

fn im2col<T: Scalar>(img: &[T], g: &Geometry, cols: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.src(oy, ky, g.h) {
                        None => line.iter_mut().for_each(|v| *v = T::zero()),
                        Some(iy) => {
                            let src = &img[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.src(ox, kx, g.w) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back into an image buffer (adjoint of im2col).
fn col2im_add<T: Scalar>(cols: &[T], g: &Geometry, img: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let srcrow = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    let dst = &mut img[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                    let line = &srcrow[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, &v) in line.iter().enumerate() {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_geometry(spec: &ConvSpec, c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Geometry {
    Geometry {
        c,
        h,
        w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
        oh,
        ow,
    }
}

/// Forward convolution (no bias).
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let (n, h, w) = spec.check_operands(input, weights, "conv2d")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let g = conv_geometry(spec, spec.in_channels, h, w, oh, ow);
    let cout = spec.out_channels;
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let wmat = MatRef::rm(weights.data(), cout, g.rows());
    let in_sz = spec.in_channels * h * w;
    let out_sz = cout * oh * ow;
    let mut cols = if g.is_identity() { Vec::new() } else { vec![T::zero(); g.rows() * g.cols()] };
    for b in 0..n {
        let img = &input.data()[b * in_sz..(b + 1) * in_sz];
        let colref = if g.is_identity() {
            img
        } else {
            im2col(img, &g, &mut cols);
            &cols[..]
        };
        matmul(
            wmat,
            MatRef::rm(colref, g.rows(), g.cols()),
            &mut out.data_mut()[b * out_sz..(b + 1) * out_sz],
            false,
        );
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input and weights.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &[T],
    spec: &ConvSpec,
    need_input: bool,
    need_weights: bool,
) -> Result<(Option<Vec<T>>, Option<Vec<T>>)> {
    let (n, h, w) = spec.check_operands(input, weights, "conv2d")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let g = conv_geometry(spec, spec.in_channels, h, w, oh, ow);
    let cout = spec.out_channels;
    let in_sz = spec.in_channels * h * w;
    let out_sz = cout * oh * ow;
    let mut dx = need_input.then(|| vec![T::zero(); input.numel()]);
    let mut dw = need_weights.then(|| vec![T::zero(); weights.numel()]);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for b in 0..n {
        let gy = MatRef::rm(&grad_out[b * out_sz..(b + 1) * out_sz], cout, g.cols());
        if let Some(dw) = dw.as_mut() {
            let img = &input.data()[b * in_sz..(b + 1) * in_sz];
            let colref = if g.is_identity() {
                img
            } else {
                im2col(img, &g, &mut cols);
                &cols[..]
            };
            // dW += dY · colsᵀ
            matmul(gy, MatRef::rm_t(colref, g.cols(), g.rows()), dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dimg = &mut dx[b * in_sz..(b + 1) * in_sz];
            let wt = MatRef::rm_t(weights.data(), g.rows(), cout);
            if g.is_identity() {
                matmul(wt, gy, dimg, true);
            } else {
                // dcols = Wᵀ · dY, then scatter back.
                matmul(wt, gy, &mut cols, false);
                col2im_add(&cols, &g, dimg);
            }
        }
    }
    Ok((dx, dw))
}

/// Forward transposed convolution (no bias).
pub fn deconv2d_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let (n, h, w) = spec.check_operands(input, weights, "deconv2d")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    // The output plays the role of the convolution input.
    let g = conv_geometry(spec, spec.out_channels, oh, ow, h, w);
    let cin = spec.in_channels;
    let in_sz = cin * h * w;
    let out_sz = spec.out_channels * oh * ow;
    let mut out = Tensor::zeros(&[n, spec.out_channels, oh, ow]);
    let wt = MatRef::rm_t(weights.data(), g.rows(), cin);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for b in 0..n {
        let x = MatRef::rm(&input.data()[b * in_sz..(b + 1) * in_sz], cin, g.cols());
        let dst = &mut out.data_mut()[b * out_sz..(b + 1) * out_sz];
        if g.is_identity() {
            matmul(wt, x, dst, false);
        } else {
            matmul(wt, x, &mut cols, false);
            col2im_add(&cols, &g, dst);
        }
    }
    Ok(out)
}

pub(crate) fn deconv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &[T],
    spec: &ConvSpec,
    need_input: bool,
    need_weights: bool,
) -> Result<(Option<Vec<T>>, Option<Vec<T>>)> {
    let (n, h, w) = spec.check_operands(input, weights, "deconv2d")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let g = conv_geometry(spec, spec.out_channels, oh, ow, h, w);
    let cin = spec.in_channels;
    let in_sz = cin * h * w;
    let out_sz = spec.out_channels * oh * ow;
    let mut dx = need_input.then(|| vec![T::zero(); input.numel()]);
    let mut dw = need_weights.then(|| vec![T::zero(); weights.numel()]);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for b in 0..n {
        let gimg = &grad_out[b * out_sz..(b + 1) * out_sz];
        let colref = if g.is_identity() {
            gimg
        } else {
            im2col(gimg, &g, &mut cols);
            &cols[..]
        };
        let gcols = MatRef::rm(colref, g.rows(), g.cols());
        if let Some(dx) = dx.as_mut() {
            // dX = W · im2col(dY)
            matmul(
                MatRef::rm(weights.data(), cin, g.rows()),
                gcols,
                &mut dx[b * in_sz..(b + 1) * in_sz],
                true,
            );
        }
        if let Some(dw) = dw.as_mut() {
            // dW += X · im2col(dY)ᵀ
            let x = MatRef::rm(&input.data()[b * in_sz..(b + 1) * in_sz], cin, g.cols());
            matmul(x, MatRef::rm_t(colref, g.cols(), g.rows()), dw, true);
        }
    }
    Ok((dx, dw))
}
