//! 2-D convolution (cross-correlation) via im2col.
//!
//! Column buffers are rebuilt in the backward pass instead of being cached,
//! which keeps activation memory proportional to the input.

use alloc::vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm, transpose_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Padding {
    /// No padding; `(I - F)` must be a multiple of the stride.
    Valid,
    /// Output extent `ceil(I / stride)`. The zero border is split evenly,
    /// with any odd pixel on the bottom/right edge.
    Same,
}

/// Resolved geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub fh: usize,
    pub fw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn out_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if input < kernel || !(input - kernel).is_multiple_of(stride) {
                return None;
            }
            Some(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

impl ConvGeom {
    pub fn new(
        in_shape: &[usize],
        out_c: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [in_c, in_h, in_w] = in_shape else {
            return Err(Error::shape("conv2d input (C x H x W)", &[0, 0, 0], in_shape));
        };
        let (fh, fw) = kernel;
        if stride == 0 || fh == 0 || fw == 0 || out_c == 0 {
            return Err(Error::InvalidArgument("conv2d extents and stride must be positive".into()));
        }
        let (Some((out_h, pad_top)), Some((out_w, pad_left))) =
            (out_extent(*in_h, fh, stride, padding), out_extent(*in_w, fw, stride, padding))
        else {
            return Err(Error::shape("conv2d output extent", &[fh, fw, stride], in_shape));
        };
        Ok(ConvGeom { in_c: *in_c, in_h: *in_h, in_w: *in_w, out_c, fh, fw, stride, pad_top, pad_left, out_h, out_w })
    }

    /// Row length of the weight matrix, `C_i * F_h * F_w`.
    pub fn patch_len(&self) -> usize {
        self.in_c * self.fh * self.fw
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_pixels()
    }

    pub fn out_shape(&self) -> [usize; 3] {
        [self.out_c, self.out_h, self.out_w]
    }

    /// Input coordinate read by output position `o` at kernel offset `k`,
    /// or `None` inside the zero border.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&v| v < extent)
    }

    /// `cols[(c, i, j)][(oy, ox)] = x[c][oy*s + i - pad_top][ox*s + j - pad_left]`.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let l = self.out_pixels();
        for c in 0..self.in_c {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..self.fh {
                for j in 0..self.fw {
                    let row = &mut cols[((c * self.fh + i) * self.fw + j) * l..][..l];
                    for oy in 0..self.out_h {
                        let dst = &mut row[oy * self.out_w..(oy + 1) * self.out_w];
                        match Self::src(oy, i, self.stride, self.pad_top, self.in_h) {
                            None => dst.fill(T::zero()),
                            Some(y) => {
                                let src_row = &plane[y * self.in_w..(y + 1) * self.in_w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match Self::src(ox, j, self.stride, self.pad_left, self.in_w) {
                                        Some(x) => src_row[x],
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

    /// Adjoint of [`im2col`](Self::im2col): scatters column gradients back
    /// onto the input, accumulating into `dx`.
    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let l = self.out_pixels();
        for c in 0..self.in_c {
            let plane = &mut dx[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..self.fh {
                for j in 0..self.fw {
                    let row = &cols[((c * self.fh + i) * self.fw + j) * l..][..l];
                    for oy in 0..self.out_h {
                        let Some(y) = Self::src(oy, i, self.stride, self.pad_top, self.in_h) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(x) = Self::src(ox, j, self.stride, self.pad_left, self.in_w) {
                                plane[y * self.in_w + x] += row[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `input` is `m x C_i x I_h x I_w`, `weights` is `C_o x (C_i F_h F_w)`.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, geom: &ConvGeom) -> Result<Tensor<T>> {
    let m = check_batch(input, geom)?;
    let (co, k) = weights.dims2()?;
    if co != geom.out_c || k != geom.patch_len() {
        return Err(Error::shape("conv2d weights", &[geom.out_c, geom.patch_len()], weights.shape()));
    }
    let l = geom.out_pixels();
    let mut cols = vec![T::zero(); k * l];
    let mut out = vec![T::zero(); m * geom.out_len()];
    for (x, y) in input.data().chunks(geom.in_len()).zip(out.chunks_mut(geom.out_len())) {
        geom.im2col(x, &mut cols);
        gemm(co, k, l, weights.data(), &cols, y);
    }
    Tensor::from_vec(&[m, geom.out_c, geom.out_h, geom.out_w], out)
}

/// Returns `(d input, d weights)` for upstream gradient `dy`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    dy: &Tensor<T>,
    geom: &ConvGeom,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let m = check_batch(input, geom)?;
    if dy.len() != m * geom.out_len() {
        return Err(Error::shape("conv2d upstream gradient", &[m, geom.out_c, geom.out_h, geom.out_w], dy.shape()));
    }
    let (co, k) = (geom.out_c, geom.patch_len());
    let l = geom.out_pixels();
    let mut w_t = vec![T::zero(); k * co];
    transpose_into(weights.data(), co, k, &mut w_t);

    let mut cols = vec![T::zero(); k * l];
    let mut cols_t = vec![T::zero(); l * k];
    let mut dcols = vec![T::zero(); k * l];
    let mut dw = vec![T::zero(); co * k];
    let mut dx = vec![T::zero(); input.len()];
    for ((x, g), dxn) in
        input.data().chunks(geom.in_len()).zip(dy.data().chunks(geom.out_len())).zip(dx.chunks_mut(geom.in_len()))
    {
        geom.im2col(x, &mut cols);
        transpose_into(&cols, k, l, &mut cols_t);
        gemm(co, l, k, g, &cols_t, &mut dw);
        dcols.fill(T::zero());
        gemm(k, co, l, &w_t, g, &mut dcols);
        geom.col2im(&dcols, dxn);
    }
    Ok((Tensor::from_vec(input.shape(), dx)?, Tensor::from_vec(&[co, k], dw)?))
}

fn check_batch<T: Scalar>(input: &Tensor<T>, geom: &ConvGeom) -> Result<usize> {
    match input.shape() {
        &[m, c, h, w] if c == geom.in_c && h == geom.in_h && w == geom.in_w => Ok(m),
        other => Err(Error::shape("conv2d input", &[0, geom.in_c, geom.in_h, geom.in_w], other)),
    }
}
