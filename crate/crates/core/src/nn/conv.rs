//! Raw 2-D cross-correlation and pooling kernels over `[C, H, W]` buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 {
            return Err(shape_err!(
                "conv2d expects input [C,H,W] and kernels [K,C,kh,kw], got {:?} and {:?}",
                input,
                kernel
            ));
        }
        let (c, h, w) = (input[0], input[1], input[2]);
        let (k, kc, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != c {
            return Err(shape_err!("conv2d input has {} channels, kernels expect {}", c, kc));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d stride must be positive"));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if kh > ph || kw > pw {
            return Err(shape_err!(
                "kernel {}x{} exceeds padded input {}x{}",
                kh,
                kw,
                ph,
                pw
            ));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(shape_err!(
                "non-integral conv output extent: ({}-{})/{} or ({}-{})/{}",
                ph,
                kh,
                stride,
                pw,
                kw,
                stride
            ));
        }
        Ok(Self {
            channels: c,
            height: h,
            width: w,
            kernels: k,
            kh,
            kw,
            stride,
            pad,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    fn padded_h(&self) -> usize {
        self.height + 2 * self.pad
    }

    fn padded_w(&self) -> usize {
        self.width + 2 * self.pad
    }

    fn pad_input(&self, input: &[f64]) -> Vec<f64> {
        if self.pad == 0 {
            return input.to_vec();
        }
        let (ph, pw) = (self.padded_h(), self.padded_w());
        let mut out = vec![0.0; self.channels * ph * pw];
        for c in 0..self.channels {
            for y in 0..self.height {
                let src = &input[(c * self.height + y) * self.width..][..self.width];
                let dst = &mut out[(c * ph + y + self.pad) * pw + self.pad..][..self.width];
                dst.copy_from_slice(src);
            }
        }
        out
    }
}

impl ConvGeom {
    /// Rows of the unrolled input: one per (channel, ky, kx).
    fn patch_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// `[C·kh·kw, out_h·out_w]` matrix whose row `(c, ky, kx)` holds the
    /// input value each output position sees through that kernel tap.
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let padded = self.pad_input(input);
        let (ph, pw) = (self.padded_h(), self.padded_w());
        let plane = self.out_plane();
        let mut cols = vec![0.0; self.patch_rows() * plane];
        let mut r = 0;
        for c in 0..self.channels {
            let src_c = &padded[c * ph * pw..(c + 1) * ph * pw];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut cols[r * plane..(r + 1) * plane];
                    for oy in 0..self.out_h {
                        let row = &src_c[(oy * self.stride + ky) * pw + kx..];
                        let d = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if self.stride == 1 {
                            d.copy_from_slice(&row[..self.out_w]);
                        } else {
                            for (o, v) in d.iter_mut().zip(row.iter().step_by(self.stride)) {
                                *o = *v;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`]: scatters column gradients back onto the
    /// unpadded input gradient.
    fn col2im_add(&self, cols: &[f64], gin: &mut [f64]) {
        let (ph, pw) = (self.padded_h(), self.padded_w());
        let plane = self.out_plane();
        let mut gpad = vec![0.0; self.channels * ph * pw];
        let mut r = 0;
        for c in 0..self.channels {
            let dst_c = &mut gpad[c * ph * pw..(c + 1) * ph * pw];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &cols[r * plane..(r + 1) * plane];
                    for oy in 0..self.out_h {
                        let s = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let row = &mut dst_c[(oy * self.stride + ky) * pw + kx..];
                        if self.stride == 1 {
                            for (d, v) in row[..self.out_w].iter_mut().zip(s) {
                                *d += v;
                            }
                        } else {
                            for (d, v) in row.iter_mut().step_by(self.stride).zip(s) {
                                *d += v;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
        for c in 0..self.channels {
            for y in 0..self.height {
                let src = &gpad[(c * ph + y + self.pad) * pw + self.pad..][..self.width];
                let dst = &mut gin[(c * self.height + y) * self.width..][..self.width];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let cols = g.im2col(input);
    let rows = g.patch_rows();
    let plane = g.out_plane();
    let mut out = vec![0.0; g.kernels * plane];
    for k in 0..g.kernels {
        let out_k = &mut out[k * plane..(k + 1) * plane];
        if let Some(b) = bias {
            out_k.iter_mut().for_each(|v| *v = b[k]);
        }
        for (j, &wt) in kernel[k * rows..(k + 1) * rows].iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            for (o, v) in out_k.iter_mut().zip(&cols[j * plane..(j + 1) * plane]) {
                *o += wt * v;
            }
        }
    }
    out
}

/// Dot product with four independent partial sums, which lets the
/// compiler vectorize it.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Accumulates gradients into whichever of `gin`, `gk`, `gb` are present.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    gout: &[f64],
    gin: Option<&mut [f64]>,
    gk: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let rows = g.patch_rows();
    let plane = g.out_plane();
    if let Some(gb) = gb {
        for k in 0..g.kernels {
            gb[k] += gout[k * plane..(k + 1) * plane].iter().sum::<f64>();
        }
    }
    if let Some(gk) = gk {
        let cols = g.im2col(input);
        for k in 0..g.kernels {
            let gout_k = &gout[k * plane..(k + 1) * plane];
            for j in 0..rows {
                gk[k * rows + j] += dot(gout_k, &cols[j * plane..(j + 1) * plane]);
            }
        }
    }
    if let Some(gin) = gin {
        let mut gcols = vec![0.0; rows * plane];
        for k in 0..g.kernels {
            let gout_k = &gout[k * plane..(k + 1) * plane];
            for (j, &wt) in kernel[k * rows..(k + 1) * rows].iter().enumerate() {
                if wt == 0.0 {
                    continue;
                }
                for (d, v) in gcols[j * plane..(j + 1) * plane].iter_mut().zip(gout_k) {
                    *d += wt * v;
                }
            }
        }
        g.col2im_add(&gcols, gin);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(input: &[usize], window: usize, stride: usize) -> Result<Self> {
        if input.len() != 3 {
            return Err(shape_err!("pooling expects [C,H,W], got {:?}", input));
        }
        if window == 0 || stride == 0 {
            return Err(shape_err!("pool window and stride must be positive"));
        }
        let (c, h, w) = (input[0], input[1], input[2]);
        if window > h || window > w {
            return Err(shape_err!("pool window {} exceeds input {}x{}", window, h, w));
        }
        Ok(Self {
            channels: c,
            height: h,
            width: w,
            window,
            stride,
            out_h: (h - window) / stride + 1,
            out_w: (w - window) / stride + 1,
        })
    }
}

/// Max pooling; returns values and the flat input index of each window's
/// maximum (first occurrence on ties).
pub(crate) fn max_pool_forward(g: &PoolGeom, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = g.channels * g.out_h * g.out_w;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for c in 0..g.channels {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..g.window {
                    for dx in 0..g.window {
                        let i = (c * g.height + oy * g.stride + dy) * g.width + ox * g.stride + dx;
                        if input[i] > best || (dy == 0 && dx == 0) {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_requires_integral_extent() {
        assert!(ConvGeom::new(&[1, 64, 64], &[8, 1, 3, 3], 2, 1).is_err());
        let g = ConvGeom::new(&[1, 64, 64], &[8, 1, 3, 3], 1, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (64, 64));
        let g = ConvGeom::new(&[1, 64, 64], &[8, 1, 4, 4], 2, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (32, 32));
    }

    #[test]
    fn geometry_rejects_oversized_kernel_and_channel_mismatch() {
        assert!(ConvGeom::new(&[1, 2, 2], &[1, 1, 3, 3], 1, 0).is_err());
        assert!(ConvGeom::new(&[2, 4, 4], &[1, 1, 3, 3], 1, 0).is_err());
    }

    #[test]
    fn strided_forward_matches_direct_sum() {
        let g = ConvGeom::new(&[1, 5, 5], &[1, 1, 3, 3], 2, 0).unwrap();
        let input: Vec<f64> = (0..25).map(|v| v as f64).collect();
        let kernel = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let out = conv_forward(&g, &input, &kernel, None);
        // diagonal sums at (0,0),(0,2),(2,0),(2,2)
        assert_eq!(out, vec![0.0 + 6.0 + 12.0, 2.0 + 8.0 + 14.0, 10.0 + 16.0 + 22.0, 12.0 + 18.0 + 24.0]);
    }
}
