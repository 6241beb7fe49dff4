//! Single-channel raster planes: images, masks and attention maps.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::math;

/// Row-major `height × width` grid of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(shape_err!(
                "plane {}x{} with {} values",
                height,
                width,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_grid(&self, other: &Plane) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Number of cells above 0.5 (the "on" pixels of a binary mask).
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Pixelwise maximum.
    pub fn union(&self, other: &Plane) -> Result<Plane> {
        if !self.same_grid(other) {
            return Err(invalid!("plane grids differ"));
        }
        Ok(Plane {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.max(*b))
                .collect(),
        })
    }

    /// Bilinear resampling with half-pixel centres and edge clamping.
    /// Constant planes stay constant and the weights are non-negative, so
    /// the result is monotone in the input.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Plane {
        let mut out = Vec::with_capacity(height * width);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let src = |p: f64, n: usize| -> (usize, usize, f64) {
            let p = p.clamp(0.0, (n - 1) as f64);
            let i0 = math::floor(p) as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, p - i0 as f64)
        };
        for r in 0..height {
            let (y0, y1, fy) = src((r as f64 + 0.5) * sy - 0.5, self.height);
            for c in 0..width {
                let (x0, x1, fx) = src((c as f64 + 0.5) * sx - 0.5, self.width);
                let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
                let bot = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
        Plane {
            height,
            width,
            data: out,
        }
    }

    /// 8-bit quantization of values clamped to `[0, 1]`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| math::round(v.clamp(0.0, 1.0) * 255.0) as u8)
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, pixels: &[u8]) -> Result<Plane> {
        Plane::new(
            height,
            width,
            pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        )
    }
}
