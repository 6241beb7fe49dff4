//! PNG input and output: grayscale planes, masks, box overlays and
//! attention panels.

use std::fs;
use std::path::Path;

use cxr_core::atlas::NormalizedBox;
use cxr_core::image::Plane;
use image::{GrayImage, Rgb, RgbImage};

use crate::error::{Error, Result};

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// 8-bit grayscale PNG; values are clamped to `[0, 1]`.
pub fn save_gray(path: &Path, plane: &Plane) -> Result<()> {
    ensure_parent(path)?;
    let img = GrayImage::from_raw(plane.width as u32, plane.height as u32, plane.to_u8())
        .expect("buffer matches dimensions");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_gray(path: &Path) -> Result<Plane> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Plane::from_u8(h as usize, w as usize, img.as_raw())?)
}

/// Binary mask as a black/white PNG, each cell drawn `scale` pixels wide.
pub fn save_mask(path: &Path, mask: &Plane, scale: usize) -> Result<()> {
    save_gray(path, &upscale_nearest(mask, scale))
}

fn upscale_nearest(p: &Plane, scale: usize) -> Plane {
    let scale = scale.max(1);
    let (h, w) = (p.height * scale, p.width * scale);
    let data = (0..h * w)
        .map(|i| p.get(i / w / scale, i % w / scale))
        .collect();
    Plane::new(h, w, data).expect("sizes agree")
}

fn to_rgb(p: &Plane, scale: usize) -> RgbImage {
    let up = upscale_nearest(p, scale);
    let bytes = up.to_u8();
    RgbImage::from_fn(up.width as u32, up.height as u32, |x, y| {
        let v = bytes[y as usize * up.width + x as usize];
        Rgb([v, v, v])
    })
}

fn draw_box(img: &mut RgbImage, b: &NormalizedBox, color: [u8; 3]) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let clamp = |v: f64, n: f64| (v.round() as i64).clamp(0, n as i64 - 1) as u32;
    let (x0, x1) = (clamp(b.x() * w, w), clamp(b.right() * w - 1.0, w));
    let (y0, y1) = (clamp(b.y() * h, h), clamp(b.bottom() * h - 1.0, h));
    for x in x0..=x1 {
        img.put_pixel(x, y0, Rgb(color));
        img.put_pixel(x, y1, Rgb(color));
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, Rgb(color));
        img.put_pixel(x1, y, Rgb(color));
    }
}

pub const TRUTH_COLOR: [u8; 3] = [220, 30, 30];
pub const PREDICTION_COLOR: [u8; 3] = [30, 200, 60];

/// The image with the truth box in red and the prediction in green.
pub fn save_box_overlay(
    path: &Path,
    image: &Plane,
    truth: &NormalizedBox,
    predicted: &NormalizedBox,
    scale: usize,
) -> Result<()> {
    ensure_parent(path)?;
    let mut img = to_rgb(image, scale);
    draw_box(&mut img, truth, TRUTH_COLOR);
    draw_box(&mut img, predicted, PREDICTION_COLOR);
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Blue-to-red ramp.
fn heat(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [v, 1.0 - (2.0 * v - 1.0).abs(), 1.0 - v]
}

fn blend(image: &Plane, attention: &Plane, scale: usize) -> RgbImage {
    let a = attention.resize_bilinear(image.height, image.width);
    let img = upscale_nearest(image, scale);
    let a = upscale_nearest(&a, scale);
    RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let i = y as usize * img.width + x as usize;
        let g = img.data[i].clamp(0.0, 1.0);
        let h = heat(a.data[i]);
        let mix = |c: f64| ((0.55 * g + 0.45 * c) * 255.0).round() as u8;
        Rgb([mix(h[0]), mix(h[1]), mix(h[2])])
    })
}

/// Three panels side by side: guided attention, the image with its truth
/// box, baseline attention.
pub fn save_attention_triptych(
    path: &Path,
    image: &Plane,
    guided: &Plane,
    baseline: &Plane,
    truth: Option<&NormalizedBox>,
    scale: usize,
) -> Result<()> {
    ensure_parent(path)?;
    let left = blend(image, guided, scale);
    let mut middle = to_rgb(image, scale);
    if let Some(t) = truth {
        draw_box(&mut middle, t, TRUTH_COLOR);
    }
    let right = blend(image, baseline, scale);
    let (w, h) = (left.width(), left.height());
    let gap = 4;
    let mut out = RgbImage::from_pixel(3 * w + 2 * gap, h, Rgb([255, 255, 255]));
    for (k, panel) in [left, middle, right].iter().enumerate() {
        let off = k as u32 * (w + gap);
        for (x, y, p) in panel.enumerate_pixels() {
            out.put_pixel(off + x, y, *p);
        }
    }
    out.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
