//! Square search/memory crops, the image <-> patch mapping, augmentation
//! and foreground-background label maps.

use rand::Rng;

use super::image::RgbImage;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length of the network input patch.
pub const PATCH_SIZE: usize = 289;

/// Context multiplier: the crop side is this many times `sqrt(w * h)`.
pub const CONTEXT_FACTOR: f64 = 4.0;

/// Crop side for a target box.
pub fn context_side(target: &BBox) -> f64 {
    CONTEXT_FACTOR * (target.w * target.h).sqrt()
}

/// Maps a square window of side `side` centered at `center` in the source
/// image onto an `out_size x out_size` patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropTransform {
    pub center: (f64, f64),
    pub side: f64,
    pub out_size: usize,
}

impl CropTransform {
    pub fn new(center: (f64, f64), side: f64, out_size: usize) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) || out_size == 0 {
            return Err(Error::invalid(format!(
                "crop needs side > 0 and out_size > 0, got {side} / {out_size}"
            )));
        }
        Ok(CropTransform {
            center,
            side,
            out_size,
        })
    }

    /// Crop centered on `target` with side [`context_side`].
    pub fn around(target: &BBox, out_size: usize) -> Result<Self> {
        target.validate()?;
        Self::new(target.center(), context_side(target), out_size)
    }

    /// Patch pixels per source pixel.
    pub fn scale(&self) -> f64 {
        self.out_size as f64 / self.side
    }

    pub fn to_patch(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.scale();
        let half = self.out_size as f64 / 2.0;
        ((x - self.center.0) * s + half, (y - self.center.1) * s + half)
    }

    pub fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        let s = self.scale();
        let half = self.out_size as f64 / 2.0;
        ((u - half) / s + self.center.0, (v - half) / s + self.center.1)
    }

    pub fn box_to_patch(&self, b: &BBox) -> BBox {
        let (x, y) = self.to_patch(b.x, b.y);
        let s = self.scale();
        BBox {
            x,
            y,
            w: b.w * s,
            h: b.h * s,
        }
    }

    pub fn box_to_image(&self, b: &BBox) -> BBox {
        let (x, y) = self.to_image(b.x, b.y);
        let s = self.scale();
        BBox {
            x,
            y,
            w: b.w / s,
            h: b.h / s,
        }
    }
}

/// Random translation and resize applied to a training crop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
}

impl AugmentParams {
    /// Default shift bound as a fraction of the crop side.
    pub const MAX_SHIFT: f64 = 0.2;
    pub const RESIZE_RANGE: f64 = 0.3;

    pub fn identity() -> Self {
        AugmentParams {
            dx: 0.0,
            dy: 0.0,
            scale: 1.0,
        }
    }

    /// `dx, dy ~ U(-max_shift S, max_shift S)`, `scale ~ U(1 / 1.3, 1.3)`.
    pub fn sample(side: f64, max_shift: f64, rng: &mut impl Rng) -> Self {
        let t = max_shift * side;
        let r = 1.0 + Self::RESIZE_RANGE;
        AugmentParams {
            dx: rng.gen_range(-t..=t),
            dy: rng.gen_range(-t..=t),
            scale: rng.gen_range(1.0 / r..=r),
        }
    }

    /// Crop for `target` after augmentation: the window moves by `(dx, dy)`
    /// and shrinks by `scale` so the target appears `scale` times larger.
    pub fn crop_for(&self, target: &BBox, out_size: usize) -> Result<CropTransform> {
        target.validate()?;
        let (cx, cy) = target.center();
        CropTransform::new(
            (cx + self.dx, cy + self.dy),
            context_side(target) / self.scale,
            out_size,
        )
    }
}

/// Intensity normalization applied to patch pixels.
#[inline]
pub fn normalize(v: f64) -> f32 {
    ((v / 255.0 - 0.5) / 0.25) as f32
}

/// Resamples the crop window bilinearly into a normalized `3 x n x n`
/// tensor. Samples falling outside the frame take the frame's per-channel
/// mean.
pub fn crop(frame: &RgbImage, t: &CropTransform) -> Tensor<f32> {
    let n = t.out_size;
    let mean = frame.mean();
    let inv = 1.0 / t.scale();
    let half = n as f64 / 2.0;
    // Continuous sample position per output column / row, in pixel-index
    // space of the source (pixel i has its center at i + 0.5).
    let axis = |c: f64| -> Vec<(isize, f64)> {
        (0..n)
            .map(|u| {
                let src = (u as f64 + 0.5 - half) * inv + c - 0.5;
                let f = src.floor();
                (f as isize, src - f)
            })
            .collect()
    };
    let xs = axis(t.center.0);
    let ys = axis(t.center.1);
    let (w, h) = (frame.width as isize, frame.height as isize);
    let fetch = |x: isize, y: isize, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            mean[c]
        } else {
            frame.data[((y * w + x) * 3) as usize + c] as f64
        }
    };
    let mut out = vec![0f32; 3 * n * n];
    for (v, &(y0, fy)) in ys.iter().enumerate() {
        for (u, &(x0, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let top = fetch(x0, y0, c) * (1.0 - fx) + fetch(x0 + 1, y0, c) * fx;
                let bot = fetch(x0, y0 + 1, c) * (1.0 - fx) + fetch(x0 + 1, y0 + 1, c) * fx;
                out[(c * n + v) * n + u] = normalize(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[3, n, n], out).expect("crop shape")
}

/// Crop of side `4 sqrt(w h)` centered on `target`, resized to `out_size`.
pub fn crop_patch(frame: &RgbImage, target: &BBox, out_size: usize) -> Result<(Tensor<f32>, CropTransform)> {
    let t = CropTransform::around(target, out_size)?;
    Ok((crop(frame, &t), t))
}

/// Binary foreground map on the patch grid.
#[derive(Clone, Debug)]
pub struct LabelMap {
    pub map: Tensor<f32>,
    /// Set when the box misses the patch entirely (the map is all zeros).
    pub empty: bool,
}

/// A patch pixel is 1 when its center, mapped back to the source image,
/// lies inside `target` (half-open on the right and bottom edges).
pub fn make_label_map(target: &BBox, t: &CropTransform) -> Result<LabelMap> {
    target.validate()?;
    let n = t.out_size;
    let (inv, half) = (1.0 / t.scale(), n as f64 / 2.0);
    let inside_axis = |lo: f64, len: f64, c: f64| -> Vec<bool> {
        (0..n)
            .map(|u| {
                let p = (u as f64 + 0.5 - half) * inv + c;
                p >= lo && p < lo + len
            })
            .collect()
    };
    let cols = inside_axis(target.x, target.w, t.center.0);
    let rows = inside_axis(target.y, target.h, t.center.1);
    let mut data = vec![0f32; n * n];
    let mut any = false;
    for (v, &r) in rows.iter().enumerate() {
        if !r {
            continue;
        }
        for (u, &c) in cols.iter().enumerate() {
            if c {
                data[v * n + u] = 1.0;
                any = true;
            }
        }
    }
    Ok(LabelMap {
        map: Tensor::new(&[1, n, n], data)?,
        empty: !any,
    })
}
