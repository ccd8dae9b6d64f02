//! Anchor-free head: classification, center-ness and box regression over
//! the read features, plus target encoding and score decoding.
//!
//! All boxes handled here are in patch coordinates except where a
//! [`CropTransform`] maps them back to the source image.

use rand::Rng;

use crate::bbox::BBox;
use crate::data::CropTransform;
use crate::error::{Error, Result};
use crate::features::ConvLayer;
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{ops::sigmoid, Graph, Scalar, Tensor, Var};

/// Mapping between score-grid cells and patch pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub size: usize,
    pub stride: f64,
    /// Patch coordinate of the centre of cell (0, 0).
    pub offset: f64,
}

impl GridGeometry {
    /// Centres the `size x size` grid on an `input x input` patch.
    pub fn centered(input: usize, size: usize, stride: usize) -> Self {
        let span = (size.saturating_sub(1) * stride) as f64;
        GridGeometry {
            size,
            stride: stride as f64,
            offset: (input as f64 - span) / 2.0,
        }
    }

    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    /// Patch coordinates `(x, y)` of the centre of row-major cell `index`.
    pub fn cell_center(&self, index: usize) -> (f64, f64) {
        let (i, j) = (index / self.size, index % self.size);
        (
            self.offset + j as f64 * self.stride,
            self.offset + i as f64 * self.stride,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    /// Conv layers in each of the classification and regression towers.
    pub depth: usize,
    /// Tower width; `None` means `2C`.
    pub width: Option<usize>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { depth: 3, width: None }
    }
}

/// Largest pre-exponent accepted by the distance mapping; larger values are
/// clamped with zero gradient.
pub const REG_MAX_ARG: f64 = 8.0;
const CLS_PRIOR_BIAS: f64 = -4.6;

#[derive(Clone, Debug)]
pub struct HeadNet {
    cls_tower: Vec<ConvLayer>,
    cls_out: ConvLayer,
    ctr_out: ConvLayer,
    reg_tower: Vec<ConvLayer>,
    reg_out: ConvLayer,
    stride: f64,
}

/// Graph nodes of one head evaluation.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub cls: Var,
    pub ctr: Var,
    pub reg: Var,
}

fn fill_bias<F: Scalar>(store: &mut ParamStore<F>, id: Option<ParamId>, v: f64) {
    if let Some(id) = id {
        let t = &mut store.get_mut(id).value;
        *t = t.map(|_| F::c(v));
    }
}

impl HeadNet {
    pub fn new<F: Scalar>(
        cfg: &HeadConfig,
        in_channels: usize,
        stride: usize,
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if in_channels == 0 || in_channels % 2 != 0 {
            return Err(Error::invalid(format!("head input channels {in_channels} must be 2C")));
        }
        let width = cfg.width.unwrap_or(in_channels);
        if width == 0 {
            return Err(Error::invalid("head width must be >= 1"));
        }
        let gain = std::f64::consts::SQRT_2;
        let tower = |store: &mut ParamStore<F>, name: &str, rng: &mut _| -> Vec<ConvLayer> {
            (0..cfg.depth)
                .map(|i| {
                    let c_in = if i == 0 { in_channels } else { width };
                    ConvLayer::new(store, &format!("{name}.{i}"), c_in, width, 3, 1, true, gain, rng)
                })
                .collect()
        };
        let cls_tower = tower(store, "head.cls_tower", rng);
        let reg_tower = tower(store, "head.reg_tower", rng);
        let last = if cfg.depth == 0 { in_channels } else { width };
        let cls_out = ConvLayer::new(store, "head.cls", last, 1, 1, 1, true, 1.0, rng);
        let ctr_out = ConvLayer::new(store, "head.ctr", last, 1, 1, 1, true, 1.0, rng);
        let reg_out = ConvLayer::new(store, "head.reg", last, 4, 1, 1, true, 1.0, rng);
        fill_bias(store, cls_out.bias, CLS_PRIOR_BIAS);
        fill_bias(store, reg_out.bias, 4f64.ln());
        Ok(HeadNet {
            cls_tower,
            cls_out,
            ctr_out,
            reg_tower,
            reg_out,
            stride: stride as f64,
        })
    }

    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        bind: &mut Binding,
        store: &ParamStore<F>,
        y: Var,
    ) -> Result<HeadVars> {
        let tower = |g: &mut Graph<F>, bind: &mut Binding, layers: &[ConvLayer]| -> Result<Var> {
            let mut x = y;
            for l in layers {
                let z = l.forward(g, bind, store, x)?;
                x = g.relu(z);
            }
            Ok(x)
        };
        let c = tower(g, bind, &self.cls_tower)?;
        let cls = self.cls_out.forward(g, bind, store, c)?;
        let ctr = self.ctr_out.forward(g, bind, store, c)?;
        let r = tower(g, bind, &self.reg_tower)?;
        let raw = self.reg_out.forward(g, bind, store, r)?;
        let reg = g.scaled_exp(raw, F::c(self.stride), F::c(REG_MAX_ARG));
        Ok(HeadVars { cls, ctr, reg })
    }
}

/// Materialized head outputs on an `H x W` grid. `reg` holds `(l, t, r, b)`
/// distances in patch pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs<F: Scalar = f32> {
    pub cls: Tensor<F>,
    pub ctr: Tensor<F>,
    pub reg: Tensor<F>,
}

impl<F: Scalar> HeadOutputs<F> {
    pub fn from_graph(g: &Graph<F>, v: &HeadVars) -> Self {
        HeadOutputs {
            cls: g.value(v.cls).clone(),
            ctr: g.value(v.ctr).clone(),
            reg: g.value(v.reg).clone(),
        }
    }

    fn cells(&self) -> usize {
        self.cls.numel()
    }

    /// Box predicted at a cell, in patch coordinates.
    pub fn cell_box(&self, grid: &GridGeometry, index: usize) -> (f64, f64, f64, f64) {
        let n = self.cells();
        let r = self.reg.data();
        let (cx, cy) = grid.cell_center(index);
        let (l, t, rr, b) = (r[index].f64(), r[n + index].f64(), r[2 * n + index].f64(), r[3 * n + index].f64());
        (cx - l, cy - t, l + rr, t + b)
    }
}

/// Training targets on the score grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// `1 x H x W` in `{0, 1}`.
    pub cls: Tensor<f64>,
    /// `1 x H x W` in `[0, 1]`, zero off the positives.
    pub ctr: Tensor<f64>,
    /// `4 x H x W` `(l, t, r, b)`, zero off the positives.
    pub reg: Tensor<f64>,
    pub num_pos: usize,
}

/// Encodes a patch-coordinate box. A cell is positive iff its centre lies in
/// the half-open box.
pub fn encode_targets(gt: &BBox, grid: &GridGeometry, input_size: usize) -> Result<Targets> {
    gt.validate()?;
    let side = input_size as f64;
    if gt.right() <= 0.0 || gt.bottom() <= 0.0 || gt.x >= side || gt.y >= side {
        return Err(Error::NoPositiveCells);
    }
    let n = grid.cells();
    let mut cls = vec![0.0; n];
    let mut ctr = vec![0.0; n];
    let mut reg = vec![0.0; 4 * n];
    let mut num_pos = 0;
    for i in 0..n {
        let (cx, cy) = grid.cell_center(i);
        if !gt.contains(cx, cy) {
            continue;
        }
        let (l, t) = (cx - gt.x, cy - gt.y);
        let (r, b) = (gt.right() - cx, gt.bottom() - cy);
        cls[i] = 1.0;
        ctr[i] = ((l.min(r) / l.max(r)) * (t.min(b) / t.max(b))).sqrt();
        reg[i] = l;
        reg[n + i] = t;
        reg[2 * n + i] = r;
        reg[3 * n + i] = b;
        num_pos += 1;
    }
    let s = grid.size;
    Ok(Targets {
        cls: Tensor::new(&[1, s, s], cls)?,
        ctr: Tensor::new(&[1, s, s], ctr)?,
        reg: Tensor::new(&[4, s, s], reg)?,
        num_pos,
    })
}

/// Post-processing constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PostprocessConfig {
    pub window_influence: f64,
    pub penalty_k: f64,
    pub size_lr: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            window_influence: 0.21,
            penalty_k: 0.04,
            size_lr: 0.5,
        }
    }
}

impl PostprocessConfig {
    /// Removes `window_influence`, `penalty_k` and `size_lr` from `kv`.
    pub fn take_from(&mut self, kv: &mut crate::config::KeyValues) -> Result<()> {
        kv.take_into("window_influence", &mut self.window_influence)?;
        kv.take_into("penalty_k", &mut self.penalty_k)?;
        kv.take_into("size_lr", &mut self.size_lr)?;
        if !(0.0..=1.0).contains(&self.window_influence) || !(0.0..=1.0).contains(&self.size_lr) || !(self.penalty_k >= 0.0) {
            return Err(Error::invalid("window_influence and size_lr must lie in [0, 1], penalty_k >= 0"));
        }
        Ok(())
    }

    /// No window, no penalty, no size smoothing.
    pub fn raw() -> Self {
        PostprocessConfig {
            window_influence: 0.0,
            penalty_k: 0.0,
            size_lr: 1.0,
        }
    }
}

/// Outer product of two Hann windows, peak 1.
pub fn cosine_window(size: usize) -> Vec<f64> {
    let hann: Vec<f64> = (0..size)
        .map(|i| {
            if size == 1 {
                1.0
            } else {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (size - 1) as f64).cos()
            }
        })
        .collect();
    hann.iter().flat_map(|a| hann.iter().map(move |b| a * b)).collect()
}

fn change(r: f64) -> f64 {
    r.max(1.0 / r)
}

fn padded_size(w: f64, h: f64) -> f64 {
    let p = (w + h) / 2.0;
    ((w + p) * (h + p)).sqrt()
}

/// Scale/ratio change penalty of a `w x h` prediction against `prev_w x
/// prev_h` (same units). Exactly 1 for an unchanged box.
pub fn size_penalty(w: f64, h: f64, prev_w: f64, prev_h: f64, k: f64) -> f64 {
    let s_c = change(padded_size(w, h) / padded_size(prev_w, prev_h));
    let r_c = change((prev_w / prev_h) / (w / h));
    (-(r_c * s_c - 1.0) * k).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decoded {
    /// Image-coordinate box.
    pub bbox: BBox,
    /// `sigmoid(cls) * sigmoid(ctr)` at the chosen cell; 0 when lost.
    pub score: f64,
    /// Chosen row-major cell, `None` when lost.
    pub cell: Option<usize>,
}

/// Picks the best cell and maps its box to the image. Ties go to the
/// smallest row-major index.
pub fn decode<F: Scalar>(
    out: &HeadOutputs<F>,
    grid: &GridGeometry,
    crop: &CropTransform,
    prev: &BBox,
    window: &[f64],
    cfg: &PostprocessConfig,
) -> Result<Decoded> {
    let n = out.cells();
    if n != grid.cells() || window.len() != n || out.ctr.numel() != n || out.reg.numel() != 4 * n {
        return Err(Error::invalid("head outputs, grid and window disagree in size"));
    }
    let scale = crop.scale();
    let (pw, ph) = (prev.w * scale, prev.h * scale);
    let raw: Vec<f64> = out
        .cls
        .data()
        .iter()
        .zip(out.ctr.data())
        .map(|(c, t)| sigmoid(c.f64()) * sigmoid(t.f64()))
        .collect();
    if raw.iter().all(|&s| !(s > 0.0)) {
        return Ok(Decoded {
            bbox: *prev,
            score: 0.0,
            cell: None,
        });
    }
    let mut best = (0, f64::NEG_INFINITY, 1.0);
    for i in 0..n {
        let (_, _, w, h) = out.cell_box(grid, i);
        let pen = if cfg.penalty_k == 0.0 {
            1.0
        } else {
            size_penalty(w, h, pw, ph, cfg.penalty_k)
        };
        let s = raw[i] * pen * (1.0 - cfg.window_influence) + window[i] * cfg.window_influence;
        if s > best.1 {
            best = (i, s, pen);
        }
    }
    let (cell, _, pen) = best;
    let (x, y, w, h) = out.cell_box(grid, cell);
    let (cx, cy) = crop.to_image(x + w / 2.0, y + h / 2.0);
    let lr = (pen * raw[cell] * cfg.size_lr).clamp(0.0, 1.0);
    let w_img = prev.w * (1.0 - lr) + (w / scale) * lr;
    let h_img = prev.h * (1.0 - lr) + (h / scale) * lr;
    let bbox = BBox::from_center(cx, cy, w_img.max(f64::MIN_POSITIVE), h_img.max(f64::MIN_POSITIVE));
    Ok(Decoded {
        bbox,
        score: raw[cell],
        cell: Some(cell),
    })
}

/// One results line: `frame_idx,x,y,w,h,score`.
pub fn result_line(frame_idx: usize, b: &BBox, score: f64) -> String {
    format!("{frame_idx},{},{},{},{},{}", b.x, b.y, b.w, b.h, score)
}
