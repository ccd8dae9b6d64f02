//! Procedural tracking sequences with exact ground truth.
//!
//! A textured target moves over a static noisy background. Optional
//! extras: distractor objects (clutter), occluders attached to one side of
//! the target for scheduled spans, smooth aspect-ratio drift (deformation)
//! and a gradual colour change of the target (appearance drift). Every
//! random choice comes from one seeded stream, so a `(spec, seed)` pair
//! always renders the same frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::RgbImage;
use crate::bbox::BBox;
use crate::config::KeyValues;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect,
    Ellipse,
}

impl std::str::FromStr for Shape {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rect" => Ok(Shape::Rect),
            "ellipse" => Ok(Shape::Ellipse),
            other => Err(format!("unknown shape {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Static,
    /// Constant velocity, reflected at the image border.
    Linear,
    /// Smoothed random velocity, reflected at the image border.
    RandomWalk,
}

impl std::str::FromStr for Motion {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "static" => Ok(Motion::Static),
            "linear" => Ok(Motion::Linear),
            "random_walk" => Ok(Motion::RandomWalk),
            other => Err(format!("unknown motion {other}")),
        }
    }
}

/// Inclusive, 0-based frame span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl std::str::FromStr for Span {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("span `{s}` is not start:end"))?;
        let start = a.trim().parse().map_err(|e| format!("{e}"))?;
        let end = b.trim().parse().map_err(|e| format!("{e}"))?;
        if end < start {
            return Err(format!("span `{s}` ends before it starts"));
        }
        Ok(Span { start, end })
    }
}

/// Everything that parameterizes one synthetic sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub length: usize,
    pub width: usize,
    pub height: usize,
    pub target_w: f64,
    pub target_h: f64,
    pub target_shape: Shape,
    /// Multiplicative texture amplitude on the target.
    pub texture: f64,
    pub motion: Motion,
    /// Pixels per frame.
    pub speed: f64,
    /// Number of randomly scheduled occlusion spans (ignored when
    /// `occlusion_spans` is non-empty).
    pub occluders: usize,
    pub occlusion_spans: Vec<Span>,
    /// Fraction of the target box width/height covered during an occlusion.
    pub occlusion_fraction: f64,
    pub occlusion_length: usize,
    /// Log-amplitude of the aspect-ratio oscillation (0 disables).
    pub deformation: f64,
    pub deformation_period: f64,
    /// Distractor objects.
    pub clutter: usize,
    /// 0: distractor colours unrelated to the target, 1: identical to the
    /// target's first-frame colour.
    pub distractor_similarity: f64,
    pub distractor_speed: f64,
    /// Fraction of the way from the initial to a second colour reached by
    /// the last frame.
    pub color_drift: f64,
    pub background_contrast: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            length: 50,
            width: 128,
            height: 128,
            target_w: 20.0,
            target_h: 20.0,
            target_shape: Shape::Rect,
            texture: 0.25,
            motion: Motion::RandomWalk,
            speed: 1.5,
            occluders: 0,
            occlusion_spans: Vec::new(),
            occlusion_fraction: 0.5,
            occlusion_length: 8,
            deformation: 0.0,
            deformation_period: 40.0,
            clutter: 0,
            distractor_similarity: 0.0,
            distractor_speed: 1.5,
            color_drift: 0.0,
            background_contrast: 0.15,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::invalid("synth: length must be >= 1"));
        }
        if !(self.target_w > 1.0 && self.target_h > 1.0) {
            return Err(Error::invalid("synth: target extents must exceed one pixel"));
        }
        let grow = self.deformation.abs().exp();
        if self.target_w * grow >= self.width as f64 || self.target_h * grow >= self.height as f64 {
            return Err(Error::invalid(format!(
                "synth: target {}x{} (deformation x{grow:.2}) does not fit a {}x{} image",
                self.target_w, self.target_h, self.width, self.height
            )));
        }
        if !(0.0..=1.0).contains(&self.occlusion_fraction)
            || !(0.0..=1.0).contains(&self.distractor_similarity)
            || !(0.0..=1.0).contains(&self.color_drift)
        {
            return Err(Error::invalid("synth: fractions must lie in [0, 1]"));
        }
        if let Some(s) = self.occlusion_spans.iter().find(|s| s.end >= self.length) {
            return Err(Error::invalid(format!("synth: occlusion span {s:?} exceeds length")));
        }
        Ok(())
    }

    /// Reads overrides from `key = value` text on top of the defaults.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let mut s = SynthSpec::default();
        kv.take_into("length", &mut s.length)?;
        kv.take_into("width", &mut s.width)?;
        kv.take_into("height", &mut s.height)?;
        kv.take_into("target_w", &mut s.target_w)?;
        kv.take_into("target_h", &mut s.target_h)?;
        kv.take_into("target_shape", &mut s.target_shape)?;
        kv.take_into("texture", &mut s.texture)?;
        kv.take_into("motion", &mut s.motion)?;
        kv.take_into("speed", &mut s.speed)?;
        kv.take_into("occluders", &mut s.occluders)?;
        if let Some(spans) = kv.take_list("occlusion_spans")? {
            s.occlusion_spans = spans;
        }
        kv.take_into("occlusion_fraction", &mut s.occlusion_fraction)?;
        kv.take_into("occlusion_length", &mut s.occlusion_length)?;
        kv.take_into("deformation", &mut s.deformation)?;
        kv.take_into("deformation_period", &mut s.deformation_period)?;
        kv.take_into("clutter", &mut s.clutter)?;
        kv.take_into("distractor_similarity", &mut s.distractor_similarity)?;
        kv.take_into("distractor_speed", &mut s.distractor_speed)?;
        kv.take_into("color_drift", &mut s.color_drift)?;
        kv.take_into("background_contrast", &mut s.background_contrast)?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Occlusion {
        start: usize,
        end: usize,
        fraction: f64,
        side: String,
        color: [u8; 3],
    },
    Deformation {
        amplitude: f64,
        period: f64,
    },
    ColorDrift {
        from: [u8; 3],
        to: [u8; 3],
        amount: f64,
    },
}

/// Per-frame provenance measured while rendering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    /// Fraction of target pixels painted over by an occluder.
    pub occlusion: f64,
    /// Target width / height.
    pub aspect: f64,
    /// Distractors whose box overlaps the target's crop window.
    pub nearby_distractors: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub seed: u64,
    pub events: Vec<Event>,
    pub frames: Vec<FrameInfo>,
}

impl EventLog {
    pub fn occluded_frames(&self) -> Vec<usize> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.occlusion > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Frames, ground truth and provenance of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub name: String,
    pub frames: Vec<RgbImage>,
    pub gt: Vec<BBox>,
    pub events: EventLog,
}

impl SequenceRecord {
    pub fn new(name: impl Into<String>, frames: Vec<RgbImage>, gt: Vec<BBox>, events: EventLog) -> Result<Self> {
        if frames.len() != gt.len() || frames.is_empty() {
            return Err(Error::invalid(format!(
                "sequence needs equal, non-zero frame and box counts ({} vs {})",
                frames.len(),
                gt.len()
            )));
        }
        for (i, (f, b)) in frames.iter().zip(&gt).enumerate() {
            b.validate()?;
            if !b.intersects_image(f.width as f64, f.height as f64) {
                return Err(Error::invalid(format!("frame {i}: box {b:?} misses the frame")));
            }
        }
        Ok(SequenceRecord {
            name: name.into(),
            frames,
            gt,
            events,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let rgb = match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    };
    rgb.map(|c| c * 255.0)
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn to_u8(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| v.round().clamp(0.0, 255.0) as u8)
}

/// Fixed 4x4 brightness pattern in object coordinates.
#[derive(Clone)]
struct Texture([f64; 16]);

impl Texture {
    fn random(amplitude: f64, rng: &mut impl Rng) -> Self {
        let mut t = [1.0; 16];
        for v in t.iter_mut() {
            *v = 1.0 + rng.gen_range(-amplitude..=amplitude);
        }
        Texture(t)
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let i = ((u * 4.0) as usize).min(3);
        let j = ((v * 4.0) as usize).min(3);
        self.0[j * 4 + i]
    }
}

/// Paints a textured shape; returns the painted pixel coordinates.
fn paint(img: &mut RgbImage, shape: Shape, b: &BBox, color: [f64; 3], tex: &Texture) -> Vec<(usize, usize)> {
    let mut painted = Vec::new();
    let x0 = b.x.floor().max(0.0) as usize;
    let y0 = b.y.floor().max(0.0) as usize;
    let x1 = (b.right().ceil() as usize).min(img.width);
    let y1 = (b.bottom().ceil() as usize).min(img.height);
    let (cx, cy) = b.center();
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if !b.contains(px, py) {
                continue;
            }
            if shape == Shape::Ellipse {
                let dx = (px - cx) / (b.w / 2.0);
                let dy = (py - cy) / (b.h / 2.0);
                if dx * dx + dy * dy > 1.0 {
                    continue;
                }
            }
            let m = tex.at((px - b.x) / b.w, (py - b.y) / b.h);
            img.put(x, y, to_u8(color.map(|c| c * m)));
            painted.push((x, y));
        }
    }
    painted
}

/// Reflects `p` into `[lo, hi]` (triangle wave).
fn fold(p: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (p - lo).rem_euclid(2.0 * span);
    if m <= span {
        lo + m
    } else {
        lo + 2.0 * span - m
    }
}

struct Mover {
    pos: (f64, f64),
    vel: (f64, f64),
}

impl Mover {
    fn step(&mut self, motion: Motion, speed: f64, bounds: (f64, f64, f64, f64), rng: &mut impl Rng) {
        if motion == Motion::RandomWalk {
            self.vel.0 = 0.85 * self.vel.0 + rng.gen_range(-1.0..1.0) * speed * 0.6;
            self.vel.1 = 0.85 * self.vel.1 + rng.gen_range(-1.0..1.0) * speed * 0.6;
            let n = self.vel.0.hypot(self.vel.1);
            if n > 2.0 * speed && n > 0.0 {
                self.vel = (self.vel.0 * 2.0 * speed / n, self.vel.1 * 2.0 * speed / n);
            }
        }
        if motion == Motion::Static {
            return;
        }
        let (x0, x1, y0, y1) = bounds;
        let mut nx = self.pos.0 + self.vel.0;
        let mut ny = self.pos.1 + self.vel.1;
        if nx < x0 || nx > x1 {
            self.vel.0 = -self.vel.0;
            nx = fold(nx, x0, x1);
        }
        if ny < y0 || ny > y1 {
            self.vel.1 = -self.vel.1;
            ny = fold(ny, y0, y1);
        }
        self.pos = (nx, ny);
    }
}

fn random_spans(spec: &SynthSpec, rng: &mut impl Rng) -> Vec<Span> {
    let len = spec.occlusion_length.max(1);
    let mut spans: Vec<Span> = Vec::new();
    if spec.length < len + 6 {
        return spans;
    }
    for _ in 0..spec.occluders {
        for _attempt in 0..20 {
            let start = rng.gen_range(5..=spec.length - len);
            let s = Span {
                start,
                end: start + len - 1,
            };
            if spans.iter().all(|o| s.end + 2 < o.start || o.end + 2 < s.start) {
                spans.push(s);
                break;
            }
        }
    }
    spans.sort_by_key(|s| s.start);
    spans
}

/// Renders one sequence. Deterministic in `(spec, seed)`.
pub fn synth_sequence(spec: &SynthSpec, seed: u64) -> Result<SequenceRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wf, hf) = (spec.width as f64, spec.height as f64);

    // background: coarse value noise plus fine grain
    let bg_hue = rng.gen_range(0.0..1.0);
    let bg_base = hsv(bg_hue, rng.gen_range(0.05..0.25), rng.gen_range(0.35..0.6));
    let cell = 16usize;
    let gw = spec.width / cell + 2;
    let gh = spec.height / cell + 2;
    let coarse: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut background = RgbImage::new(spec.width, spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (fx, fy) = (x as f64 / cell as f64, y as f64 / cell as f64);
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            let at = |i: usize, j: usize| coarse[j * gw + i];
            let n = at(ix, iy) * (1.0 - tx) * (1.0 - ty)
                + at(ix + 1, iy) * tx * (1.0 - ty)
                + at(ix, iy + 1) * (1.0 - tx) * ty
                + at(ix + 1, iy + 1) * tx * ty;
            let grain = rng.gen_range(-0.3..0.3);
            let k = 1.0 + spec.background_contrast * (n + grain);
            background.put(x, y, to_u8(bg_base.map(|c| c * k)));
        }
    }

    // target appearance
    let hue0 = rng.gen_range(0.0..1.0);
    let color0 = hsv(hue0, rng.gen_range(0.55..0.9), rng.gen_range(0.7..0.95));
    let color1 = hsv(hue0 + rng.gen_range(0.3..0.7), rng.gen_range(0.55..0.9), rng.gen_range(0.7..0.95));
    let target_tex = Texture::random(spec.texture, &mut rng);

    let grow = spec.deformation.abs().exp();
    let margin_x = spec.target_w * grow / 2.0 + 1.0;
    let margin_y = spec.target_h * grow / 2.0 + 1.0;
    let bounds = (margin_x, wf - margin_x, margin_y, hf - margin_y);
    let start = (
        rng.gen_range(bounds.0..=bounds.1.max(bounds.0)),
        rng.gen_range(bounds.2..=bounds.3.max(bounds.2)),
    );
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut target = Mover {
        pos: start,
        vel: (spec.speed * angle.cos(), spec.speed * angle.sin()),
    };
    let deform_phase = rng.gen_range(0.0..std::f64::consts::TAU);

    struct Distractor {
        mover: Mover,
        w: f64,
        h: f64,
        shape: Shape,
        color: [f64; 3],
        tex: Texture,
    }
    let mut distractors: Vec<Distractor> = (0..spec.clutter)
        .map(|_| {
            let other = hsv(hue0 + rng.gen_range(0.2..0.8), rng.gen_range(0.4..0.9), rng.gen_range(0.55..0.95));
            let scale = rng.gen_range(0.75..1.25);
            let w = (spec.target_w * scale).min(wf - 4.0);
            let h = (spec.target_h * scale).min(hf - 4.0);
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            Distractor {
                mover: Mover {
                    pos: (rng.gen_range(w / 2.0 + 1.0..=wf - w / 2.0 - 1.0), rng.gen_range(h / 2.0 + 1.0..=hf - h / 2.0 - 1.0)),
                    vel: (spec.distractor_speed * a.cos(), spec.distractor_speed * a.sin()),
                },
                w,
                h,
                shape: if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Ellipse },
                color: lerp3(other, color0, spec.distractor_similarity),
                tex: Texture::random(spec.texture, &mut rng),
            }
        })
        .collect();

    let spans = if spec.occlusion_spans.is_empty() {
        random_spans(spec, &mut rng)
    } else {
        spec.occlusion_spans.clone()
    };
    let sides = ["left", "right", "top", "bottom"];
    let occlusions: Vec<(Span, &str, [u8; 3])> = spans
        .iter()
        .map(|s| {
            let g = rng.gen_range(20..70u8);
            (*s, sides[rng.gen_range(0..4)], [g, g, g.saturating_add(10)])
        })
        .collect();

    let mut events = EventLog {
        seed,
        ..Default::default()
    };
    for (s, side, color) in &occlusions {
        events.events.push(Event::Occlusion {
            start: s.start,
            end: s.end,
            fraction: spec.occlusion_fraction,
            side: side.to_string(),
            color: *color,
        });
    }
    if spec.deformation != 0.0 {
        events.events.push(Event::Deformation {
            amplitude: spec.deformation,
            period: spec.deformation_period,
        });
    }
    if spec.color_drift > 0.0 {
        events.events.push(Event::ColorDrift {
            from: to_u8(color0),
            to: to_u8(color1),
            amount: spec.color_drift,
        });
    }

    let mut frames = Vec::with_capacity(spec.length);
    let mut gt = Vec::with_capacity(spec.length);
    for k in 0..spec.length {
        if k > 0 {
            if spec.motion == Motion::Linear {
                // closed form keeps the centres an exact progression
                target.pos = (
                    fold(start.0 + target.vel.0 * k as f64, bounds.0, bounds.1),
                    fold(start.1 + target.vel.1 * k as f64, bounds.2, bounds.3),
                );
            } else {
                target.step(spec.motion, spec.speed, bounds, &mut rng);
            }
            for d in distractors.iter_mut() {
                let b = (d.w / 2.0 + 1.0, wf - d.w / 2.0 - 1.0, d.h / 2.0 + 1.0, hf - d.h / 2.0 - 1.0);
                d.mover.step(Motion::RandomWalk, spec.distractor_speed, b, &mut rng);
            }
        }
        let t = if spec.length > 1 { k as f64 / (spec.length - 1) as f64 } else { 0.0 };
        let a = spec.deformation
            * (std::f64::consts::TAU * k as f64 / spec.deformation_period.max(1.0) + deform_phase).sin();
        let (tw, th) = if spec.deformation != 0.0 {
            (spec.target_w * a.exp(), spec.target_h * (-a).exp())
        } else {
            (spec.target_w, spec.target_h)
        };
        let tbox = BBox::from_center(target.pos.0, target.pos.1, tw, th);

        let mut img = background.clone();
        let window = BBox::from_center(target.pos.0, target.pos.1, 4.0 * (tw * th).sqrt(), 4.0 * (tw * th).sqrt());
        let mut nearby = 0;
        for d in &distractors {
            let db = BBox::from_center(d.mover.pos.0, d.mover.pos.1, d.w, d.h);
            paint(&mut img, d.shape, &db, d.color, &d.tex);
            if db.intersection_area(&window) > 0.0 {
                nearby += 1;
            }
        }
        let color = lerp3(color0, color1, spec.color_drift * t);
        let target_px = paint(&mut img, spec.target_shape, &tbox, color, &target_tex);

        let mut covered = 0usize;
        if let Some((_, side, ocolor)) = occlusions.iter().find(|(s, _, _)| s.start <= k && k <= s.end) {
            let f = spec.occlusion_fraction;
            let m = 2.0;
            let ob = match *side {
                "left" => BBox { x: tbox.x - m, y: tbox.y - m, w: f * tw + m, h: th + 2.0 * m },
                "right" => BBox { x: tbox.right() - f * tw, y: tbox.y - m, w: f * tw + m, h: th + 2.0 * m },
                "top" => BBox { x: tbox.x - m, y: tbox.y - m, w: tw + 2.0 * m, h: f * th + m },
                _ => BBox { x: tbox.x - m, y: tbox.bottom() - f * th, w: tw + 2.0 * m, h: f * th + m },
            };
            if ob.w > 0.0 && ob.h > 0.0 {
                let solid = Texture([1.0; 16]);
                let painted = paint(&mut img, Shape::Rect, &ob, ocolor.map(|c| c as f64), &solid);
                let set: std::collections::HashSet<(usize, usize)> = painted.into_iter().collect();
                covered = target_px.iter().filter(|p| set.contains(p)).count();
            }
        }
        events.frames.push(FrameInfo {
            occlusion: if target_px.is_empty() { 0.0 } else { covered as f64 / target_px.len() as f64 },
            aspect: tw / th,
            nearby_distractors: nearby,
        });
        frames.push(img);
        gt.push(tbox);
    }
    SequenceRecord::new(format!("synth_{seed}"), frames, gt, events)
}

/// Named families of sequences used for training and evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    /// No motion, no occlusion, no clutter.
    Static,
    /// Occlusions, appearance drift and deformation, with look-alikes of
    /// the target's first-frame appearance in the background.
    Occlusion,
    /// Several moving distractors of related appearance.
    Clutter,
    /// Randomized mixture of all of the above (training data).
    Mixed,
}

impl std::str::FromStr for SuiteKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "static" => Ok(SuiteKind::Static),
            "occlusion" => Ok(SuiteKind::Occlusion),
            "clutter" => Ok(SuiteKind::Clutter),
            "mixed" => Ok(SuiteKind::Mixed),
            other => Err(format!("unknown suite {other}")),
        }
    }
}

impl std::fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SuiteKind::Static => "static",
            SuiteKind::Occlusion => "occlusion",
            SuiteKind::Clutter => "clutter",
            SuiteKind::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

/// Per-sequence specs and seeds of a suite; sequence `i` gets seed
/// `seed * 1000 + i` and randomized size and motion drawn from `seed`.
pub fn suite_specs(kind: SuiteKind, count: usize, length: usize, seed: u64) -> Vec<(SynthSpec, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5u64.rotate_left(40));
    (0..count)
        .map(|i| {
            let mut s = SynthSpec {
                length,
                target_w: rng.gen_range(14.0..24.0),
                target_h: rng.gen_range(14.0..24.0),
                target_shape: if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Ellipse },
                ..SynthSpec::default()
            };
            let kind = if kind == SuiteKind::Mixed {
                [SuiteKind::Static, SuiteKind::Occlusion, SuiteKind::Clutter, SuiteKind::Clutter][rng.gen_range(0..4)]
            } else {
                kind
            };
            match kind {
                SuiteKind::Static => {
                    s.motion = Motion::Static;
                    s.speed = 0.0;
                }
                SuiteKind::Occlusion => {
                    s.speed = rng.gen_range(1.0..2.0);
                    s.occluders = 2;
                    s.occlusion_fraction = rng.gen_range(0.4..0.6);
                    s.occlusion_length = 6;
                    s.color_drift = rng.gen_range(0.8..1.0);
                    s.deformation = rng.gen_range(0.15..0.3);
                    s.clutter = 2;
                    s.distractor_similarity = rng.gen_range(0.8..0.95);
                    s.distractor_speed = 1.0;
                }
                SuiteKind::Clutter => {
                    s.speed = rng.gen_range(1.0..2.0);
                    s.clutter = 4;
                    s.distractor_similarity = rng.gen_range(0.3..0.6);
                    s.distractor_speed = rng.gen_range(1.0..2.0);
                }
                SuiteKind::Mixed => unreachable!(),
            }
            (s, seed * 1000 + i as u64)
        })
        .collect()
}

/// Renders a whole suite.
pub fn synth_suite(kind: SuiteKind, count: usize, length: usize, seed: u64) -> Result<Vec<SequenceRecord>> {
    suite_specs(kind, count, length, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (spec, s))| {
            let mut rec = synth_sequence(&spec, s)?;
            rec.name = format!("{kind}_{seed}_{i:03}");
            Ok(rec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_motion_is_an_arithmetic_progression() {
        let spec = SynthSpec {
            length: 20,
            motion: Motion::Linear,
            speed: 0.5,
            ..SynthSpec::default()
        };
        // choose a seed whose path stays clear of the border
        let rec = (0..50)
            .map(|s| synth_sequence(&spec, s).unwrap())
            .find(|r| {
                let (x0, _) = r.gt[0].center();
                let (x1, _) = r.gt[1].center();
                let (xn, _) = r.gt[19].center();
                ((xn - x0) - 19.0 * (x1 - x0)).abs() < 1e-9
            })
            .expect("some seed avoids a bounce");
        let c: Vec<(f64, f64)> = rec.gt.iter().map(|b| b.center()).collect();
        let (dx, dy) = (c[1].0 - c[0].0, c[1].1 - c[0].1);
        for k in 1..c.len() {
            assert!((c[k].0 - c[0].0 - dx * k as f64).abs() < 1e-9);
            assert!((c[k].1 - c[0].1 - dy * k as f64).abs() < 1e-9);
        }
        assert!((dx.hypot(dy) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn scheduled_occlusion_is_logged_and_rendered() {
        let spec = SynthSpec {
            length: 70,
            target_shape: Shape::Rect,
            occlusion_spans: vec![Span { start: 40, end: 60 }],
            occlusion_fraction: 0.6,
            motion: Motion::Static,
            ..SynthSpec::default()
        };
        let rec = synth_sequence(&spec, 3).unwrap();
        assert_eq!(rec.events.occluded_frames(), (40..=60).collect::<Vec<_>>());
        let Event::Occlusion { color, side, .. } = &rec.events.events[0] else {
            panic!("expected occlusion event")
        };
        for k in 40..=60 {
            let f = rec.events.frames[k].occlusion;
            assert!((f - 0.6).abs() < 0.1, "frame {k}: {f}");
            // audit: count target pixels that carry the occluder colour
            let b = rec.gt[k];
            let mut inside = 0;
            let mut grey = 0;
            for y in 0..rec.frames[k].height {
                for x in 0..rec.frames[k].width {
                    if b.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        inside += 1;
                        if rec.frames[k].get(x, y) == *color {
                            grey += 1;
                        }
                    }
                }
            }
            assert!((grey as f64 / inside as f64 - f).abs() < 1e-9, "side {side}");
        }
        assert_eq!(rec.events.frames[39].occlusion, 0.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec {
            clutter: 3,
            occluders: 1,
            deformation: 0.2,
            color_drift: 0.5,
            ..SynthSpec::default()
        };
        let a = synth_sequence(&spec, 9).unwrap();
        let b = synth_sequence(&spec, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.frames[0], synth_sequence(&spec, 10).unwrap().frames[0]);
    }

    #[test]
    fn target_must_fit() {
        let spec = SynthSpec {
            target_w: 200.0,
            ..SynthSpec::default()
        };
        assert!(matches!(synth_sequence(&spec, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gt_stays_in_frame_for_suites() {
        for kind in [SuiteKind::Static, SuiteKind::Occlusion, SuiteKind::Clutter, SuiteKind::Mixed] {
            for rec in synth_suite(kind, 3, 30, 1).unwrap() {
                for b in &rec.gt {
                    assert!(b.x >= 0.0 && b.y >= 0.0 && b.right() <= 128.0 && b.bottom() <= 128.0);
                }
            }
        }
    }
}
