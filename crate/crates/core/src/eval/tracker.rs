//! The per-frame tracking loop.

use std::io::Write;
use std::time::Instant;

use crate::bbox::BBox;
use crate::config::KeyValues;
use crate::data::{crop, make_label_map, CropTransform, RgbImage, SequenceRecord};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::head::{cosine_window, decode, result_line, GridGeometry, PostprocessConfig};
use crate::memory::{
    trace_line, LabelSource, MemoryBank, MemoryPolicy, SamplerConfig, SegmentRule, DEFAULT_BANK_CAPACITY,
};
use crate::model::Model;
use crate::reader::{read, similarity, stack_memory, write_similarity_column};

/// Memory size as given on the command line or in a grid: a count or `all`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum MemorySize {
    Frames(usize),
    All,
}

impl std::str::FromStr for MemorySize {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "all" => Ok(MemorySize::All),
            v => match v.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(MemorySize::Frames(n)),
                _ => Err(format!("memory size must be a positive integer or `all`, got `{v}`")),
            },
        }
    }
}

impl std::fmt::Display for MemorySize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MemorySize::Frames(n) => write!(f, "{n}"),
            MemorySize::All => f.write_str("all"),
        }
    }
}

impl MemorySize {
    pub fn policy(self, delta: f64, rule: SegmentRule) -> Result<MemoryPolicy> {
        match self {
            MemorySize::Frames(n) => MemoryPolicy::with_size(n, delta, rule),
            MemorySize::All => Ok(MemoryPolicy::All),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    pub memory: MemoryPolicy,
    pub postprocess: PostprocessConfig,
    pub bank_capacity: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            memory: MemoryPolicy::Sampled(SamplerConfig::default()),
            postprocess: PostprocessConfig::default(),
            bank_capacity: DEFAULT_BANK_CAPACITY,
        }
    }
}

impl TrackerConfig {
    /// Reads `memory_size`, `delta`, `segment_rule` (`mid` or `literal`),
    /// `bank_capacity` and the post-processing keys, defaulting the rest.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let size: MemorySize = kv.take("memory_size")?.unwrap_or(MemorySize::Frames(6));
        let delta: f64 = kv.take("delta")?.unwrap_or(0.5);
        let rule = match kv.take::<String>("segment_rule")?.as_deref() {
            None | Some("mid") => SegmentRule::MidSegment,
            Some("literal") => SegmentRule::Literal,
            Some(other) => return Err(Error::invalid(format!("segment_rule must be `mid` or `literal`, got `{other}`"))),
        };
        let mut cfg = TrackerConfig {
            memory: size.policy(delta, rule)?,
            ..TrackerConfig::default()
        };
        kv.take_into("bank_capacity", &mut cfg.bank_capacity)?;
        cfg.postprocess.take_from(kv)?;
        MemoryBank::new(cfg.bank_capacity)?;
        Ok(cfg)
    }
}

/// Track-time switches that alter the loaded model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ModelOverrides {
    /// Drop the label-map term from memory embeddings.
    pub no_fb_label: bool,
    /// Run queries through the memory backbone.
    pub share_backbone: bool,
}

impl ModelOverrides {
    pub fn apply(&self, model: &mut Model<f32>) {
        if self.no_fb_label {
            model.features.cfg.use_label_map = false;
            model.cfg.backbone.use_label_map = false;
        }
        if self.share_backbone {
            model.features.share_query_backbone();
            model.cfg.backbone.share_backbone = true;
        }
    }
}

/// A query pixel whose similarity column is recorded at frame `frame`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimilarityProbe {
    pub frame: usize,
    pub pixel: usize,
}

/// Tracker state for one sequence. Frame numbers are 1-based.
pub struct TrackerSession<'m> {
    model: &'m Model<f32>,
    cfg: TrackerConfig,
    bank: MemoryBank,
    grid: GridGeometry,
    window: Vec<f64>,
    /// Frames seen so far with the box used for their memory crop.
    history: Vec<(RgbImage, BBox)>,
    prev: BBox,
    trace: Vec<(usize, Vec<usize>)>,
    probe: Option<SimilarityProbe>,
    probe_dump: Option<String>,
}

impl<'m> TrackerSession<'m> {
    /// Starts a session from the first frame and its annotation.
    pub fn new(model: &'m Model<f32>, cfg: TrackerConfig, first: &RgbImage, init: BBox) -> Result<Self> {
        init.validate()?;
        let grid = model.grid();
        let mut s = TrackerSession {
            model,
            bank: MemoryBank::new(cfg.bank_capacity)?,
            cfg,
            window: cosine_window(grid.size),
            grid,
            history: vec![(first.clone(), init)],
            prev: init,
            trace: Vec::new(),
            probe: None,
            probe_dump: None,
        };
        let f = s.embed_memory_frame(1)?;
        s.bank.insert(f, LabelSource::GroundTruth);
        Ok(s)
    }

    pub fn with_similarity_probe(mut self, probe: SimilarityProbe) -> Self {
        self.probe = Some(probe);
        self
    }

    /// Index of the last processed frame.
    pub fn t(&self) -> usize {
        self.history.len()
    }

    pub fn previous_box(&self) -> BBox {
        self.prev
    }

    /// `(t, selected frames)` for every processed frame after the first.
    pub fn trace(&self) -> &[(usize, Vec<usize>)] {
        &self.trace
    }

    /// CSV of the probed similarity column, once its frame has run.
    pub fn similarity_dump(&self) -> Option<&str> {
        self.probe_dump.as_deref()
    }

    fn embed_memory_frame(&self, frame: usize) -> Result<FeatureMap> {
        let (image, target) = &self.history[frame - 1];
        let n = self.model.cfg.input_size;
        let t = CropTransform::around(target, n)?;
        let patch = crop(image, &t);
        let label = make_label_map(target, &t)?;
        Ok(FeatureMap {
            data: self.model.embed_memory(&patch, &label.map)?,
            frame_index: frame,
            crop: t,
        })
    }

    /// Gathers the memory for step `t`, embedding frames that are not cached.
    fn memory_for(&mut self, t: usize) -> Result<Vec<FeatureMap>> {
        let selection = self.cfg.memory.select(t)?;
        let mut out = Vec::with_capacity(selection.len());
        for &i in &selection {
            let f = match self.bank.get(i) {
                Some(e) => e.feature.clone(),
                None => {
                    let f = self.embed_memory_frame(i)?;
                    let source = if i == 1 { LabelSource::GroundTruth } else { LabelSource::Predicted };
                    self.bank.insert(f.clone(), source);
                    f
                }
            };
            out.push(f);
        }
        self.bank.touch(&selection);
        self.trace.push((t, selection));
        Ok(out)
    }

    /// Localizes the target in the next frame.
    pub fn step(&mut self, frame: &RgbImage) -> Result<(BBox, f64)> {
        let first = &self.history[0].0;
        if frame.width != first.width || frame.height != first.height {
            return Err(Error::invalid("frame size changed within a sequence"));
        }
        let t = self.t() + 1;
        let memory = self.memory_for(t)?;
        let n = self.model.cfg.input_size;
        let search = CropTransform::around(&self.prev, n)?;
        let query = self.model.embed_query(&crop(frame, &search))?;
        let refs: Vec<_> = memory.iter().map(|f| (&f.data, f.frame_index)).collect();
        let stacked = stack_memory(&refs)?;
        if let Some(p) = self.probe.filter(|p| p.frame == t) {
            let mut buf = Vec::new();
            write_similarity_column(&mut buf, &similarity(&stacked, &query)?, &stacked.provenance, p.pixel)?;
            self.probe_dump = Some(String::from_utf8(buf).expect("ascii csv"));
        }
        let y = read(&stacked, &query)?;
        let out = self.model.head_outputs(&y.data)?;
        let d = decode(&out, &self.grid, &search, &self.prev, &self.window, &self.cfg.postprocess)?;
        let b = keep_in_frame(d.bbox, frame.width as f64, frame.height as f64);
        self.history.push((frame.clone(), b));
        self.prev = b;
        Ok((b, d.score))
    }
}

/// Pulls the box centre into the image and bounds its size so the next
/// search crop stays meaningful.
fn keep_in_frame(b: BBox, width: f64, height: f64) -> BBox {
    let (cx, cy) = b.center();
    let w = b.w.clamp(2.0, width);
    let h = b.h.clamp(2.0, height);
    BBox::from_center(cx.clamp(0.0, width), cy.clamp(0.0, height), w, h)
}

/// Output of [`track_sequence`].
#[derive(Clone, Debug)]
pub struct TrackResult {
    /// `(box, score)` per frame; frame 1 is the annotation with score 1.
    pub frames: Vec<(BBox, f64)>,
    pub trace: Vec<(usize, Vec<usize>)>,
    /// Wall time of frames 2.. in seconds.
    pub seconds: f64,
}

impl TrackResult {
    pub fn boxes(&self) -> Vec<BBox> {
        self.frames.iter().map(|(b, _)| *b).collect()
    }

    /// Mean wall time per tracked frame in milliseconds.
    pub fn ms_per_frame(&self) -> f64 {
        let n = self.frames.len().saturating_sub(1).max(1);
        1e3 * self.seconds / n as f64
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        write_results(out, &self.frames)
    }

    pub fn write_trace(&self, out: &mut impl Write) -> Result<()> {
        for (t, sel) in &self.trace {
            writeln!(out, "{}", trace_line(*t, sel))?;
        }
        Ok(())
    }
}

/// Tracks `seq` from its first annotation.
pub fn track_sequence(model: &Model<f32>, seq: &SequenceRecord, cfg: &TrackerConfig) -> Result<TrackResult> {
    if seq.is_empty() {
        return Err(Error::invalid("cannot track an empty sequence"));
    }
    let init = seq.gt[0];
    let mut session = TrackerSession::new(model, cfg.clone(), &seq.frames[0], init)?;
    let mut frames = Vec::with_capacity(seq.len());
    frames.push((init, 1.0));
    let start = Instant::now();
    for frame in &seq.frames[1..] {
        frames.push(session.step(frame)?);
    }
    Ok(TrackResult {
        frames,
        trace: session.trace,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub const RESULTS_HEADER: &str = "frame_idx,x,y,w,h,score";

/// Writes `frame_idx,x,y,w,h,score` rows, 1-based, with a header.
pub fn write_results(out: &mut impl Write, frames: &[(BBox, f64)]) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for (i, (b, s)) in frames.iter().enumerate() {
        writeln!(out, "{}", result_line(i + 1, b, *s))?;
    }
    Ok(())
}

/// Parses a results file. Rows must be numbered 1, 2, ... in order.
pub fn parse_results(text: &str) -> Result<Vec<(BBox, f64)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (ln == 0 && line == RESULTS_HEADER) {
            continue;
        }
        let bad = |d: String| Error::format("results csv", format!("line {}: {d}", ln + 1));
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 6 {
            return Err(bad(format!("expected 6 columns, got {}", cols.len())));
        }
        let idx: usize = cols[0].parse().map_err(|_| bad(format!("bad frame index `{}`", cols[0])))?;
        if idx != out.len() + 1 {
            return Err(bad(format!("frame index {idx} out of order")));
        }
        let mut v = [0f64; 5];
        for (slot, c) in v.iter_mut().zip(&cols[1..]) {
            *slot = c.parse().map_err(|_| bad(format!("bad number `{c}`")))?;
        }
        let b = BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| bad(e.to_string()))?;
        out.push((b, v[4]));
    }
    Ok(out)
}
