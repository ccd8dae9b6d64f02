//! Memory frame selection and the embedding cache used while tracking.
//!
//! Frame indices are 1-based. At step `t` the memory is drawn from frames
//! `1..t`: all of them while `t <= N`, otherwise the first frame, the
//! previous frame and one representative from each of `N - 2` equal
//! segments of the history.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::features::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentRule {
    /// `tau_i = floor(L * (i - 1 + delta))`: a point inside segment `i`.
    MidSegment,
    /// `tau_i = floor(L * (i + delta))`, clamped. Overshoots the history for
    /// most `t`; kept for comparison.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub n: usize,
    pub delta: f64,
    pub rule: SegmentRule,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n: 6,
            delta: 0.5,
            rule: SegmentRule::MidSegment,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!("memory size N = {} must be >= 2", self.n)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::invalid(format!("delta = {} must lie in [0, 1)", self.delta)));
        }
        Ok(())
    }
}

/// Sorted, distinct memory frame indices in `[1, t - 1]`.
pub fn select_memory_indices(t: usize, cfg: &SamplerConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if t < 2 {
        return Err(Error::invalid(format!("selection needs t >= 2, got {t}")));
    }
    let n = cfg.n;
    if t <= n {
        return Ok((1..t).collect());
    }
    let segments = n - 2;
    let mut picked = BTreeSet::from([1, t - 1]);
    if segments > 0 {
        let len = ((t - 1) / segments) as f64;
        for i in 1..=segments {
            let pos = match cfg.rule {
                SegmentRule::MidSegment => (i - 1) as f64 + cfg.delta,
                SegmentRule::Literal => i as f64 + cfg.delta,
            };
            let tau = (len * pos).floor() as usize;
            picked.insert(tau.clamp(1, t - 1));
        }
    }
    Ok(picked.into_iter().collect())
}

/// Which past frames a tracker reads from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MemoryPolicy {
    /// Only frame 1: the template-like baseline.
    FirstOnly,
    Sampled(SamplerConfig),
    /// Every past frame.
    All,
}

impl MemoryPolicy {
    /// `N = 1` maps to [`MemoryPolicy::FirstOnly`].
    pub fn with_size(n: usize, delta: f64, rule: SegmentRule) -> Result<Self> {
        match n {
            0 => Err(Error::invalid("memory size must be >= 1")),
            1 => Ok(MemoryPolicy::FirstOnly),
            n => {
                let cfg = SamplerConfig { n, delta, rule };
                cfg.validate()?;
                Ok(MemoryPolicy::Sampled(cfg))
            }
        }
    }

    pub fn select(&self, t: usize) -> Result<Vec<usize>> {
        if t < 2 {
            return Err(Error::invalid(format!("selection needs t >= 2, got {t}")));
        }
        match self {
            MemoryPolicy::FirstOnly => Ok(vec![1]),
            MemoryPolicy::Sampled(cfg) => select_memory_indices(t, cfg),
            MemoryPolicy::All => Ok((1..t).collect()),
        }
    }
}

/// Where a memory frame's label map came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSource {
    GroundTruth,
    Predicted,
}

#[derive(Clone, Debug)]
pub struct BankEntry {
    pub feature: FeatureMap,
    pub source: LabelSource,
    last_selected: u64,
}

/// Cache of memory embeddings keyed by frame index. Frame 1 is never
/// evicted; otherwise the least recently selected entry goes first.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    entries: BTreeMap<usize, BankEntry>,
    capacity: usize,
    clock: u64,
}

pub const DEFAULT_BANK_CAPACITY: usize = 64;

impl MemoryBank {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < 2 {
            return Err(Error::invalid("memory bank capacity must be >= 2"));
        }
        Ok(MemoryBank {
            entries: BTreeMap::new(),
            capacity,
            clock: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cached frame indices, ascending.
    pub fn frames(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, frame: usize) -> Option<&BankEntry> {
        self.entries.get(&frame)
    }

    pub fn insert(&mut self, feature: FeatureMap, source: LabelSource) {
        self.clock += 1;
        let frame = feature.frame_index;
        self.entries.insert(
            frame,
            BankEntry {
                feature,
                source,
                last_selected: self.clock,
            },
        );
        self.evict();
    }

    /// Marks frames as just selected.
    pub fn touch(&mut self, frames: &[usize]) {
        self.clock += 1;
        for f in frames {
            if let Some(e) = self.entries.get_mut(f) {
                e.last_selected = self.clock;
            }
        }
    }

    fn evict(&mut self) {
        while self.entries.len() > self.capacity {
            let victim = self
                .entries
                .iter()
                .filter(|(&f, _)| f != 1)
                .min_by_key(|(&f, e)| (e.last_selected, f))
                .map(|(&f, _)| f)
                .expect("capacity >= 2 leaves a non-first entry");
            self.entries.remove(&victim);
        }
    }
}

/// Stores frame `t - 1`'s embedding and refreshes recency for the frames
/// selected at `t`. Returns that selection.
pub fn update_bank(
    bank: &mut MemoryBank,
    new_feature: FeatureMap,
    source: LabelSource,
    t: usize,
    policy: &MemoryPolicy,
) -> Result<Vec<usize>> {
    if new_feature.frame_index + 1 != t {
        return Err(Error::invalid(format!(
            "bank update at t = {t} expects frame {}, got {}",
            t.saturating_sub(1),
            new_feature.frame_index
        )));
    }
    let selection = policy.select(t)?;
    bank.insert(new_feature, source);
    bank.touch(&selection);
    Ok(selection)
}

/// Selection trace line `t: [i1, i2, ...]`.
pub fn trace_line(t: usize, selection: &[usize]) -> String {
    let items: Vec<String> = selection.iter().map(|i| i.to_string()).collect();
    format!("{t}: [{}]", items.join(", "))
}
