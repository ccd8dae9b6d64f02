//! Config-grid comparisons: train once per distinct training setting,
//! track a synthetic suite per seed, and report mean and spread.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::config::KeyValues;
use crate::data::{synth_suite, SequenceRecord, SuiteKind};
use crate::error::{Error, Result};
use crate::eval::metrics::{compute_metrics, Metrics};
use crate::eval::tracker::{track_sequence, MemorySize, TrackerConfig};
use crate::head::PostprocessConfig;
use crate::memory::SegmentRule;
use crate::model::{Model, ModelConfig};
use crate::train::{train, TrainConfig};

/// Settings that require their own trained model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct TrainingKey {
    pub fb_label: bool,
    pub share_backbone: bool,
    /// Frames per training sample.
    pub frames: usize,
}

/// One row of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Setting {
    #[serde(flatten)]
    pub training: TrainingKey,
    #[serde(serialize_with = "serialize_display")]
    pub memory_size: MemorySize,
    pub delta: f64,
}

fn serialize_display<S: serde::Serializer>(v: &MemorySize, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Clone, Debug)]
pub struct AblationGrid {
    /// Evaluation suite; seed `s` renders it from `EVAL_SEED_OFFSET + s`.
    pub suite: SuiteKind,
    pub sequences: usize,
    pub length: usize,
    pub train_suite: SuiteKind,
    pub train_sequences: usize,
    pub train_length: usize,
    pub train_data_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub postprocess: PostprocessConfig,
    pub rule: SegmentRule,
    pub settings: Vec<Setting>,
}

/// Keeps evaluation suites disjoint from the training suite seeds.
pub const EVAL_SEED_OFFSET: u64 = 1000;

impl AblationGrid {
    /// Parses a grid. `fb_label`, `share_backbone`, `frames`, `memory_size`
    /// and `delta` take comma-separated lists whose product forms the rows;
    /// every other model, training and post-processing key applies to all.
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let fb: Vec<bool> = kv.take_list("fb_label")?.unwrap_or_else(|| vec![true]);
        let share: Vec<bool> = kv.take_list("share_backbone")?.unwrap_or_else(|| vec![false]);
        let frames: Vec<usize> = kv.take_list("frames")?.unwrap_or_else(|| vec![3]);
        let sizes: Vec<MemorySize> = kv.take_list("memory_size")?.unwrap_or_else(|| vec![MemorySize::Frames(6)]);
        let deltas: Vec<f64> = kv.take_list("delta")?.unwrap_or_else(|| vec![0.5]);
        if [fb.len(), share.len(), frames.len(), sizes.len(), deltas.len()].contains(&0) {
            return Err(Error::invalid("grid axes must not be empty"));
        }
        let mut grid = AblationGrid {
            suite: kv.take("suite")?.unwrap_or(SuiteKind::Occlusion),
            sequences: kv.take("sequences")?.unwrap_or(20),
            length: kv.take("length")?.unwrap_or(50),
            train_suite: kv.take("train_suite")?.unwrap_or(SuiteKind::Mixed),
            train_sequences: kv.take("train_sequences")?.unwrap_or(32),
            train_length: kv.take("train_length")?.unwrap_or(50),
            train_data_seed: kv.take("train_data_seed")?.unwrap_or(0),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            postprocess: PostprocessConfig::default(),
            rule: match kv.take::<String>("segment_rule")?.as_deref() {
                None | Some("mid") => SegmentRule::MidSegment,
                Some("literal") => SegmentRule::Literal,
                Some(o) => return Err(Error::invalid(format!("unknown segment_rule `{o}`"))),
            },
            settings: Vec::new(),
        };
        grid.model.take_from(&mut kv)?;
        grid.train.take_from(&mut kv)?;
        grid.postprocess.take_from(&mut kv)?;
        kv.finish()?;
        if grid.sequences == 0 || grid.length < 2 || grid.train_sequences == 0 || grid.train_length < 2 {
            return Err(Error::invalid("suites need at least one sequence of two frames"));
        }
        for &fb_label in &fb {
            for &share_backbone in &share {
                for &f in &frames {
                    for &memory_size in &sizes {
                        for &delta in &deltas {
                            memory_size.policy(delta, grid.rule)?;
                            grid.settings.push(Setting {
                                training: TrainingKey {
                                    fb_label,
                                    share_backbone,
                                    frames: f,
                                },
                                memory_size,
                                delta,
                            });
                        }
                    }
                }
            }
        }
        Ok(grid)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(KeyValues::parse(text)?)
    }

    pub fn model_config(&self, key: &TrainingKey) -> ModelConfig {
        let mut m = self.model.clone();
        m.backbone.use_label_map = key.fb_label;
        m.backbone.share_backbone = key.share_backbone;
        m
    }

    pub fn train_config(&self, key: &TrainingKey) -> TrainConfig {
        TrainConfig {
            frames: key.frames,
            ..self.train.clone()
        }
    }

    pub fn tracker_config(&self, s: &Setting) -> Result<TrackerConfig> {
        Ok(TrackerConfig {
            memory: s.memory_size.policy(s.delta, self.rule)?,
            postprocess: self.postprocess,
            ..TrackerConfig::default()
        })
    }

    pub fn eval_suite(&self, seed: u64) -> Result<Vec<SequenceRecord>> {
        synth_suite(self.suite, self.sequences, self.length, EVAL_SEED_OFFSET + seed)
    }

    pub fn training_data(&self) -> Result<Vec<SequenceRecord>> {
        synth_suite(self.train_suite, self.train_sequences, self.train_length, self.train_data_seed)
    }

    /// Distinct training settings in first-use order.
    pub fn training_keys(&self) -> Vec<TrainingKey> {
        let mut keys: Vec<TrainingKey> = Vec::new();
        for s in &self.settings {
            if !keys.contains(&s.training) {
                keys.push(s.training);
            }
        }
        keys
    }

    /// Trains the model for `key` from `self.train.seed`.
    pub fn train_model(&self, key: &TrainingKey, data: &[SequenceRecord]) -> Result<Model<f32>> {
        let cfg = self.train_config(key);
        let mut model = Model::new(self.model_config(key), crate::train::init_seed(cfg.seed))?;
        train(&mut model, data, &cfg, None, None)?;
        Ok(model)
    }
}

/// Suite-level results of one setting under one seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Mean over sequences of per-sequence metrics.
    pub metrics: Metrics,
    /// Mean over sequences of per-frame wall time.
    pub ms_per_frame: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SettingResult {
    pub setting: Setting,
    pub seeds: Vec<SeedResult>,
}

/// Mean and sample standard deviation (`n - 1`; 0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

impl SettingResult {
    pub fn ao(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.metrics.ao).collect()
    }

    pub fn ms_per_frame(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.ms_per_frame).collect()
    }
}

/// Tracks `suite` and averages per-sequence metrics and timings.
pub fn evaluate_suite(model: &Model<f32>, suite: &[SequenceRecord], cfg: &TrackerConfig, seed: u64) -> Result<SeedResult> {
    let mut rows = Vec::with_capacity(suite.len());
    let mut ms = 0.0;
    for seq in suite {
        let r = track_sequence(model, seq, cfg)?;
        rows.push(compute_metrics(&r.boxes(), &seq.gt)?);
        ms += r.ms_per_frame();
    }
    Ok(SeedResult {
        seed,
        metrics: Metrics::mean(&rows)?,
        ms_per_frame: ms / suite.len() as f64,
    })
}

/// Outcome of "`better` beats `worse` by more than the cross-seed spread".
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrendVerdict {
    pub better_mean: f64,
    pub worse_mean: f64,
    pub margin: f64,
    /// Larger of the two cross-seed standard deviations.
    pub spread: f64,
    pub holds: bool,
}

pub fn trend(better: &[f64], worse: &[f64]) -> TrendVerdict {
    let (bm, bs) = mean_std(better);
    let (wm, ws) = mean_std(worse);
    let spread = bs.max(ws);
    let margin = bm - wm;
    TrendVerdict {
        better_mean: bm,
        worse_mean: wm,
        margin,
        spread,
        holds: margin > spread,
    }
}

/// Runs every setting of `grid` under `seeds`. `progress` receives one
/// line per finished unit of work.
pub fn run_ablation(grid: &AblationGrid, seeds: &[u64], progress: &mut dyn FnMut(&str)) -> Result<Vec<SettingResult>> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let data = grid.training_data()?;
    let mut models: BTreeMap<TrainingKey, Model<f32>> = BTreeMap::new();
    for key in grid.training_keys() {
        let m = grid.train_model(&key, &data)?;
        progress(&format!("trained {key:?}"));
        models.insert(key, m);
    }
    let suites: Vec<Vec<SequenceRecord>> = seeds.iter().map(|&s| grid.eval_suite(s)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(grid.settings.len());
    for s in &grid.settings {
        let cfg = grid.tracker_config(s)?;
        let model = &models[&s.training];
        let mut per_seed = Vec::with_capacity(seeds.len());
        for (&seed, suite) in seeds.iter().zip(&suites) {
            let r = evaluate_suite(model, suite, &cfg, seed)?;
            progress(&format!("{s:?} seed {seed}: ao {:.4}, {:.1} ms/frame", r.metrics.ao, r.ms_per_frame));
            per_seed.push(r);
        }
        out.push(SettingResult {
            setting: *s,
            seeds: per_seed,
        });
    }
    Ok(out)
}

pub const TABLE_HEADER: &str = "suite,fb_label,share_backbone,frames,memory_size,delta,seeds,\
ao_mean,ao_std,sr50_mean,sr50_std,sr75_mean,sr75_std,auc_mean,auc_std,precision_mean,precision_std,\
norm_precision_mean,norm_precision_std,ms_per_frame_mean,ms_per_frame_std";

/// One CSV row per setting with mean and std over seeds.
pub fn write_table(out: &mut impl Write, suite: SuiteKind, results: &[SettingResult]) -> Result<()> {
    writeln!(out, "{TABLE_HEADER}")?;
    for r in results {
        let s = &r.setting;
        let col = |f: &dyn Fn(&SeedResult) -> f64| {
            let v: Vec<f64> = r.seeds.iter().map(f).collect();
            let (m, sd) = mean_std(&v);
            format!("{m},{sd}")
        };
        writeln!(
            out,
            "{suite},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.training.fb_label,
            s.training.share_backbone,
            s.training.frames,
            s.memory_size,
            s.delta,
            r.seeds.len(),
            col(&|x| x.metrics.ao),
            col(&|x| x.metrics.sr50),
            col(&|x| x.metrics.sr75),
            col(&|x| x.metrics.success_auc),
            col(&|x| x.metrics.precision),
            col(&|x| x.metrics.norm_precision),
            col(&|x| x.ms_per_frame),
        )?;
    }
    Ok(())
}
