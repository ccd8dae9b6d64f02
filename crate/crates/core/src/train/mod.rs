//! Desk-scale training: sample assembly, the SGD loop with its JSONL log,
//! and an overfit harness for sanity checks.

pub mod loss;
pub mod optim;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::KeyValues;
use crate::data::{crop, make_label_map, sample_training_frames, AugmentParams, SequenceRecord};
use crate::error::{Error, Result};
use crate::head::{encode_targets, Targets};
use crate::model::{Model, ModelInput};
use crate::params::Binding;
use crate::tensor::{Graph, Scalar, Tensor};

pub use loss::{compute_loss, loss_graph, LossBreakdown, LossWeights};
pub use optim::{LrSchedule, Sgd};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_steps: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Frames per training sample; the last is the query.
    pub frames: usize,
    pub max_gap: usize,
    /// Bound of the random crop shift, as a fraction of the crop side.
    pub max_shift: f64,
    pub seed: u64,
    pub loss: LossWeights,
    pub freeze_backbone: bool,
    pub freeze_label_embed: bool,
    pub freeze_reducers: bool,
    pub freeze_head: bool,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Rescales the batch gradient to at most this global L2 norm; 0 disables.
    pub clip_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2,
            steps_per_epoch: 2000,
            batch_size: 8,
            base_lr: 1e-3,
            peak_lr: 1e-2,
            final_lr: 1e-5,
            warmup_steps: 200,
            momentum: 0.9,
            weight_decay: 1e-4,
            frames: 3,
            max_gap: 100,
            max_shift: AugmentParams::MAX_SHIFT,
            seed: 0,
            loss: LossWeights::default(),
            freeze_backbone: false,
            freeze_label_embed: false,
            freeze_reducers: false,
            freeze_head: false,
            checkpoint_every: 0,
            clip_grad_norm: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.base_lr,
            peak: self.peak_lr,
            final_lr: self.final_lr,
            warmup: self.warmup_steps,
            total: self.total_steps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.clip_grad_norm >= 0.0) {
            return Err(Error::invalid("clip_grad_norm must be >= 0"));
        }
        if self.frames < 2 {
            return Err(Error::invalid("training needs frames >= 2 (memory + query)"));
        }
        if !(0.0..0.5).contains(&self.max_shift) {
            return Err(Error::invalid("max_shift must lie in [0, 0.5)"));
        }
        Ok(())
    }

    /// Removes training keys from `kv`, overriding the current values.
    pub fn take_from(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take_into("epochs", &mut self.epochs)?;
        kv.take_into("steps_per_epoch", &mut self.steps_per_epoch)?;
        kv.take_into("batch_size", &mut self.batch_size)?;
        kv.take_into("base_lr", &mut self.base_lr)?;
        kv.take_into("peak_lr", &mut self.peak_lr)?;
        kv.take_into("final_lr", &mut self.final_lr)?;
        kv.take_into("warmup_steps", &mut self.warmup_steps)?;
        kv.take_into("momentum", &mut self.momentum)?;
        kv.take_into("weight_decay", &mut self.weight_decay)?;
        kv.take_into("frames", &mut self.frames)?;
        kv.take_into("max_gap", &mut self.max_gap)?;
        kv.take_into("max_shift", &mut self.max_shift)?;
        kv.take_into("seed", &mut self.seed)?;
        kv.take_into("lambda_ctr", &mut self.loss.ctr)?;
        kv.take_into("lambda_reg", &mut self.loss.reg)?;
        kv.take_into("freeze_backbone", &mut self.freeze_backbone)?;
        kv.take_into("freeze_label_embed", &mut self.freeze_label_embed)?;
        kv.take_into("freeze_reducers", &mut self.freeze_reducers)?;
        kv.take_into("freeze_head", &mut self.freeze_head)?;
        kv.take_into("checkpoint_every", &mut self.checkpoint_every)?;
        kv.take_into("clip_grad_norm", &mut self.clip_grad_norm)?;
        self.validate()
    }

    /// Marks frozen sub-networks in `model`.
    pub fn apply_freeze<F: Scalar>(&self, model: &mut Model<F>) {
        let p = &mut model.params;
        p.set_frozen_prefix("phi_m.", self.freeze_backbone);
        p.set_frozen_prefix("phi_q.", self.freeze_backbone);
        p.set_frozen_prefix("g.", self.freeze_label_embed);
        p.set_frozen_prefix("h_m.", self.freeze_reducers);
        p.set_frozen_prefix("h_q.", self.freeze_reducers);
        p.set_frozen_prefix("head.", self.freeze_head);
    }
}

/// Seed of the parameter initialization stream.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, 0x1417)
}

/// Seed of the data stream of batch `step`.
pub fn batch_seed(seed: u64, step: usize) -> u64 {
    derive_seed(seed, 0xda7a_0000 + step as u64)
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One training example: memory patches with ground-truth label maps, a
/// query patch and its grid targets.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub input: ModelInput<f32>,
    pub targets: Targets,
}

impl TrainSample {
    pub fn cast<F: Scalar>(&self) -> (ModelInput<F>, Targets) {
        let input = ModelInput {
            memory: self
                .input
                .memory
                .iter()
                .map(|(f, l)| (f.cast(), l.cast()))
                .collect(),
            query: self.input.query.cast(),
        };
        (input, self.targets.clone())
    }
}

/// Draws one sample: a sequence, `frames` indices within `max_gap`, and an
/// independent augmentation per frame with shifts up to `max_shift` of the
/// crop side.
pub fn draw_sample<F: Scalar>(
    model: &Model<F>,
    data: &[SequenceRecord],
    frames: usize,
    max_gap: usize,
    max_shift: f64,
    rng: &mut impl Rng,
) -> Result<TrainSample> {
    if data.is_empty() {
        return Err(Error::invalid("no training sequences"));
    }
    let n = model.cfg.input_size;
    let grid = model.grid();
    for _ in 0..64 {
        let seq = &data[rng.gen_range(0..data.len())];
        let idx = sample_training_frames(seq.len(), frames, max_gap, rng)?;
        let mut memory = Vec::with_capacity(frames - 1);
        let mut query = None;
        for (k, &i) in idx.iter().enumerate() {
            let gt = &seq.gt[i];
            let aug = AugmentParams::sample(crate::data::context_side(gt), max_shift, rng);
            let t = aug.crop_for(gt, n)?;
            let patch = crop(&seq.frames[i], &t);
            if k + 1 < frames {
                memory.push((patch, make_label_map(gt, &t)?.map));
            } else {
                query = Some((patch, t.box_to_patch(gt)));
            }
        }
        let (query, gt_patch) = query.expect("frames >= 2");
        match encode_targets(&gt_patch, &grid, n) {
            Ok(targets) => {
                return Ok(TrainSample {
                    input: ModelInput { memory, query },
                    targets,
                })
            }
            Err(Error::NoPositiveCells) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoPositiveCells)
}

/// Forward + backward of one sample. Returns the loss and per-parameter
/// gradients.
pub fn sample_gradients<F: Scalar>(
    model: &Model<F>,
    input: &ModelInput<F>,
    targets: &Targets,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<Option<Tensor<F>>>)> {
    let mut g = Graph::new();
    let mut bind = Binding::new();
    let head = model.forward(&mut g, &mut bind, input)?;
    let lv = loss_graph(&mut g, &head, targets, weights)?;
    let loss = lv.breakdown(&g, targets.num_pos);
    if !loss.total.is_finite() {
        return Ok((loss, Vec::new()));
    }
    let grads = g.backward(lv.total)?;
    let mut out = bind.gradients(&grads);
    out.resize(model.params.len(), None);
    Ok((loss, out))
}

fn accumulate<F: Scalar>(acc: &mut [Option<Tensor<F>>], grads: Vec<Option<Tensor<F>>>, k: F) {
    for (a, g) in acc.iter_mut().zip(grads) {
        let Some(g) = g else { continue };
        match a {
            Some(a) => {
                for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x = *x + k * *y;
                }
            }
            None => *a = Some(g.map(|v| v * k)),
        }
    }
}

/// Scales all gradients by one factor so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut [Option<Tensor<F>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter())
        .map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = F::c(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v = *v * k;
            }
        }
    }
    norm
}

/// One JSONL training-log record.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_cls: f64,
    pub loss_ctr: f64,
    pub loss_reg: f64,
}

/// Optimizer state carried between steps.
pub struct TrainState<F: Scalar = f32> {
    pub opt: Sgd<F>,
    pub step: usize,
}

impl<F: Scalar> TrainState<F> {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainState {
            opt: Sgd::new(cfg.momentum, cfg.weight_decay),
            step: 0,
        }
    }
}

/// Averages gradients over `batch`, applies one SGD update and advances
/// the step counter. `batch_seed` is reported if the loss is not finite.
pub fn train_step<F: Scalar>(
    model: &mut Model<F>,
    batch: &[(ModelInput<F>, Targets)],
    state: &mut TrainState<F>,
    cfg: &TrainConfig,
    batch_seed: u64,
) -> Result<StepLog> {
    let lr = cfg.schedule().lr(state.step);
    let k = F::c(1.0 / batch.len() as f64);
    let mut acc: Vec<Option<Tensor<F>>> = vec![None; model.params.len()];
    let mut mean = LossBreakdown::default();
    for (input, targets) in batch {
        let (l, grads) = sample_gradients(model, input, targets, &cfg.loss)?;
        if !l.total.is_finite() || grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss {
                step: state.step,
                batch_seed,
            });
        }
        accumulate(&mut acc, grads, k);
        let w = 1.0 / batch.len() as f64;
        mean.total += w * l.total;
        mean.cls += w * l.cls;
        mean.ctr += w * l.ctr;
        mean.reg += w * l.reg;
    }
    if cfg.clip_grad_norm > 0.0 {
        clip_global_norm(&mut acc, cfg.clip_grad_norm);
    }
    state.opt.step(&mut model.params, &acc, lr);
    let log = StepLog {
        step: state.step,
        lr,
        loss: mean.total,
        loss_cls: mean.cls,
        loss_ctr: mean.ctr,
        loss_reg: mean.reg,
    };
    state.step += 1;
    Ok(log)
}

/// Where and how often to checkpoint during [`train`].
#[derive(Clone, Debug)]
pub struct CheckpointPlan {
    pub dir: PathBuf,
    pub every: usize,
}

/// Trains `model` on `data` for `cfg.total_steps()` steps, writing one JSON
/// line per step to `log` when given.
pub fn train(
    model: &mut Model<f32>,
    data: &[SequenceRecord],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
    checkpoints: Option<&CheckpointPlan>,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    cfg.apply_freeze(model);
    let mut state = TrainState::new(cfg);
    let mut history = Vec::with_capacity(cfg.total_steps());
    for step in 0..cfg.total_steps() {
        let seed = batch_seed(cfg.seed, step);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = (0..cfg.batch_size)
            .map(|_| draw_sample(model, data, cfg.frames, cfg.max_gap, cfg.max_shift, &mut rng).map(|s| (s.input, s.targets)))
            .collect::<Result<Vec<_>>>()?;
        let entry = train_step(model, &batch, &mut state, cfg, seed)?;
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n")?;
        }
        if let Some(plan) = checkpoints {
            if plan.every > 0 && (step + 1) % plan.every == 0 {
                let path = plan.dir.join(format!("step_{:06}.ckpt", step + 1));
                model.save(&path, &run_meta(cfg, step + 1))?;
            }
        }
        history.push(entry);
    }
    Ok(history)
}

/// Metadata stored with trained checkpoints.
pub fn run_meta(cfg: &TrainConfig, steps: usize) -> std::collections::BTreeMap<String, String> {
    std::collections::BTreeMap::from([
        ("train_seed".to_string(), cfg.seed.to_string()),
        ("train_steps".to_string(), steps.to_string()),
    ])
}

/// Repeats full-batch updates on one fixed sample; returns the loss before
/// each update.
pub fn overfit_harness<F: Scalar>(
    model: &mut Model<F>,
    sample: &(ModelInput<F>, Targets),
    max_steps: usize,
    cfg: &TrainConfig,
) -> Result<Vec<LossBreakdown>> {
    let mut state = TrainState::new(cfg);
    let mut curve = Vec::with_capacity(max_steps);
    let batch = std::slice::from_ref(sample);
    for _ in 0..max_steps {
        let entry = train_step(model, batch, &mut state, cfg, cfg.seed)?;
        curve.push(LossBreakdown {
            total: entry.loss,
            cls: entry.loss_cls,
            ctr: entry.loss_ctr,
            reg: entry.loss_reg,
            num_pos: sample.1.num_pos,
        });
    }
    Ok(curve)
}

/// Step of the whole-model check. Smaller than the per-op step: the model
/// has enough relu units that a 1e-5 nudge occasionally carries one across
/// its kink.
pub const MODEL_CHECK_EPS: f64 = 1e-6;

/// Central-difference check of the full model + loss in f64 on a synthetic
/// sample with `frames` frames (the last one is the query).
///
/// Biases are moved off their zero initialisation first: with zero biases
/// and relu inputs many pre-activations sit exactly on the relu kink, where
/// the one-sided tape derivative and the two-sided numeric one disagree.
pub fn model_gradient_check(
    cfg: &crate::model::ModelConfig,
    seed: u64,
    frames: usize,
) -> Result<crate::tensor::GradCheckReport> {
    let sampler = Model::<f32>::new(cfg.clone(), seed)?;
    let model = sampler.cast::<f64>();
    let data = crate::data::synth_suite(crate::data::SuiteKind::Static, 2, 10, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, targets) = draw_sample(&sampler, &data, frames, 100, AugmentParams::MAX_SHIFT, &mut rng)?.cast::<f64>();
    let mut inputs = Vec::with_capacity(model.params.len());
    for (_, p) in model.params.iter() {
        let mut v = p.value.clone();
        if p.name.ends_with(".bias") {
            for x in v.data_mut() {
                *x += rng.gen_range(-0.2..0.2);
            }
        }
        inputs.push(v);
    }
    let weights = LossWeights::default();
    crate::tensor::grad_check(
        |g, xs| {
            let mut bind = Binding::with_vars(xs);
            let head = model.forward(g, &mut bind, &input)?;
            Ok(loss_graph(g, &head, &targets, &weights)?.total)
        },
        &inputs,
        MODEL_CHECK_EPS,
    )
}

/// Saves the training log of `history` as JSON lines.
pub fn write_log(path: impl AsRef<Path>, history: &[StepLog]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for h in history {
        serde_json::to_writer(&mut f, h)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
