//! Acceptance suite. Every criterion runs in sequence inside one test so
//! wall times are not distorted by parallel test threads, and each prints
//! one PASS/FAIL line to stderr whether or not output is captured.

#[path = "../../core/tests/support/metrics_oracle.rs"]
mod metrics_oracle;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use memtrack::data::{synth_suite, AugmentParams, CropTransform, SuiteKind};
use memtrack::eval::ablate::{mean_std, trend, AblationGrid};
use memtrack::eval::{compute_metrics, run_ablation, MemorySize, SettingResult};
use memtrack::head::{cosine_window, decode, encode_targets, GridGeometry, HeadOutputs, PostprocessConfig};
use memtrack::memory::{select_memory_indices, SamplerConfig, SegmentRule};
use memtrack::reader::{read, read_graph, similarity, stack_memory};
use memtrack::tensor::{grad_check, Graph, Tensor, Var};
use memtrack::train::{draw_sample, model_gradient_check, overfit_harness, TrainConfig};
use memtrack::{BBox, Model, ModelConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn report(line: &str) {
    let mut e = std::io::stderr();
    let _ = writeln!(e, "{line}");
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn op_error(inputs: Vec<Tensor<f64>>, seed: u64, op: impl Fn(&mut Graph<f64>, &[Var]) -> memtrack::Result<Var>) -> f64 {
    // Fixed random output weights give every output element a distinct
    // upstream gradient.
    let rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = grad_check(
        |g, x| {
            let y = op(g, x)?;
            let w = g.constant(random(g.shape(y), &mut rng.clone()));
            let p = g.mul(y, w)?;
            Ok(g.sum(p))
        },
        &inputs,
        1e-5,
    )
    .expect("gradient check runs");
    r.max_relative_error
}

fn gradient_oracle() -> Outcome {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kink_free = |t: Tensor<f64>| t.map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v });
        let errs: Vec<(&str, f64)> = vec![
            ("conv2d", op_error(vec![random(&[2, 6, 6], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[3], &mut rng)], seed, |g, x| g.conv2d(x[0], x[1], Some(x[2]), 2, 1))),
            ("conv2d_1x1", op_error(vec![random(&[3, 4, 4], &mut rng), random(&[2, 3, 1, 1], &mut rng)], seed, |g, x| g.conv2d(x[0], x[1], None, 1, 0))),
            ("matmul", op_error(vec![random(&[3, 4], &mut rng), random(&[4, 5], &mut rng)], seed, |g, x| g.matmul(x[0], x[1]))),
            ("transpose", op_error(vec![random(&[3, 4], &mut rng)], seed, |g, x| g.transpose(x[0]))),
            ("add_mul", op_error(vec![random(&[7], &mut rng), random(&[7], &mut rng)], seed, |g, x| { let s = g.add(x[0], x[1])?; g.mul(s, x[1]) })),
            ("relu", op_error(vec![kink_free(random(&[12], &mut rng))], seed, |g, x| Ok(g.relu(x[0])))),
            ("sigmoid_scale", op_error(vec![random(&[12], &mut rng).map(|v| 4.0 * v)], seed, |g, x| { let s = g.sigmoid(x[0]); Ok(g.scale(s, -2.5)) })),
            ("scaled_exp", op_error(vec![random(&[12], &mut rng).map(|v| 3.0 * v)], seed, |g, x| Ok(g.scaled_exp(x[0], 8.0, 10.0)))),
            ("reshape_concat", op_error(vec![random(&[2, 3, 2], &mut rng), random(&[1, 3, 2], &mut rng)], seed, |g, x| {
                let c = g.concat_channels(x[0], x[1])?;
                let r = g.reshape(c, &[9, 2])?;
                let t = g.transpose(r)?;
                g.concat(&[t, t])
            })),
            ("softmax_columns", op_error(vec![random(&[4, 5], &mut rng).map(|v| 3.0 * v)], seed, |g, x| g.softmax_columns(x[0], 1.7))),
            ("memory_read", op_error((0..3).map(|_| random(&[3, 3, 2], &mut rng)).collect(), seed, |g, x| read_graph(g, &x[..2], x[2]))),
        ];
        for (name, e) in errs {
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(w) => w.1 = w.1.max(e),
                None => worst.push((name, e)),
            }
        }
    }
    let mut model_worst = 0.0f64;
    for seed in [1u64, 5] {
        let r = model_gradient_check(&ModelConfig::tiny(), seed, 2).map_err(|e| e.to_string())?;
        ensure(r.checked > 1000, format!("only {} components checked", r.checked))?;
        model_worst = model_worst.max(r.max_relative_error);
    }
    let op_max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let bad: Vec<_> = worst.iter().filter(|w| w.1 >= 1e-4).collect();
    ensure(bad.is_empty(), format!("ops over tolerance: {bad:?}"))?;
    ensure(model_worst < 1e-4, format!("tiny model rel err {model_worst:.3e}"))?;
    Ok(format!("{} ops max rel err {op_max:.2e}; tiny model (C=4, 5x5, T=2, f64) {model_worst:.2e}", worst.len()))
}

// ---------------------------------------------------------------- 2

fn read_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_col = 0.0f64;
    let mut worst_perm = 0.0f64;
    let mut worst_sat = 0.0f64;
    for _ in 0..100 {
        let (c, h, w, t) = (rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let amp = [0.1, 1.0, 5.0][rng.gen_range(0..3)];
        let frames: Vec<Tensor<f64>> = (0..t).map(|_| random(&[c, h, w], &mut rng).map(|v| amp * v)).collect();
        let refs: Vec<_> = frames.iter().enumerate().map(|(i, f)| (f, i + 1)).collect();
        let m = stack_memory(&refs).map_err(|e| e.to_string())?;
        let q = random(&[c, h, w], &mut rng).map(|v| amp * v);
        let hw = h * w;
        let wts = similarity(&m, &q).map_err(|e| e.to_string())?.weights;
        for j in 0..hw {
            let s: f64 = (0..m.rows()).map(|i| wts.data()[i * hw + j]).sum();
            worst_col = worst_col.max((s - 1.0).abs());
        }
        ensure(wts.data().iter().all(|v| (0.0..=1.0).contains(v)), "weight outside [0, 1]")?;
        let y = read(&m, &q).map_err(|e| e.to_string())?;
        let r = y.readout();
        for k in 0..c {
            let col: Vec<f64> = (0..m.rows()).map(|i| m.data.data()[i * c + k]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ensure(r.data()[k * hw..(k + 1) * hw].iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12), "readout outside the convex hull")?;
        }
        let mut perm: Vec<usize> = (0..m.rows()).collect();
        perm.shuffle(&mut rng);
        let yp = read(&m.permute_rows(&perm).map_err(|e| e.to_string())?, &q).map_err(|e| e.to_string())?;
        worst_perm = worst_perm.max(y.data.max_abs_diff(&yp.data));

        // Saturation: one memory row along q, leading every other logit by
        // at least 30 sqrt(C).
        let qv: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let rows = m.rows();
        let pick = rng.gen_range(0..rows);
        let mut md = m.data.data().to_vec();
        let best_other = (0..rows).filter(|&i| i != pick).map(|i| (0..c).map(|k| md[i * c + k] * qv[k]).sum::<f64>()).fold(0.0, f64::max);
        let qn2: f64 = qv.iter().map(|v| v * v).sum();
        let alpha = (best_other + 30.0 * c as f64) / qn2;
        for k in 0..c {
            md[pick * c + k] = alpha * qv[k];
        }
        let sat_frames: Vec<Tensor<f64>> = md
            .chunks(hw * c)
            .map(|block| Tensor::from_fn(&[c, h, w], |i| block[(i % hw) * c + i / hw]))
            .collect();
        let refs: Vec<_> = sat_frames.iter().enumerate().map(|(i, f)| (f, i + 1)).collect();
        let ms = stack_memory(&refs).map_err(|e| e.to_string())?;
        let qs = Tensor::from_fn(&[c, h, w], |i| qv[i / hw]);
        let rs = read(&ms, &qs).map_err(|e| e.to_string())?.readout();
        for k in 0..c {
            for j in 0..hw {
                worst_sat = worst_sat.max((rs.data()[k * hw + j] - md[pick * c + k]).abs());
            }
        }
    }
    ensure(worst_col <= 1e-6, format!("column sum off by {worst_col:.2e}"))?;
    ensure(worst_perm <= 1e-6, format!("permutation changed output by {worst_perm:.2e}"))?;
    ensure(worst_sat <= 1e-9, format!("saturation retrieval off by {worst_sat:.2e}"))?;
    Ok(format!("100 instances: column sum err {worst_col:.1e}, permutation err {worst_perm:.1e}, hull ok, saturation err {worst_sat:.1e}"))
}

// ---------------------------------------------------------------- 3

fn sampler_suite() -> Outcome {
    let mut calls = 0usize;
    for n in 2..=10 {
        for delta in [0.0, 0.5, 0.99] {
            let cfg = SamplerConfig { n, delta, rule: SegmentRule::MidSegment };
            for t in 2..=5000 {
                let sel = select_memory_indices(t, &cfg).map_err(|e| e.to_string())?;
                let again = select_memory_indices(t, &cfg).map_err(|e| e.to_string())?;
                calls += 1;
                let ctx = format!("t={t} N={n} delta={delta}: {sel:?}");
                ensure(sel.first() == Some(&1), format!("first frame missing, {ctx}"))?;
                ensure(sel.last() == Some(&(t - 1)), format!("previous frame missing, {ctx}"))?;
                ensure(sel.len() <= n, format!("more than N, {ctx}"))?;
                ensure(sel.iter().all(|&i| i >= 1 && i < t), format!("out of bounds, {ctx}"))?;
                ensure(sel.windows(2).all(|w| w[0] < w[1]), format!("not sorted/distinct, {ctx}"))?;
                ensure(sel == again, format!("nondeterministic, {ctx}"))?;
            }
        }
    }
    let short = select_memory_indices(4, &SamplerConfig::default()).map_err(|e| e.to_string())?;
    ensure(short == vec![1, 2, 3], format!("t=4, N=6 gave {short:?}"))?;
    Ok(format!("{calls} selections; t=4/N=6 -> {short:?}"))
}

// ---------------------------------------------------------------- 4

fn round_trip() -> Outcome {
    let (input, size, stride) = (289, 37, 8);
    let grid = GridGeometry::centered(input, size, stride);
    let window = cosine_window(size);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 1.0f64;
    for _ in 0..1000 {
        let (w, h) = (rng.gen_range(10.0..200.0), rng.gen_range(10.0..200.0));
        let b = BBox::new(rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0), w, h).map_err(|e| e.to_string())?;
        let (cx, cy) = b.center();
        let jitter = BBox::from_center(
            cx + rng.gen_range(-0.2..0.2) * w,
            cy + rng.gen_range(-0.2..0.2) * h,
            w * rng.gen_range(0.8..1.25),
            h * rng.gen_range(0.8..1.25),
        );
        let crop = CropTransform::around(&jitter, input).map_err(|e| e.to_string())?;
        let t = encode_targets(&crop.box_to_patch(&b), &grid, input).map_err(|e| e.to_string())?;
        let out = HeadOutputs {
            cls: t.cls.map(|c| if c > 0.5 { 40.0 } else { -40.0 }),
            ctr: t.ctr.map(|_| 40.0),
            reg: t.reg,
        };
        let prev = BBox::from_center(cx + 3.0, cy, w * 1.3, h * 0.8);
        let d = decode(&out, &grid, &crop, &prev, &window, &PostprocessConfig::raw()).map_err(|e| e.to_string())?;
        worst = worst.min(d.bbox.iou(&b));
    }
    ensure(worst >= 0.99, format!("worst IoU {worst:.4}"))?;
    Ok(format!("1000 boxes, worst IoU {worst:.6}"))
}

// ---------------------------------------------------------------- 5

/// Committed after the first oracle runs (final losses 0.0444, 0.0207,
/// 0.0179 on sample seeds 0, 1, 2).
const OVERFIT_THRESHOLD: f64 = 0.05;

fn overfit_config() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        steps_per_epoch: 300,
        batch_size: 1,
        warmup_steps: 30,
        base_lr: 0.003,
        peak_lr: 0.03,
        final_lr: 0.001,
        clip_grad_norm: 5.0,
        ..TrainConfig::default()
    }
}

fn overfit_curve() -> Result<Vec<f64>, String> {
    let data = synth_suite(SuiteKind::Static, 4, 50, 1).map_err(|e| e.to_string())?;
    let mut model = Model::<f32>::new(ModelConfig::default(), 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = draw_sample(&model, &data, 3, 100, AugmentParams::MAX_SHIFT, &mut rng).map_err(|e| e.to_string())?;
    let curve = overfit_harness(&mut model, &(s.input, s.targets), 300, &overfit_config()).map_err(|e| e.to_string())?;
    Ok(curve.iter().map(|l| l.total).collect())
}

fn overfit() -> Outcome {
    let a = overfit_curve()?;
    let b = overfit_curve()?;
    ensure(a.iter().all(|v| v.is_finite()), "non-finite loss")?;
    ensure(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "two runs differ")?;
    let best = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let hit = a.iter().position(|&v| v < OVERFIT_THRESHOLD);
    ensure(hit.is_some(), format!("best loss {best:.4} >= {OVERFIT_THRESHOLD}"))?;
    Ok(format!(
        "desk model: loss {:.3} -> {:.4} (below {OVERFIT_THRESHOLD} from step {}), two runs bit-identical",
        a[0],
        a[a.len() - 1],
        hit.unwrap() + 1
    ))
}

// ---------------------------------------------------------------- 6 / 7

/// Shared protocol: one desk model per training key trained on the mixed
/// suite, evaluated on 20 sequences for each of 3 seeds.
const TREND_PROTOCOL: &str = "
sequences = 20
length = 30
train_suite = mixed
train_sequences = 32
train_length = 50
epochs = 1
steps_per_epoch = 500
batch_size = 4
warmup_steps = 50
base_lr = 0.003
peak_lr = 0.03
final_lr = 0.001
clip_grad_norm = 5
";

const SEEDS: [u64; 3] = [1, 2, 3];

fn run_grid(extra: &str) -> Result<Vec<SettingResult>, String> {
    let grid = AblationGrid::parse(&format!("{TREND_PROTOCOL}{extra}")).map_err(|e| e.to_string())?;
    run_ablation(&grid, &SEEDS, &mut |line| report(&format!("    {line}"))).map_err(|e| e.to_string())
}

fn aos(r: &SettingResult) -> String {
    let (m, s) = mean_std(&r.ao());
    format!("{m:.4} +- {s:.4}")
}

fn memory_size_trend() -> Outcome {
    let results = run_grid("suite = occlusion\nmemory_size = 1, 2, 6\n")?;
    let by_n = |n: usize| results.iter().find(|r| r.setting.memory_size == MemorySize::Frames(n)).expect("grid setting");
    let (n1, n6) = (by_n(1), by_n(6));
    let v = trend(&n6.ao(), &n1.ao());
    let costs: Vec<f64> = [1, 2, 6].iter().map(|&n| mean_std(&by_n(n).ms_per_frame()).0).collect();
    let detail = format!(
        "occlusion AO N=6 {} vs N=1 {} (N=2 {}), margin {:.4} vs spread {:.4}; ms/frame N=1,2,6 {:.1}/{:.1}/{:.1}",
        aos(n6),
        aos(n1),
        aos(by_n(2)),
        v.margin,
        v.spread,
        costs[0],
        costs[1],
        costs[2]
    );
    ensure(costs.windows(2).all(|w| w[0] <= w[1]), format!("cost not non-decreasing: {detail}"))?;
    ensure(v.holds, format!("N=6 does not beat N=1 by more than the std: {detail}"))?;
    Ok(detail)
}

fn label_map_trend() -> Outcome {
    let results = run_grid("suite = clutter\nfb_label = true, false\nmemory_size = 6\n")?;
    let on = results.iter().find(|r| r.setting.training.fb_label).expect("fb on");
    let off = results.iter().find(|r| !r.setting.training.fb_label).expect("fb off");
    let v = trend(&on.ao(), &off.ao());
    let detail = format!("clutter AO fb_label on {} vs off {}, margin {:.4} vs spread {:.4}", aos(on), aos(off), v.margin, v.spread);
    ensure(v.holds, format!("label maps do not beat the no-label model by more than the std: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn metrics_oracle_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (preds, gts): (Vec<BBox>, Vec<BBox>) = (0..1000).map(|_| metrics_oracle::random_pair(&mut rng)).unzip();
    let got = compute_metrics(&preds, &gts).map_err(|e| e.to_string())?;
    let want = metrics_oracle::brute_metrics(&preds, &gts);
    ensure(got == want, format!("{got:?} != {want:?}"))?;
    let g = BBox::new(0.0, 0.0, 10.0, 10.0).map_err(|e| e.to_string())?;
    let hand = [g, BBox::new(0.0, 0.0, 6.0, 10.0).unwrap(), BBox::new(0.0, 0.0, 2.0, 10.0).unwrap()];
    let m = compute_metrics(&hand, &[g; 3]).map_err(|e| e.to_string())?;
    ensure((m.ao - 0.6).abs() < 1e-12 && m.sr50 == 2.0 / 3.0 && m.sr75 == 1.0 / 3.0, format!("hand case {m:?}"))?;
    Ok(format!("1000 pairs match exactly (AO {:.4}, AUC {:.4}); hand case AO 0.6, SR50 2/3, SR75 1/3", got.ao, got.success_auc))
}

// ---------------------------------------------------------------- 9

const PIPELINE_SUITE: &str = "suite = mixed\ncount = 3\nlength = 12\n";
const PIPELINE_TRAIN: &str = "
input_size = 129
reduced_channels = 8
head_depth = 1
epochs = 1
steps_per_epoch = 20
batch_size = 2
warmup_steps = 5
";

fn cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_memtrack")).args(args).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("memtrack {} failed: {}", args[0], String::from_utf8_lossy(&o.stderr)))
    }
}

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let s = |p: &Path| p.to_str().expect("utf-8").to_string();
    fs::write(dir.join("suite.txt"), PIPELINE_SUITE).map_err(|e| e.to_string())?;
    fs::write(dir.join("train.txt"), PIPELINE_TRAIN).map_err(|e| e.to_string())?;
    let (data, ckpt, res) = (dir.join("data"), dir.join("model.ckpt"), dir.join("results"));
    cli(&["gen", "--spec", &s(&dir.join("suite.txt")), "--seed", "9", "--out", &s(&data)])?;
    cli(&["train", "--config", &s(&dir.join("train.txt")), "--data", &s(&data), "--out", &s(&ckpt)])?;
    cli(&["track", "--ckpt", &s(&ckpt), "--seq", &s(&data), "--out", &s(&res)])?;
    cli(&["eval", "--results", &s(&res), "--gt", &s(&data), "--out", &s(&dir.join("report.json")), "--seed", "9"])?;
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&res)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let p = e.expect("dir entry").path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).expect("results file"))
        })
        .collect();
    files.sort();
    files.push(("model.ckpt".into(), fs::read(&ckpt).map_err(|e| e.to_string())?));
    Ok(files)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let ra = pipeline(a.path())?;
    let rb = pipeline(b.path())?;
    ensure(ra.len() == 4, format!("expected 3 results files and a checkpoint, got {}", ra.len()))?;
    for ((na, da), (nb, db)) in ra.iter().zip(&rb) {
        ensure(na == nb && da == db, format!("{na} differs between runs"))?;
    }
    Ok(format!("gen -> train -> track -> eval twice: {} results CSVs and the checkpoint bit-identical", ra.len() - 1))
}

// ----------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

#[test]
fn acceptance() {
    let criteria = [
        Criterion { id: 1, name: "gradient oracle", budget: Duration::from_secs(120), run: gradient_oracle },
        Criterion { id: 2, name: "memory-read invariants", budget: Duration::from_secs(60), run: read_invariants },
        Criterion { id: 3, name: "sampler conformance", budget: Duration::from_secs(60), run: sampler_suite },
        Criterion { id: 4, name: "encode/decode round trip", budget: Duration::from_secs(60), run: round_trip },
        Criterion { id: 5, name: "overfit sanity", budget: Duration::from_secs(300), run: overfit },
        Criterion { id: 6, name: "memory-size trend", budget: Duration::from_secs(1800), run: memory_size_trend },
        Criterion { id: 7, name: "label-map trend", budget: Duration::from_secs(1800), run: label_map_trend },
        Criterion { id: 8, name: "metrics oracle", budget: Duration::from_secs(60), run: metrics_oracle_check },
        Criterion { id: 9, name: "determinism", budget: Duration::from_secs(600), run: determinism },
    ];
    // Start below libtest's `test acceptance ...` prefix.
    report("");
    let mut failed = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let outcome = outcome.and_then(|d| {
            if took <= c.budget {
                Ok(d)
            } else {
                Err(format!("{d}; over the {}s budget", c.budget.as_secs()))
            }
        });
        let (verdict, detail) = match &outcome {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        report(&format!("[{verdict}] {}. {} ({:.1}s): {detail}", c.id, c.name, took.as_secs_f64()));
        if outcome.is_err() {
            failed.push(c.id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
