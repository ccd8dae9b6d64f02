//! Subcommand implementations.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use memtrack::config::KeyValues;
use memtrack::data::io::list_sequences;
use memtrack::data::{load_sequence, save_sequence, synth_sequence, synth_suite, SequenceRecord, SuiteKind, SynthSpec};
use memtrack::eval::ablate::write_table;
use memtrack::eval::bench::write_bench_csv;
use memtrack::eval::metrics::fnv1a;
use memtrack::eval::tracker::{SimilarityProbe, TrackResult};
use memtrack::eval::{
    bench_read, compute_metrics, parse_results, run_ablation, AblationGrid, EvalReport, FeatureShape, ModelOverrides,
    RunMeta, SequenceRow, TrackerConfig, TrackerSession,
};
use memtrack::train::{init_seed, run_meta, train, CheckpointPlan, TrainConfig};
use memtrack::{Model, ModelConfig};

use crate::Command;

/// A command-line mistake that the core library cannot see.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// 2 for bad input (arguments, malformed or missing files), 3 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<memtrack::Error>() {
            return match err {
                memtrack::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                e if e.is_invalid_argument() => 2,
                _ => 3,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    3
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { spec, seed, out } => gen(&spec, seed, &out),
        Command::Train { config, data, out, log } => train_cmd(&config, &data, &out, log),
        Command::Track {
            ckpt,
            seq,
            out,
            memory_size,
            delta,
            no_fb_label,
            share_backbone,
            literal_eq5,
            config,
            trace,
            dump_similarity,
            dump_frame,
            dump_pixel,
        } => {
            let mut kv = match &config {
                Some(p) => load_kv(p)?,
                None => KeyValues::default(),
            };
            if let Some(n) = memory_size {
                kv.set("memory_size", n);
            }
            if let Some(d) = delta {
                kv.set("delta", d);
            }
            if literal_eq5 {
                kv.set("segment_rule", "literal");
            }
            let cfg = TrackerConfig::from_kv(&mut kv)?;
            kv.finish()?;
            let overrides = ModelOverrides {
                no_fb_label,
                share_backbone,
            };
            let probe = dump_similarity.map(|path| {
                (
                    path,
                    SimilarityProbe {
                        frame: dump_frame.expect("clap requires it"),
                        pixel: dump_pixel.expect("clap requires it"),
                    },
                )
            });
            track(&ckpt, &seq, &out, &cfg, overrides, trace, probe)
        }
        Command::Eval {
            results,
            gt,
            out,
            seed,
            config,
            suite,
        } => eval(&results, &gt, &out, seed, config, suite),
        Command::Ablate { grid, seeds, out } => ablate(&grid, seeds, &out),
        Command::Bench {
            op,
            sizes,
            out,
            repeats,
            channels,
            grid,
        } => bench(&op, &sizes, &out, repeats, channels, grid),
    }
}

fn load_kv(path: &Path) -> Result<KeyValues> {
    KeyValues::load(path).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// A spec with `suite = <kind>` renders `count` sequences of `length`
/// frames into `<out>/<name>/`; otherwise the spec describes one sequence
/// written to `<out>`.
fn gen(spec: &Path, seed: u64, out: &Path) -> Result<()> {
    let mut kv = load_kv(spec)?;
    if let Some(kind) = kv.take::<SuiteKind>("suite")? {
        let count: usize = kv.take("count")?.unwrap_or(20);
        let length: usize = kv.take("length")?.unwrap_or(50);
        kv.finish()?;
        for seq in synth_suite(kind, count, length, seed)? {
            save_sequence(&seq, out.join(&seq.name))?;
        }
        eprintln!("wrote {count} {kind} sequences to {}", out.display());
    } else {
        let spec = SynthSpec::from_kv(&mut kv)?;
        kv.finish()?;
        let mut seq = synth_sequence(&spec, seed)?;
        seq.name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        save_sequence(&seq, out)?;
        eprintln!("wrote {} frames to {}", seq.len(), out.display());
    }
    Ok(())
}

fn load_all(root: &Path) -> Result<Vec<SequenceRecord>> {
    list_sequences(root)?
        .iter()
        .map(|d| load_sequence(d).with_context(|| format!("loading {}", d.display())))
        .collect()
}

fn train_cmd(config: &Path, data: &Path, out: &Path, log: Option<PathBuf>) -> Result<()> {
    let mut kv = load_kv(config)?;
    let mut model_cfg = ModelConfig::default();
    model_cfg.take_from(&mut kv)?;
    let mut cfg = TrainConfig::default();
    cfg.take_from(&mut kv)?;
    kv.finish()?;
    let seqs = load_all(data)?;
    let mut model = Model::new(model_cfg, init_seed(cfg.seed))?;
    eprintln!(
        "training {} parameters on {} sequences for {} steps",
        model.params.num_scalars(),
        seqs.len(),
        cfg.total_steps()
    );
    let log_path = log.unwrap_or_else(|| with_suffix(out, ".log.jsonl"));
    let mut log_file = create(&log_path)?;
    let plan = (cfg.checkpoint_every > 0).then(|| CheckpointPlan {
        dir: with_suffix(out, ".checkpoints"),
        every: cfg.checkpoint_every,
    });
    if let Some(p) = &plan {
        fs::create_dir_all(&p.dir)?;
    }
    let start = Instant::now();
    let history = train(&mut model, &seqs, &cfg, Some(&mut log_file), plan.as_ref())?;
    log_file.flush()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    model.save(out, &run_meta(&cfg, history.len()))?;
    let last = history.last().map_or(f64::NAN, |h| h.loss);
    eprintln!(
        "final loss {last:.4} after {:.1} s; checkpoint {}",
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn track(
    ckpt: &Path,
    seq_root: &Path,
    out: &Path,
    cfg: &TrackerConfig,
    overrides: ModelOverrides,
    trace: Option<PathBuf>,
    probe: Option<(PathBuf, SimilarityProbe)>,
) -> Result<()> {
    let (mut model, _) = Model::<f32>::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    overrides.apply(&mut model);
    let dirs = list_sequences(seq_root)?;
    let single = dirs.len() == 1 && dirs[0] == seq_root;
    if probe.is_some() && !single {
        return Err(usage("--dump-similarity needs a single sequence"));
    }
    for dir in &dirs {
        let seq = load_sequence(dir).with_context(|| format!("loading {}", dir.display()))?;
        let (result, dump) = track_one(&model, &seq, cfg, probe.as_ref().map(|p| p.1))?;
        let (csv, tr) = if single {
            (out.to_path_buf(), trace.clone())
        } else {
            (
                out.join(format!("{}.csv", seq.name)),
                trace.as_ref().map(|d| d.join(format!("{}.trace", seq.name))),
            )
        };
        let mut f = create(&csv)?;
        result.write_csv(&mut f)?;
        f.flush()?;
        if let Some(tr) = tr {
            let mut f = create(&tr)?;
            result.write_trace(&mut f)?;
            f.flush()?;
        }
        if let (Some((path, p)), Some(text)) = (&probe, &dump) {
            fs::write(path, text)?;
            eprintln!("similarity column of pixel {} at frame {} -> {}", p.pixel, p.frame, path.display());
        } else if let Some((_, p)) = &probe {
            return Err(usage(format!("--dump-frame {} is outside the sequence", p.frame)));
        }
        eprintln!("{}: {} frames, {:.1} ms/frame", seq.name, seq.len(), result.ms_per_frame());
    }
    Ok(())
}

fn track_one(
    model: &Model<f32>,
    seq: &SequenceRecord,
    cfg: &TrackerConfig,
    probe: Option<SimilarityProbe>,
) -> Result<(TrackResult, Option<String>)> {
    if seq.is_empty() {
        bail!(memtrack::Error::InvalidArgument(format!("sequence {} is empty", seq.name)));
    }
    let mut session = TrackerSession::new(model, cfg.clone(), &seq.frames[0], seq.gt[0])?;
    if let Some(p) = probe {
        session = session.with_similarity_probe(p);
    }
    let mut frames = vec![(seq.gt[0], 1.0)];
    let start = Instant::now();
    for f in &seq.frames[1..] {
        frames.push(session.step(f)?);
    }
    let dump = session.similarity_dump().map(str::to_string);
    Ok((
        TrackResult {
            frames,
            trace: session.trace().to_vec(),
            seconds: start.elapsed().as_secs_f64(),
        },
        dump,
    ))
}

fn eval(results: &Path, gt: &Path, out: &Path, seed: Option<u64>, config: Option<PathBuf>, suite: String) -> Result<()> {
    let start = Instant::now();
    let dirs = list_sequences(gt)?;
    let single = dirs.len() == 1 && dirs[0] == gt;
    let mut rows = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let seq = load_sequence(dir)?;
        let csv = if single {
            results.to_path_buf()
        } else {
            results.join(format!("{}.csv", seq.name))
        };
        let text = fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
        let preds: Vec<_> = parse_results(&text)?.into_iter().map(|(b, _)| b).collect();
        let metrics = compute_metrics(&preds, &seq.gt).with_context(|| format!("scoring {}", csv.display()))?;
        rows.push(SequenceRow {
            name: seq.name.clone(),
            frames: seq.len(),
            metrics,
        });
    }
    let config_hash = match &config {
        Some(p) => format!("{:016x}", fnv1a(fs::read_to_string(p)?.as_bytes())),
        None => "none".to_string(),
    };
    let report = EvalReport::new(
        RunMeta {
            seed,
            config_hash,
            wall_seconds: Some(start.elapsed().as_secs_f64()),
            suite,
        },
        rows,
    )?;
    let mut f = create(out)?;
    serde_json::to_writer_pretty(&mut f, &report)?;
    writeln!(f)?;
    f.flush()?;
    let a = &report.aggregate;
    eprintln!(
        "{} sequences: ao {:.4} sr50 {:.4} sr75 {:.4} auc {:.4} prec {:.4} norm_prec {:.4}",
        report.sequences.len(),
        a.ao,
        a.sr50,
        a.sr75,
        a.success_auc,
        a.precision,
        a.norm_precision
    );
    Ok(())
}

fn ablate(grid_path: &Path, seeds: u64, out: &Path) -> Result<()> {
    if seeds == 0 {
        return Err(usage("--seeds must be >= 1"));
    }
    let grid = AblationGrid::from_kv(load_kv(grid_path)?)?;
    let seed_list: Vec<u64> = (1..=seeds).collect();
    let results = run_ablation(&grid, &seed_list, &mut |line| eprintln!("{line}"))?;
    let mut f = create(out)?;
    write_table(&mut f, grid.suite, &results)?;
    f.flush()?;
    let mut j = create(&with_suffix(out, ".json"))?;
    serde_json::to_writer_pretty(&mut j, &results)?;
    writeln!(j)?;
    j.flush()?;
    Ok(())
}

fn bench(op: &str, sizes: &[usize], out: &Path, repeats: usize, channels: usize, grid: usize) -> Result<()> {
    if op != "read" {
        return Err(usage(format!("unknown bench op `{op}`; supported: read")));
    }
    if sizes.is_empty() {
        return Err(usage("--sizes needs at least one memory size"));
    }
    let shape = FeatureShape {
        c: channels,
        h: grid,
        w: grid,
    };
    let rows = bench_read(&[shape], sizes, repeats)?;
    let mut f = create(out)?;
    write_bench_csv(&mut f, &rows)?;
    f.flush()?;
    for r in &rows {
        eprintln!("T = {}: {:.3} ms", r.t, r.median_ms);
    }
    Ok(())
}
