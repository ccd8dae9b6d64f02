//! Runs the `memtrack` binary end to end on tiny inputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn memtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memtrack"))
        .args(args)
        .output()
        .expect("spawn memtrack")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

const TINY_MODEL: &str = "
input_size = 65
stages = 2x2, 3x2, 3x1, 4x2
reduced_channels = 4
head_depth = 1
epochs = 1
steps_per_epoch = 3
batch_size = 1
warmup_steps = 1
frames = 2
";

#[test]
fn missing_subcommand_and_bad_flags_exit_2() {
    assert_eq!(code(&memtrack(&[])), 2);
    assert_eq!(code(&memtrack(&["gen", "--seed", "x"])), 2);
    assert_eq!(code(&memtrack(&["bench", "--op", "conv", "--sizes", "1", "--out", "/tmp/x.csv"])), 2);
}

#[test]
fn missing_input_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = memtrack(&["eval", "--results", "/nonexistent.csv", "--gt", "/nonexistent", "--out", p(&out)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, "length = many\n").unwrap();
    let o = memtrack(&["gen", "--spec", p(&spec), "--seed", "1", "--out", p(&dir.path().join("s"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupt_checkpoint_is_a_runtime_or_input_failure() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, "length = 3\nwidth = 48\nheight = 48\n").unwrap();
    let seq = dir.path().join("seq");
    assert_eq!(code(&memtrack(&["gen", "--spec", p(&spec), "--seed", "1", "--out", p(&seq)])), 0);
    let ckpt = dir.path().join("bad.ckpt");
    fs::write(&ckpt, b"MTRK0001garbage").unwrap();
    let o = memtrack(&["track", "--ckpt", p(&ckpt), "--seq", p(&seq), "--out", p(&dir.path().join("r.csv"))]);
    assert_ne!(code(&o), 0);
    assert!([2, 3].contains(&code(&o)));
}

#[test]
fn gen_train_track_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("suite.txt"), "suite = static\ncount = 2\nlength = 6\n").unwrap();
    fs::write(d.join("model.txt"), TINY_MODEL).unwrap();
    let data = d.join("data");
    let o = memtrack(&["gen", "--spec", p(&d.join("suite.txt")), "--seed", "4", "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("static_4_000").join("groundtruth.txt").is_file());
    assert!(data.join("static_4_001").join("events.json").is_file());

    let ckpt = d.join("m.ckpt");
    let o = memtrack(&["train", "--config", p(&d.join("model.txt")), "--data", p(&data), "--out", p(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(&fs::read(&ckpt).unwrap()[..8], b"MTRK0001");
    let log = fs::read_to_string(d.join("m.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for key in ["step", "lr", "loss", "loss_cls", "loss_ctr", "loss_reg"] {
        assert!(log.lines().next().unwrap().contains(&format!("\"{key}\"")));
    }

    // Whole suite into a directory, with traces.
    let res = d.join("results");
    let tr = d.join("traces");
    let o = memtrack(&[
        "track", "--ckpt", p(&ckpt), "--seq", p(&data), "--out", p(&res), "--memory-size", "3", "--trace", p(&tr),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(res.join("static_4_000.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "frame_idx,x,y,w,h,score");
    assert_eq!(csv.lines().count(), 7);
    let trace = fs::read_to_string(tr.join("static_4_000.trace")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "2: [1]");
    assert_eq!(trace.lines().nth(4).unwrap(), "6: [1, 2, 5]");

    let report = d.join("report.json");
    let o = memtrack(&["eval", "--results", p(&res), "--gt", p(&data), "--out", p(&report), "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: memtrack::eval::EvalReport = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.sequences.len(), 2);
    assert!(r.is_consistent());
    assert_eq!(r.meta.seed, Some(4));

    // Single sequence with every track flag and a similarity dump.
    let one = data.join("static_4_001");
    let sim = d.join("sim.csv");
    let o = memtrack(&[
        "track", "--ckpt", p(&ckpt), "--seq", p(&one), "--out", p(&d.join("one.csv")), "--memory-size", "all",
        "--delta", "0.25", "--no-fb-label", "--share-backbone", "--literal-eq5", "--dump-similarity", p(&sim),
        "--dump-frame", "3", "--dump-pixel", "4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sim = fs::read_to_string(sim).unwrap();
    assert_eq!(sim.lines().next().unwrap(), "row_index,frame_index,weight");
    assert!(sim.lines().nth(1).unwrap().starts_with("0,1,"));
}

#[test]
fn bench_writes_rows_sorted_by_t() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = memtrack(&[
        "bench", "--op", "read", "--sizes", "4,1,2", "--out", p(&out), "--repeats", "3", "--channels", "4", "--grid", "5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out).unwrap();
    let ts: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(ts, ["1", "2", "4"]);
    let zero = memtrack(&["bench", "--op", "read", "--sizes", "1", "--out", p(&dir.path().join("z.csv")), "--repeats", "0"]);
    assert_eq!(code(&zero), 2);
}

#[test]
fn ablate_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.txt");
    fs::write(
        &grid,
        format!("{TINY_MODEL}\nsuite = static\nsequences = 1\nlength = 4\ntrain_sequences = 1\ntrain_length = 5\nmemory_size = 1, 2\n"),
    )
    .unwrap();
    let out = dir.path().join("table.csv");
    let o = memtrack(&["ablate", "--grid", p(&grid), "--seeds", "2", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("static,true,false,2,2,0.5,2,"));
    assert!(dir.path().join("table.csv.json").is_file());
}
