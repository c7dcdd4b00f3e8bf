use std::path::Path;
use std::process::{Command, Output};

use motionsrvf::cli::{manifest_path, CliError, RunManifest};
use motionsrvf::dataset::load_landmark_sequences;
use motionsrvf::Error;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motionsrvf"))
        .current_dir(dir)
        .arg("-q")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = bin(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn version_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["--version"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));

    let out = bin(dir.path(), &["synth", "--out", "a.jsonl", "--bogus", "1"]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
    assert!(!dir.path().join("a.jsonl").exists());

    assert_eq!(code(&bin(dir.path(), &["synth"])), 1);
    assert_eq!(code(&bin(dir.path(), &["nonsense"])), 1);
    assert_eq!(code(&bin(dir.path(), &["heatmaps", "--in", "x", "--size", "64", "--out", "h"])), 1);
    assert_eq!(code(&bin(dir.path(), &["synth", "--threads", "0", "--out", "a.jsonl"])), 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bin(dir.path(), &["prepare", "--in", "missing.jsonl", "--out", "p"])), 2);
    std::fs::write(dir.path().join("bad.jsonl"), "{not json\n").unwrap();
    assert_eq!(code(&bin(dir.path(), &["prepare", "--in", "bad.jsonl", "--out", "p"])), 2);
    assert_eq!(code(&bin(dir.path(), &["synth", "--classes", "0", "--out", "s.jsonl"])), 2);
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
    assert_eq!(CliError::Lib(Error::EmptySet).exit_code(), 2);
    let numeric = Error::NonFiniteLoss {
        iteration: 3,
        what: "critic".into(),
    };
    assert_eq!(CliError::Lib(numeric).exit_code(), 3);
    assert_eq!(CliError::CheckFailed("g".into()).exit_code(), 3);
}

#[test]
fn synth_is_byte_identical_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--seed", "7", "--per-class", "5", "--out", "a.jsonl"]);
    ok(d, &["synth", "--seed", "7", "--per-class", "5", "--out", "b.jsonl"]);
    let a = std::fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.jsonl")).unwrap());

    let m = RunManifest::load(&manifest_path(&d.join("a.jsonl"))).unwrap();
    assert_eq!(m.command, "synth");
    assert_eq!(m.seed, Some(7));
    assert_eq!(m.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(m.config["per_class"], 5);
    assert_eq!(m.config["noise"], 0.01);

    std::fs::remove_file(d.join("a.jsonl")).unwrap();
    ok(d, &["replay", "--manifest", "a.jsonl.manifest.json"]);
    assert_eq!(std::fs::read(d.join("a.jsonl")).unwrap(), a);
}

#[test]
fn small_pipeline_runs_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--per-class", "6", "--frames", "12", "--out", "c.jsonl"]);
    ok(d, &["prepare", "--in", "c.jsonl", "--frames", "12", "--out", "p.srvf"]);
    ok(d, &["mean", "--in", "p.srvf", "--class", "anger", "--out", "mean.json"]);
    ok(d, &["align", "--a", "c.jsonl", "--b", "c.jsonl", "--b-index", "2", "--out", "al.json"]);
    let train = [
        "train", "--data", "p.srvf", "--iters", "5", "--batch", "8", "--z-dim", "4",
        "--generator-widths", "16", "--critic-widths", "16", "--out", "m.ckpt", "--log", "log.csv",
    ];
    ok(d, &train);
    let log = std::fs::read_to_string(d.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);

    for (class, seed) in [("anger", "0"), ("disgust", "100")] {
        let out = format!("g_{class}.jsonl");
        ok(d, &["generate", "--model", "m.ckpt", "--class", class, "--neutral", "c.jsonl",
                "--count", "3", "--seed", seed, "--out", &out]);
    }
    let g = load_landmark_sequences(&d.join("g_anger.jsonl"), Default::default()).unwrap();
    assert_eq!(g.len(), 3);
    assert_eq!(g[1].id, "anger-seed1");
    assert_eq!(g[0].num_frames(), 12);

    ok(d, &["eval", "--in", "g_anger.jsonl", "--in", "g_disgust.jsonl", "--means", "p.srvf",
            "--matrix", "dm.csv", "--report", "r.csv"]);
    let report = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(report.starts_with("samples,classes,"));
    assert!(report.lines().nth(1).unwrap().starts_with("6,2,"));

    ok(d, &["embed", "--in", "p.srvf", "--coords", "e.csv", "--out", "e.svg"]);
    let svg = std::fs::read_to_string(d.join("e.svg")).unwrap();
    assert!(roxmltree::Document::parse(&svg).is_ok());

    ok(d, &["transfer", "--source", "c.jsonl", "--neutral", "c.jsonl", "--neutral-index", "1",
            "--out", "t.jsonl"]);
    ok(d, &["heatmaps", "--in", "g_anger.jsonl", "--size", "32x48", "--pgm", "--out", "hm"]);
    let npy = std::fs::read(d.join("hm/anger-seed0.npy")).unwrap();
    assert_eq!(&npy[..6], b"\x93NUMPY");
    let header = u16::from_le_bytes([npy[8], npy[9]]) as usize;
    assert_eq!((10 + header) % 64, 0);
    assert_eq!(npy.len(), 10 + header + 4 * 12 * 2 * 32 * 48);
    assert!(d.join("hm/anger-seed0/frame_011.pgm").exists());

    for artifact in ["mean.json", "al.json", "m.ckpt", "g_anger.jsonl", "r.csv", "e.svg", "t.jsonl", "hm"] {
        let m = RunManifest::load(&manifest_path(&d.join(artifact))).unwrap();
        assert!(m.wall_time_s >= 0.0);
        assert_eq!(m.outputs[0], Path::new(artifact));
    }
}

#[test]
fn generate_with_zero_intensity_is_still() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--per-class", "4", "--frames", "8", "--out", "c.jsonl"]);
    ok(d, &["prepare", "--in", "c.jsonl", "--frames", "8", "--out", "p.srvf"]);
    ok(d, &["train", "--data", "p.srvf", "--iters", "2", "--batch", "4", "--z-dim", "4",
            "--generator-widths", "8", "--critic-widths", "8", "--out", "m.ckpt"]);
    ok(d, &["generate", "--model", "m.ckpt", "--class", "anger", "--neutral", "c.jsonl",
            "--intensity", "0", "--out", "z.jsonl"]);
    let seqs = load_landmark_sequences(&d.join("z.jsonl"), Default::default()).unwrap();
    let s = &seqs[0];
    for f in 1..s.num_frames() {
        assert_eq!(s.frame(f), s.frame(0));
    }
    let out = bin(d, &["generate", "--model", "m.ckpt", "--class", "anger", "--neutral", "c.jsonl",
                       "--intensity=-1", "--out", "n.jsonl"]);
    assert_eq!(code(&out), 2);
    let out = bin(d, &["generate", "--model", "m.ckpt", "--class", "nope", "--neutral", "c.jsonl",
                       "--out", "n.jsonl"]);
    assert_eq!(code(&out), 2);
}
