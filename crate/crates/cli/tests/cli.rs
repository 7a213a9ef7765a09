use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cospeech"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn err_json(args: &[&str]) -> (i32, Value) {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("stderr has a line");
    (out.status.code().unwrap(), serde_json::from_str(last).expect("stderr ends with error JSON"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sha(p: &Path) -> String {
    hex(Sha256::digest(std::fs::read(p).unwrap()).as_slice())
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

/// Small corpus plus a models directory trained on it.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    fn manifest(&self) -> PathBuf {
        self.corpus().join("manifest.json")
    }
    fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    fn wav(&self, id: usize) -> PathBuf {
        self.corpus().join("audio").join(format!("turn_{id:05}.wav"))
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        let v = ok_json(&["synth", "--n", "16", "--seed", "3", "--out", s(&f.corpus())]);
        assert_eq!(v["turns"], 16);
        ok_json(&[
            "train-all",
            "--manifest",
            s(&f.manifest()),
            "--out-dir",
            s(&f.models()),
            "--k",
            "32",
            "--audio-codes",
            "8",
        ]);
        f
    })
}

#[test]
fn generate_is_reproducible() {
    let f = fixture();
    let out = f.root.join("gen");
    std::fs::create_dir_all(&out).unwrap();
    let mut hashes = Vec::new();
    for run_id in ["a", "b"] {
        let prefix = out.join(run_id);
        let v = ok_json(&[
            "generate",
            "--label",
            "wave",
            "--audio",
            s(&f.wav(0)),
            "--models-dir",
            s(&f.models()),
            "--seed",
            "5",
            "--sample",
            "--out-prefix",
            s(&prefix),
        ]);
        assert_eq!(v["frames"], 80);
        let trace: Value = serde_json::from_slice(&std::fs::read(out.join(format!("{run_id}.trace.json"))).unwrap()).unwrap();
        assert!(trace["timings_ms"]["total"].is_number());
        assert!(trace["windows"][0]["accepted_per_round"].is_array());
        hashes.push((
            sha(&out.join(format!("{run_id}.motion.samo"))),
            sha(&out.join(format!("{run_id}.face.samo"))),
            trace["digest"].clone(),
        ));
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn stream_reports_realtime_factor() {
    let f = fixture();
    let script = f.root.join("script.json");
    let turns = serde_json::json!([
        {"label": "nod", "audio": f.wav(1)},
        {"label": "clap", "audio": f.wav(4)},
    ]);
    std::fs::write(&script, serde_json::to_vec(&turns).unwrap()).unwrap();
    let out = f.root.join("stream");
    let v = ok_json(&["stream", "--models-dir", s(&f.models()), "--script", s(&script), "--out-dir", s(&out)]);
    assert_eq!(v["turns"].as_array().unwrap().len(), 2);
    assert_eq!(v["total_frames"], 160);
    assert!(v["realtime_factor"].as_f64().unwrap() > 0.0);
    for t in v["turns"].as_array().unwrap() {
        assert!(t["realtime_factor"].is_number() && t["wall_ms"].is_number());
    }
    let second: Value = serde_json::from_slice(&std::fs::read(out.join("turn_001.trace.json")).unwrap()).unwrap();
    assert_eq!(second["prefix"].as_array().unwrap().len(), 2);
    assert!(second["windows"][0]["start"].as_i64().unwrap() < 0);
    assert!(out.join("session.json").is_file());
}

#[test]
fn esd_on_clean_turn() {
    let f = fixture();
    let motion = f.corpus().join("motion").join("turn_00002.samo");
    let v = ok_json(&["esd", "--audio", s(&f.wav(2)), "--motion", s(&motion)]);
    assert!(v["esd"].as_f64().unwrap() <= 0.075, "{v}");
    assert_eq!(v["penalized"], false);
}

#[test]
fn eval_of_truth_against_itself() {
    let f = fixture();
    let out = f.root.join("eval.json");
    let v = ok_json(&[
        "eval",
        "--manifest",
        s(&f.manifest()),
        "--generated-dir",
        s(&f.corpus().join("motion")),
        "--codec",
        s(&f.models().join("body.codec")),
        "--out",
        s(&out),
    ]);
    assert!(v["aggregate"]["frechet"].as_f64().unwrap() <= 1e-6);
    assert_eq!(v["aggregate"]["count"], 16);
    assert_eq!(v["per_sample"].as_array().unwrap().len(), 16);
    assert_eq!(v, serde_json::from_slice::<Value>(&std::fs::read(out).unwrap()).unwrap());
}

#[test]
fn staged_training_builds_a_models_dir() {
    let f = fixture();
    let dir = f.root.join("staged");
    let m = s(&f.manifest()).to_string();
    let body = dir.join("body.codec");
    let face = dir.join("face.codec");
    ok_json(&["train-codec", "--manifest", &m, "--k", "16", "--seed", "1", "--out", s(&body)]);
    ok_json(&["train-codec", "--manifest", &m, "--layers", "2", "--k", "16", "--track", "face", "--out", s(&face)]);
    ok_json(&["train-planner", "--manifest", &m, "--codec", s(&body), "--audio-codes", "8", "--out", s(&dir.join("planner.bin"))]);
    let v = ok_json(&["train-infill-index", "--manifest", &m, "--body-codec", s(&body), "--face-codec", s(&face), "--out-dir", s(&dir)]);
    assert!(v["body_windows"].as_u64().unwrap() > 0);
    let v = ok_json(&[
        "generate",
        "--label",
        "bow",
        "--audio",
        s(&f.wav(5)),
        "--models-dir",
        s(&dir),
        "--out-prefix",
        s(&dir.join("out")),
    ]);
    assert_eq!(v["frames"], 80);

    let tokens = dir.join("tokens.json");
    let motion = f.corpus().join("motion").join("turn_00003.samo");
    ok_json(&["tokenize", "--codec", s(&body), "--in", s(&motion), "--out", s(&tokens)]);
    let v = ok_json(&["detokenize", "--codec", s(&body), "--in", s(&tokens), "--out", s(&dir.join("back.samo"))]);
    assert_eq!(v["frames"], 80);
    let (code, e) = err_json(&["detokenize", "--codec", s(&face), "--in", s(&tokens), "--out", s(&dir.join("x.samo"))]);
    assert_eq!(code, 1);
    assert_eq!(e["error"]["kind"], "codec_mismatch");
}

#[test]
fn failures_are_json_on_stderr() {
    let (code, e) = err_json(&["esd", "--audio", "a.wav", "--motion", "m.samo", "--bogus"]);
    assert_eq!(code, 2);
    assert_eq!(e["error"]["kind"], "usage");

    let (code, e) = err_json(&["esd", "--audio", "/nonexistent/a.wav", "--motion", "/nonexistent/m.samo"]);
    assert_eq!(code, 1);
    assert_eq!(e["error"]["kind"], "io");
    assert!(e["error"]["message"].as_str().unwrap().contains("/nonexistent/a.wav"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.samo");
    std::fs::write(&bad, b"SAMO\x01\x00\x00\x00garbage").unwrap();
    let f = fixture();
    let (_, e) = err_json(&["esd", "--audio", s(&f.wav(0)), "--motion", s(&bad)]);
    assert_eq!(e["error"]["kind"], "truncation");

    let out = run(&["esd", "--audio", s(&f.wav(0)), "--motion", s(&bad)]);
    assert!(out.stdout.is_empty());
}

#[test]
fn help_exits_cleanly() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("generate"));
}
