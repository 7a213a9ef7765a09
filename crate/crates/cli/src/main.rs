//! `cospeech` command line: corpus synthesis, training, generation,
//! streaming and evaluation. Reports go to stdout as JSON; failures exit
//! nonzero with a one-line JSON error on stderr.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use cospeech_core::dsp::MelConfig;
use cospeech_core::io::{load_corpus, read_motion, read_tokens, read_wav, write_atomic, write_corpus, write_face, write_motion, write_tokens, Manifest};
use cospeech_core::metrics::{diversity, esd, extract_audio_events, extract_motion_events, frechet_distance, EvalReport, SampleReport};
use cospeech_core::motion::MotionSequence;
use cospeech_core::plan::pipeline::{AUDIO_QUANT_FILE, BODY_INDEX_FILE, FACE_INDEX_FILE};
use cospeech_core::plan::planner::{DEFAULT_ALPHA, DEFAULT_ORDER};
use cospeech_core::plan::{
    generate_turn, train_all, train_indices, train_planner, Decoding, GenerateConfig, GenerationResult, Models, Session, TrainConfig,
};
use cospeech_core::rvq::{train_codec, RvqCodec};
use cospeech_core::synth::{synth_corpus, SynthSpec};

/// Internal audio rate; every clip is resampled to it on load.
const SAMPLE_RATE: u32 = 16_000;

#[derive(Parser)]
#[command(name = "cospeech", version, about = "Co-speech motion tokenization, generation and sync evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic corpus with planted audio-motion beats.
    Synth(SynthArgs),
    /// Train a residual codec on the body or face tracks of a corpus.
    TrainCodec(TrainCodecArgs),
    /// Motion file to token JSON.
    Tokenize(CodecIo),
    /// Token JSON to motion file.
    Detokenize(CodecIo),
    /// Train the audio quantizer and keyframe planner.
    TrainPlanner(TrainPlannerArgs),
    /// Build the body and face window indices.
    TrainInfillIndex(TrainIndexArgs),
    /// Train every model into a models directory.
    TrainAll(TrainAllArgs),
    /// Generate body motion and face for one utterance.
    Generate(GenerateArgs),
    /// Generate a multi-turn script through one session.
    Stream(StreamArgs),
    /// Event sync distance between an audio clip and a motion file.
    Esd(EsdArgs),
    /// Aggregate sync, diversity and Frechet report over generated motion.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.8)]
    beat_period: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Delay applied to motion beats only, in seconds.
    #[arg(long, default_value_t = 0.0)]
    motion_offset: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Track {
    Body,
    Face,
}

#[derive(Args)]
struct TrainCodecArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 512)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Track::Body)]
    track: Track,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CodecIo {
    #[arg(long)]
    codec: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainPlannerArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Body codec.
    #[arg(long)]
    codec: PathBuf,
    #[arg(long, default_value_t = 4)]
    t: usize,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 64)]
    audio_codes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Audio quantizer output; defaults to `audio.quant` next to `--out`.
    #[arg(long)]
    quantizer_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainIndexArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    body_codec: PathBuf,
    #[arg(long)]
    face_codec: PathBuf,
    #[arg(long, default_value_t = 4)]
    t: usize,
    #[arg(long, default_value_t = 8)]
    k_nn: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Receives `body.index` and `face.index`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainAllArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    t: usize,
    #[arg(long, default_value_t = 512)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    face_layers: usize,
    #[arg(long, default_value_t = 64)]
    audio_codes: usize,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 8)]
    k_nn: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DecodeArgs {
    /// Sampling seed; only used with `--sample`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample keyframes instead of greedy decoding.
    #[arg(long)]
    sample: bool,
}

impl DecodeArgs {
    fn config(&self) -> GenerateConfig {
        GenerateConfig {
            decoding: if self.sample { Decoding::Sample(self.seed) } else { Decoding::Greedy },
            ..GenerateConfig::default()
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    label: String,
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    models_dir: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Writes `<prefix>.motion.samo`, `<prefix>.face.samo` and `<prefix>.trace.json`.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    models_dir: PathBuf,
    /// JSON list of `{"label": ..., "audio": ...}`; audio paths resolve
    /// against the script's directory.
    #[arg(long)]
    script: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EsdArgs {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    motion: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Holds `<id>.samo` or `<id>.motion.samo` per manifest row.
    #[arg(long)]
    generated_dir: PathBuf,
    /// Body codec used as the feature extractor.
    #[arg(long)]
    codec: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    kind: String,
    message: String,
    code: u8,
}

impl From<cospeech_core::Error> for Failure {
    fn from(e: cospeech_core::Error) -> Self {
        Failure {
            kind: e.kind().to_string(),
            message: e.to_string(),
            code: 1,
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        kind: "invalid_input".into(),
        message: message.into(),
        code: 1,
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn emit(value: &impl Serialize) -> CliResult {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| invalid(e.to_string()))
        .and_then(|_| writeln!(out).and_then(|_| out.flush()).map_err(|e| invalid(format!("stdout: {e}"))))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| invalid(e.to_string()))?;
    Ok(write_atomic(path, &bytes)?)
}

fn load_turns(manifest: &Path) -> CliResult<Vec<cospeech_core::motion::DialogueTurn>> {
    Ok(load_corpus(manifest, SAMPLE_RATE)?.into_iter().map(|(_, t)| t).collect())
}

fn synth(a: SynthArgs) -> CliResult {
    let base = SynthSpec {
        duration: a.duration,
        beat_period: a.beat_period,
        noise_level: a.noise,
        motion_offset: a.motion_offset,
        sample_rate: SAMPLE_RATE,
        ..SynthSpec::default()
    };
    let turns = synth_corpus(a.n, &base, a.seed)?;
    let m = write_corpus(&a.out, &turns)?;
    emit(&json!({ "manifest": a.out.join(cospeech_core::io::MANIFEST_FILE), "turns": m.rows.len() }))
}

fn train_codec_cmd(a: TrainCodecArgs) -> CliResult {
    let turns = load_turns(&a.manifest)?;
    let tracks: Vec<MotionSequence> = match a.track {
        Track::Body => turns.into_iter().map(|t| t.motion).collect(),
        Track::Face => turns
            .into_iter()
            .map(|t| t.face.map(|f| f.into_motion()).ok_or_else(|| invalid("a manifest row has no face track")))
            .collect::<CliResult<_>>()?,
    };
    let (codec, report) = train_codec(&tracks, a.layers, a.k, a.seed)?;
    codec.save(&a.out)?;
    emit(&json!({
        "codec_id": codec.id(),
        "layers": codec.n_layers(),
        "codes_per_layer": codec.codes_per_layer(),
        "layer_residual_energy": report.layer_residual_energy,
        "out": a.out,
    }))
}

fn tokenize(a: CodecIo) -> CliResult {
    let codec = RvqCodec::load(&a.codec)?;
    let tokens = codec.encode(&read_motion(&a.input)?)?;
    write_tokens(&a.out, &tokens)?;
    emit(&json!({ "groups": tokens.groups.len(), "frames": tokens.n_frames, "out": a.out }))
}

fn detokenize(a: CodecIo) -> CliResult {
    let codec = RvqCodec::load(&a.codec)?;
    let motion = codec.decode(&read_tokens(&a.input)?)?;
    write_motion(&a.out, &motion)?;
    emit(&json!({ "frames": motion.len(), "dims": motion.dim(), "out": a.out }))
}

fn train_planner_cmd(a: TrainPlannerArgs) -> CliResult {
    let turns = load_turns(&a.manifest)?;
    let codec = RvqCodec::load(&a.codec)?;
    let cfg = TrainConfig {
        t: a.t,
        order: a.order,
        alpha: a.alpha,
        audio_codes: a.audio_codes,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (quantizer, planner) = train_planner(&turns, &codec, &cfg)?;
    let qpath = a
        .quantizer_out
        .unwrap_or_else(|| a.out.parent().unwrap_or(Path::new("")).join(AUDIO_QUANT_FILE));
    planner.save(&a.out)?;
    quantizer.save(&qpath)?;
    emit(&json!({ "planner": a.out, "quantizer": qpath, "labels": planner.labels(), "targets": planner.targets().len() }))
}

fn train_index_cmd(a: TrainIndexArgs) -> CliResult {
    let turns = load_turns(&a.manifest)?;
    let body = RvqCodec::load(&a.body_codec)?;
    let face = RvqCodec::load(&a.face_codec)?;
    let cfg = TrainConfig {
        t: a.t,
        k_nn: a.k_nn,
        lambda: a.lambda,
        index_stride: a.stride,
        ..TrainConfig::default()
    };
    let (bi, fi) = train_indices(&turns, &body, &face, &cfg)?;
    bi.save(&a.out_dir.join(BODY_INDEX_FILE))?;
    fi.save(&a.out_dir.join(FACE_INDEX_FILE))?;
    emit(&json!({ "body_windows": bi.len(), "face_windows": fi.len(), "out_dir": a.out_dir }))
}

fn train_all_cmd(a: TrainAllArgs) -> CliResult {
    let turns = load_turns(&a.manifest)?;
    let cfg = TrainConfig {
        t: a.t,
        body_layers: a.layers,
        face_layers: a.face_layers,
        codes_per_layer: a.k,
        audio_codes: a.audio_codes,
        order: a.order,
        alpha: a.alpha,
        k_nn: a.k_nn,
        lambda: a.lambda,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let models = train_all(&turns, &cfg)?;
    models.save(&a.out_dir)?;
    emit(&json!({
        "models_dir": a.out_dir,
        "turns": turns.len(),
        "body_codec": models.body_codec.id(),
        "face_codec": models.face_codec.id(),
        "body_windows": models.body_index.len(),
        "face_windows": models.face_index.len(),
    }))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes motion, face and trace for one result; returns the trace.
fn write_result(prefix: &Path, label: &str, r: &GenerationResult, decode: &DecodeArgs) -> CliResult<serde_json::Value> {
    write_motion(&with_suffix(prefix, ".motion.samo"), &r.motion)?;
    write_face(&with_suffix(prefix, ".face.samo"), &r.face)?;
    let mut trace = r.trace_json();
    trace["label"] = json!(label);
    trace["decoding"] = json!(if decode.sample { "sample" } else { "greedy" });
    trace["seed"] = json!(decode.seed);
    trace["frames"] = json!(r.motion.len());
    trace["digest"] = json!(r.content_digest());
    write_json(&with_suffix(prefix, ".trace.json"), &trace)?;
    Ok(trace)
}

fn generate(a: GenerateArgs) -> CliResult {
    let models = Models::load(&a.models_dir)?;
    let clip = read_wav(&a.audio, SAMPLE_RATE)?;
    let r = generate_turn(&models, &a.label, &clip, &a.decode.config())?;
    let trace = write_result(&a.out_prefix, &a.label, &r, &a.decode)?;
    emit(&json!({
        "motion": with_suffix(&a.out_prefix, ".motion.samo"),
        "face": with_suffix(&a.out_prefix, ".face.samo"),
        "trace": with_suffix(&a.out_prefix, ".trace.json"),
        "frames": r.motion.len(),
        "keyframes": r.keyframes.len(),
        "digest": trace["digest"],
        "timings_ms": trace["timings_ms"],
    }))
}

#[derive(Deserialize)]
struct ScriptTurn {
    label: String,
    audio: PathBuf,
}

fn stream(a: StreamArgs) -> CliResult {
    let models = Models::load(&a.models_dir)?;
    let text = std::fs::read(&a.script).map_err(|e| Failure {
        kind: "io".into(),
        message: format!("{}: {e}", a.script.display()),
        code: 1,
    })?;
    let script: Vec<ScriptTurn> = serde_json::from_slice(&text).map_err(|e| Failure {
        kind: "json".into(),
        message: format!("{}: {e}", a.script.display()),
        code: 1,
    })?;
    if script.is_empty() {
        return Err(invalid("script holds no turns"));
    }
    let base = a.script.parent().unwrap_or(Path::new(""));
    let mut session = Session::open(&models, a.decode.config())?;
    let mut turns = Vec::with_capacity(script.len());
    let (mut frames, mut wall, mut audio_secs) = (0usize, 0.0, 0.0);
    for (i, turn) in script.iter().enumerate() {
        let clip = read_wav(&base.join(&turn.audio), SAMPLE_RATE)?;
        let r = session.push_turn(&turn.label, &clip)?;
        let prefix = a.out_dir.join(format!("turn_{i:03}"));
        write_result(&prefix, &turn.label, &r, &a.decode)?;
        frames += r.motion.len();
        wall += r.timings_ms.total;
        audio_secs += clip.duration();
        turns.push(json!({
            "turn": i,
            "label": turn.label,
            "frames": r.motion.len(),
            "wall_ms": r.timings_ms.total,
            "realtime_factor": r.timings_ms.realtime_factor,
            "trace": with_suffix(&prefix, ".trace.json"),
        }));
    }
    session.close();
    let summary = json!({
        "turns": turns,
        "total_frames": frames,
        "total_wall_ms": wall,
        "realtime_factor": wall / 1000.0 / audio_secs,
    });
    write_json(&a.out_dir.join("session.json"), &summary)?;
    emit(&summary)
}

fn esd_cmd(a: EsdArgs) -> CliResult {
    let clip = read_wav(&a.audio, SAMPLE_RATE)?;
    let motion = read_motion(&a.motion)?;
    let audio_events = extract_audio_events(&clip, &MelConfig::default())?;
    let motion_events = extract_motion_events(&motion)?;
    emit(&esd(&audio_events, &motion_events))
}

fn generated_path(dir: &Path, id: &str) -> CliResult<PathBuf> {
    for name in [format!("{id}.samo"), format!("{id}.motion.samo")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Failure {
        kind: "io".into(),
        message: format!("no generated motion for {id:?} in {}", dir.display()),
        code: 1,
    })
}

fn eval(a: EvalArgs) -> CliResult {
    let (manifest, base) = Manifest::load(&a.manifest)?;
    let codec = RvqCodec::load(&a.codec)?;
    let mel = MelConfig::default();
    let rows: Vec<(SampleReport, Vec<f64>, Vec<f64>)> = manifest
        .rows
        .par_iter()
        .map(|row| {
            let clip = read_wav(&base.join(&row.audio_path), SAMPLE_RATE)?;
            let truth = read_motion(&base.join(&row.motion_path))?;
            let generated = read_motion(&generated_path(&a.generated_dir, &row.id)?)?;
            let r = esd(&extract_audio_events(&clip, &mel)?, &extract_motion_events(&generated)?);
            Ok((
                SampleReport::from_esd(&row.id, &r),
                codec.latent_features(&truth)?,
                codec.latent_features(&generated)?,
            ))
        })
        .collect::<CliResult<_>>()?;
    let truth: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let generated: Vec<Vec<f64>> = rows.iter().map(|r| r.2.clone()).collect();
    let (div, fd) = if rows.len() >= 2 {
        (Some(diversity(&generated)?), Some(frechet_distance(&truth, &generated)?))
    } else {
        log::warn!("diversity and Frechet distance need at least two samples");
        (None, None)
    };
    let report = EvalReport::new(rows.into_iter().map(|r| r.0).collect(), div, fd);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    emit(&report)
}

fn run(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Synth(a) => synth(a),
        Cmd::TrainCodec(a) => train_codec_cmd(a),
        Cmd::Tokenize(a) => tokenize(a),
        Cmd::Detokenize(a) => detokenize(a),
        Cmd::TrainPlanner(a) => train_planner_cmd(a),
        Cmd::TrainInfillIndex(a) => train_index_cmd(a),
        Cmd::TrainAll(a) => train_all_cmd(a),
        Cmd::Generate(a) => generate(a),
        Cmd::Stream(a) => stream(a),
        Cmd::Esd(a) => esd_cmd(a),
        Cmd::Eval(a) => eval(a),
    }
}

fn fail(f: Failure) -> ExitCode {
    let line = json!({ "error": { "kind": f.kind, "message": f.message } });
    eprintln!("{line}");
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            return fail(Failure {
                kind: "usage".into(),
                message: message.trim().to_string(),
                code: 2,
            });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}
