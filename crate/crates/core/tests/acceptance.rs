//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! with the measured numbers before asserting.

use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::Instant;

use cospeech_core::dsp::beat::{beat_objective, beat_period_frames};
use cospeech_core::dsp::{dp_beat_select, MelConfig};
use cospeech_core::metrics::{diversity, esd, esd_scan, extract_audio_events, extract_motion_events, frechet_distance, EventTimes, ESD_PENALTY};
use cospeech_core::motion::{DialogueTurn, MotionSequence, Series};
use cospeech_core::plan::{
    generate_turn, infill_window, mask_training_windows, train_all, GenerateConfig, InfillWindow, Models, PlannerExample,
    PlannerModel, PlannerVocab, Session, SlotPrediction, SlotScorer, TrainConfig, CORRUPT_RATE,
};
use cospeech_core::rvq::{train_codec, TokenGroup, TokenizedMotion, UnifiedVocab};
use cospeech_core::synth::{synth_corpus, synth_turn, MarkovChain, SynthSpec};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, name: &str, pass: bool, detail: String) {
    println!("acceptance {n:>2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

const CORPUS_SEED: u64 = 7;

/// 200 clean turns over the 8 action classes, split 160/40.
fn corpus() -> &'static (Vec<DialogueTurn>, Vec<DialogueTurn>) {
    static C: OnceLock<(Vec<DialogueTurn>, Vec<DialogueTurn>)> = OnceLock::new();
    C.get_or_init(|| {
        let all: Vec<DialogueTurn> = synth_corpus(200, &SynthSpec::default(), CORPUS_SEED)
            .unwrap()
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        let (train, test) = all.split_at(160);
        (train.to_vec(), test.to_vec())
    })
}

fn models() -> &'static Models {
    static M: OnceLock<Models> = OnceLock::new();
    M.get_or_init(|| train_all(&corpus().0, &TrainConfig::default()).unwrap())
}

#[test]
fn a01_vocabulary_law() {
    let t0 = Instant::now();
    let mut ok = true;
    for v in [UnifiedVocab::BODY, UnifiedVocab::FACE] {
        let mut seen = HashSet::new();
        for layer in 1..=v.n_layers {
            for r in 0..v.codes_per_layer as u32 {
                let id = v.to_unified_id(layer, r).unwrap();
                ok &= seen.insert(id) && v.from_unified_id(id).unwrap() == (layer, r);
            }
        }
        ok &= seen.len() == v.size() && seen.iter().all(|id| (*id as usize) < v.size());
    }
    let a = UnifiedVocab::BODY.to_unified_id(4, 0).unwrap();
    let b = UnifiedVocab::BODY.to_unified_id(2, 511).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let pass = ok && a == 1536 && b == 1023 && secs < 1.0;
    report(1, "vocabulary law", pass, format!("bijection {ok}, (4,0)->{a}, (2,511)->{b}, {secs:.3}s"));
    assert!(pass);
}

#[test]
fn a02_esd_penalty_and_oracle() {
    let t0 = Instant::now();
    let some = EventTimes::new(vec![0.5, 1.0]).unwrap();
    let penalties = [
        esd(&EventTimes::empty(), &some).esd,
        esd(&some, &EventTimes::empty()).esd,
        esd(&EventTimes::empty(), &EventTimes::empty()).esd,
    ];
    let penalty_ok = penalties.iter().all(|p| *p == 2.0) && ESD_PENALTY == 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let draw = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(0..20);
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            EventTimes::new(v).unwrap()
        };
        let (a, m) = (draw(&mut rng), draw(&mut rng));
        if esd(&a, &m) != esd_scan(&a, &m) {
            mismatches += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = penalty_ok && mismatches == 0 && secs < 5.0;
    report(2, "esd penalty and scan oracle", pass, format!("penalties {penalties:?}, {mismatches}/1000 mismatches, {secs:.2}s"));
    assert!(pass);
}

#[test]
fn a03_planted_synchronization() {
    let t0 = Instant::now();
    let mel = MelConfig::default();
    let measure = |delta: f64| {
        let base = SynthSpec {
            motion_offset: delta,
            ..SynthSpec::default()
        };
        let turns = synth_corpus(50, &base, 3).unwrap();
        let total: f64 = turns
            .iter()
            .map(|(_, t)| {
                let a = extract_audio_events(&t.audio, &mel).unwrap();
                let m = extract_motion_events(&t.motion).unwrap();
                esd(&a, &m).esd
            })
            .sum();
        total / turns.len() as f64
    };
    let clean = measure(0.0);
    let mut pass = clean <= 0.075;
    let mut detail = format!("clean {clean:.4}");
    for delta in [0.1, 0.2, 0.3] {
        let e = measure(delta);
        pass &= (e - delta).abs() <= 0.075;
        detail += &format!(", d={delta}: {e:.4}");
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    report(3, "planted synchronization", pass, format!("{detail}, {secs:.1}s"));
    assert!(pass);
}

/// Exhaustive search over beat subsets. Prunes a branch only when even the
/// best subset of the remaining frames, itself found by this search, cannot
/// lift it above the incumbent; gap terms are never positive so the bound
/// is admissible and the optimum exact.
fn exhaustive_beats(env: &[f64], period: f64, tightness: f64) -> f64 {
    let n = env.len();
    let mut suffix_best = vec![0.0f64; n + 1];
    for start in (0..n).rev() {
        let mut best = suffix_best[start + 1];
        let mut chosen = vec![start];
        search(env, period, tightness, &suffix_best, &mut chosen, env[start], start + 1, &mut best);
        suffix_best[start] = best.max(env[start]);
    }
    suffix_best[0]
}

#[allow(clippy::too_many_arguments)]
fn search(env: &[f64], period: f64, tightness: f64, bound: &[f64], chosen: &mut Vec<usize>, value: f64, next: usize, best: &mut f64) {
    if value > *best {
        *best = value;
    }
    let last = *chosen.last().unwrap();
    for j in next..env.len() {
        if value + bound[j] <= *best {
            return;
        }
        let gap = cospeech_core::dsp::beat::gap_score(j - last, period, tightness);
        chosen.push(j);
        search(env, period, tightness, bound, chosen, value + gap + env[j], j + 1, best);
        chosen.pop();
    }
}

#[test]
fn a04_dp_beat_optimality() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut longest = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=64);
        longest = longest.max(n);
        let env: Vec<f64> = (0..n).map(|_| rng.random_range(0.0f64..1.0).powi(2)).collect();
        let period = rng.random_range(3.0..12.0);
        let tightness = rng.random_range(1.0..100.0);
        let rate = 50.0;
        let bpm = rate * 60.0 / period;
        let beats = dp_beat_select(&Series::new(rate, env.clone()).unwrap(), bpm, tightness).unwrap();
        let p = beat_period_frames(rate, bpm);
        let got = if beats.is_empty() { 0.0 } else { beat_objective(&env, &beats, p, tightness) };
        let want = exhaustive_beats(&env, p, tightness);
        worst = worst.max((got - want).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst < 1e-9 && secs < 60.0;
    report(4, "dp beat optimality", pass, format!("max |dp - exhaustive| {worst:.2e} over 200 envelopes up to {longest} frames, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn a05_rvq_monotonicity() {
    let t0 = Instant::now();
    let (train, test) = corpus();
    let motions: Vec<MotionSequence> = train.iter().map(|t| t.motion.clone()).collect();
    let (codec, rep) = train_codec(&motions, 4, 512, 11).unwrap();
    let e = &rep.layer_residual_energy;
    let monotone = e.len() == 4 && e.windows(2).all(|w| w[1] <= w[0]);
    let mse = |layers: usize| {
        let (mut sq, mut n) = (0.0, 0usize);
        for t in test {
            let tok = codec.encode(&t.motion).unwrap();
            let rec = codec.decode_layers(&tok, layers).unwrap();
            sq += (rec.frames() - t.motion.frames()).mapv(|v| v * v).sum();
            n += t.motion.frames().len();
        }
        sq / n as f64
    };
    let (m1, m4) = (mse(1), mse(4));
    let secs = t0.elapsed().as_secs_f64();
    let pass = monotone && m4 < m1 && secs < 120.0;
    report(5, "rvq monotonicity", pass, format!("residual energy {:?}, held-out mse 1 layer {m1:.3e} vs 4 layers {m4:.3e}, {secs:.1}s", e.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()));
    assert!(pass);
}

#[test]
fn a06_masking_statistics() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut surviving, mut corrupted, mut violations) = (0usize, 0usize, 0usize);
    let mut seq = 0u64;
    while surviving < 12_000 {
        let groups: Vec<TokenGroup> = (0..41).map(|_| TokenGroup::new((0..4).map(|_| rng.random_range(0..512u16)))).collect();
        let tokens = TokenizedMotion {
            codec_id: "test".into(),
            source_fps: 20.0,
            n_frames: 82,
            groups: groups.clone(),
        };
        for w in mask_training_windows(&tokens, 4, 0.5, CORRUPT_RATE, 512, seq).unwrap() {
            if w.left != groups[w.start] || w.right != groups[w.start + 4] {
                violations += 1;
            }
            if w.loss_mask[0] || w.loss_mask[4] || w.corrupted.len() != 3 {
                violations += 1;
            }
            for (i, slot) in w.slots.iter().enumerate() {
                let Some(g) = slot else { continue };
                for (l, flag) in w.corrupted[i].iter().enumerate() {
                    surviving += 1;
                    if *flag {
                        corrupted += 1;
                    } else if g.residuals()[l] != w.targets[i].residuals()[l] {
                        violations += 1;
                    }
                }
            }
        }
        seq += 1;
    }
    let frac = corrupted as f64 / surviving as f64;
    let secs = t0.elapsed().as_secs_f64();
    let pass = (frac - 0.10).abs() <= 0.01 && violations == 0 && secs < 30.0;
    report(6, "masking statistics", pass, format!("corrupted {corrupted}/{surviving} = {frac:.4}, {violations} boundary violations, {secs:.2}s"));
    assert!(pass);
}

/// Confidence from a hash of slot and round, one fixed candidate per slot.
struct HashScorer;

impl SlotScorer for HashScorer {
    fn score(&self, w: &InfillWindow) -> cospeech_core::Result<Vec<SlotPrediction>> {
        let known = w.slots.iter().filter(|s| s.is_some()).count() as u64;
        Ok(w.masked()
            .into_iter()
            .map(|slot| {
                let h = (slot as u64 * 0x9E37_79B9 + known * 0x85EB_CA6B) % 1000;
                SlotPrediction {
                    slot,
                    candidates: vec![(TokenGroup::new([slot as u16, 1, 2, 3]), 1.0)],
                    confidence: h as f64 / 1000.0,
                }
            })
            .collect())
    }
}

struct ConstantScorer;

impl SlotScorer for ConstantScorer {
    fn score(&self, w: &InfillWindow) -> cospeech_core::Result<Vec<SlotPrediction>> {
        Ok(w.masked()
            .into_iter()
            .map(|slot| SlotPrediction {
                slot,
                candidates: vec![(TokenGroup::new([0, 0, 0, 0]), 1.0)],
                confidence: 0.5,
            })
            .collect())
    }
}

#[test]
fn a07_refinement_exhaustion() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for t in [2usize, 4, 8] {
        let w = InfillWindow {
            left: Some(TokenGroup::new([1, 1, 1, 1])),
            right: Some(TokenGroup::new([2, 2, 2, 2])),
            slots: vec![None; t - 1],
            audio: Array2::zeros((t + 1, 3)),
        };
        for scorer in [&HashScorer as &dyn SlotScorer, &ConstantScorer] {
            let (filled, trace) = infill_window(&w, scorer, 6, &UnifiedVocab::BODY).unwrap();
            let mut remaining = t - 1;
            let mut counts = vec![remaining];
            for a in &trace.accepted_per_round {
                remaining -= a;
                counts.push(remaining);
            }
            let decreasing = counts.windows(2).all(|c| c[1] < c[0] || c[0] == 0);
            ok &= filled.len() == t - 1 && remaining == 0 && trace.accepted_per_round.len() <= 6 && decreasing;
        }
        detail += &format!("t={t} ok; ");
    }
    let w = InfillWindow {
        left: Some(TokenGroup::new([1, 1, 1, 1])),
        right: Some(TokenGroup::new([2, 2, 2, 2])),
        slots: vec![None; 3],
        audio: Array2::zeros((5, 3)),
    };
    let (_, trace) = infill_window(&w, &ConstantScorer, 6, &UnifiedVocab::BODY).unwrap();
    let schedule_ok = trace.accepted_per_round == vec![1, 1, 1, 0, 0, 0];
    let secs = t0.elapsed().as_secs_f64();
    let pass = ok && schedule_ok && secs < 30.0;
    report(7, "refinement exhaustion", pass, format!("{detail}t=4 constant schedule {:?}, {secs:.3}s", trace.accepted_per_round));
    assert!(pass);
}

#[test]
fn a08_continuation_anchoring() {
    let t0 = Instant::now();
    let m = models();
    let turns = &corpus().1[..3];
    let mut session = Session::open(m, GenerateConfig::default()).unwrap();
    let mut results = Vec::new();
    for t in turns {
        results.push(session.push_turn(&t.action_label, &t.audio).unwrap());
    }
    let mut ok = results[0].prefix.is_none();
    let mut detail = Vec::new();
    for n in 1..3 {
        let (prev, cur) = (&results[n - 1], &results[n]);
        let feats = cospeech_core::plan::audio_features(&turns[n - 1].audio, m.mel()).unwrap();
        let dense = m.audio.assign(&feats).unwrap();
        let k = prev.keyframes.len();
        let want: Vec<(u32, TokenGroup)> = (k - 2..k).map(|i| (dense[2 * prev.keyframe_steps[i]], prev.keyframes[i].clone())).collect();
        let prefix_ok = cur.prefix.as_ref() == Some(&want);
        let left_ok = cur.windows[0].left.as_ref() == prev.keyframes.last();
        let history_ok = cur.plan.as_ref().unwrap().steps[0].history.ends_with(&[want[1].1.clone()]);
        ok &= prefix_ok && left_ok && history_ok;
        detail.push(format!("turn {}: prefix {prefix_ok}, left boundary {left_ok}", n + 1));
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = ok && secs < 60.0;
    report(8, "continuation anchoring", pass, format!("{}, {secs:.1}s incl. shared training", detail.join("; ")));
    assert!(pass);
}

#[test]
fn a09_planner_fidelity() {
    let t0 = Instant::now();
    let chain = MarkovChain::random(8, 4, 9);
    let paths = chain.sample_paths(100, 101, 10);
    let examples: Vec<PlannerExample> = paths
        .iter()
        .map(|p| PlannerExample {
            label: "markov".into(),
            prefix: Vec::new(),
            audio: vec![0; p.len()],
            keyframes: p.iter().map(|s| chain.states[*s].clone()).collect(),
        })
        .collect();
    let vocab = PlannerVocab::new(UnifiedVocab::BODY, 1, 4).unwrap();
    let model = PlannerModel::fit(&examples, vocab, 1, 1.0, 0).unwrap();
    let (class, _) = model.label_class("markov");
    let mut worst = 0.0f64;
    for (s, row) in chain.transition.iter().enumerate() {
        let d = model.distribution(class, std::slice::from_ref(&chain.states[s]), 0);
        let tv: f64 = chain
            .states
            .iter()
            .zip(row)
            .map(|(g, p)| {
                let q = d.probs.iter().find(|(h, _)| h == g).map_or(0.0, |x| x.1);
                (p - q).abs()
            })
            .sum::<f64>()
            / 2.0;
        worst = worst.max(tv);
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 0.05 && secs < 120.0;
    report(9, "planner fidelity", pass, format!("max row TV {worst:.4} over 8 states, 10000 transitions, {secs:.2}s"));
    assert!(pass);
}

#[test]
fn a10_end_to_end_semantics_and_sync() {
    let t0 = Instant::now();
    let m = models();
    let (train, test) = corpus();
    let mut centroids: Vec<(String, Vec<f64>, usize)> = Vec::new();
    for t in train {
        let f = m.body_codec.latent_features(&t.motion).unwrap();
        match centroids.iter_mut().find(|c| c.0 == t.action_label) {
            Some(c) => {
                c.1.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
                c.2 += 1;
            }
            None => centroids.push((t.action_label.clone(), f, 1)),
        }
    }
    for c in &mut centroids {
        let n = c.2 as f64;
        c.1.iter_mut().for_each(|v| *v /= n);
    }
    let mel = MelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut correct, mut gen_esd, mut ctl_esd) = (0usize, 0.0, 0.0);
    for t in test {
        let r = generate_turn(m, &t.action_label, &t.audio, &GenerateConfig::default()).unwrap();
        let f = m.body_codec.latent_features(&r.motion).unwrap();
        let nearest = centroids
            .iter()
            .map(|c| (&c.0, c.1.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        correct += usize::from(*nearest == t.action_label);
        let audio = extract_audio_events(&t.audio, &mel).unwrap();
        gen_esd += esd(&audio, &extract_motion_events(&r.motion).unwrap()).esd;
        let mut order: Vec<usize> = (0..r.motion.len()).collect();
        order.shuffle(&mut rng);
        let shuffled = MotionSequence::new(r.motion.fps(), r.motion.frames().select(Axis(0), &order)).unwrap();
        ctl_esd += esd(&audio, &extract_motion_events(&shuffled).unwrap()).esd;
    }
    let n = test.len() as f64;
    let acc = correct as f64 / n;
    let (g, c) = (gen_esd / n, ctl_esd / n);
    let secs = t0.elapsed().as_secs_f64();
    let pass = acc >= 0.9 && g < c && secs < 300.0;
    report(10, "end-to-end semantics and sync", pass, format!("label accuracy {acc:.3}, esd generated {g:.4} vs shuffled {c:.4}, {secs:.1}s incl. training"));
    assert!(pass);
}

#[test]
fn a11_metric_self_consistency() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p: Vec<Vec<f64>> = (0..60).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let self_fd = frechet_distance(&p, &p).unwrap();
    let div = diversity(&p).unwrap();
    let mut pairs = 0.0;
    let mut count = 0usize;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            pairs += p[i].iter().zip(&p[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            count += 1;
        }
    }
    let div_err = (div - pairs / count as f64).abs();
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var)
    };
    let a: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..2.0)).collect();
    let b: Vec<f64> = (0..150).map(|_| rng.random_range(1.0..5.0)).collect();
    let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
    let closed = (ma - mb).powi(2) + va + vb - 2.0 * (va * vb).sqrt();
    let fd = frechet_distance(&a.iter().map(|x| vec![*x]).collect::<Vec<_>>(), &b.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap();
    let fd_err = (fd - closed).abs();
    let secs = t0.elapsed().as_secs_f64();
    let pass = self_fd <= 1e-6 && div_err <= 1e-9 && fd_err <= 1e-6 && secs < 10.0;
    report(11, "metric self-consistency", pass, format!("frechet(P,P) {self_fd:.2e}, diversity err {div_err:.2e}, 1-D frechet err {fd_err:.2e}, {secs:.3}s"));
    assert!(pass);
}

#[test]
fn a12_determinism_and_throughput() {
    let m = models();
    let spec = SynthSpec {
        duration: 6.0,
        label_class: 3,
        seed: 12,
        ..SynthSpec::default()
    };
    let turn = synth_turn(&spec).unwrap();
    let t0 = Instant::now();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| generate_turn(m, &turn.action_label, &turn.audio, &GenerateConfig::default()).unwrap())
    };
    let a = run(1);
    let b = run(4);
    let c = run(4);
    let same = a.content_digest() == b.content_digest() && b.content_digest() == c.content_digest();
    let rtf = [&a, &b, &c].iter().map(|r| r.timings_ms.realtime_factor).fold(f64::INFINITY, f64::min);
    let has_rtf = a.trace_json()["timings_ms"]["realtime_factor"].is_number();
    let secs = t0.elapsed().as_secs_f64();
    let pass = same && has_rtf && rtf < 1.0 && a.motion.len() == 120 && secs < 60.0;
    report(
        12,
        "determinism and throughput",
        pass,
        format!(
            "digests equal {same}, 6 s turn in {:.0} ms (realtime factor {rtf:.3}), {secs:.1}s",
            rtf * 6000.0
        ),
    );
    assert!(pass);
}
