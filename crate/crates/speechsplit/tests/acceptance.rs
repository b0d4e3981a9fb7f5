//! Acceptance run: prints one PASS/FAIL line per criterion. Exits nonzero on a failure only
//! when `ACCEPTANCE_STRICT=1`. Training criteria run the full desk configuration;
//! `ACCEPTANCE_SKIP_TRAINING=1` stops after criterion 4.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use speechsplit::core::converter::{convert, Aspect, AspectSet, ConversionRequest, Trained};
use speechsplit::core::codec::sample_indices;
use speechsplit::core::evalmetrics::{factor_recovery, ffe, pitch_errors, FactorScores, GPE_TOLERANCE};
use speechsplit::core::featureio::{normalize_and_quantize, PitchContour, SpeakerStats};
use speechsplit::core::network::{ModelConfig, PitchMini, SpeechSplit};
use speechsplit::core::probes::bottleneck_report;
use speechsplit::core::resample::{apply_plan, draw_plan, law_statistics, ResampleLaw};
use speechsplit::core::rng::child_rng;
use speechsplit::core::synthgen::{assumption_harness, sample_corpus, HarnessPlans};
use speechsplit::core::trainer::{grad_check, random_batch, Corrupted, ModelObjective};
use speechsplit::core::Matrix;
use speechsplit::persistence::{ModelKind, RunConfig};
use speechsplit::workflows::{self as wf, Corpus};
use rand::Rng;

const CORPUS_SEED: u64 = 1;
const PAIRS: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn report(n: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let o = f();
    let dt = t0.elapsed();
    let in_budget = budget.is_none_or(|b| dt <= b);
    let pass = o.pass && in_budget;
    let budget_txt = match budget {
        Some(b) => format!("{:.0}s of {:.0}s budget{}", dt.as_secs_f64(), b.as_secs_f64(), if in_budget { "" } else { " EXCEEDED" }),
        None => format!("{:.0}s", dt.as_secs_f64()),
    };
    println!("criterion {n:>2} {} {name}: {} [{budget_txt}]", if pass { "PASS" } else { "FAIL" }, o.detail);
    pass
}

fn minutes(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

fn unit_invariants() -> Outcome {
    let mut rng = child_rng(1, "c1");
    let stats = SpeakerStats::new("s", 150.0, 20.0).unwrap();
    let mut onehot_ok = true;
    for _ in 0..100 {
        let f0: Vec<f32> = (0..64).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(60.0..400.0) }).collect();
        let q = normalize_and_quantize(&PitchContour::new(f0).unwrap(), &stats);
        let m = q.to_matrix::<f64>();
        onehot_ok &= m.row_iter().all(|r| r.iter().sum::<f64>() == 1.0 && r.iter().filter(|&&v| v == 1.0).count() == 1);
    }
    let (fwd, bwd) = sample_indices(32, 8);
    let indices_ok = fwd == [7, 15, 23, 31] && bwd == [0, 8, 16, 24];
    let mut identity_ok = true;
    for i in 0..50 {
        let frames = 20 + 7 * i;
        let x = Matrix::from_fn(frames, 5, |t, k| (t * 5 + k) as f64 * 0.01);
        let plan = draw_plan(frames, &ResampleLaw::unit_factor(), &mut rng);
        identity_ok &= plan.is_identity() && apply_plan(&x, &plan).unwrap() == x;
    }
    let random_contour = |rng: &mut speechsplit::core::rng::Rng| {
        PitchContour::new((0..100).map(|_| if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(80.0..300.0) }).collect()).unwrap()
    };
    let mut metric_ok = true;
    let mut ffe_ge_vde = 0;
    for _ in 0..1000 {
        let (a, b) = (random_contour(&mut rng), random_contour(&mut rng));
        let same = pitch_errors(&a, &a).unwrap();
        metric_ok &= same.gpe == 0.0 && same.vde == 0.0 && same.ffe == 0.0;
        let e = pitch_errors(&a, &b).unwrap();
        if ffe(&a, &b, GPE_TOLERANCE).unwrap() >= e.vde {
            ffe_ge_vde += 1;
        }
    }
    outcome(
        onehot_ok && indices_ok && identity_ok && metric_ok && ffe_ge_vde == 1000,
        format!("one-hot rows {onehot_ok}, indices {fwd:?}/{bwd:?}, unit-factor plans identity {identity_ok}, identical-contour errors zero {metric_ok}, FFE>=VDE on {ffe_ge_vde}/1000"),
    )
}

fn rr_law() -> Outcome {
    let s = law_statistics(128, 10_000, &ResampleLaw::default(), &mut child_rng(2, "c2"));
    outcome(
        (s.mean_length - 25.5).abs() <= 0.3 && (s.mean_factor - 1.0).abs() <= 0.02 && s.out_of_range == 0,
        format!("mean length {:.3} (25.5±0.3), mean factor {:.4} (1±0.02), {} non-terminal lengths outside [19,32] of {} segments", s.mean_length, s.mean_factor, s.out_of_range, s.segments),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = child_rng(3, "c3");
    let cfg = ModelConfig::tiny(3);
    let (model, params) = SpeechSplit::new::<f64>(cfg.clone(), &mut rng).unwrap();
    let batch = random_batch(2, 32, cfg.n_mels, cfg.pitch_bins, cfg.n_speakers, &mut rng);
    let obj = ModelObjective { model: &model, params, batch, plan_seed: Some(9) };
    let r = grad_check(&obj, 1e-3, None, &mut rng);
    let bad = grad_check(&Corrupted { inner: obj, factor: 1.5 }, 1e-3, Some(20), &mut rng);
    outcome(
        r.max_rel_error <= 1e-4 && bad.max_rel_error > 1e-2,
        format!("max relative error {:.2e} over {} coordinates ({} kink-straddling skipped), corrupted control {:.2e}", r.max_rel_error, r.checked, r.skipped, bad.max_rel_error),
    )
}

fn harness() -> Outcome {
    let corpus = sample_corpus(8, 32, CORPUS_SEED).unwrap();
    let r = assumption_harness(&corpus, HarnessPlans::Random(ResampleLaw::default()), 4, &mut child_rng(4, "c4")).unwrap();
    let id = assumption_harness(&corpus, HarnessPlans::Identity, 1, &mut child_rng(4, "c4id")).unwrap();
    outcome(
        r.content_recovery >= 0.99 && r.pitch_recovery >= 0.99 && r.rhythm_perturbed >= 0.30 && !id.rhythm_pass,
        format!(
            "content {:.4}, pitch {:.4}, rhythm perturbed {:.3} over {} syllables; identity control perturbed {:.3} (rhythm check {})",
            r.content_recovery, r.pitch_recovery, r.rhythm_perturbed, r.syllables, id.rhythm_perturbed, if id.rhythm_pass { "passes" } else { "fails" }
        ),
    )
}

/// Everything the training criteria produce, compared across reruns.
#[derive(Default, PartialEq)]
struct Artifacts {
    checkpoints: Vec<Vec<u8>>,
    scores: Vec<String>,
}

struct Pipeline {
    dir: PathBuf,
    corpus: Corpus,
    artifacts: Artifacts,
    main: Option<Trained<SpeechSplit>>,
    mini: Option<Trained<PitchMini>>,
}

impl Pipeline {
    fn new(dir: &Path) -> Self {
        let data = dir.join("corpus");
        wf::write_synth_corpus(&sample_corpus(8, 32, CORPUS_SEED).unwrap(), &data).unwrap();
        let corpus = Corpus::load(&data).unwrap();
        Self { dir: dir.to_path_buf(), corpus, artifacts: Artifacts::default(), main: None, mini: None }
    }

    fn train(&mut self, kind: ModelKind, cfg: &RunConfig, name: &str) -> wf::TrainSummary {
        let out = self.dir.join(name);
        let (_, s) = wf::train(kind, cfg, &self.corpus, &self.dir.join("corpus"), &out, |_, _| {}).expect("training");
        self.artifacts.checkpoints.push(fs::read(out.join("final.ssck")).unwrap());
        s
    }

    fn record(&mut self, label: &str, value: impl std::fmt::Debug) {
        self.artifacts.scores.push(format!("{label}: {value:?}"));
    }

    fn pair_scores(&self, model: &Trained<SpeechSplit>, aspects: AspectSet) -> Vec<(FactorScores, bool)> {
        let bank = self.corpus.manifest.bank.as_ref().unwrap();
        self.corpus.manifest.pairs.iter().take(PAIRS).map(|p| {
            let req = ConversionRequest::new(p.source.clone(), p.target.clone(), aspects).unwrap();
            let out = convert(&req, model, self.mini.as_ref(), &self.corpus.utterances).unwrap();
            let length_ok = out.rows() == self.corpus.get(if aspects.rhythm { &p.target } else { &p.source }).unwrap().mel.rows();
            let s = factor_recovery(&out, &self.corpus.factors[&p.source], &self.corpus.factors[&p.target], bank).unwrap();
            (s, length_ok)
        }).collect()
    }
}

fn desk_training(p: &mut Pipeline) -> Outcome {
    let cfg = RunConfig::preset("desk").unwrap();
    let s = p.train(ModelKind::Main, &cfg, "desk");
    p.main = Some(wf::load_main(&p.dir.join("desk/final.ssck")).unwrap());
    let drop = 1.0 - s.final_loss / s.initial_loss;
    p.record("desk losses", (s.initial_loss, s.final_loss));
    outcome(
        drop >= 0.9 && s.steps <= 5000,
        format!("loss {:.5} -> {:.5} (mean of last 100 steps), drop {:.1}% (>= 90%) in {} steps", s.initial_loss, s.final_loss, drop * 100.0, s.steps),
    )
}

fn mini_model(p: &mut Pipeline) -> Outcome {
    let cfg = RunConfig::preset("desk").unwrap();
    let s = p.train(ModelKind::PitchMini, &cfg, "mini");
    let mini = wf::load_mini(&p.dir.join("mini/final.ssck")).unwrap();
    let test = p.corpus.test_set();
    let xent = wf::mini_cross_entropy(&mini, &test, p.corpus.n_speakers(), 4, 9).unwrap();
    let bound = 0.5 * 257f64.ln();
    let pairs: Vec<_> = p.corpus.manifest.pairs.iter().take(PAIRS).cloned().collect();
    let matched = pairs
        .iter()
        .filter(|r| wf::alignment_matches(&mini, p.corpus.get(&r.source).unwrap(), p.corpus.get(&r.target).unwrap(), 2).unwrap())
        .count();
    p.record("mini", (s.final_loss, xent, matched));
    p.mini = Some(mini);
    let frac = matched as f64 / pairs.len().max(1) as f64;
    outcome(
        xent < bound && frac >= 0.8 && pairs.len() == PAIRS,
        format!(
            "held-out cross-entropy {xent:.3} (< {bound:.3}; training {:.3} -> {:.3}), boundaries within 2 frames on {matched}/{} pairs ({:.0}%, >= 80%)",
            s.initial_loss, s.final_loss, pairs.len(), frac * 100.0
        ),
    )
}

fn zero_out(p: &mut Pipeline) -> Outcome {
    let cfg = RunConfig::preset("desk").unwrap();
    let r = bottleneck_report(p.main.as_ref().unwrap(), &p.corpus.test_set(), &cfg.probe);
    let names = ["rhythm_energy_ratio", "pitch_variance_ratio", "content_correlation", "timbre_shift_fraction"];
    let checks: Vec<_> = names.iter().map(|n| r.check(n).cloned()).collect();
    p.record("probes", checks.iter().map(|c| c.as_ref().map(|c| c.value)).collect::<Vec<_>>());
    let pass = checks.iter().all(|c| c.as_ref().is_some_and(|c| c.pass));
    let detail = names
        .iter()
        .zip(&checks)
        .map(|(n, c)| match c {
            Some(c) => format!("{n} {:.3} ({}; {})", c.value, c.threshold, if c.pass { "ok" } else { "fail" }),
            None => format!("{n} missing ({:?})", r.status),
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

fn margin_ok(s: &FactorScores, converted: Aspect, margin: f64) -> bool {
    s.is_valid() && Aspect::ALL.iter().all(|&a| if a == converted { s.get(a) >= margin } else { s.get(a) <= -margin })
}

fn conversion(p: &mut Pipeline) -> Outcome {
    let model = p.main.take().unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    let mut length_ok = true;
    for a in Aspect::ALL {
        let rows = p.pair_scores(&model, AspectSet::only(a));
        if a == Aspect::Rhythm {
            length_ok = rows.iter().all(|r| r.1);
        }
        let good = rows.iter().filter(|r| margin_ok(&r.0, a, 0.5)).count();
        let valid = rows.iter().filter(|r| r.0.is_valid()).count();
        p.record(a.name(), rows.iter().map(|r| (r.0.rhythm, r.0.pitch, r.0.timbre)).collect::<Vec<_>>());
        pass &= rows.len() == PAIRS && good * 5 >= rows.len() * 4;
        parts.push(format!("{}-only {good}/{} ({valid} segmentable)", a.name(), rows.len()));
    }
    p.main = Some(model);
    outcome(pass && length_ok, format!("{}; rhythm-only lengths equal target {length_ok}", parts.join(", ")))
}

fn wide_bottleneck(p: &mut Pipeline) -> Outcome {
    let cfg = RunConfig::preset("wide-rhythm").unwrap();
    let s = p.train(ModelKind::Main, &cfg, "wide");
    let wide = wf::load_main(&p.dir.join("wide/final.ssck")).unwrap();
    let rhythm = p.pair_scores(&wide, AspectSet::only(Aspect::Rhythm));
    let moves_all = rhythm.iter().filter(|r| r.0.is_valid() && r.0.pitch >= 0.3 && r.0.timbre >= 0.3).count();
    let mut still = Vec::new();
    for a in [Aspect::Pitch, Aspect::Timbre] {
        let rows = p.pair_scores(&wide, AspectSet::only(a));
        still.push(rows.iter().filter(|r| r.0.is_valid() && Aspect::ALL.iter().all(|&x| r.0.get(x) < 0.0)).count());
        p.record(a.name(), rows.iter().map(|r| (r.0.rhythm, r.0.pitch, r.0.timbre)).collect::<Vec<_>>());
    }
    p.record("wide rhythm", rhythm.iter().map(|r| (r.0.rhythm, r.0.pitch, r.0.timbre)).collect::<Vec<_>>());
    let need = PAIRS * 4 / 5;
    outcome(
        moves_all >= need && still.iter().all(|&n| n >= need),
        format!(
            "trained to loss {:.5}; rhythm-only moves pitch and timbre (>= +0.3) on {moves_all}/{PAIRS}, pitch-only stays at source on {}/{PAIRS}, timbre-only on {}/{PAIRS}",
            s.final_loss, still[0], still[1]
        ),
    )
}

/// Criteria 5 to 9 on a fresh pipeline; returns pass flags and the artifacts.
fn training_criteria(dir: &Path, print: bool) -> (Vec<(usize, bool)>, Artifacts) {
    let mut p = Pipeline::new(dir);
    let mut results = Vec::new();
    let mut run = |n: usize, name: &str, budget, f: &mut dyn FnMut(&mut Pipeline) -> Outcome, p: &mut Pipeline| {
        let pass = if print {
            report(n, name, budget, || f(p))
        } else {
            f(p).pass
        };
        results.push((n, pass));
    };
    run(5, "desk training", minutes(30), &mut desk_training, &mut p);
    run(9, "pitch-contour model", minutes(15), &mut mini_model, &mut p);
    run(6, "zero-out probes", minutes(2), &mut zero_out, &mut p);
    run(7, "disentangled conversion", minutes(5), &mut conversion, &mut p);
    run(8, "wide-bottleneck failure", minutes(30), &mut wide_bottleneck, &mut p);
    (results, p.artifacts)
}

fn main() {
    // Deterministic mode: one worker thread.
    std::env::set_var("SPEECHSPLIT_THREADS", "1");
    let root = tempfile::TempDir::new().unwrap();
    let mut passes = vec![
        report(1, "unit invariants", minutes(1), unit_invariants),
        report(2, "resampling law statistics", minutes(1), rr_law),
        report(3, "gradient check", minutes(5), gradient_check),
        report(4, "assumption harness", minutes(5), harness),
    ];
    if std::env::var("ACCEPTANCE_SKIP_TRAINING").is_ok_and(|v| v == "1") {
        println!("criteria 5-10 skipped (ACCEPTANCE_SKIP_TRAINING=1)");
        return;
    }
    let (results, first) = training_criteria(&root.path().join("run1"), true);
    passes.extend(results.iter().map(|r| r.1));
    passes.push(report(10, "reproducibility", None, || {
        let (_, second) = training_criteria(&root.path().join("run2"), false);
        let ck = first.checkpoints.iter().zip(&second.checkpoints).filter(|(a, b)| a == b).count();
        let sc = first.scores.iter().zip(&second.scores).filter(|(a, b)| a == b).count();
        outcome(
            first == second,
            format!("{ck}/{} checkpoints and {sc}/{} score records bit-identical across reruns", first.checkpoints.len(), first.scores.len()),
        )
    }));
    let failed = passes.iter().filter(|&&p| !p).count();
    println!("acceptance: {}/{} criteria pass", passes.len() - failed, passes.len());
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
