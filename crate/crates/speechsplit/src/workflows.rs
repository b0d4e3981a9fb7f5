//! The operations behind each subcommand, callable from code and tests.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use speechsplit_core::converter::{
    align_pitch_contour, convert, reconstruct, AspectSet, ConversionRequest, Trained,
};
use speechsplit_core::evalmetrics::{estimate_contour, expected_factors, factor_recovery, pitch_errors, FactorScores, PitchErrors};
use speechsplit_core::featureio::{compute_speaker_stats, extract_pitch, mel_spectrogram, normalize_and_quantize, SpeakerStats};
use speechsplit_core::network::{PitchMini, PlanSource, SpeechSplit};
use speechsplit_core::probes::{bottleneck_report, rr_recon_probe, AlignmentReport, BottleneckReport, ContentAutoencoder};
use speechsplit_core::rng::{child_rng, indexed_rng};
use speechsplit_core::synthgen::{generate, SpeakerBank, Split, SynthCorpus, SynthFactors};
use speechsplit_core::trainer::{crop, smoothed, train_loop, Control, Dataset, Trainable, TrainState, Utterance};

use crate::audio::read_wav;
use crate::error::{AppError, AppResult};
use crate::persistence::{
    read_csv, write_csv, write_json, Checkpoint, CheckpointMeta, FeatureFile, Manifest, ManifestEntry, ModelKind, PairRecord, RunConfig,
    MANIFEST_VERSION,
};

/// Worker threads from `SPEECHSPLIT_THREADS` (unset: all cores). Returns the count and
/// whether the run is in deterministic mode (exactly one thread).
pub fn configure_threads() -> AppResult<(usize, bool)> {
    let n = match std::env::var("SPEECHSPLIT_THREADS") {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
            AppError::Usage(format!("SPEECHSPLIT_THREADS must be a positive integer, got '{v}'"))
        })?,
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    // A second initialisation (e.g. in tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok((n, n == 1))
}

/// A corpus directory loaded into memory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: Manifest,
    pub utterances: Vec<Utterance>,
    pub factors: HashMap<String, SynthFactors>,
}

impl Corpus {
    pub fn load(dir: &Path) -> AppResult<Self> {
        let manifest = Manifest::read(dir)?;
        let utterances = manifest
            .utterances
            .par_iter()
            .map(|e| {
                let f = FeatureFile::read(&Manifest::feature_path(dir, &e.id))?;
                if f.id != e.id || f.speaker_index != e.speaker_index || f.speaker_index >= manifest.speakers.len() {
                    return Err(AppError::data(format!("features of {} disagree with the manifest", e.id)));
                }
                Ok(Utterance { id: f.id, mel: f.mel, pitch: f.pitch, speaker: f.speaker_index })
            })
            .collect::<AppResult<Vec<_>>>()?;
        let mut factors = HashMap::new();
        if manifest.bank.is_some() {
            for e in &manifest.utterances {
                let f: SynthFactors = crate::persistence::read_json(&Manifest::factors_path(dir, &e.id))?;
                factors.insert(e.id.clone(), f);
            }
        }
        Ok(Self { manifest, utterances, factors })
    }

    pub fn n_speakers(&self) -> usize {
        self.manifest.speakers.len()
    }

    pub fn get(&self, id: &str) -> AppResult<&Utterance> {
        self.utterances.iter().find(|u| u.id == id).ok_or_else(|| AppError::data(format!("utterance '{id}' not in corpus")))
    }

    fn split(&self, split: Split) -> Vec<Utterance> {
        self.manifest
            .utterances
            .iter()
            .zip(&self.utterances)
            .filter(|(e, _)| e.split == split)
            .map(|(_, u)| u.clone())
            .collect()
    }

    pub fn train_set(&self) -> AppResult<Dataset> {
        Ok(Dataset::new(self.split(Split::Train), self.n_speakers())?)
    }

    pub fn test_set(&self) -> Vec<Utterance> {
        self.split(Split::Test)
    }
}

/// Write a synthetic corpus: manifest, features and ground-truth factor files.
pub fn write_synth_corpus(c: &SynthCorpus, dir: &Path) -> AppResult<()> {
    let speakers: Vec<String> = c.bank.speakers.iter().map(|s| s.id.clone()).collect();
    c.entries.par_iter().try_for_each(|e| {
        let u = &e.utterance;
        FeatureFile {
            id: e.id.clone(),
            speaker: speakers[u.factors.speaker].clone(),
            speaker_index: u.factors.speaker,
            mel: u.mel.frames().clone(),
            pitch: u.pitch.clone(),
            f0: None,
        }
        .write(&Manifest::feature_path(dir, &e.id))?;
        write_json(&Manifest::factors_path(dir, &e.id), &u.factors)
    })?;
    let stats: Vec<SpeakerStats> = c
        .bank
        .speakers
        .iter()
        .map(|s| {
            let (m, sd) = s.f0_stats();
            SpeakerStats::new(s.id.clone(), m, sd)
        })
        .collect::<Result<_, _>>()?;
    write_json(&dir.join("speakers.json"), &stats)?;
    Manifest {
        format_version: MANIFEST_VERSION,
        speakers,
        utterances: c.entries.iter().map(|e| ManifestEntry { id: e.id.clone(), speaker_index: e.utterance.factors.speaker, split: e.split }).collect(),
        pairs: c.pairs.iter().map(|p| PairRecord { source: c.entries[p.source].id.clone(), target: c.entries[p.target].id.clone() }).collect(),
        seed: Some(c.seed),
        bank: Some(c.bank.clone()),
    }
    .write(dir)?;
    write_csv(&dir.join("pairs.csv"), &Manifest::read(dir)?.pairs)
}

#[derive(Debug, Deserialize)]
struct SpeakerMapRow {
    file: String,
    speaker: String,
}

/// Extract features for every `.wav` listed in the speaker map (CSV with `file,speaker`
/// columns, paths relative to `audio_dir`), normalising pitch per speaker.
pub fn extract_features(audio_dir: &Path, out: &Path, speaker_map: &Path) -> AppResult<Manifest> {
    let rows: Vec<SpeakerMapRow> = read_csv(speaker_map)?;
    if rows.is_empty() {
        return Err(AppError::data(format!("{}: no rows", speaker_map.display())));
    }
    let mut speakers: Vec<String> = rows.iter().map(|r| r.speaker.clone()).collect();
    speakers.sort();
    speakers.dedup();
    let raw = rows
        .par_iter()
        .map(|r| {
            let wave = read_wav(&audio_dir.join(&r.file))?;
            let mel = mel_spectrogram(&wave)?;
            let f0 = extract_pitch(&wave);
            let id = Path::new(&r.file).with_extension("").to_string_lossy().replace(['/', '\\'], "_");
            Ok((id, r.speaker.clone(), mel, f0))
        })
        .collect::<AppResult<Vec<_>>>()?;
    let mut stats = Vec::new();
    for s in &speakers {
        let contours: Vec<_> = raw.iter().filter(|r| &r.1 == s).map(|r| r.3.clone()).collect();
        stats.push(compute_speaker_stats(s, &contours).map_err(|e| AppError::data(format!("speaker {s}: {e}")))?);
    }
    let mut entries = Vec::new();
    for (id, spk, mel, f0) in raw {
        let idx = speakers.iter().position(|s| *s == spk).unwrap();
        let pitch = normalize_and_quantize(&f0, &stats[idx]);
        FeatureFile { id: id.clone(), speaker: spk, speaker_index: idx, mel: mel.into_matrix(), pitch, f0: Some(f0) }
            .write(&Manifest::feature_path(out, &id))?;
        entries.push(ManifestEntry { id, speaker_index: idx, split: Split::Train });
    }
    write_json(&out.join("speakers.json"), &stats)?;
    let manifest = Manifest { format_version: MANIFEST_VERSION, speakers, utterances: entries, pairs: Vec::new(), seed: None, bank: None };
    manifest.write(out)?;
    Ok(manifest)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    /// Seconds of training since the run directory was created, across resumes.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunInfo {
    pub kind: ModelKind,
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
    pub data: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub kind: ModelKind,
    pub steps: u64,
    pub initial_loss: f64,
    /// Mean of the last 100 logged losses.
    pub final_loss: f64,
    pub seconds: f64,
}

fn run_loop<M: Trainable>(
    model: &M,
    meta: CheckpointMeta,
    mut state: TrainState,
    ds: &Dataset,
    out: &Path,
    mut log: Vec<LogRow>,
    mut progress: impl FnMut(u64, f64),
) -> AppResult<(Checkpoint, Vec<LogRow>)> {
    let cfg = meta.train.clone();
    let ck_dir = out.join("checkpoints");
    let offset = log.last().map_or(0.0, |r| r.wall_time);
    let t0 = Instant::now();
    let save = |state: &TrainState, log: &[LogRow]| -> AppResult<()> {
        let ck = Checkpoint { meta: CheckpointMeta { step: state.step(), ..meta.clone() }, state: state.clone() };
        ck.write(&ck_dir.join(format!("step_{:07}.ssck", state.step())))?;
        ck.write(&out.join("latest.ssck"))?;
        write_csv(&out.join("train_log.csv"), log)
    };
    let mut pending: Option<AppError> = None;
    let result = train_loop(model, &mut state, ds, &cfg, |r, st| {
        log.push(LogRow { step: r.step, loss: r.loss, wall_time: offset + t0.elapsed().as_secs_f64() });
        progress(r.step, r.loss);
        if cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0 {
            if let Err(e) = save(st, &log) {
                pending = Some(e);
                return Ok(Control::Stop);
            }
        }
        Ok(Control::Continue)
    });
    if let Some(e) = pending {
        return Err(e);
    }
    result?;
    save(&state, &log)?;
    let ck = Checkpoint { meta: CheckpointMeta { step: state.step(), ..meta }, state };
    ck.write(&out.join("final.ssck"))?;
    Ok((ck, log))
}

/// Train (or resume) a model of `kind` on the corpus' training split into run directory `out`.
pub fn train(kind: ModelKind, cfg: &RunConfig, corpus: &Corpus, data: &Path, out: &Path, progress: impl FnMut(u64, f64)) -> AppResult<(Checkpoint, TrainSummary)> {
    let (threads, deterministic) = configure_threads()?;
    let mut cfg = cfg.clone();
    if cfg.model.n_speakers != corpus.n_speakers() {
        return Err(AppError::data(format!("config has {} speakers, corpus has {}", cfg.model.n_speakers, corpus.n_speakers())));
    }
    cfg.model.validate()?;
    cfg.train.validate(cfg.model.frame_factor())?;
    if kind == ModelKind::ContentAutoencoder {
        cfg.model = ContentAutoencoder::config(cfg.model.n_speakers);
    }
    fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    let latest = out.join("latest.ssck");
    let (state, log) = if latest.exists() {
        let ck = Checkpoint::read(&latest)?;
        if ck.meta.kind != kind || ck.meta.model != cfg.model || TrainConfigKey::of(&ck.meta.train) != TrainConfigKey::of(&cfg.train) {
            return Err(AppError::data(format!("{} was written with a different configuration; use a fresh run directory", latest.display())));
        }
        let log: Vec<LogRow> = read_csv::<LogRow>(&out.join("train_log.csv"))?.into_iter().filter(|r| r.step <= ck.meta.step).collect();
        (ck.state, log)
    } else {
        (TrainState::new(init_params(kind, &cfg)?), Vec::new())
    };
    cfg.write(&out.join("config.toml"))?;
    write_json(&out.join("run.json"), &RunInfo { kind, seed: cfg.train.seed, threads, deterministic, data: data.to_path_buf() })?;
    let ds = corpus.train_set()?;
    let meta = CheckpointMeta { kind, model: cfg.model.clone(), train: cfg.train.clone(), step: 0, speakers: corpus.manifest.speakers.clone() };
    let t0 = Instant::now();
    let (ck, log) = match kind {
        ModelKind::Main => {
            let (m, _) = SpeechSplit::new::<f32>(cfg.model.clone(), &mut child_rng(cfg.train.seed, "init"))?;
            run_loop(&m, meta, state, &ds, out, log, progress)?
        }
        ModelKind::PitchMini => {
            let (m, _) = PitchMini::new::<f32>(cfg.model.clone(), &mut child_rng(cfg.train.seed, "init"))?;
            run_loop(&m, meta, state, &ds, out, log, progress)?
        }
        ModelKind::ContentAutoencoder => {
            let (m, _) = ContentAutoencoder::new(cfg.model.clone(), &mut child_rng(cfg.train.seed, "init"))?;
            run_loop(&m, meta, state, &ds, out, log, progress)?
        }
    };
    let losses: Vec<f64> = log.iter().map(|r| r.loss).collect();
    let summary = TrainSummary {
        kind,
        steps: ck.meta.step,
        initial_loss: losses.first().copied().unwrap_or(f64::NAN),
        final_loss: smoothed(&losses, 100).last().copied().unwrap_or(f64::NAN),
        seconds: t0.elapsed().as_secs_f64(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok((ck, summary))
}

/// Training settings that must match for a resume (the step budget may grow).
#[derive(PartialEq)]
struct TrainConfigKey(speechsplit_core::trainer::TrainConfig);

impl TrainConfigKey {
    fn of(c: &speechsplit_core::trainer::TrainConfig) -> Self {
        Self(speechsplit_core::trainer::TrainConfig { total_steps: 0, checkpoint_every: 0, log_every: 0, ..c.clone() })
    }
}

fn init_params(kind: ModelKind, cfg: &RunConfig) -> AppResult<speechsplit_core::nn::ParamStore<f32>> {
    let mut rng = child_rng(cfg.train.seed, "init");
    Ok(match kind {
        ModelKind::Main => SpeechSplit::new::<f32>(cfg.model.clone(), &mut rng)?.1,
        ModelKind::PitchMini => PitchMini::new::<f32>(cfg.model.clone(), &mut rng)?.1,
        ModelKind::ContentAutoencoder => ContentAutoencoder::new(cfg.model.clone(), &mut rng)?.1,
    })
}

fn expect_kind(ck: &Checkpoint, kind: ModelKind, path: &Path) -> AppResult<()> {
    if ck.meta.kind != kind {
        return Err(AppError::data(format!("{} holds a {:?} model, expected {:?}", path.display(), ck.meta.kind, kind)));
    }
    Ok(())
}

pub fn load_main(path: &Path) -> AppResult<Trained<SpeechSplit>> {
    let ck = Checkpoint::read(path)?;
    expect_kind(&ck, ModelKind::Main, path)?;
    let (m, _) = SpeechSplit::new::<f32>(ck.meta.model.clone(), &mut child_rng(0, "layout"))?;
    Ok(Trained::new(m, ck.state.params, ck.meta.step))
}

pub fn load_mini(path: &Path) -> AppResult<Trained<PitchMini>> {
    let ck = Checkpoint::read(path)?;
    expect_kind(&ck, ModelKind::PitchMini, path)?;
    let (m, _) = PitchMini::new::<f32>(ck.meta.model.clone(), &mut child_rng(0, "layout"))?;
    Ok(Trained::new(m, ck.state.params, ck.meta.step))
}

pub fn load_content_ae(path: &Path) -> AppResult<(ContentAutoencoder, speechsplit_core::nn::ParamStore<f32>, u64)> {
    let ck = Checkpoint::read(path)?;
    expect_kind(&ck, ModelKind::ContentAutoencoder, path)?;
    let (m, _) = ContentAutoencoder::new(ck.meta.model.clone(), &mut child_rng(0, "layout"))?;
    Ok((m, ck.state.params, ck.meta.step))
}

/// Write one conversion result: feature-cache matrix plus a plot.
pub fn write_conversion(out: &Path, source: &str, target: &str, aspects: AspectSet, mel: &speechsplit_core::Matrix<f32>, speaker_index: usize, speaker: &str) -> AppResult<PathBuf> {
    let name = format!("{source}__{target}__{}", aspects.label());
    let clipped = mel.map(|v| v.clamp(0.0, 1.0));
    let path = out.join(format!("{name}.ssfc"));
    FeatureFile {
        id: name.clone(),
        speaker: speaker.into(),
        speaker_index,
        pitch: speechsplit_core::featureio::QuantizedPitch::unvoiced(clipped.rows()),
        mel: clipped.clone(),
        f0: Some(estimate_contour(&clipped)),
    }
    .write(&path)?;
    crate::plot::save(&crate::plot::render(&clipped, None), &out.join(format!("{name}.png")))?;
    Ok(path)
}

/// Run the requested conversions and write each result to `out`.
pub fn convert_pair(
    model: &Trained<SpeechSplit>,
    mini: Option<&Trained<PitchMini>>,
    corpus: &Corpus,
    source: &str,
    target: &str,
    sets: &[AspectSet],
    out: &Path,
) -> AppResult<Vec<PathBuf>> {
    let (s, t) = (corpus.get(source)?, corpus.get(target)?);
    sets.iter()
        .map(|&a| {
            let mel = convert(&ConversionRequest::new(source, target, a)?, model, mini, &corpus.utterances)?;
            let spk = if a.timbre { t.speaker } else { s.speaker };
            write_conversion(out, source, target, a, &mel, spk, &corpus.manifest.speakers[spk])
        })
        .collect()
}

/// Probe outputs: the bottleneck report and, optionally, the alignment probe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeOutput {
    pub bottleneck: BottleneckReport,
    pub rr_recon: Option<AlignmentReport>,
}

pub fn probe(model: &Trained<SpeechSplit>, corpus: &Corpus, cfg: &RunConfig, content_ae: Option<(&ContentAutoencoder, &speechsplit_core::nn::ParamStore<f32>)>) -> AppResult<ProbeOutput> {
    let set = corpus.test_set();
    let set = if set.is_empty() { corpus.utterances.clone() } else { set };
    let bottleneck = bottleneck_report(model, &set, &cfg.probe);
    let rr_recon = match content_ae {
        Some((ae, p)) => {
            let pairs = set.iter().map(|u| Ok((ae.infer(p, u)?, u.mel.clone()))).collect::<AppResult<Vec<_>>>()?;
            Some(rr_recon_probe(&pairs, 8.0))
        }
        None => None,
    };
    Ok(ProbeOutput { bottleneck, rr_recon })
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pair: String,
    pub conversion: String,
    pub gpe: f64,
    pub vde: f64,
    pub ffe: f64,
    pub rhythm_score: f64,
    pub pitch_score: f64,
    pub timbre_score: f64,
    pub valid: bool,
}

fn eval_row(pair: &str, conversion: &str, output: &speechsplit_core::Matrix<f32>, oracle: &speechsplit_core::Matrix<f32>, src: &SynthFactors, tgt: &SynthFactors, bank: &SpeakerBank) -> AppResult<EvalRow> {
    let est = estimate_contour(output);
    let reference = estimate_contour(oracle);
    let e = if est.len() == reference.len() { pitch_errors(&reference, &est)? } else { PitchErrors { gpe: f64::NAN, vde: f64::NAN, ffe: f64::NAN } };
    let scores: FactorScores = if src.content == tgt.content {
        factor_recovery(output, src, tgt, bank)?
    } else {
        FactorScores { rhythm: f64::NAN, pitch: f64::NAN, timbre: f64::NAN, estimated_offset: f64::NAN, syllables_found: 0, invalid: Some("pair does not share content".into()) }
    };
    let score = |v: f64| if scores.is_valid() { v } else { f64::NAN };
    Ok(EvalRow {
        pair: pair.into(),
        conversion: conversion.into(),
        gpe: e.gpe,
        vde: e.vde,
        ffe: e.ffe,
        rhythm_score: score(scores.rhythm),
        pitch_score: score(scores.pitch),
        timbre_score: score(scores.timbre),
        valid: scores.is_valid(),
    })
}

/// Evaluate every pair: an `identity` row (the source features themselves) and the seven
/// conversions. Pitch errors compare the harmonic-comb contour of each output with that of
/// the spectrogram the generator renders for the expected factors. Without a pitch-contour
/// model the conversions involving pitch are skipped.
pub fn evaluate(model: &Trained<SpeechSplit>, mini: Option<&Trained<PitchMini>>, corpus: &Corpus, pairs: &[PairRecord]) -> AppResult<Vec<EvalRow>> {
    let bank = corpus.manifest.bank.as_ref().ok_or_else(|| AppError::data("evaluation needs a synthetic corpus with ground-truth factors"))?;
    let rows = pairs
        .par_iter()
        .map(|p| {
            let fs = corpus.factors.get(&p.source).ok_or_else(|| AppError::data(format!("no factors for {}", p.source)))?;
            let ft = corpus.factors.get(&p.target).ok_or_else(|| AppError::data(format!("no factors for {}", p.target)))?;
            let name = format!("{}->{}", p.source, p.target);
            let src = corpus.get(&p.source)?;
            let mut rows = vec![eval_row(&name, "identity", &src.mel, &generate(fs, bank)?.mel.into_matrix(), fs, ft, bank)?];
            for a in AspectSet::nonempty_subsets().into_iter().filter(|a| mini.is_some() || !a.pitch) {
                let out = convert(&ConversionRequest::new(p.source.clone(), p.target.clone(), a)?, model, mini, &corpus.utterances)?;
                let oracle = if fs.content.len() == ft.content.len() {
                    generate(&expected_factors(fs, ft, a), bank)?.mel.into_matrix()
                } else {
                    out.clone()
                };
                rows.push(eval_row(&name, &a.label(), &out, &oracle, fs, ft, bank)?);
            }
            Ok(rows)
        })
        .collect::<AppResult<Vec<Vec<EvalRow>>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Mean framewise cross-entropy of the pitch-contour model on `set` under its training
/// objective: each contour is randomly resampled (`draws` plans per utterance, seeded) and the
/// model must restore it on the utterance's own rhythm.
pub fn mini_cross_entropy(mini: &Trained<PitchMini>, set: &[Utterance], n_speakers: usize, draws: usize, seed: u64) -> AppResult<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, u) in set.iter().enumerate() {
        let len = u.mel.rows().div_ceil(8) * 8;
        let batch = [crop(u, i, 0, len, n_speakers)];
        for d in 0..draws {
            let mut rng = indexed_rng(seed, "heldout", (i * draws + d) as u64);
            let mut plans = PlanSource::new(mini.model.resample_law(), &mut rng);
            let mut g = mini.params.zeros_like();
            total += mini.model.loss_and_grad(&mini.params, &batch, Some(&mut plans), &mut g)?;
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Voiced-segment boundaries (frame indices where voicing flips) of a contour.
pub fn voicing_boundaries(p: &speechsplit_core::featureio::QuantizedPitch) -> Vec<usize> {
    (1..p.len()).filter(|&t| p.is_voiced(t) != p.is_voiced(t - 1)).collect()
}

/// Whether every boundary of `got` has a counterpart in `want` within `tol` frames and the
/// counts agree.
pub fn boundaries_match(got: &[usize], want: &[usize], tol: usize) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(&a, &b)| a.abs_diff(b) <= tol)
}

/// Align a target contour onto a source and compare its voicing boundaries with the
/// boundaries the source rhythm implies.
pub fn alignment_matches(mini: &Trained<PitchMini>, source: &Utterance, target: &Utterance, tol: usize) -> AppResult<bool> {
    let aligned = align_pitch_contour(&target.pitch, &source.mel, mini)?;
    Ok(boundaries_match(&voicing_boundaries(&aligned), &voicing_boundaries(&source.pitch), tol))
}

/// Mean reconstruction error of the main model on `set`.
pub fn reconstruction_mse(model: &Trained<SpeechSplit>, set: &[Utterance]) -> AppResult<f64> {
    let mut total = 0.0;
    for u in set {
        total += speechsplit_core::trainer::recon_loss(&reconstruct(u, model)?, &u.mel)? / set.len() as f64;
    }
    Ok(total)
}
