use speechsplit_core::converter::{enumerate_conversions, reconstruct, AspectSet, Trained};
use speechsplit_core::evalmetrics::{estimate_contour, expected_factors, factor_recovery, pitch_errors};
use speechsplit_core::network::{ModelConfig, SpeechSplit, PitchMini};
use speechsplit_core::rng::child_rng;
use speechsplit_core::synthgen::{generate, sample_corpus, SynthCorpus};
use speechsplit_core::trainer::{smoothed, train_loop, Control, TrainConfig, TrainState};

fn small_model(n: usize) -> ModelConfig {
    ModelConfig { n_mels: 80, pitch_bins: 257, ..ModelConfig::tiny(n) }
}

fn small_train(steps: u64) -> TrainConfig {
    TrainConfig { batch_size: 2, crop_len: 32, total_steps: steps, learning_rate: 3e-3, ..TrainConfig::desk() }
}

fn run(steps: u64, from: Option<TrainState>) -> (TrainState, Vec<f64>) {
    let corpus = sample_corpus(2, 4, 3).unwrap();
    let ds = corpus.train_dataset().unwrap();
    let (model, params) = SpeechSplit::new::<f32>(small_model(2), &mut child_rng(0, "init")).unwrap();
    let mut state = from.unwrap_or_else(|| TrainState::new(params));
    let losses = train_loop(&model, &mut state, &ds, &small_train(steps), |_, _| Ok(Control::Continue)).unwrap();
    (state, losses)
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (a, la) = run(12, None);
    let (b, lb) = run(12, None);
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let (half, _) = run(6, None);
    let (resumed, rest) = run(12, Some(half));
    assert_eq!(resumed, a);
    assert_eq!(rest, la[6..]);
}

#[test]
fn short_training_lowers_the_loss() {
    let (_, losses) = run(80, None);
    let s = smoothed(&losses, 10);
    assert!(s[79] < 0.8 * s[9], "{} -> {}", s[9], s[79]);
}

#[test]
fn conversions_have_the_right_clock() {
    let corpus = sample_corpus(2, 4, 5).unwrap();
    let utts: Vec<_> = corpus.entries.iter().map(SynthCorpus::to_utterance).collect();
    let (model, params) = SpeechSplit::new::<f32>(small_model(2), &mut child_rng(1, "init")).unwrap();
    let (mini, mini_params) = PitchMini::new::<f32>(small_model(2), &mut child_rng(1, "mini")).unwrap();
    let main = Trained::new(model, params, 1);
    let mini = Trained::new(mini, mini_params, 1);
    let pair = corpus.pairs[0];
    let (src, tgt) = (&utts[pair.source], &utts[pair.target]);
    let outs = enumerate_conversions(&src.id, &tgt.id, &main, Some(&mini), &utts).unwrap();
    assert_eq!(outs.len(), 7);
    for (a, m) in outs {
        let want = if a.rhythm { tgt.mel.rows() } else { src.mel.rows() };
        assert_eq!(m.shape(), (want, 80), "{a}");
        assert!(m.is_finite());
    }
    assert_eq!(reconstruct(src, &main).unwrap().rows(), src.mel.rows());
}

#[test]
fn oracle_conversions_score_as_intended() {
    let corpus = sample_corpus(4, 6, 8).unwrap();
    for pair in corpus.pairs.iter().take(4) {
        let (s, t) = (&corpus.entries[pair.source].utterance, &corpus.entries[pair.target].utterance);
        for a in AspectSet::nonempty_subsets() {
            let oracle = generate(&expected_factors(&s.factors, &t.factors, a), &corpus.bank).unwrap().mel.into_matrix();
            let sc = factor_recovery(&oracle, &s.factors, &t.factors, &corpus.bank).unwrap();
            assert!(sc.is_valid(), "{a}: {sc:?}");
            assert_eq!(sc.rhythm > 0.0, a.rhythm, "{a}: {sc:?}");
            assert_eq!(sc.timbre > 0.0, a.timbre, "{a}: {sc:?}");
            let c = estimate_contour(&oracle);
            assert_eq!(pitch_errors(&c, &c).unwrap().ffe, 0.0);
        }
    }
}
