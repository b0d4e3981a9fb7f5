//! Losses, the optimisation step, the training loop and finite-difference gradient checks.
//!
//! A step's randomness (minibatch order, crop offsets, resampling plans) is derived from
//! `(seed, step)` alone, so a run resumed from a checkpoint at step `n` replays steps
//! `n+1..` exactly.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codec::fit_rows;
use crate::error::{Error, Result};
use crate::featureio::QuantizedPitch;
use crate::network::{ForwardInputs, MiniInputs, PitchMini, PlanSource, SpeechSplit};
use crate::nn::{AdamConfig, AdamState, Gradients, ParamStore};
use crate::resample::ResampleLaw;
use crate::rng::{indexed_rng, Rng};
use crate::tensor::{Matrix, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Frames per training crop; a multiple of the downsample factor.
    pub crop_len: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rescale the gradient when its global norm exceeds this value.
    pub grad_clip: Option<f64>,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            total_steps: 5_000,
            learning_rate: 1e-4,
            seed: 0,
            crop_len: 128,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
            checkpoint_every: 1_000,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    /// Settings sized for a single CPU core.
    pub fn desk() -> Self {
        Self { batch_size: 4, crop_len: 64, learning_rate: 1e-3, ..Self::default() }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self, frame_factor: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be at least 1".into()));
        }
        if self.crop_len == 0 || self.crop_len % frame_factor != 0 {
            return Err(Error::Invalid(alloc::format!(
                "crop_len {} must be a positive multiple of {frame_factor}",
                self.crop_len
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning_rate must be finite and non-negative".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Invalid("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One training utterance: spectrogram, quantized contour, speaker index.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub mel: Matrix<f32>,
    pub pitch: QuantizedPitch,
    pub speaker: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub n_speakers: usize,
}

impl Dataset {
    pub fn new(utterances: Vec<Utterance>, n_speakers: usize) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for u in &utterances {
            if u.mel.rows() != u.pitch.len() || u.mel.rows() == 0 {
                return Err(Error::Shape(alloc::format!(
                    "utterance {} has {} spectrogram frames and {} pitch frames",
                    u.id,
                    u.mel.rows(),
                    u.pitch.len()
                )));
            }
            if u.speaker >= n_speakers {
                return Err(Error::Invalid(alloc::format!("utterance {} has speaker {} of {n_speakers}", u.id, u.speaker)));
            }
        }
        Ok(Self { utterances, n_speakers })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// A fixed-length training crop.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop<S = f32> {
    pub mel: Matrix<S>,
    /// One-hot pitch rows.
    pub pitch: Matrix<S>,
    pub speaker: Vec<S>,
    pub utterance: usize,
    pub start: usize,
}

/// Crop `len` frames starting at `start`; shorter utterances are extended with their last frame.
pub fn crop(u: &Utterance, index: usize, start: usize, len: usize, n_speakers: usize) -> Crop {
    let end = (start + len).min(u.mel.rows());
    let mel = fit_rows(&u.mel.slice_rows(start, end), len);
    let pitch = fit_rows(&u.pitch.to_matrix::<f32>().slice_rows(start, end), len);
    let mut speaker = alloc::vec![0.0; n_speakers];
    speaker[u.speaker] = 1.0;
    Crop { mel, pitch, speaker, utterance: index, start }
}

/// Utterance visited at global sample position `pos`: each pass over the data uses a fresh
/// seeded permutation.
fn visit_order(seed: u64, n: usize, pos: u64) -> usize {
    let epoch = pos / n as u64;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut indexed_rng(seed, "order", epoch));
    perm[(pos % n as u64) as usize]
}

/// The minibatch of (zero-based) step `step`.
pub fn batch_for_step(ds: &Dataset, cfg: &TrainConfig, step: u64) -> Vec<Crop> {
    let b = cfg.batch_size as u64;
    (step * b..(step + 1) * b)
        .map(|pos| {
            let idx = visit_order(cfg.seed, ds.len(), pos);
            let u = &ds.utterances[idx];
            let slack = u.mel.rows().saturating_sub(cfg.crop_len);
            let start = indexed_rng(cfg.seed, "crop", pos).gen_range(0..=slack);
            crop(u, idx, start, cfg.crop_len, ds.n_speakers)
        })
        .collect()
}

/// Mean squared error over all entries.
pub fn recon_loss<S: Scalar>(pred: &Matrix<S>, target: &Matrix<S>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(alloc::format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let n = pred.as_slice().len().max(1) as f64;
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&a, &b)| {
            let d = (a - b).to_f64().unwrap();
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Mean cross-entropy of row-wise softmax against one-hot rows, with its logit gradient
/// scaled by `scale`.
fn xent_onehot<S: Scalar>(logits: &Matrix<S>, onehot: &Matrix<S>, scale: S) -> (f64, Matrix<S>) {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let z = row.iter().fold(S::zero(), |a, &v| a + (v - m).exp());
        let log_z = m + z.ln();
        let target = onehot.row(t);
        for (j, (&v, &y)) in row.iter().zip(target).enumerate() {
            if y != S::zero() {
                total -= (y * (v - log_z)).to_f64().unwrap();
            }
            grad.set(t, j, ((v - log_z).exp() - y) * scale);
        }
    }
    (total / logits.rows().max(1) as f64, grad)
}

/// Mean categorical cross-entropy of per-frame logits against a quantized contour.
pub fn xent_loss<S: Scalar>(logits: &Matrix<S>, target: &QuantizedPitch) -> Result<f64> {
    if logits.rows() != target.len() || logits.cols() != crate::featureio::PITCH_BINS {
        return Err(Error::Shape(alloc::format!(
            "logits {:?} vs {} target frames",
            logits.shape(),
            target.len()
        )));
    }
    Ok(xent_onehot(logits, &target.to_matrix(), S::one()).0)
}

/// A model the trainer can optimise.
pub trait Trainable {
    fn resample_law(&self) -> ResampleLaw;

    /// Mean loss over the batch; accumulates its gradient into `g`.
    fn loss_and_grad<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        batch: &[Crop<S>],
        plans: Option<&mut PlanSource<'_>>,
        g: &mut Gradients<S>,
    ) -> Result<f64>;

    /// Rectifier activation pattern of the forward pass, used to detect when a finite
    /// difference straddles a kink.
    fn activation_pattern<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        batch: &[Crop<S>],
        plans: Option<&mut PlanSource<'_>>,
    ) -> Result<Vec<bool>>;
}

/// Mean squared error over a batch and its gradient with respect to each output.
pub(crate) fn mse_and_grad<'a, S: Scalar + 'a>(out: &[Matrix<S>], targets: impl Iterator<Item = &'a Matrix<S>>) -> (f64, Vec<Matrix<S>>) {
    let n: usize = out.iter().map(|y| y.as_slice().len()).sum();
    let scale = S::lit(2.0 / n as f64);
    let mut loss = 0.0;
    let mut d_out = Vec::with_capacity(out.len());
    for (y, t) in out.iter().zip(targets) {
        let mut d = y.clone();
        for (dv, &t) in d.as_mut_slice().iter_mut().zip(t.as_slice()) {
            let e = *dv - t;
            let e64 = e.to_f64().unwrap();
            loss += e64 * e64;
            *dv = e * scale;
        }
        d_out.push(d);
    }
    (loss / n as f64, d_out)
}

impl Trainable for SpeechSplit {
    fn resample_law(&self) -> ResampleLaw {
        self.config.resample
    }

    fn loss_and_grad<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        batch: &[Crop<S>],
        plans: Option<&mut PlanSource<'_>>,
        g: &mut Gradients<S>,
    ) -> Result<f64> {
        let inputs: Vec<_> = batch
            .iter()
            .map(|c| ForwardInputs { rhythm: &c.mel, content: &c.mel, pitch: &c.pitch, speaker: &c.speaker })
            .collect();
        let (out, tape) = self.forward_batch(p, &inputs, plans)?;
        let (loss, d_out) = mse_and_grad(&out, batch.iter().map(|c| &c.mel));
        self.backward_batch(p, tape, &d_out, g);
        Ok(loss)
    }

    fn activation_pattern<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        batch: &[Crop<S>],
        plans: Option<&mut PlanSource<'_>>,
    ) -> Result<Vec<bool>> {
        let inputs: Vec<_> = batch
            .iter()
            .map(|c| ForwardInputs { rhythm: &c.mel, content: &c.mel, pitch: &c.pitch, speaker: &c.speaker })
            .collect();
        Ok(self.forward_batch(p, &inputs, plans)?.1.activation_pattern())
    }
}

impl Trainable for PitchMini {
    fn resample_law(&self) -> ResampleLaw {
        self.config.resample
    }

    fn loss_and_grad<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        batch: &[Crop<S>],
        plans: Option<&mut PlanSource<'_>>,
        g: &mut Gradients<S>,
    ) -> Result<f64> {
        let inputs: Vec<_> = batch.iter().map(|c| MiniInputs { rhythm: &c.mel, pitch: &c.pitch }).collect();
        let (out, tape) = self.forward_batch(p, &inputs, plans)?;
        let frames: usize = batch.iter().map(|c| c.pitch.rows()).sum();
        let scale = S::lit(1.0 / frames as f64);
        let mut loss = 0.0;
        let mut d_out = Vec::with_capacity(batch.len());
        for (logits, c) in out.iter().zip(batch) {
            let (l, d) = xent_onehot(logits, &c.pitch, scale);
            loss += l * c.pitch.rows() as f64;
            d_out.push(d);
        }
        self.backward_batch(p, tape, &d_out, g);
        Ok(loss / frames as f64)
    }

    fn activation_pattern<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        batch: &[Crop<S>],
        plans: Option<&mut PlanSource<'_>>,
    ) -> Result<Vec<bool>> {
        let inputs: Vec<_> = batch.iter().map(|c| MiniInputs { rhythm: &c.mel, pitch: &c.pitch }).collect();
        Ok(self.forward_batch(p, &inputs, plans)?.1.activation_pattern())
    }
}

/// Mutable optimisation state: parameters plus moment estimates. `adam.step` counts the
/// completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
}

impl TrainState {
    pub fn new(params: ParamStore<f32>) -> Self {
        let adam = AdamState::new(&params);
        Self { params, adam }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }
}

/// One optimisation step on `batch`, using randomness derived from `(seed, step)`.
/// Returns the loss before the update.
pub fn train_step<M: Trainable>(
    model: &M,
    state: &mut TrainState,
    cfg: &TrainConfig,
    batch: &[Crop],
    step: u64,
) -> Result<f64> {
    let mut g = state.params.zeros_like();
    let mut rng = indexed_rng(cfg.seed, "plans", step);
    let mut plans = PlanSource::new(model.resample_law(), &mut rng);
    let loss = model.loss_and_grad(&state.params, batch, Some(&mut plans), &mut g)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(alloc::format!("loss at step {step}")));
    }
    if !g.all_finite() {
        return Err(Error::NonFinite(alloc::format!("gradient at step {step}")));
    }
    if let Some(clip) = cfg.grad_clip {
        let norm = f64::from(g.global_norm());
        if norm > clip {
            g.scale((clip / norm) as f32);
        }
    }
    state.adam.update(&cfg.adam(), cfg.learning_rate, &mut state.params, &g);
    Ok(loss)
}

/// Per-step record handed to the loop observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Completed steps after this update (1-based).
    pub step: u64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Train from `state.step()` up to `cfg.total_steps`. The observer sees every step and may
/// checkpoint or stop early. Returns the losses of the steps run.
pub fn train_loop<M, F>(model: &M, state: &mut TrainState, ds: &Dataset, cfg: &TrainConfig, mut observer: F) -> Result<Vec<f64>>
where
    M: Trainable,
    F: FnMut(&StepRecord, &TrainState) -> Result<Control>,
{
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut losses = Vec::new();
    while state.step() < cfg.total_steps {
        let step = state.step();
        let batch = batch_for_step(ds, cfg, step);
        let loss = train_step(model, state, cfg, &batch, step)?;
        losses.push(loss);
        if observer(&StepRecord { step: step + 1, loss }, state)? == Control::Stop {
            break;
        }
    }
    Ok(losses)
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// A differentiable scalar function of a parameter store, evaluated in `f64`.
pub trait Objective {
    fn params(&self) -> &ParamStore<f64>;
    fn loss(&self, p: &ParamStore<f64>) -> f64;
    fn gradient(&self, p: &ParamStore<f64>) -> Gradients<f64>;

    /// Signs of any piecewise-linear units. Coordinates whose perturbation changes this
    /// pattern are excluded from the comparison: the function is not differentiable
    /// between the two evaluation points.
    fn activation_pattern(&self, _p: &ParamStore<f64>) -> Vec<bool> {
        Vec::new()
    }
}

/// Result of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a rectifier kink.
    pub skipped: usize,
}

/// Denominator floor of [`relative_error`]. Central differences at step 1e-3 carry an
/// absolute truncation error near 1e-8 on this model family, so gradients smaller than
/// about 1e-4 are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Relative error `|a − n| / max(|a| + |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare analytic gradients with central differences (step `h`). Checks every coordinate
/// when `per_tensor` is `None`, otherwise a random sample of that many per tensor.
pub fn grad_check<O: Objective>(obj: &O, h: f64, per_tensor: Option<usize>, rng: &mut Rng) -> GradCheckReport {
    let base = obj.params();
    let analytic = obj.gradient(base);
    let mut work = base.clone();
    let pattern = obj.activation_pattern(base);
    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst_param: String::new(), worst_index: 0, checked: 0, skipped: 0 };
    for (ti, name) in base.names().iter().enumerate() {
        let len = base.tensors()[ti].as_slice().len();
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < len => rand::seq::index::sample(rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for i in coords {
            let x0 = base.tensors()[ti].as_slice()[i];
            work.tensors_mut()[ti].as_mut_slice()[i] = x0 + h;
            let up = obj.loss(&work);
            let kink_up = obj.activation_pattern(&work) != pattern;
            work.tensors_mut()[ti].as_mut_slice()[i] = x0 - h;
            let down = obj.loss(&work);
            let kink_down = obj.activation_pattern(&work) != pattern;
            work.tensors_mut()[ti].as_mut_slice()[i] = x0;
            if kink_up || kink_down {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic.tensors()[ti].as_slice()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param.clone_from(name);
                report.worst_index = i;
            }
        }
    }
    report
}

/// Full-model objective on a fixed batch. Resampling plans are redrawn from the same seed on
/// every evaluation, so the function is deterministic in the parameters.
pub struct ModelObjective<'a, M> {
    pub model: &'a M,
    pub params: ParamStore<f64>,
    pub batch: Vec<Crop<f64>>,
    pub plan_seed: Option<u64>,
}

impl<M: Trainable> ModelObjective<'_, M> {
    fn with_plans<T>(&self, f: impl FnOnce(Option<&mut PlanSource<'_>>) -> T) -> T {
        match self.plan_seed {
            Some(seed) => {
                let mut rng = indexed_rng(seed, "plans", 0);
                let mut src = PlanSource::new(self.model.resample_law(), &mut rng);
                f(Some(&mut src))
            }
            None => f(None),
        }
    }

    fn eval(&self, p: &ParamStore<f64>) -> (f64, Gradients<f64>) {
        let mut g = p.zeros_like();
        let loss = self.with_plans(|plans| self.model.loss_and_grad(p, &self.batch, plans, &mut g));
        (loss.expect("objective evaluation"), g)
    }
}

impl<M: Trainable> Objective for ModelObjective<'_, M> {
    fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    fn loss(&self, p: &ParamStore<f64>) -> f64 {
        self.eval(p).0
    }

    fn gradient(&self, p: &ParamStore<f64>) -> Gradients<f64> {
        self.eval(p).1
    }

    fn activation_pattern(&self, p: &ParamStore<f64>) -> Vec<bool> {
        self.with_plans(|plans| self.model.activation_pattern(p, &self.batch, plans)).expect("objective evaluation")
    }
}

/// Negative control: reports a gradient scaled by `factor`.
pub struct Corrupted<O> {
    pub inner: O,
    pub factor: f64,
}

impl<O: Objective> Objective for Corrupted<O> {
    fn params(&self) -> &ParamStore<f64> {
        self.inner.params()
    }

    fn loss(&self, p: &ParamStore<f64>) -> f64 {
        self.inner.loss(p)
    }

    fn gradient(&self, p: &ParamStore<f64>) -> Gradients<f64> {
        let mut g = self.inner.gradient(p);
        g.scale(self.factor);
        g
    }

    fn activation_pattern(&self, p: &ParamStore<f64>) -> Vec<bool> {
        self.inner.activation_pattern(p)
    }
}

/// Random crops with one-hot pitch rows for tests and gradient checks.
pub fn random_batch<S: Scalar>(
    n: usize,
    frames: usize,
    n_mels: usize,
    pitch_bins: usize,
    n_speakers: usize,
    rng: &mut Rng,
) -> Vec<Crop<S>> {
    (0..n)
        .map(|i| {
            let mel = Matrix::from_fn(frames, n_mels, |_, _| S::lit(rng.gen_range(0.0..1.0)));
            let mut pitch = Matrix::zeros(frames, pitch_bins);
            for t in 0..frames {
                pitch.set(t, rng.gen_range(0..pitch_bins), S::one());
            }
            let mut speaker = alloc::vec![S::zero(); n_speakers];
            speaker[rng.gen_range(0..n_speakers)] = S::one();
            Crop { mel, pitch, speaker, utterance: i, start: 0 }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;
    use crate::nn::Linear;
    use crate::rng::child_rng;
    use alloc::vec;

    #[test]
    fn recon_loss_cases() {
        let s = Matrix::from_vec(2, 2, vec![0.1f32, 0.2, 0.3, 0.4]);
        assert_eq!(recon_loss(&s, &s).unwrap(), 0.0);
        let plus = s.map(|v| v + 1.0);
        assert!((recon_loss(&plus, &s).unwrap() - 1.0).abs() < 1e-6);
        let a = Matrix::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let b = Matrix::from_vec(2, 2, vec![1.0f64, 0.0, 0.0, 4.0]);
        // (0 + 4 + 9 + 0) / 4
        assert_eq!(recon_loss(&a, &b).unwrap(), 3.25);
        assert!(recon_loss(&a, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn xent_cases() {
        let q = QuantizedPitch::from_bins(vec![3, 256]).unwrap();
        let uniform = Matrix::<f64>::zeros(2, 257);
        assert!((xent_loss(&uniform, &q).unwrap() - 257f64.ln()).abs() < 1e-12);
        let sharp = q.to_matrix::<f64>().map(|v| v * 60.0);
        assert!(xent_loss(&sharp, &q).unwrap() < 1e-20);
        // One frame, logits 2 at the target and 0 elsewhere: ln(e^2 + 256) − 2.
        let mut one = Matrix::<f64>::zeros(1, 257);
        one.set(0, 7, 2.0);
        let t = QuantizedPitch::from_bins(vec![7]).unwrap();
        let expect = (2f64.exp() + 256.0).ln() - 2.0;
        assert!((xent_loss(&one, &t).unwrap() - expect).abs() < 1e-12);
        assert!(xent_loss(&uniform, &QuantizedPitch::from_bins(vec![1]).unwrap()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate(8).is_ok());
        assert!(TrainConfig { crop_len: 60, ..TrainConfig::default() }.validate(8).is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate(8).is_err());
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smoothed(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }

    fn toy_dataset(n: usize, len: usize) -> Dataset {
        let utts = (0..n)
            .map(|i| Utterance {
                id: alloc::format!("u{i}"),
                mel: Matrix::from_fn(len + i, 80, |r, c| ((r + c + i) % 10) as f32 / 10.0),
                pitch: QuantizedPitch::from_bins((0..len + i).map(|t| (t % 257) as u16).collect()).unwrap(),
                speaker: i % 2,
            })
            .collect();
        Dataset::new(utts, 2).unwrap()
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert_eq!(Dataset::new(vec![], 2), Err(Error::EmptyDataset));
    }

    #[test]
    fn batches_cover_every_utterance_each_epoch() {
        let ds = toy_dataset(6, 20);
        let cfg = TrainConfig { batch_size: 3, crop_len: 16, ..TrainConfig::default() };
        let mut seen: Vec<usize> = (0..2).flat_map(|s| batch_for_step(&ds, &cfg, s)).map(|c| c.utterance).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        assert_eq!(batch_for_step(&ds, &cfg, 5), batch_for_step(&ds, &cfg, 5));
    }

    #[test]
    fn short_utterances_are_padded_with_the_last_frame() {
        let ds = toy_dataset(1, 10);
        let c = crop(&ds.utterances[0], 0, 0, 16, 2);
        assert_eq!(c.mel.rows(), 16);
        assert_eq!(c.mel.row(15), ds.utterances[0].mel.row(9));
        assert!(c.pitch.row_iter().all(|r| r.iter().sum::<f32>() == 1.0));
    }

    /// `0.5·|x W + b − y|²` style objective built from a linear layer.
    struct LinearMse {
        layer: Linear,
        params: ParamStore<f64>,
        x: Matrix<f64>,
        y: Matrix<f64>,
    }

    impl LinearMse {
        fn new() -> Self {
            let mut rng = child_rng(3, "lin");
            let mut params = ParamStore::new();
            let layer = Linear::new(&mut params, "lin", 4, 3, &mut rng);
            let x = Matrix::from_fn(5, 4, |r, c| (r as f64 - c as f64) * 0.3);
            let y = Matrix::from_fn(5, 3, |r, c| (r * c) as f64 * 0.1);
            Self { layer, params, x, y }
        }
    }

    impl Objective for LinearMse {
        fn params(&self) -> &ParamStore<f64> {
            &self.params
        }

        fn loss(&self, p: &ParamStore<f64>) -> f64 {
            recon_loss(&self.layer.forward(p, &self.x), &self.y).unwrap()
        }

        fn gradient(&self, p: &ParamStore<f64>) -> Gradients<f64> {
            let out = self.layer.forward(p, &self.x);
            let n = out.as_slice().len() as f64;
            let mut d = out.clone();
            for (a, &b) in d.as_mut_slice().iter_mut().zip(self.y.as_slice()) {
                *a = 2.0 * (*a - b) / n;
            }
            let mut g = p.zeros_like();
            self.layer.backward(p, &self.x, &d, &mut g);
            g
        }
    }

    #[test]
    fn linear_gradients_are_exact() {
        let r = grad_check(&LinearMse::new(), 1e-3, None, &mut child_rng(0, "gc"));
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
        let bad = Corrupted { inner: LinearMse::new(), factor: 1.5 };
        assert!(grad_check(&bad, 1e-3, None, &mut child_rng(0, "gc")).max_rel_error > 1e-2);
    }

    /// Two conv-norm-relu blocks followed by a squared-sum readout.
    struct ConvToy {
        blocks: Vec<crate::nn::ConvNorm>,
        params: ParamStore<f64>,
        x: Matrix<f64>,
    }

    impl ConvToy {
        fn new() -> Self {
            let mut rng = child_rng(4, "conv");
            let mut params = ParamStore::new();
            let blocks = vec![
                crate::nn::ConvNorm::new(&mut params, "c0", 3, 4, 2, 3, 1e-5, &mut rng),
                crate::nn::ConvNorm::new(&mut params, "c1", 4, 4, 2, 3, 1e-5, &mut rng),
            ];
            let x = Matrix::from_fn(9, 3, |r, c| ((r * 7 + c * 3) % 5) as f64 * 0.4 - 0.8);
            Self { blocks, params, x }
        }

        fn run(&self, p: &ParamStore<f64>) -> (f64, Gradients<f64>) {
            let (h0, c0) = self.blocks[0].forward(p, &self.x);
            let (h1, c1) = self.blocks[1].forward(p, &h0);
            let w = Matrix::from_fn(h1.rows(), h1.cols(), |r, c| ((r + 2 * c) % 3) as f64 - 1.0);
            let loss: f64 = h1.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b + 0.5 * a * a).sum();
            let mut d = h1.clone();
            for (dv, &wv) in d.as_mut_slice().iter_mut().zip(w.as_slice()) {
                *dv += wv;
            }
            let mut g = p.zeros_like();
            let d0 = self.blocks[1].backward(p, c1, d, &mut g);
            self.blocks[0].backward(p, c0, d0, &mut g);
            (loss, g)
        }
    }

    impl Objective for ConvToy {
        fn params(&self) -> &ParamStore<f64> {
            &self.params
        }

        fn loss(&self, p: &ParamStore<f64>) -> f64 {
            self.run(p).0
        }

        fn gradient(&self, p: &ParamStore<f64>) -> Gradients<f64> {
            self.run(p).1
        }
    }

    #[test]
    fn conv_toy_gradients_match() {
        let r = grad_check(&ConvToy::new(), 1e-3, None, &mut child_rng(0, "gc"));
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn tiny_model_gradients_match() {
        let mut rng = child_rng(5, "tiny");
        let cfg = ModelConfig::tiny(3);
        let (model, params) = SpeechSplit::new::<f64>(cfg.clone(), &mut rng).unwrap();
        assert!(params.numel() <= 5_000, "{}", params.numel());
        let batch = random_batch(2, 32, cfg.n_mels, cfg.pitch_bins, cfg.n_speakers, &mut rng);
        let obj = ModelObjective { model: &model, params, batch, plan_seed: Some(9) };
        let r = grad_check(&obj, 1e-3, None, &mut rng);
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        assert!(r.skipped * 10 < r.checked, "{r:?}");
        let bad = Corrupted { inner: obj, factor: 1.5 };
        assert!(grad_check(&bad, 1e-3, Some(20), &mut rng).max_rel_error > 1e-2);
    }

    #[test]
    fn tiny_mini_model_gradients_match() {
        let mut rng = child_rng(6, "tiny");
        let cfg = ModelConfig::tiny(1);
        let (model, params) = PitchMini::new::<f64>(cfg.clone(), &mut rng).unwrap();
        let batch = random_batch(2, 32, cfg.n_mels, cfg.pitch_bins, 1, &mut rng);
        let obj = ModelObjective { model: &model, params, batch, plan_seed: Some(2) };
        let r = grad_check(&obj, 1e-3, None, &mut rng);
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    fn tiny_dataset() -> (SpeechSplit, ParamStore<f32>, Dataset) {
        let mut rng = child_rng(7, "ds");
        let cfg = ModelConfig::tiny(2);
        let (model, params) = SpeechSplit::new::<f32>(cfg.clone(), &mut rng).unwrap();
        let utts = (0..4)
            .map(|i| {
                let frames = 40 + 3 * i;
                let mut mel = Matrix::from_fn(frames, cfg.n_mels, |r, c| ((r / 5 + c + i) % 4) as f32 / 4.0);
                mel.set(0, 0, 0.5);
                Utterance {
                    id: alloc::format!("u{i}"),
                    mel,
                    pitch: QuantizedPitch::from_bins((0..frames).map(|t| (t % 9) as u16).collect()).unwrap(),
                    speaker: i % 2,
                }
            })
            .collect();
        (model, params, Dataset { utterances: utts, n_speakers: 2 })
    }

    /// Tiny-config datasets carry 9-bin pitch; crops are built directly.
    fn tiny_batch(ds: &Dataset, cfg: &TrainConfig, step: u64) -> Vec<Crop> {
        batch_for_step(ds, cfg, step)
            .into_iter()
            .map(|mut c| {
                c.pitch = c.pitch.slice_cols(0, 9);
                c
            })
            .collect()
    }

    #[test]
    fn steps_are_deterministic_and_zero_lr_is_inert() {
        let (model, params, ds) = tiny_dataset();
        let cfg = TrainConfig { batch_size: 2, crop_len: 32, seed: 11, learning_rate: 1e-2, ..TrainConfig::default() };
        let batch = tiny_batch(&ds, &cfg, 0);
        let mut a = TrainState::new(params.clone());
        let mut b = TrainState::new(params.clone());
        let la = train_step(&model, &mut a, &cfg, &batch, 0).unwrap();
        let lb = train_step(&model, &mut b, &cfg, &batch, 0).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        let frozen = TrainConfig { learning_rate: 0.0, ..cfg };
        let mut c = TrainState::new(params.clone());
        train_step(&model, &mut c, &frozen, &batch, 0).unwrap();
        assert_eq!(c.params, params);
    }

    #[test]
    fn loss_decreases_with_small_steps() {
        let (model, params, ds) = tiny_dataset();
        let cfg = TrainConfig { batch_size: 2, crop_len: 32, learning_rate: 1e-3, ..TrainConfig::default() };
        let batch = tiny_batch(&ds, &cfg, 0);
        let mut state = TrainState::new(params);
        let before = train_step(&model, &mut state, &cfg, &batch, 0).unwrap();
        let mut g = state.params.zeros_like();
        let mut rng = indexed_rng(cfg.seed, "plans", 0);
        let after = model
            .loss_and_grad(&state.params, &batch, Some(&mut PlanSource::new(model.resample_law(), &mut rng)), &mut g)
            .unwrap();
        assert!(after < before, "{after} vs {before}");
    }
}
