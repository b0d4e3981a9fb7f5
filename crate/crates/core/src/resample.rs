//! Random temporal resampling: split a frame sequence into random-length segments and
//! stretch or squeeze each one by a random factor with linear interpolation.
//!
//! Contaminates timing (rhythm) while leaving the per-segment spectral content intact.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar};

/// Sampling laws for segment lengths (frames, inclusive) and stretch factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleLaw {
    pub min_len: usize,
    pub max_len: usize,
    pub min_factor: f64,
    pub max_factor: f64,
}

impl Default for ResampleLaw {
    fn default() -> Self {
        Self { min_len: 19, max_len: 32, min_factor: 0.5, max_factor: 1.5 }
    }
}

impl ResampleLaw {
    /// Law whose factor is pinned to exactly 1.0 (segments still vary).
    pub fn unit_factor() -> Self {
        Self { min_factor: 1.0, max_factor: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Invalid(alloc::format!(
                "segment length range [{}, {}] is empty",
                self.min_len,
                self.max_len
            )));
        }
        if !(self.min_factor > 0.0 && self.min_factor <= self.max_factor) {
            return Err(Error::Invalid(alloc::format!(
                "factor range [{}, {}] is invalid",
                self.min_factor,
                self.max_factor
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub length: usize,
    pub factor: f64,
}

impl Segment {
    /// Frames this segment occupies after resampling: `round(length · factor)`, at least 1.
    pub fn output_len(&self) -> usize {
        let n = Float::round(self.length as f64 * self.factor);
        (n as usize).max(1)
    }
}

/// A contiguous partition of `[0, T)` with one stretch factor per segment.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub segments: Vec<Segment>,
}

impl ResamplePlan {
    /// Number of input frames the plan covers.
    pub fn input_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.start + s.length)
    }

    pub fn output_len(&self) -> usize {
        self.segments.iter().map(Segment::output_len).sum()
    }

    pub fn is_identity(&self) -> bool {
        self.segments.iter().all(|s| s.output_len() == s.length)
    }

    /// Check the partition and factor invariants.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for s in &self.segments {
            if s.start != next || s.length == 0 {
                return Err(Error::Invalid(alloc::format!("segment at {} breaks the partition", s.start)));
            }
            if !(s.factor.is_finite() && s.factor > 0.0) {
                return Err(Error::Invalid(alloc::format!("segment at {} has factor {}", s.start, s.factor)));
            }
            next += s.length;
        }
        Ok(())
    }

    /// Interpolation table for a sequence of `len` frames.
    pub fn interpolation(&self, len: usize) -> Result<Interpolation> {
        if self.input_len() != len {
            return Err(Error::PlanMismatch { plan: self.input_len(), seq: len });
        }
        let mut taps = Vec::with_capacity(self.output_len());
        for s in &self.segments {
            let out = s.output_len();
            for j in 0..out {
                let pos = if out == 1 || s.length == 1 {
                    0.0
                } else {
                    (j * (s.length - 1)) as f64 / (out - 1) as f64
                };
                let i0 = Float::floor(pos) as usize;
                let w = pos - i0 as f64;
                let i1 = (i0 + 1).min(s.length - 1);
                taps.push(Tap { lo: s.start + i0, hi: s.start + i1, weight: w });
            }
        }
        Ok(Interpolation { taps, input_len: len })
    }
}

/// Draw a plan for `frames` frames: lengths uniform on the integer range, the final segment
/// truncated to the remainder, factors uniform and independent per segment.
pub fn draw_plan(frames: usize, law: &ResampleLaw, rng: &mut Rng) -> ResamplePlan {
    let mut segments = Vec::new();
    let mut start = 0;
    while start < frames {
        let drawn = rng.gen_range(law.min_len..=law.max_len);
        let length = drawn.min(frames - start);
        let factor = if law.min_factor == law.max_factor {
            law.min_factor
        } else {
            rng.gen_range(law.min_factor..=law.max_factor)
        };
        segments.push(Segment { start, length, factor });
        start += length;
    }
    ResamplePlan { segments }
}

/// One plan used for both the spectrogram and the pitch contour, keeping them frame-aligned.
pub fn paired_plans(frames: usize, law: &ResampleLaw, rng: &mut Rng) -> (ResamplePlan, ResamplePlan) {
    let plan = draw_plan(frames, law, rng);
    (plan.clone(), plan)
}

/// A single unit-factor segment: applying it returns the input unchanged.
pub fn identity_plan(frames: usize) -> ResamplePlan {
    if frames == 0 {
        return ResamplePlan::default();
    }
    ResamplePlan { segments: alloc::vec![Segment { start: 0, length: frames, factor: 1.0 }] }
}

pub fn apply_plan<S: Scalar>(seq: &Matrix<S>, plan: &ResamplePlan) -> Result<Matrix<S>> {
    Ok(plan.interpolation(seq.rows())?.apply(seq))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub weight: f64,
}

/// Output frame `j` is `(1 − w)·x[lo] + w·x[hi]`; linear, so the backward pass is a scatter.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolation {
    taps: Vec<Tap>,
    input_len: usize,
}

impl Interpolation {
    pub fn output_len(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    /// Fractional source frame for each output frame.
    pub fn source_position(&self, j: usize) -> f64 {
        let t = self.taps[j];
        t.lo as f64 + t.weight * (t.hi as f64 - t.lo as f64)
    }

    pub fn apply<S: Scalar>(&self, x: &Matrix<S>) -> Matrix<S> {
        assert_eq!(x.rows(), self.input_len);
        let mut y = Matrix::zeros(self.taps.len(), x.cols());
        for (j, t) in self.taps.iter().enumerate() {
            if t.weight == 0.0 {
                y.row_mut(j).copy_from_slice(x.row(t.lo));
            } else {
                let w = S::lit(t.weight);
                let w0 = S::one() - w;
                let (a, b) = (x.row(t.lo), x.row(t.hi));
                for ((d, &u), &v) in y.row_mut(j).iter_mut().zip(a).zip(b) {
                    *d = w0 * u + w * v;
                }
            }
        }
        y
    }

    pub fn backward<S: Scalar>(&self, dy: &Matrix<S>) -> Matrix<S> {
        let mut dx = Matrix::zeros(self.input_len, dy.cols());
        for (j, t) in self.taps.iter().enumerate() {
            let w = S::lit(t.weight);
            let w0 = S::one() - w;
            for c in 0..dy.cols() {
                let g = dy.get(j, c);
                let v = dx.get(t.lo, c) + w0 * g;
                dx.set(t.lo, c, v);
                if t.weight != 0.0 {
                    let v = dx.get(t.hi, c) + w * g;
                    dx.set(t.hi, c, v);
                }
            }
        }
        dx
    }
}

/// Summary statistics over many drawn plans.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LawStats {
    pub mean_length: f64,
    pub mean_factor: f64,
    /// Non-terminal segments whose length fell outside the law's range.
    pub out_of_range: usize,
    pub segments: usize,
}

/// Statistics of `draws` plans over `frames` frames. Terminal (remainder) segments are
/// excluded from the length mean since the law does not govern them.
pub fn law_statistics(frames: usize, draws: usize, law: &ResampleLaw, rng: &mut Rng) -> LawStats {
    let (mut len_sum, mut len_n) = (0usize, 0usize);
    let (mut fac_sum, mut fac_n) = (0.0, 0usize);
    let mut out_of_range = 0;
    for _ in 0..draws {
        let plan = draw_plan(frames, law, rng);
        let n = plan.segments.len();
        for (i, s) in plan.segments.iter().enumerate() {
            fac_sum += s.factor;
            fac_n += 1;
            if i + 1 < n {
                len_sum += s.length;
                len_n += 1;
                if s.length < law.min_len || s.length > law.max_len {
                    out_of_range += 1;
                }
            }
        }
    }
    LawStats {
        mean_length: len_sum as f64 / len_n.max(1) as f64,
        mean_factor: fac_sum / fac_n.max(1) as f64,
        out_of_range,
        segments: fac_n,
    }
}
