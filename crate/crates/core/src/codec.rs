//! Temporal bottleneck on encoder outputs.
//!
//! A bidirectional recurrent output is decimated by `k`: the forward stream keeps frames
//! `kn + k − 1` and the backward stream keeps frames `kn`, so both ends of the sequence are
//! seen by at least one code of each direction. The decoder restores the rate by repetition.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct DownsampledCode<S = f32> {
    pub fwd: Matrix<S>,
    pub bwd: Matrix<S>,
    pub factor: usize,
    pub original_len: usize,
}

impl<S: Scalar> DownsampledCode<S> {
    pub fn rows(&self) -> usize {
        self.fwd.rows()
    }

    /// Both directions side by side, `[fwd | bwd]`.
    pub fn concat(&self) -> Matrix<S> {
        Matrix::hcat(&[&self.fwd, &self.bwd])
    }
}

/// Smallest multiple of `k` that is at least `len`.
pub fn padded_len(len: usize, k: usize) -> usize {
    len.div_ceil(k) * k
}

/// Extend to a multiple of `k` by repeating the final frame.
pub fn pad_to_multiple<S: Scalar>(seq: &Matrix<S>, k: usize) -> Matrix<S> {
    let target = padded_len(seq.rows(), k);
    fit_rows(seq, target)
}

/// Truncate, or extend by repeating the last row, to exactly `rows` rows.
pub fn fit_rows<S: Scalar>(seq: &Matrix<S>, rows: usize) -> Matrix<S> {
    if seq.rows() == rows {
        return seq.clone();
    }
    let mut out = Matrix::zeros(rows, seq.cols());
    if seq.rows() == 0 {
        return out;
    }
    for r in 0..rows {
        out.row_mut(r).copy_from_slice(seq.row(r.min(seq.rows() - 1)));
    }
    out
}

/// Gradient of [`fit_rows`]: rows beyond the source fold back onto its last row.
pub fn fit_rows_backward<S: Scalar>(dy: &Matrix<S>, src_rows: usize) -> Matrix<S> {
    let mut dx = Matrix::zeros(src_rows, dy.cols());
    if src_rows == 0 {
        return dx;
    }
    for r in 0..dy.rows() {
        let dst = r.min(src_rows - 1);
        for (a, &b) in dx.row_mut(dst).iter_mut().zip(dy.row(r)) {
            *a += b;
        }
    }
    dx
}

fn fwd_indices(padded: usize, k: usize) -> impl Iterator<Item = usize> {
    (0..padded / k).map(move |n| k * n + k - 1)
}

fn bwd_indices(padded: usize, k: usize) -> impl Iterator<Item = usize> {
    (0..padded / k).map(move |n| k * n)
}

/// Frame indices sampled from the (padded) sequence for each direction.
pub fn sample_indices(len: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let p = padded_len(len, k);
    (fwd_indices(p, k).collect(), bwd_indices(p, k).collect())
}

/// Decimate both directions by `k`, padding to a multiple of `k` by repeating the final frame.
pub fn downsample<S: Scalar>(fwd_seq: &Matrix<S>, bwd_seq: &Matrix<S>, k: usize) -> Result<DownsampledCode<S>> {
    if k == 0 {
        return Err(Error::Invalid("downsample factor must be positive".into()));
    }
    if fwd_seq.rows() != bwd_seq.rows() {
        return Err(Error::Shape(alloc::format!(
            "forward stream has {} frames, backward stream {}",
            fwd_seq.rows(),
            bwd_seq.rows()
        )));
    }
    let len = fwd_seq.rows();
    let (fi, bi) = sample_indices(len, k);
    let last = len.saturating_sub(1);
    let pick = |seq: &Matrix<S>, idx: &[usize]| {
        let mut out = Matrix::zeros(idx.len(), seq.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(seq.row(i.min(last)));
        }
        out
    };
    Ok(DownsampledCode { fwd: pick(fwd_seq, &fi), bwd: pick(bwd_seq, &bi), factor: k, original_len: len })
}

/// Gradient of [`downsample`] with respect to the two input streams.
pub fn downsample_backward<S: Scalar>(
    d_fwd: &Matrix<S>,
    d_bwd: &Matrix<S>,
    len: usize,
    k: usize,
) -> (Matrix<S>, Matrix<S>) {
    let (fi, bi) = sample_indices(len, k);
    let last = len.saturating_sub(1);
    let scatter = |d: &Matrix<S>, idx: &[usize]| {
        let mut out = Matrix::zeros(len, d.cols());
        for (r, &i) in idx.iter().enumerate() {
            for (a, &b) in out.row_mut(i.min(last)).iter_mut().zip(d.row(r)) {
                *a += b;
            }
        }
        out
    };
    (scatter(d_fwd, &fi), scatter(d_bwd, &bi))
}

/// Repeat each row `k` times along time and truncate to `t_out` frames.
pub fn upsample_rows<S: Scalar>(code: &Matrix<S>, k: usize, t_out: usize) -> Result<Matrix<S>> {
    if t_out > k * code.rows() {
        return Err(Error::Shape(alloc::format!(
            "cannot upsample {} rows by {k} to {t_out} frames",
            code.rows()
        )));
    }
    let mut out = Matrix::zeros(t_out, code.cols());
    for t in 0..t_out {
        out.row_mut(t).copy_from_slice(code.row(t / k));
    }
    Ok(out)
}

pub fn upsample_rows_backward<S: Scalar>(dy: &Matrix<S>, k: usize, rows: usize) -> Matrix<S> {
    let mut d = Matrix::zeros(rows, dy.cols());
    for t in 0..dy.rows() {
        for (a, &b) in d.row_mut(t / k).iter_mut().zip(dy.row(t)) {
            *a += b;
        }
    }
    d
}

/// Upsample a two-direction code to `t_out` frames as `[fwd | bwd]` channels.
pub fn upsample<S: Scalar>(code: &DownsampledCode<S>, t_out: usize) -> Result<Matrix<S>> {
    upsample_rows(&code.concat(), code.factor, t_out)
}
