//! Feed-forward layers with hand-written backward passes.
//!
//! Every layer follows the same protocol: `forward` returns the output and a cache,
//! `backward` consumes the cache and the output gradient, accumulates parameter gradients,
//! and returns the input gradient.

use alloc::string::String;
use alloc::vec::Vec;

use super::params::{glorot, join, uniform, Gradients, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{gemm, Matrix, Op, Scalar};

/// Affine map `y = x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        let weight = store.add(join(prefix, "weight"), uniform(input, output, glorot(input, output), rng));
        let bias = store.add(join(prefix, "bias"), Matrix::zeros(1, output));
        Self { weight, bias, input, output }
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Matrix<S>) -> Matrix<S> {
        let mut y = Matrix::zeros(x.rows(), self.output);
        let b = p.get(self.bias).as_slice();
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(b);
        }
        gemm(S::one(), x, Op::N, p.get(self.weight), Op::N, S::one(), &mut y);
        y
    }

    pub fn backward<S: Scalar>(&self, p: &ParamStore<S>, x: &Matrix<S>, dy: &Matrix<S>, g: &mut Gradients<S>) -> Matrix<S> {
        gemm(S::one(), x, Op::T, dy, Op::N, S::one(), g.get_mut(self.weight));
        add_col_sums(dy, g.get_mut(self.bias));
        let mut dx = Matrix::zeros(x.rows(), self.input);
        gemm(S::one(), dy, Op::N, p.get(self.weight), Op::T, S::zero(), &mut dx);
        dx
    }
}

pub(crate) fn add_col_sums<S: Scalar>(dy: &Matrix<S>, dst: &mut Matrix<S>) {
    let d = dst.as_mut_slice();
    for row in dy.row_iter() {
        for (a, &b) in d.iter_mut().zip(row) {
            *a += b;
        }
    }
}

/// Time convolution with an odd kernel, stride 1 and replicate-edge padding, so the
/// output keeps the input length.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
}

pub struct ConvCache<S> {
    cols: Matrix<S>,
}

impl Conv1d {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input: usize,
        output: usize,
        kernel: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = input * kernel;
        let weight = store.add(join(prefix, "weight"), uniform(fan_in, output, glorot(fan_in, output), rng));
        let bias = store.add(join(prefix, "bias"), Matrix::zeros(1, output));
        Self { weight, bias, input, output, kernel }
    }

    fn im2col<S: Scalar>(&self, x: &Matrix<S>) -> Matrix<S> {
        let t_len = x.rows();
        let pad = (self.kernel / 2) as isize;
        let mut cols = Matrix::zeros(t_len, self.kernel * self.input);
        for t in 0..t_len {
            let dst = cols.row_mut(t);
            for j in 0..self.kernel {
                let src = (t as isize + j as isize - pad).clamp(0, t_len as isize - 1) as usize;
                dst[j * self.input..(j + 1) * self.input].copy_from_slice(x.row(src));
            }
        }
        cols
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Matrix<S>) -> (Matrix<S>, ConvCache<S>) {
        assert_eq!(x.cols(), self.input, "conv input channels");
        let cols = self.im2col(x);
        let mut y = Matrix::zeros(x.rows(), self.output);
        let b = p.get(self.bias).as_slice();
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(b);
        }
        gemm(S::one(), &cols, Op::N, p.get(self.weight), Op::N, S::one(), &mut y);
        (y, ConvCache { cols })
    }

    pub fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        cache: ConvCache<S>,
        dy: &Matrix<S>,
        g: &mut Gradients<S>,
    ) -> Matrix<S> {
        self.param_grads(&cache, dy, g);
        let mut dcols = Matrix::zeros(dy.rows(), self.kernel * self.input);
        gemm(S::one(), dy, Op::N, p.get(self.weight), Op::T, S::zero(), &mut dcols);
        let t_len = dy.rows();
        let pad = (self.kernel / 2) as isize;
        let mut dx = Matrix::zeros(t_len, self.input);
        for t in 0..t_len {
            let src_row = dcols.row(t);
            for j in 0..self.kernel {
                let src = (t as isize + j as isize - pad).clamp(0, t_len as isize - 1) as usize;
                let dst = dx.row_mut(src);
                for (a, &b) in dst.iter_mut().zip(&src_row[j * self.input..(j + 1) * self.input]) {
                    *a += b;
                }
            }
        }
        dx
    }
}

impl Conv1d {
    /// Accumulate weight and bias gradients only; for layers whose input is data.
    pub fn param_grads<S: Scalar>(&self, cache: &ConvCache<S>, dy: &Matrix<S>, g: &mut Gradients<S>) {
        gemm(S::one(), &cache.cols, Op::T, dy, Op::N, S::one(), g.get_mut(self.weight));
        add_col_sums(dy, g.get_mut(self.bias));
    }
}

/// Group normalisation over (time × channels-in-group) with per-channel affine.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

pub struct GroupNormCache<S> {
    xhat: Matrix<S>,
    inv_std: Vec<S>,
}

impl GroupNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, channels: usize, groups: usize, eps: f64) -> Self {
        assert!(groups > 0 && channels % groups == 0, "channels must divide into groups");
        let gamma = store.add(join(prefix, "gamma"), Matrix::filled(1, channels, S::one()));
        let beta = store.add(join(prefix, "beta"), Matrix::zeros(1, channels));
        Self { gamma, beta, channels, groups, eps }
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Matrix<S>) -> (Matrix<S>, GroupNormCache<S>) {
        let cg = self.channels / self.groups;
        let t_len = x.rows();
        let n = S::from_usize(t_len * cg).unwrap();
        let eps = S::lit(self.eps);
        let mut xhat = Matrix::zeros(t_len, self.channels);
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let (lo, hi) = (g * cg, (g + 1) * cg);
            let mut mean = S::zero();
            for r in x.row_iter() {
                for &v in &r[lo..hi] {
                    mean += v;
                }
            }
            mean = mean / n;
            let mut var = S::zero();
            for r in x.row_iter() {
                for &v in &r[lo..hi] {
                    let d = v - mean;
                    var += d * d;
                }
            }
            var = var / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            for t in 0..t_len {
                let src = &x.row(t)[lo..hi];
                let dst = &mut xhat.row_mut(t)[lo..hi];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = (s - mean) * is;
                }
            }
        }
        let gamma = p.get(self.gamma).as_slice();
        let beta = p.get(self.beta).as_slice();
        let mut y = xhat.clone();
        for t in 0..t_len {
            for ((v, &ga), &be) in y.row_mut(t).iter_mut().zip(gamma).zip(beta) {
                *v = *v * ga + be;
            }
        }
        (y, GroupNormCache { xhat, inv_std })
    }

    pub fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        cache: GroupNormCache<S>,
        dy: &Matrix<S>,
        g: &mut Gradients<S>,
    ) -> Matrix<S> {
        let t_len = dy.rows();
        let cg = self.channels / self.groups;
        {
            let dgamma = g.get_mut(self.gamma).as_mut_slice();
            for t in 0..t_len {
                for ((a, &d), &xh) in dgamma.iter_mut().zip(dy.row(t)).zip(cache.xhat.row(t)) {
                    *a += d * xh;
                }
            }
        }
        add_col_sums(dy, g.get_mut(self.beta));
        let gamma = p.get(self.gamma).as_slice();
        let n = S::from_usize(t_len * cg).unwrap();
        let mut dx = Matrix::zeros(t_len, self.channels);
        for grp in 0..self.groups {
            let (lo, hi) = (grp * cg, (grp + 1) * cg);
            let mut sum_dxh = S::zero();
            let mut sum_dxh_xh = S::zero();
            for t in 0..t_len {
                for c in lo..hi {
                    let dxh = dy.get(t, c) * gamma[c];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * cache.xhat.get(t, c);
                }
            }
            let is = cache.inv_std[grp];
            for t in 0..t_len {
                for c in lo..hi {
                    let dxh = dy.get(t, c) * gamma[c];
                    let v = is / n * (n * dxh - sum_dxh - cache.xhat.get(t, c) * sum_dxh_xh);
                    dx.set(t, c, v);
                }
            }
        }
        dx
    }
}

pub fn relu<S: Scalar>(x: &mut Matrix<S>) {
    x.as_mut_slice().iter_mut().for_each(|v| {
        if *v < S::zero() {
            *v = S::zero()
        }
    });
}

/// Zero `dy` wherever the rectified output was zero.
pub fn relu_backward<S: Scalar>(y: &Matrix<S>, dy: &mut Matrix<S>) {
    for (d, &v) in dy.as_mut_slice().iter_mut().zip(y.as_slice()) {
        if v <= S::zero() {
            *d = S::zero();
        }
    }
}

/// The "5×1 ConvNorm" block: convolution, group normalisation, rectifier.
#[derive(Clone, Debug)]
pub struct ConvNorm {
    pub conv: Conv1d,
    pub norm: GroupNorm,
    pub name: String,
}

pub struct ConvNormCache<S> {
    conv: ConvCache<S>,
    norm: GroupNormCache<S>,
    out: Matrix<S>,
}

impl<S: Scalar> ConvNormCache<S> {
    /// Which rectifier units were active.
    pub fn push_active(&self, v: &mut Vec<bool>) {
        v.extend(self.out.as_slice().iter().map(|&x| x > S::zero()));
    }
}

impl ConvNorm {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input: usize,
        output: usize,
        groups: usize,
        kernel: usize,
        eps: f64,
        rng: &mut Rng,
    ) -> Self {
        let conv = Conv1d::new(store, &join(prefix, "conv"), input, output, kernel, rng);
        let norm = GroupNorm::new(store, &join(prefix, "norm"), output, groups, eps);
        Self { conv, norm, name: String::from(prefix) }
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Matrix<S>) -> (Matrix<S>, ConvNormCache<S>) {
        let (h, conv) = self.conv.forward(p, x);
        let (mut y, norm) = self.norm.forward(p, &h);
        relu(&mut y);
        (y.clone(), ConvNormCache { conv, norm, out: y })
    }

    pub fn infer<S: Scalar>(&self, p: &ParamStore<S>, x: &Matrix<S>) -> Matrix<S> {
        self.forward(p, x).0
    }

    pub fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        cache: ConvNormCache<S>,
        mut dy: Matrix<S>,
        g: &mut Gradients<S>,
    ) -> Matrix<S> {
        relu_backward(&cache.out, &mut dy);
        let dh = self.norm.backward(p, cache.norm, &dy, g);
        self.conv.backward(p, cache.conv, &dh, g)
    }

    /// Parameter gradients without the input gradient.
    pub fn param_grads<S: Scalar>(&self, p: &ParamStore<S>, cache: ConvNormCache<S>, mut dy: Matrix<S>, g: &mut Gradients<S>) {
        relu_backward(&cache.out, &mut dy);
        let dh = self.norm.backward(p, cache.norm, &dy, g);
        self.conv.param_grads(&cache.conv, &dh, g);
    }
}
