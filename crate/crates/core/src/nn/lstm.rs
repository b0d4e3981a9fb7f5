//! Long short-term memory layers over batched sequences.
//!
//! A batched sequence is a matrix with `T·B` rows laid out time-major: row `t·B + b` holds
//! frame `t` of sequence `b`. Encoders run with `B = 1`; the decoder batches its crops.

use alloc::vec::Vec;

use super::layers::add_col_sums;
use super::params::{join, uniform, Gradients, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{gemm, gemm_at_b_rows, gemm_rows, Matrix, Op, Scalar};

/// One direction of an LSTM. Gate order in the packed weights is `[input, forget, cell, output]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
    pub reverse: bool,
}

pub struct LstmCache<S> {
    x: Matrix<S>,
    /// Post-activation gates, `(T·B) × 4H`.
    gates: Matrix<S>,
    cell: Matrix<S>,
    tanh_cell: Matrix<S>,
    hidden: Matrix<S>,
    batch: usize,
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

impl Lstm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input: usize,
        hidden: usize,
        reverse: bool,
        forget_bias: f64,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / num_traits::Float::sqrt(hidden as f64);
        let w_ih = store.add(join(prefix, "w_ih"), uniform(input, 4 * hidden, bound, rng));
        let w_hh = store.add(join(prefix, "w_hh"), uniform(hidden, 4 * hidden, bound, rng));
        let mut b = Matrix::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            b.as_mut_slice()[j] = S::lit(forget_bias);
        }
        let bias = store.add(join(prefix, "bias"), b);
        Self { w_ih, w_hh, bias, input, hidden, reverse }
    }

    fn order(&self, steps: usize) -> impl Iterator<Item = usize> {
        let rev = self.reverse;
        (0..steps).map(move |i| if rev { steps - 1 - i } else { i })
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Matrix<S>, batch: usize) -> (Matrix<S>, LstmCache<S>) {
        assert_eq!(x.cols(), self.input, "lstm input width");
        assert!(batch > 0 && x.rows() % batch == 0, "rows must be a multiple of batch");
        let h = self.hidden;
        let steps = x.rows() / batch;
        let mut gates = Matrix::zeros(x.rows(), 4 * h);
        let b = p.get(self.bias).as_slice();
        for r in 0..gates.rows() {
            gates.row_mut(r).copy_from_slice(b);
        }
        gemm(S::one(), x, Op::N, p.get(self.w_ih), Op::N, S::one(), &mut gates);

        let mut cell = Matrix::zeros(x.rows(), h);
        let mut tanh_cell = Matrix::zeros(x.rows(), h);
        let mut hidden = Matrix::zeros(x.rows(), h);
        let w_hh = p.get(self.w_hh);
        let mut prev: Option<usize> = None;
        for t in self.order(steps) {
            let rows = t * batch..(t + 1) * batch;
            if let Some(pt) = prev {
                let h_prev = &hidden.as_slice()[pt * batch * h..(pt + 1) * batch * h];
                let g_now = &mut gates.as_mut_slice()[rows.start * 4 * h..rows.end * 4 * h];
                gemm_rows(S::one(), h_prev, batch, h, w_hh, Op::N, S::one(), g_now, 4 * h);
            }
            for r in rows {
                let g = gates.row_mut(r);
                for j in 0..h {
                    g[j] = sigmoid(g[j]);
                    g[h + j] = sigmoid(g[h + j]);
                    g[2 * h + j] = g[2 * h + j].tanh();
                    g[3 * h + j] = sigmoid(g[3 * h + j]);
                }
                let prow = prev.map(|pt| pt * batch + (r - t * batch));
                for j in 0..h {
                    let c_prev = prow.map_or(S::zero(), |pr| cell.get(pr, j));
                    let g = gates.row(r);
                    let c = g[h + j] * c_prev + g[j] * g[2 * h + j];
                    let tc = c.tanh();
                    cell.set(r, j, c);
                    tanh_cell.set(r, j, tc);
                    hidden.set(r, j, g[3 * h + j] * tc);
                }
            }
            prev = Some(t);
        }
        (hidden.clone(), LstmCache { x: x.clone(), gates, cell, tanh_cell, hidden, batch })
    }

    pub fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        cache: LstmCache<S>,
        dy: &Matrix<S>,
        g: &mut Gradients<S>,
    ) -> Matrix<S> {
        let h = self.hidden;
        let batch = cache.batch;
        let n_rows = cache.x.rows();
        let steps = n_rows / batch;
        let w_hh = p.get(self.w_hh);
        let mut d_pre = Matrix::zeros(n_rows, 4 * h);
        let mut dh_next = Matrix::<S>::zeros(batch, h);
        let mut dc_next = Matrix::<S>::zeros(batch, h);
        let order: Vec<usize> = self.order(steps).collect();
        for (i, &t) in order.iter().enumerate().rev() {
            let prev = if i > 0 { Some(order[i - 1]) } else { None };
            for bi in 0..batch {
                let r = t * batch + bi;
                let gr = cache.gates.row(r);
                for j in 0..h {
                    let (ig, fg, cg, og) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let tc = cache.tanh_cell.get(r, j);
                    let dh = dy.get(r, j) + dh_next.get(bi, j);
                    let dc = dh * og * (S::one() - tc * tc) + dc_next.get(bi, j);
                    let c_prev = prev.map_or(S::zero(), |pt| cache.cell.get(pt * batch + bi, j));
                    let dr = d_pre.row_mut(r);
                    dr[j] = dc * cg * ig * (S::one() - ig);
                    dr[h + j] = dc * c_prev * fg * (S::one() - fg);
                    dr[2 * h + j] = dc * ig * (S::one() - cg * cg);
                    dr[3 * h + j] = dh * tc * og * (S::one() - og);
                    dc_next.set(bi, j, dc * fg);
                }
            }
            let d_now = &d_pre.as_slice()[t * batch * 4 * h..(t + 1) * batch * 4 * h];
            gemm_rows(S::one(), d_now, batch, 4 * h, w_hh, Op::T, S::zero(), dh_next.as_mut_slice(), h);
            if let Some(pt) = prev {
                let h_prev = &cache.hidden.as_slice()[pt * batch * h..(pt + 1) * batch * h];
                gemm_at_b_rows(h_prev, batch, h, d_now, 4 * h, g.get_mut(self.w_hh));
            }
        }
        gemm(S::one(), &cache.x, Op::T, &d_pre, Op::N, S::one(), g.get_mut(self.w_ih));
        add_col_sums(&d_pre, g.get_mut(self.bias));
        let mut dx = Matrix::zeros(n_rows, self.input);
        gemm(S::one(), &d_pre, Op::N, p.get(self.w_ih), Op::T, S::zero(), &mut dx);
        dx
    }
}

/// Bidirectional LSTM; output columns are `[forward | backward]`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

pub struct BiLstmCache<S> {
    fwd: LstmCache<S>,
    bwd: LstmCache<S>,
}

impl BiLstm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input: usize,
        hidden: usize,
        forget_bias: f64,
        rng: &mut Rng,
    ) -> Self {
        let fwd = Lstm::new(store, &join(prefix, "fwd"), input, hidden, false, forget_bias, rng);
        let bwd = Lstm::new(store, &join(prefix, "bwd"), input, hidden, true, forget_bias, rng);
        Self { fwd, bwd }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Matrix<S>, batch: usize) -> (Matrix<S>, BiLstmCache<S>) {
        let (hf, fwd) = self.fwd.forward(p, x, batch);
        let (hb, bwd) = self.bwd.forward(p, x, batch);
        (Matrix::hcat(&[&hf, &hb]), BiLstmCache { fwd, bwd })
    }

    pub fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        cache: BiLstmCache<S>,
        dy: &Matrix<S>,
        g: &mut Gradients<S>,
    ) -> Matrix<S> {
        let h = self.hidden();
        let mut dx = self.fwd.backward(p, cache.fwd, &dy.slice_cols(0, h), g);
        dx.add_assign(&self.bwd.backward(p, cache.bwd, &dy.slice_cols(h, 2 * h), g));
        dx
    }
}

/// A stack of bidirectional layers; layer `i > 0` consumes `2·hidden` channels.
#[derive(Clone, Debug)]
pub struct BiLstmStack {
    pub layers: Vec<BiLstm>,
}

impl BiLstmStack {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input: usize,
        hidden: usize,
        depth: usize,
        forget_bias: f64,
        rng: &mut Rng,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let inp = if i == 0 { input } else { 2 * hidden };
                BiLstm::new(store, &join(prefix, &alloc::format!("lstm{i}")), inp, hidden, forget_bias, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(0, |l| 2 * l.hidden())
    }

    pub fn forward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        x: &Matrix<S>,
        batch: usize,
    ) -> (Matrix<S>, Vec<BiLstmCache<S>>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let (y, c) = l.forward(p, &cur, batch);
            caches.push(c);
            cur = y;
        }
        (cur, caches)
    }

    pub fn backward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        caches: Vec<BiLstmCache<S>>,
        dy: &Matrix<S>,
        g: &mut Gradients<S>,
    ) -> Matrix<S> {
        let mut d = dy.clone();
        for (l, c) in self.layers.iter().zip(caches).rev() {
            d = l.backward(p, c, &d, g);
        }
        d
    }
}
