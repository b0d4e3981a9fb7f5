//! Dense row-major matrices and the matrix-multiply kernel every layer uses.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point element type. Training runs in `f32`; gradient checks run in `f64`.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` over raw strided storage.
    ///
    /// # Safety
    /// Strides and extents must describe in-bounds views of the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `rows × cols` matrix. Time runs along rows throughout the crate.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Matrix<S = f32> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[S]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[S]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self { rows: end - start, cols: self.cols, data: self.data[start * self.cols..end * self.cols].to_vec() }
    }

    /// Concatenate along the column axis. All parts must share a row count.
    pub fn hcat(parts: &[&Matrix<S>]) -> Self {
        let rows = parts.first().map_or(0, |p| p.rows);
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            let dst = out.row_mut(r);
            for p in parts {
                assert_eq!(p.rows, rows, "hcat row mismatch");
                dst[off..off + p.cols].copy_from_slice(p.row(r));
                off += p.cols;
            }
        }
        out
    }

    /// Columns `start..end` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        Self::from_fn(self.rows, end - start, |r, c| self.get(r, start + c))
    }

    pub fn add_assign(&mut self, other: &Matrix<S>) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: S) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |a, &b| a + b)
    }

    pub fn mean(&self) -> S {
        if self.data.is_empty() {
            return S::zero();
        }
        self.sum() / S::from_usize(self.data.len()).unwrap()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |a, &b| a.max(b.abs()))
    }

    pub fn cast<T: Scalar>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| T::from_f64(x.to_f64().unwrap()).unwrap()).collect(),
        }
    }
}

/// Products below this many multiply-adds, or with very few output rows, skip the packing
/// kernel: recurrent layers issue thousands of them per sequence.
const SMALL_GEMM: usize = 1 << 15;

/// Dot product with eight independent accumulators so the loop vectorises.
#[inline]
fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    let mut acc = [S::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: S = xc.remainder().iter().zip(yc.remainder()).fold(S::zero(), |a, (&p, &q)| a + p * q);
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

#[allow(clippy::too_many_arguments)]
unsafe fn kernel<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: *const S,
    rsa: isize,
    csa: isize,
    b: *const S,
    rsb: isize,
    csb: isize,
    beta: S,
    c: *mut S,
    rsc: isize,
    csc: isize,
) {
    if m > 2 && m * k * n > SMALL_GEMM {
        return S::gemm_raw(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
    let at = |i: usize, p: usize| *a.offset(i as isize * rsa + p as isize * csa);
    for i in 0..m {
        if csc == 1 {
            let crow = core::slice::from_raw_parts_mut(c.offset(i as isize * rsc), n);
            if beta == S::zero() {
                crow.fill(S::zero());
            } else if beta != S::one() {
                crow.iter_mut().for_each(|v| *v *= beta);
            }
            if csb == 1 {
                for p in 0..k {
                    let s = alpha * at(i, p);
                    let brow = core::slice::from_raw_parts(b.offset(p as isize * rsb), n);
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += s * bv;
                    }
                }
                continue;
            }
            if rsb == 1 && csa == 1 {
                let arow = core::slice::from_raw_parts(a.offset(i as isize * rsa), k);
                for (j, cv) in crow.iter_mut().enumerate() {
                    let bcol = core::slice::from_raw_parts(b.offset(j as isize * csb), k);
                    *cv += alpha * dot(arow, bcol);
                }
                continue;
            }
        }
        for j in 0..n {
            let mut acc = S::zero();
            for p in 0..k {
                acc += at(i, p) * *b.offset(p as isize * rsb + j as isize * csb);
            }
            let dst = c.offset(i as isize * rsc + j as isize * csc);
            *dst = if beta == S::zero() { alpha * acc } else { beta * *dst + alpha * acc };
        }
    }
}

/// Operand transposition for [`gemm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `c = alpha * op(a) * op(b) + beta * c`.
pub fn gemm<S: Scalar>(alpha: S, a: &Matrix<S>, op_a: Op, b: &Matrix<S>, op_b: Op, beta: S, c: &mut Matrix<S>) {
    let (m, ka, rsa, csa) = match op_a {
        Op::N => (a.rows, a.cols, a.cols as isize, 1),
        Op::T => (a.cols, a.rows, 1, a.cols as isize),
    };
    let (kb, n, rsb, csb) = match op_b {
        Op::N => (b.rows, b.cols, b.cols as isize, 1),
        Op::T => (b.cols, b.rows, 1, b.cols as isize),
    };
    assert_eq!(ka, kb, "gemm inner dimension mismatch");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if ka == 0 {
        if beta == S::zero() {
            c.fill(S::zero());
        } else {
            c.scale(beta);
        }
        return;
    }
    // SAFETY: extents and strides derive from the matrices' own shapes, checked above.
    unsafe {
        kernel(
            m,
            ka,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        )
    }
}

/// `op(a) * op(b)` into a fresh matrix.
pub fn matmul<S: Scalar>(a: &Matrix<S>, op_a: Op, b: &Matrix<S>, op_b: Op) -> Matrix<S> {
    let m = if op_a == Op::N { a.rows } else { a.cols };
    let n = if op_b == Op::N { b.cols } else { b.rows };
    let mut c = Matrix::zeros(m, n);
    gemm(S::one(), a, op_a, b, op_b, S::zero(), &mut c);
    c
}

/// Gemm over a contiguous block of rows of `a` into a contiguous block of rows of `c`.
/// Used by recurrent layers, which multiply one time step of a batched sequence at a time.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_rows<S: Scalar>(
    alpha: S,
    a: &[S],
    m: usize,
    k: usize,
    b: &Matrix<S>,
    op_b: Op,
    beta: S,
    c: &mut [S],
    n: usize,
) {
    let (kb, nb, rsb, csb) = match op_b {
        Op::N => (b.rows, b.cols, b.cols as isize, 1),
        Op::T => (b.cols, b.rows, 1, b.cols as isize),
    };
    assert_eq!(kb, k);
    assert_eq!(nb, n);
    assert!(a.len() >= m * k && c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: `a` holds an m×k row-major block, `c` an m×n block, `b` is bounds-checked above.
    unsafe {
        kernel(m, k, n, alpha, a.as_ptr(), k as isize, 1, b.data.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1)
    }
}

/// `dst += a^T * b` where `a` is an m×k row block and `b` an m×n row block.
pub(crate) fn gemm_at_b_rows<S: Scalar>(a: &[S], m: usize, k: usize, b: &[S], n: usize, dst: &mut Matrix<S>) {
    assert_eq!(dst.shape(), (k, n));
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: `a` viewed transposed as k×m, `b` as m×n; both sized by the asserts of the callers.
    assert!(a.len() >= m * k && b.len() >= m * n);
    unsafe {
        kernel(
            k,
            m,
            n,
            S::one(),
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            S::one(),
            dst.data.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}
