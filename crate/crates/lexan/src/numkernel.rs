//! Minimal dense numeric primitives for the encoder and the CRF.
//!
//! Everything is generic over [`Scalar`] with two instantiations: `f64`
//! ("wide", used for training and gradient checks) and `f32` ("narrow",
//! sufficient for inference and half the memory traffic).
//!
//! The matrix-vector kernels are written so the inner loops vectorize under
//! `opt-level=3`: fixed eight-lane accumulators, four rows sharing one pass
//! over the input vector. Dimension mismatches are programming errors and
//! panic with a message rather than returning `Result`.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element type of all tensors in the crate.
pub trait Scalar:
    Copy
    + Clone
    + Default
    + PartialOrd
    + PartialEq
    + Debug
    + Display
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
    fn neg_infinity() -> Self;

    /// Score used to mask out illegal labels in the decode DP. True `-inf`
    /// in wide precision; a large negative sentinel in narrow precision so
    /// that adding finite emission scores can never produce a NaN.
    fn mask_score() -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $mask:expr) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f32(self) -> f32 {
                self as f32
            }

            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn maximum(self, other: Self) -> Self {
                if other > self {
                    other
                } else {
                    self
                }
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline(always)]
            fn neg_infinity() -> Self {
                <$t>::NEG_INFINITY
            }
            #[inline(always)]
            fn mask_score() -> Self {
                $mask
            }
        }
    };
}

impl_scalar!(f32, -1e30);
impl_scalar!(f64, f64::NEG_INFINITY);

/// Contiguous vector of scalars.
pub type DenseVector<S> = Vec<S>;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<S> {
    data: Vec<S>,
    rows: usize,
    cols: usize,
}

impl<S: Scalar> DenseMatrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            data: vec![S::ZERO; rows * cols],
            rows,
            cols,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        DenseMatrix { data, rows, cols }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        DenseMatrix { data, rows: r, cols: c }
    }

    #[inline(always)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline(always)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline(always)]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline(always)]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn fill(&mut self, v: S) {
        self.data.fill(v);
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &DenseMatrix<S>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in add");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Elementwise `self *= c`.
    pub fn scale(&mut self, c: S) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }

    /// Vertical concatenation of row blocks sharing a column count.
    pub fn vstack(blocks: &[&DenseMatrix<S>]) -> Self {
        assert!(!blocks.is_empty());
        let cols = blocks[0].cols;
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for b in blocks {
            assert_eq!(b.cols, cols, "vstack column mismatch");
            data.extend_from_slice(&b.data);
        }
        DenseMatrix { data, rows, cols }
    }

    /// Lossy precision change (used when loading a narrow model wide or
    /// saving a wide model narrow).
    pub fn cast<T: Scalar>(&self) -> DenseMatrix<T> {
        DenseMatrix {
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

const LANES: usize = 8;

#[inline(always)]
fn fold_lanes<S: Scalar>(acc: [S; LANES]) -> S {
    let mut s = S::ZERO;
    for a in acc {
        s += a;
    }
    s
}

/// Dot product with fixed lane accumulators so the loop vectorizes.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    assert_eq!(a.len(), b.len(), "dot length mismatch: {} vs {}", a.len(), b.len());
    let mut acc = [S::ZERO; LANES];
    let ac = a.chunks_exact(LANES);
    let bc = b.chunks_exact(LANES);
    let (ra, rb) = (ac.remainder(), bc.remainder());
    for (ca, cb) in ac.zip(bc) {
        for j in 0..LANES {
            acc[j] += ca[j] * cb[j];
        }
    }
    let mut s = fold_lanes(acc);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// Four dot products against a shared right-hand vector. Per-row arithmetic
/// is identical to [`dot`], so blocking never changes results.
#[inline]
fn dot4<S: Scalar>(a0: &[S], a1: &[S], a2: &[S], a3: &[S], v: &[S]) -> [S; 4] {
    let mut acc0 = [S::ZERO; LANES];
    let mut acc1 = [S::ZERO; LANES];
    let mut acc2 = [S::ZERO; LANES];
    let mut acc3 = [S::ZERO; LANES];
    let c0 = a0.chunks_exact(LANES);
    let c1 = a1.chunks_exact(LANES);
    let c2 = a2.chunks_exact(LANES);
    let c3 = a3.chunks_exact(LANES);
    let vc = v.chunks_exact(LANES);
    let tail = (c0.remainder(), c1.remainder(), c2.remainder(), c3.remainder(), vc.remainder());
    for (((r0, r1), (r2, r3)), rv) in c0.zip(c1).zip(c2.zip(c3)).zip(vc) {
        for j in 0..LANES {
            acc0[j] += r0[j] * rv[j];
            acc1[j] += r1[j] * rv[j];
            acc2[j] += r2[j] * rv[j];
            acc3[j] += r3[j] * rv[j];
        }
    }
    let mut out = [fold_lanes(acc0), fold_lanes(acc1), fold_lanes(acc2), fold_lanes(acc3)];
    for (k, rv) in tail.4.iter().enumerate() {
        out[0] += tail.0[k] * *rv;
        out[1] += tail.1[k] * *rv;
        out[2] += tail.2[k] * *rv;
        out[3] += tail.3[k] * *rv;
    }
    out
}

/// `out = m · v`. Panics on dimension mismatch.
pub fn matvec_into<S: Scalar>(m: &DenseMatrix<S>, v: &[S], out: &mut [S]) {
    assert_eq!(m.cols, v.len(), "matvec: {}x{} matrix with vector of length {}", m.rows, m.cols, v.len());
    assert_eq!(m.rows, out.len(), "matvec: output length {} for {} rows", out.len(), m.rows);
    let c = m.cols;
    let mut r = 0;
    while r + 4 <= m.rows {
        let base = r * c;
        let block = dot4(
            &m.data[base..base + c],
            &m.data[base + c..base + 2 * c],
            &m.data[base + 2 * c..base + 3 * c],
            &m.data[base + 3 * c..base + 4 * c],
            v,
        );
        out[r..r + 4].copy_from_slice(&block);
        r += 4;
    }
    while r < m.rows {
        out[r] = dot(m.row(r), v);
        r += 1;
    }
}

/// Allocating wrapper around [`matvec_into`].
pub fn matvec<S: Scalar>(m: &DenseMatrix<S>, v: &[S]) -> DenseVector<S> {
    let mut out = vec![S::ZERO; m.rows];
    matvec_into(m, v, &mut out);
    out
}

/// `out += mᵀ · v` without materializing the transpose.
pub fn matvec_transpose_acc<S: Scalar>(m: &DenseMatrix<S>, v: &[S], out: &mut [S]) {
    assert_eq!(m.rows, v.len(), "matvec_transpose: {}x{} with vector of length {}", m.rows, m.cols, v.len());
    assert_eq!(m.cols, out.len(), "matvec_transpose: output length {} for {} cols", out.len(), m.cols);
    for (i, row) in m.data.chunks_exact(m.cols.max(1)).enumerate() {
        let s = v[i];
        if s == S::ZERO {
            continue;
        }
        for (o, x) in out.iter_mut().zip(row) {
            *o += s * *x;
        }
    }
}

/// `out += c · v` (vector saxpy).
pub fn axpy<S: Scalar>(c: S, v: &[S], out: &mut [S]) {
    assert_eq!(v.len(), out.len(), "axpy length mismatch");
    for (o, x) in out.iter_mut().zip(v) {
        *o += c * *x;
    }
}

/// Rank-one update `m += a ⊗ b`.
pub fn outer_acc<S: Scalar>(m: &mut DenseMatrix<S>, a: &[S], b: &[S]) {
    assert_eq!(m.rows, a.len(), "outer_acc row mismatch");
    assert_eq!(m.cols, b.len(), "outer_acc col mismatch");
    for (i, row) in m.data.chunks_exact_mut(m.cols).enumerate() {
        let s = a[i];
        if s == S::ZERO {
            continue;
        }
        for (o, x) in row.iter_mut().zip(b) {
            *o += s * *x;
        }
    }
}

/// Logistic function, elementwise. Saturates cleanly at both ends.
#[inline(always)]
pub fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::ZERO {
        S::ONE / (S::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::ONE + e)
    }
}

pub fn sigmoid_inplace<S: Scalar>(v: &mut [S]) {
    for x in v.iter_mut() {
        *x = sigmoid_scalar(*x);
    }
}

pub fn sigmoid<S: Scalar>(v: &[S]) -> DenseVector<S> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh_inplace<S: Scalar>(v: &mut [S]) {
    for x in v.iter_mut() {
        *x = x.tanh();
    }
}

pub fn tanh<S: Scalar>(v: &[S]) -> DenseVector<S> {
    v.iter().map(|&x| x.tanh()).collect()
}

/// `log Σ exp(vᵢ)` by max shift. Entries of `-inf` (or the narrow mask
/// sentinel) contribute zero mass. Panics on empty input.
pub fn logsumexp<S: Scalar>(v: &[S]) -> S {
    assert!(!v.is_empty(), "logsumexp of empty vector");
    let mut m = S::neg_infinity();
    for &x in v {
        m = m.maximum(x);
    }
    if m == S::neg_infinity() {
        return m;
    }
    let mut sum = S::ZERO;
    for &x in v {
        sum += (x - m).exp();
    }
    m + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ident(n: usize) -> DenseMatrix<f64> {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[test]
    fn matvec_identity() {
        let v = vec![1.0, 2.0, 3.0];
        assert_eq!(matvec(&ident(3), &v), v);
    }

    #[test]
    fn matvec_zero_matrix() {
        let m = DenseMatrix::<f64>::zeros(4, 3);
        assert_eq!(matvec(&m, &[1.0, -2.0, 5.0]), vec![0.0; 4]);
    }

    #[test]
    fn matvec_hand_example() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(matvec(&m, &[1.0, 1.0]), vec![3.0, 7.0]);
    }

    #[test]
    #[should_panic(expected = "matvec")]
    fn matvec_dimension_mismatch() {
        matvec(&ident(3), &[1.0, 2.0]);
    }

    #[test]
    fn matvec_blocked_matches_per_row_dot() {
        // Row counts around the 4-row blocking boundary, col counts around
        // the lane width; blocked and single-row paths must agree exactly.
        let mut rng = crate::training::seeded_rng(7);
        for &rows in &[1usize, 3, 4, 5, 8, 9] {
            for &cols in &[1usize, 7, 8, 9, 16, 33] {
                let m = DenseMatrix::from_vec(
                    rows,
                    cols,
                    (0..rows * cols).map(|_| crate::training::uniform(&mut rng, -1.0, 1.0)).collect(),
                );
                let v: Vec<f64> = (0..cols).map(|_| crate::training::uniform(&mut rng, -1.0, 1.0)).collect();
                let fast = matvec(&m, &v);
                for i in 0..rows {
                    assert_eq!(fast[i], dot(m.row(i), &v), "row {i} of {rows}x{cols}");
                }
            }
        }
    }

    #[test]
    fn matvec_distributes_over_addition() {
        let mut rng = crate::training::seeded_rng(11);
        for _ in 0..50 {
            let m = DenseMatrix::from_vec(
                5,
                6,
                (0..30).map(|_| crate::training::uniform(&mut rng, -2.0, 2.0)).collect(),
            );
            let a: Vec<f64> = (0..6).map(|_| crate::training::uniform(&mut rng, -2.0, 2.0)).collect();
            let b: Vec<f64> = (0..6).map(|_| crate::training::uniform(&mut rng, -2.0, 2.0)).collect();
            let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = matvec(&m, &ab);
            let ra = matvec(&m, &a);
            let rb = matvec(&m, &b);
            for i in 0..5 {
                assert!((lhs[i] - (ra[i] + rb[i])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matvec_transpose_agrees_with_explicit_transpose() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let mut out = vec![0.0; 3];
        matvec_transpose_acc(&m, &[1.0, 10.0], &mut out);
        assert_eq!(out, vec![41.0, 52.0, 63.0]);
    }

    #[test]
    fn sigmoid_tanh_analytic_points() {
        assert_eq!(sigmoid(&[0.0f64]), vec![0.5]);
        assert_eq!(tanh(&[0.0f64]), vec![0.0]);
    }

    #[test]
    fn sigmoid_symmetry_and_bounds() {
        // Past |x| of about 19 tanh rounds to exactly 1, so the
        // open-interval check uses the representable range.
        let mut rng = crate::training::seeded_rng(3);
        for _ in 0..1000 {
            let x: f64 = crate::training::uniform(&mut rng, -15.0, 15.0);
            let s = sigmoid_scalar(x);
            assert!((sigmoid_scalar(-x) - (1.0 - s)).abs() <= 1e-12);
            assert!(s > 0.0 && s < 1.0);
            let t = x.tanh();
            assert!(t > -1.0 && t < 1.0);
        }
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid_scalar(1e4f64), 1.0);
        assert_eq!(sigmoid_scalar(-1e4f64), 0.0);
        assert!(sigmoid_scalar(1e4f32).is_finite());
        assert!(sigmoid_scalar(-1e4f32).is_finite());
    }

    #[test]
    fn logsumexp_single_and_pair() {
        assert_eq!(logsumexp(&[3.25f64]), 3.25);
        assert!((logsumexp(&[0.0f64, 0.0]) - 2.0f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn logsumexp_max_shift_avoids_overflow() {
        let r = logsumexp(&[1000.0f64, 1000.0]);
        assert!((r - (1000.0 + 2.0f64.ln())).abs() <= 1e-9);
        let rf = logsumexp(&[90.0f32, 90.0]);
        assert!(rf.is_finite());
    }

    #[test]
    fn logsumexp_absorbs_mask_scores() {
        let r = logsumexp(&[f64::NEG_INFINITY, 0.0, 0.0]);
        assert!((r - 2.0f64.ln()).abs() <= 1e-12);
        let rf = logsumexp(&[f32::mask_score(), 1.0f32]);
        assert!((rf - 1.0).abs() <= 1e-6);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 4]), f64::NEG_INFINITY);
    }

    #[test]
    fn logsumexp_bounds() {
        let mut rng = crate::training::seeded_rng(5);
        for _ in 0..200 {
            let n = 1 + (crate::training::uniform(&mut rng, 0.0, 9.0) as usize);
            let v: Vec<f64> = (0..n).map(|_| crate::training::uniform(&mut rng, -5.0, 5.0)).collect();
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let l = logsumexp(&v);
            assert!(l >= m - 1e-12);
            assert!(l <= m + (n as f64).ln() + 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "empty")]
    fn logsumexp_empty_panics() {
        logsumexp::<f64>(&[]);
    }
}
