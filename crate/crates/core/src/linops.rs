//! Matrix-free linear operators.
//!
//! Every smooth loss in this crate is written as `h(Ax)` for some operator `A`;
//! the operator only has to provide `A v` and `Aᵀ v`. Each operator keeps an
//! atomic count of forward and adjoint applications so solver traces can report
//! matrix-vector products.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counters::Tally;
use crate::error::{check_len, Error, Result};
use crate::vecops::{dot, norm};

/// Seed for the power-iteration start vector.
pub const POWER_ITERATION_SEED: u64 = 0x5e_ed0f_f0b5;
pub const POWER_ITERATION_MAX_ITERS: usize = 200;
pub const POWER_ITERATION_TOL: f64 = 1e-4;
/// Multiplier applied to power-iteration estimates before they are used as `L_f`.
pub const LIPSCHITZ_SAFETY: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Identity,
    Diagonal,
    Dense,
    SparseRow,
    EntrySelection,
    OrthonormalTransform,
    Composition,
}

/// Compressed sparse row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicate entries are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::param(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    fn mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).map(|(c, a)| a * v[c]).sum())
            .collect()
    }

    fn mul_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (c, a) in self.row(r) {
                out[c] += a * vr;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Identity,
    Diagonal(Vec<f64>),
    /// Row-major storage.
    Dense(Vec<f64>),
    Sparse(CsrMatrix),
    Selection(Vec<usize>),
    /// Orthonormal 2-D Haar transform of a column-major `rows x cols` array.
    Haar2d {
        rows: usize,
        cols: usize,
        levels: usize,
    },
    /// `ops[0] ∘ ops[1] ∘ …`, applied right to left.
    Composition(Vec<Arc<LinearOperator>>),
}

/// A linear map `ℝ^input_dim → ℝ^output_dim` with forward and adjoint actions.
#[derive(Debug)]
pub struct LinearOperator {
    input_dim: usize,
    output_dim: usize,
    repr: Repr,
    orthonormal: bool,
    matvecs: Tally,
}

impl Clone for LinearOperator {
    /// The clone starts with a fresh matvec counter.
    fn clone(&self) -> Self {
        LinearOperator {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            repr: self.repr.clone(),
            orthonormal: self.orthonormal,
            matvecs: Tally::default(),
        }
    }
}

impl LinearOperator {
    fn from_repr(input_dim: usize, output_dim: usize, repr: Repr, orthonormal: bool) -> Self {
        LinearOperator {
            input_dim,
            output_dim,
            repr,
            orthonormal,
            matvecs: Tally::default(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_repr(n, n, Repr::Identity, true)
    }

    pub fn diagonal(diag: Vec<f64>) -> Self {
        let n = diag.len();
        Self::from_repr(n, n, Repr::Diagonal(diag), false)
    }

    /// Dense matrix from row-major data.
    pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("dense operator data", rows * cols, data.len()));
        }
        Ok(Self::from_repr(cols, rows, Repr::Dense(data), false))
    }

    pub fn dense_from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(m * n);
        for row in rows {
            check_len("dense operator row", n, row)?;
            data.extend_from_slice(row);
        }
        Self::dense(m, n, data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(m.row(r).iter().copied());
        }
        Self::from_repr(cols, rows, Repr::Dense(data), false)
    }

    /// A dense matrix known to satisfy `QᵀQ = QQᵀ = I`; checked to 1e-12.
    pub fn orthonormal_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let mut op = Self::dense_from_rows(rows)?;
        if op.input_dim != op.output_dim {
            return Err(Error::param("orthonormal transform must be square"));
        }
        let q = op.to_dense();
        let gram = q.transpose() * &q;
        let err = (gram - DMatrix::<f64>::identity(op.input_dim, op.input_dim)).amax();
        if err > 1e-12 {
            return Err(Error::param(format!(
                "matrix is not orthonormal (max |QᵀQ - I| = {err:e})"
            )));
        }
        op.orthonormal = true;
        Ok(op)
    }

    pub fn sparse(matrix: CsrMatrix) -> Self {
        let (rows, cols) = (matrix.rows, matrix.cols);
        Self::from_repr(cols, rows, Repr::Sparse(matrix), false)
    }

    /// Gathers the listed coordinates of a vector in `ℝ^input_dim`.
    pub fn entry_selection(input_dim: usize, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= input_dim) {
            return Err(Error::param(format!(
                "selected index {bad} outside input dimension {input_dim}"
            )));
        }
        let out = indices.len();
        Ok(Self::from_repr(input_dim, out, Repr::Selection(indices), false))
    }

    /// Orthonormal 2-D Haar wavelet transform with `levels` levels on a column-major image.
    pub fn haar2d(rows: usize, cols: usize, levels: usize) -> Result<Self> {
        let block = 1usize << levels;
        if rows == 0 || cols == 0 || !rows.is_multiple_of(block) || !cols.is_multiple_of(block) {
            return Err(Error::param(format!(
                "{rows}x{cols} image is not divisible by 2^{levels}"
            )));
        }
        let n = rows * cols;
        Ok(Self::from_repr(
            n,
            n,
            Repr::Haar2d { rows, cols, levels },
            true,
        ))
    }

    /// `ops[0] ∘ ops[1] ∘ … ∘ ops[last]`; the last operator is applied first.
    pub fn compose(ops: Vec<Arc<LinearOperator>>) -> Result<Self> {
        let first = ops
            .first()
            .ok_or_else(|| Error::param("empty composition"))?;
        for pair in ops.windows(2) {
            if pair[0].input_dim != pair[1].output_dim {
                return Err(Error::dims(
                    "operator composition",
                    pair[0].input_dim,
                    pair[1].output_dim,
                ));
            }
        }
        let output_dim = first.output_dim;
        let input_dim = ops.last().expect("nonempty").input_dim;
        let orthonormal = ops.iter().all(|op| op.orthonormal);
        Ok(Self::from_repr(
            input_dim,
            output_dim,
            Repr::Composition(ops),
            orthonormal,
        ))
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn kind(&self) -> OperatorKind {
        match self.repr {
            Repr::Identity => OperatorKind::Identity,
            _ if self.orthonormal => OperatorKind::OrthonormalTransform,
            Repr::Diagonal(_) => OperatorKind::Diagonal,
            Repr::Dense(_) => OperatorKind::Dense,
            Repr::Sparse(_) => OperatorKind::SparseRow,
            Repr::Selection(_) => OperatorKind::EntrySelection,
            Repr::Haar2d { .. } => OperatorKind::OrthonormalTransform,
            Repr::Composition(_) => OperatorKind::Composition,
        }
    }

    /// True when `AᵀA = AAᵀ = I`.
    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    /// Number of forward and adjoint applications so far.
    pub fn matvecs(&self) -> u64 {
        self.matvecs.get()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("operator apply", self.input_dim, v)?;
        self.matvecs.bump();
        Ok(self.forward(v))
    }

    pub fn apply_adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("operator adjoint", self.output_dim, v)?;
        self.matvecs.bump();
        Ok(self.adjoint(v))
    }

    fn forward(&self, v: &[f64]) -> Vec<f64> {
        match &self.repr {
            Repr::Identity => v.to_vec(),
            Repr::Diagonal(d) => d.iter().zip(v).map(|(a, b)| a * b).collect(),
            Repr::Dense(data) => data
                .chunks_exact(self.input_dim)
                .map(|row| dot(row, v))
                .collect(),
            Repr::Sparse(m) => m.mul(v),
            Repr::Selection(idx) => idx.iter().map(|&i| v[i]).collect(),
            Repr::Haar2d { rows, cols, levels } => {
                let mut out = v.to_vec();
                haar_forward(&mut out, *rows, *cols, *levels);
                out
            }
            Repr::Composition(ops) => ops
                .iter()
                .rev()
                .fold(v.to_vec(), |acc, op| op.forward(&acc)),
        }
    }

    fn adjoint(&self, v: &[f64]) -> Vec<f64> {
        match &self.repr {
            Repr::Identity => v.to_vec(),
            Repr::Diagonal(d) => d.iter().zip(v).map(|(a, b)| a * b).collect(),
            Repr::Dense(data) => {
                let mut out = vec![0.0; self.input_dim];
                for (row, &vr) in data.chunks_exact(self.input_dim).zip(v) {
                    if vr != 0.0 {
                        for (o, a) in out.iter_mut().zip(row) {
                            *o += a * vr;
                        }
                    }
                }
                out
            }
            Repr::Sparse(m) => m.mul_transpose(v),
            Repr::Selection(idx) => {
                let mut out = vec![0.0; self.input_dim];
                for (&i, &val) in idx.iter().zip(v) {
                    out[i] += val;
                }
                out
            }
            Repr::Haar2d { rows, cols, levels } => {
                let mut out = v.to_vec();
                haar_inverse(&mut out, *rows, *cols, *levels);
                out
            }
            Repr::Composition(ops) => ops.iter().fold(v.to_vec(), |acc, op| op.adjoint(&acc)),
        }
    }

    /// Explicit `output_dim x input_dim` matrix, built column by column without counting.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.output_dim, self.input_dim);
        let mut e = vec![0.0; self.input_dim];
        for j in 0..self.input_dim {
            e[j] = 1.0;
            let col = self.forward(&e);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        m
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One analysis step on `len` entries of a strided line.
fn haar_line_forward(data: &mut [f64], start: usize, stride: usize, len: usize, buf: &mut Vec<f64>) {
    let half = len / 2;
    buf.clear();
    buf.resize(len, 0.0);
    for k in 0..half {
        let a = data[start + 2 * k * stride];
        let b = data[start + (2 * k + 1) * stride];
        buf[k] = (a + b) * FRAC_1_SQRT_2;
        buf[half + k] = (a - b) * FRAC_1_SQRT_2;
    }
    for (k, &val) in buf.iter().enumerate() {
        data[start + k * stride] = val;
    }
}

fn haar_line_inverse(data: &mut [f64], start: usize, stride: usize, len: usize, buf: &mut Vec<f64>) {
    let half = len / 2;
    buf.clear();
    buf.resize(len, 0.0);
    for k in 0..half {
        let a = data[start + k * stride];
        let d = data[start + (half + k) * stride];
        buf[2 * k] = (a + d) * FRAC_1_SQRT_2;
        buf[2 * k + 1] = (a - d) * FRAC_1_SQRT_2;
    }
    for (k, &val) in buf.iter().enumerate() {
        data[start + k * stride] = val;
    }
}

// Column-major layout: entry (i, j) lives at i + j * rows.
fn haar_forward(data: &mut [f64], rows: usize, cols: usize, levels: usize) {
    let mut buf = Vec::new();
    for level in 0..levels {
        let (h, w) = (rows >> level, cols >> level);
        for j in 0..w {
            haar_line_forward(data, j * rows, 1, h, &mut buf);
        }
        for i in 0..h {
            haar_line_forward(data, i, rows, w, &mut buf);
        }
    }
}

fn haar_inverse(data: &mut [f64], rows: usize, cols: usize, levels: usize) {
    let mut buf = Vec::new();
    for level in (0..levels).rev() {
        let (h, w) = (rows >> level, cols >> level);
        for i in 0..h {
            haar_line_inverse(data, i, rows, w, &mut buf);
        }
        for j in 0..w {
            haar_line_inverse(data, j * rows, 1, h, &mut buf);
        }
    }
}

/// Result of [`norm_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    /// Estimate of `‖AᵀA‖`, the largest eigenvalue of `AᵀA`.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Deterministic pseudo-random unit vector.
pub fn seeded_unit_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let nv = norm(&v);
    if nv == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= nv);
    }
    v
}

/// Power iteration on `AᵀA`. Stops when successive Rayleigh quotients agree to `tol` relative.
pub fn norm_estimate(op: &LinearOperator, max_iters: usize, tol: f64) -> Result<NormEstimate> {
    if max_iters == 0 {
        return Err(Error::param("power iteration needs max_iters >= 1"));
    }
    let mut v = seeded_unit_vector(op.input_dim(), POWER_ITERATION_SEED);
    let mut previous = f64::NAN;
    let mut estimate = 0.0;
    for it in 1..=max_iters {
        let w = op.apply_adjoint(&op.apply(&v)?)?;
        estimate = dot(&v, &w);
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(NormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
        if (estimate - previous).abs() <= tol * estimate.abs() {
            return Ok(NormEstimate {
                value: estimate,
                iterations: it,
                converged: true,
            });
        }
        previous = estimate;
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Ok(NormEstimate {
        value: estimate,
        iterations: max_iters,
        converged: false,
    })
}

/// `LIPSCHITZ_SAFETY · ‖AᵀA‖` using the default power-iteration budget.
pub fn gram_norm_bound(op: &LinearOperator) -> Result<f64> {
    if op.is_orthonormal() {
        return Ok(1.0);
    }
    let est = norm_estimate(op, POWER_ITERATION_MAX_ITERS, POWER_ITERATION_TOL)?;
    Ok(LIPSCHITZ_SAFETY * est.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand_distr::{Distribution, StandardNormal};

    fn random_dense(m: usize, n: usize, seed: u64) -> LinearOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..m * n).map(|_| StandardNormal.sample(&mut rng)).collect();
        LinearOperator::dense(m, n, data).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn all_kinds() -> Vec<LinearOperator> {
        let csr = CsrMatrix::from_triplets(
            4,
            6,
            [(0, 0, 1.5), (0, 5, -2.0), (1, 2, 0.5), (3, 1, 4.0), (3, 3, -1.0)],
        )
        .unwrap();
        let a = Arc::new(random_dense(5, 7, 1));
        let h = Arc::new(LinearOperator::haar2d(4, 4, 2).unwrap());
        let b = Arc::new(random_dense(7, 16, 2));
        vec![
            LinearOperator::identity(5),
            LinearOperator::diagonal(vec![2.0, -1.0, 0.5]),
            random_dense(6, 9, 3),
            LinearOperator::sparse(csr),
            LinearOperator::entry_selection(7, vec![0, 3, 6, 3]).unwrap(),
            LinearOperator::haar2d(16, 32, 4).unwrap(),
            LinearOperator::compose(vec![a, b, h]).unwrap(),
        ]
    }

    #[test]
    fn identity_diagonal_selection_examples() {
        let id = LinearOperator::identity(2);
        assert_eq!(id.apply(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(id.apply_adjoint(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);

        let d = LinearOperator::diagonal(vec![2.0, 1.0]);
        assert_eq!(d.apply(&[1.0, 1.0]).unwrap(), vec![2.0, 1.0]);

        let s = LinearOperator::entry_selection(3, vec![0, 2]).unwrap();
        assert_eq!(s.apply(&[5.0, 6.0, 7.0]).unwrap(), vec![5.0, 7.0]);
        assert_eq!(s.apply_adjoint(&[5.0, 7.0]).unwrap(), vec![5.0, 0.0, 7.0]);

        let a = LinearOperator::dense_from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.apply_adjoint(&[1.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(a.apply(&[1.0, 0.0]).unwrap(), vec![1.0, 3.0]);
    }

    #[test]
    fn dimension_mismatch_names_dims() {
        let a = LinearOperator::identity(3);
        match a.apply(&[1.0]) {
            Err(Error::DimensionMismatch {
                expected, actual, ..
            }) => assert_eq!((expected, actual), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(a.apply_adjoint(&[1.0; 4]).is_err());
    }

    #[test]
    fn counter_tracks_both_directions() {
        let a = LinearOperator::identity(2);
        a.apply(&[0.0, 0.0]).unwrap();
        a.apply_adjoint(&[0.0, 0.0]).unwrap();
        a.apply_adjoint(&[0.0, 0.0]).unwrap();
        assert_eq!(a.matvecs(), 3);
        assert_eq!(a.clone().matvecs(), 0);
    }

    #[test]
    fn adjoint_consistency_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for op in all_kinds() {
            let scale = gram_norm_bound(&op).unwrap().sqrt().max(1.0);
            for _ in 0..100 {
                let u = random_vec(op.input_dim(), &mut rng);
                let v = random_vec(op.output_dim(), &mut rng);
                let lhs = dot(&op.apply(&u).unwrap(), &v);
                let rhs = dot(&u, &op.apply_adjoint(&v).unwrap());
                let bound = 1e-10 * norm(&u) * norm(&v) * scale;
                assert!((lhs - rhs).abs() <= bound, "{:?}: {lhs} vs {rhs}", op.kind());
            }
        }
    }

    #[test]
    fn composition_matches_dense_product() {
        let a = Arc::new(random_dense(4, 6, 5));
        let b = Arc::new(random_dense(6, 3, 6));
        let d = Arc::new(LinearOperator::diagonal(vec![1.0, -2.0, 3.0]));
        let c = LinearOperator::compose(vec![a.clone(), b.clone(), d.clone()]).unwrap();
        let expected = a.to_dense() * b.to_dense() * d.to_dense();
        assert!((c.to_dense() - &expected).amax() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_vec(4, &mut rng);
        let got = c.apply_adjoint(&v).unwrap();
        let want = expected.transpose() * nalgebra::DVector::from_vec(v);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn haar_is_orthonormal() {
        let w = LinearOperator::haar2d(16, 16, 4).unwrap();
        assert_eq!(w.kind(), OperatorKind::OrthonormalTransform);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_vec(256, &mut rng);
        let back = w.apply_adjoint(&w.apply(&x).unwrap()).unwrap();
        let err = crate::vecops::dist(&back, &x) / norm(&x);
        assert!(err < 1e-12);
        let fwd = w.apply(&w.apply_adjoint(&x).unwrap()).unwrap();
        assert!(crate::vecops::dist(&fwd, &x) / norm(&x) < 1e-12);
    }

    #[test]
    fn haar_annihilates_constants_in_details() {
        let w = LinearOperator::haar2d(16, 16, 4).unwrap();
        let coeffs = w.apply(&vec![0.7; 256]).unwrap();
        // only the coarsest approximation coefficient survives
        assert!((coeffs[0] - 0.7 * 16.0).abs() < 1e-12);
        assert!(coeffs[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn haar_rejects_indivisible_dims() {
        assert!(LinearOperator::haar2d(24, 32, 4).is_err());
    }

    #[test]
    fn orthonormal_dense_validated() {
        let r = FRAC_1_SQRT_2;
        assert!(LinearOperator::orthonormal_dense(&[vec![r, r], vec![r, -r]]).is_ok());
        assert!(LinearOperator::orthonormal_dense(&[vec![1.0, 1.0], vec![1.0, -1.0]]).is_err());
    }

    #[test]
    fn norm_estimate_examples() {
        let d = LinearOperator::diagonal(vec![2.0, 1.0]);
        let est = norm_estimate(&d, 200, 1e-12).unwrap();
        assert!((est.value - 4.0).abs() < 1e-9, "{est:?}");
        assert!(est.converged);

        let id = LinearOperator::identity(7);
        assert!((norm_estimate(&id, 200, 1e-4).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_estimate_matches_dense_eigensolver() {
        let a = random_dense(30, 80, 0);
        let dense = a.to_dense();
        let gram = dense.transpose() * &dense;
        let top = SymmetricEigen::new(gram)
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        let est = norm_estimate(&a, 5000, 1e-13).unwrap();
        assert!(((est.value - top) / top).abs() <= 1e-6, "{} vs {top}", est.value);
    }

    #[test]
    fn power_iteration_is_monotone() {
        let a = random_dense(12, 20, 9);
        let mut last = 0.0;
        for iters in 1..40 {
            let est = norm_estimate(&a, iters, 0.0).unwrap();
            assert!(est.value >= last - 1e-12 * est.value);
            last = est.value;
        }
    }

    #[test]
    fn unconverged_estimate_is_flagged() {
        let a = random_dense(12, 20, 9);
        let est = norm_estimate(&a, 1, 1e-15).unwrap();
        assert!(!est.converged);
        assert_eq!(est.iterations, 1);
        assert!(norm_estimate(&a, 0, 1e-4).is_err());
    }

    #[test]
    fn csr_sums_duplicates_and_checks_bounds() {
        let m = CsrMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        let op = LinearOperator::sparse(m);
        assert_eq!(op.apply(&[1.0, 1.0]).unwrap(), vec![3.0, 1.0]);
        assert!(CsrMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).is_err());
    }
}
