//! Nonsmooth terms `g` given through their proximal mappings.
//!
//! `prox(γ, x)` returns `argmin_u g(u) + ‖u − x‖²/(2γ)` together with `g` evaluated at
//! the minimizer, which most closed forms produce for free.

use std::ops::Range;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::counters::Tally;
use crate::error::{check_len, Error, Result};
use crate::linops::LinearOperator;
use crate::vecops::{all_finite, dist, norm};

/// Relative feasibility slack used by indicator functions.
pub const INDICATOR_SLACK: f64 = 1e-12;
/// Initial number of singular triples requested by the rank-adaptive nuclear-norm prox.
pub const INITIAL_RANK_GUESS: usize = 10;
/// Growth of the rank guess when too few singular values were computed.
pub const RANK_GUESS_STEP: usize = 5;

pub trait ProxOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// `g(x)`; may be `+∞`.
    fn value(&self, x: &[f64]) -> Result<f64>;

    /// `(prox_{γg}(x), g(prox_{γg}(x)))`.
    fn prox(&self, gamma: f64, x: &[f64]) -> Result<(Vec<f64>, f64)>;

    /// Clears per-run state.
    fn reset(&self) {}

    fn matvecs(&self) -> u64 {
        0
    }

    fn svds(&self) -> u64 {
        0
    }
}

impl<T: ProxOracle + ?Sized> ProxOracle for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        (**self).value(x)
    }
    fn prox(&self, gamma: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        (**self).prox(gamma, x)
    }
    fn reset(&self) {
        (**self).reset()
    }
    fn matvecs(&self) -> u64 {
        (**self).matvecs()
    }
    fn svds(&self) -> u64 {
        (**self).svds()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("prox parameter γ = {gamma} must be positive")))
    }
}

/// `g ≡ 0`.
#[derive(Debug, Clone)]
pub struct Zero {
    dim: usize,
}

impl Zero {
    pub fn new(dim: usize) -> Self {
        Zero { dim }
    }
}

impl ProxOracle for Zero {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        check_len("zero function point", self.dim, x)?;
        Ok(0.0)
    }
    fn prox(&self, gamma: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_gamma(gamma)?;
        check_len("zero function prox", self.dim, x)?;
        Ok((x.to_vec(), 0.0))
    }
}

/// `λ‖x‖₁`; prox is soft-thresholding.
#[derive(Debug, Clone)]
pub struct L1Norm {
    lambda: f64,
    dim: usize,
}

impl L1Norm {
    pub fn new(lambda: f64, dim: usize) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!("λ = {lambda} must be nonnegative")));
        }
        Ok(L1Norm { lambda, dim })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

impl ProxOracle for L1Norm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_len("l1 point", self.dim, x)?;
        Ok(self.lambda * x.iter().map(|v| v.abs()).sum::<f64>())
    }

    fn prox(&self, gamma: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_gamma(gamma)?;
        check_len("l1 prox", self.dim, x)?;
        let t = gamma * self.lambda;
        let p: Vec<f64> = x.iter().map(|&v| soft_threshold(v, t)).collect();
        let g = self.lambda * p.iter().map(|v| v.abs()).sum::<f64>();
        Ok((p, g))
    }
}

/// `λ Σ_i ‖x_{B_i}‖₂` over a partition `{B_i}` of the coordinates.
#[derive(Debug, Clone)]
pub struct GroupL2 {
    lambda: f64,
    dim: usize,
    blocks: Vec<Vec<usize>>,
}

impl GroupL2 {
    pub fn new(lambda: f64, dim: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!("λ = {lambda} must be nonnegative")));
        }
        let mut seen = vec![false; dim];
        for &i in blocks.iter().flatten() {
            if i >= dim {
                return Err(Error::param(format!("block index {i} outside dimension {dim}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::param(format!("index {i} belongs to two blocks")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::param(format!("index {i} is not covered by any block")));
        }
        Ok(GroupL2 {
            lambda,
            dim,
            blocks,
        })
    }

    /// Contiguous blocks of the given sizes.
    pub fn contiguous(lambda: f64, sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&s| {
                let b: Vec<usize> = (start..start + s).collect();
                start += s;
                b
            })
            .collect();
        Self::new(lambda, start, blocks)
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    fn block_norm(x: &[f64], block: &[usize]) -> f64 {
        block.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt()
    }
}

impl ProxOracle for GroupL2 {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_len("group norm point", self.dim, x)?;
        Ok(self.lambda
            * self
                .blocks
                .iter()
                .map(|b| Self::block_norm(x, b))
                .sum::<f64>())
    }

    fn prox(&self, gamma: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_gamma(gamma)?;
        check_len("group norm prox", self.dim, x)?;
        let t = gamma * self.lambda;
        let mut p = vec![0.0; self.dim];
        let mut g = 0.0;
        for block in &self.blocks {
            let nb = Self::block_norm(x, block);
            if nb <= t || nb == 0.0 {
                continue;
            }
            let shrink = 1.0 - t / nb;
            for &i in block {
                p[i] = shrink * x[i];
            }
            g += self.lambda * shrink * nb;
        }
        Ok((p, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SvdPolicy {
    Full,
    RankAdaptive,
}

/// `λ‖X‖_*` for `X ∈ ℝ^{rows×cols}` stored column-major.
#[derive(Debug)]
pub struct NuclearNorm {
    lambda: f64,
    rows: usize,
    cols: usize,
    policy: SvdPolicy,
    rank_guess: Mutex<usize>,
    svds: Tally,
}

/// Leading singular values and the thresholded matrix from the Gram eigendecomposition,
/// keeping only the `k` largest triples.
fn truncated_threshold(x: &DMatrix<f64>, k: usize, t: f64) -> (DMatrix<f64>, Vec<f64>) {
    let tall = x.nrows() >= x.ncols();
    let gram = if tall {
        x.transpose() * x
    } else {
        x * x.transpose()
    };
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(k);
    let sigmas: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .collect();
    let n = eig.eigenvectors.nrows();
    let mut proj = DMatrix::<f64>::zeros(n, n);
    for (&i, &s) in order.iter().zip(&sigmas) {
        if s <= t {
            continue;
        }
        let v = eig.eigenvectors.column(i);
        proj += (1.0 - t / s) * (v * v.transpose());
    }
    let p = if tall { x * proj } else { proj * x };
    (p, sigmas)
}

impl NuclearNorm {
    pub fn new(lambda: f64, rows: usize, cols: usize, policy: SvdPolicy) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!("λ = {lambda} must be nonnegative")));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::param("matrix dimensions must be positive"));
        }
        Ok(NuclearNorm {
            lambda,
            rows,
            cols,
            policy,
            rank_guess: Mutex::new(INITIAL_RANK_GUESS),
            svds: Tally::default(),
        })
    }

    pub fn policy(&self) -> SvdPolicy {
        self.policy
    }

    /// Current number of singular triples the next rank-adaptive prox will start from.
    pub fn rank_guess(&self) -> usize {
        *self.rank_guess.lock().expect("rank guess lock")
    }

    fn matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_len("nuclear norm point", self.rows * self.cols, x)?;
        if !all_finite(x) {
            return Err(Error::NonFinite {
                what: "nuclear norm argument",
                x: x.to_vec(),
            });
        }
        Ok(DMatrix::from_column_slice(self.rows, self.cols, x))
    }

    fn prox_full(&self, x: DMatrix<f64>, t: f64) -> (Vec<f64>, f64) {
        self.svds.bump();
        let svd = SVD::new(x, true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let mut p = DMatrix::<f64>::zeros(self.rows, self.cols);
        let mut g = 0.0;
        for (i, &s) in svd.singular_values.iter().enumerate() {
            let shrunk = s - t;
            if shrunk <= 0.0 {
                continue;
            }
            g += shrunk;
            p += shrunk * (u.column(i) * vt.row(i));
        }
        (p.as_slice().to_vec(), self.lambda * g)
    }

    fn prox_adaptive(&self, x: DMatrix<f64>, t: f64) -> (Vec<f64>, f64) {
        let full_rank = self.rows.min(self.cols);
        let mut guess = self.rank_guess.lock().expect("rank guess lock");
        let mut nu = (*guess).clamp(1, full_rank);
        let (p, sigmas) = loop {
            self.svds.bump();
            let (p, sigmas) = truncated_threshold(&x, nu, t);
            let smallest = *sigmas.last().expect("at least one triple");
            if nu >= full_rank || smallest <= t {
                break (p, sigmas);
            }
            nu = (nu + RANK_GUESS_STEP).min(full_rank);
        };
        *guess = match sigmas.iter().position(|&s| s <= t) {
            Some(j) => (j + 1).max(1),
            None => (nu + RANK_GUESS_STEP).min(full_rank),
        };
        let g = self.lambda * sigmas.iter().map(|s| (s - t).max(0.0)).sum::<f64>();
        (p.as_slice().to_vec(), g)
    }
}

impl ProxOracle for NuclearNorm {
    fn dim(&self) -> usize {
        self.rows * self.cols
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let m = self.matrix(x)?;
        self.svds.bump();
        Ok(self.lambda * m.singular_values().sum())
    }

    fn prox(&self, gamma: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_gamma(gamma)?;
        let m = self.matrix(x)?;
        let t = gamma * self.lambda;
        Ok(match self.policy {
            SvdPolicy::Full => self.prox_full(m, t),
            SvdPolicy::RankAdaptive => self.prox_adaptive(m, t),
        })
    }

    fn reset(&self) {
        *self.rank_guess.lock().expect("rank guess lock") = INITIAL_RANK_GUESS;
    }

    fn svds(&self) -> u64 {
        self.svds.get()
    }
}

/// Indicator of the box `[lo, hi]`; prox is clamping and ignores γ.
#[derive(Debug, Clone)]
pub struct BoxIndicator {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxIndicator {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_len("box upper bound", lo.len(), &hi)?;
        if let Some(i) = lo.iter().zip(&hi).position(|(l, h)| !(l <= h)) {
            return Err(Error::param(format!("box bounds cross at coordinate {i}")));
        }
        Ok(BoxIndicator { lo, hi })
    }

    /// Indicator of the nonnegative orthant.
    pub fn nonneg(dim: usize) -> Self {
        BoxIndicator {
            lo: vec![0.0; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }
}

impl ProxOracle for BoxIndicator {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_len("box point", self.dim(), x)?;
        let slack = INDICATOR_SLACK * (1.0 + norm(x));
        let inside = x
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&l, &h))| v >= l - slack && v <= h + slack);
        Ok(if inside { 0.0 } else { f64::INFINITY })
    }

    fn prox(&self, gamma: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_gamma(gamma)?;
        check_len("box prox", self.dim(), x)?;
        let p = x
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect();
        Ok((p, 0.0))
    }
}

/// `g(x) = inner(Wx)` for an orthonormal `W`, so `prox_{γg}(x) = Wᵀ prox_{γ·inner}(Wx)`.
pub struct OrthogonalCompose<P> {
    inner: P,
    w: Arc<LinearOperator>,
}

impl<P: ProxOracle> OrthogonalCompose<P> {
    pub fn new(inner: P, w: Arc<LinearOperator>) -> Result<Self> {
        if !w.is_orthonormal() {
            return Err(Error::param(
                "orthogonal composition requires an orthonormal transform",
            ));
        }
        if inner.dim() != w.output_dim() {
            return Err(Error::dims("orthogonal composition", w.output_dim(), inner.dim()));
        }
        Ok(OrthogonalCompose { inner, w })
    }
}

impl<P: ProxOracle> ProxOracle for OrthogonalCompose<P> {
    fn dim(&self) -> usize {
        self.w.input_dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.inner.value(&self.w.apply(x)?)
    }

    fn prox(&self, gamma: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (q, g) = self.inner.prox(gamma, &self.w.apply(x)?)?;
        Ok((self.w.apply_adjoint(&q)?, g))
    }

    fn reset(&self) {
        self.inner.reset()
    }

    fn matvecs(&self) -> u64 {
        self.w.matvecs() + self.inner.matvecs()
    }

    fn svds(&self) -> u64 {
        self.inner.svds()
    }
}

/// Sum of independent terms acting on disjoint contiguous coordinate ranges.
pub struct SeparableSum {
    dim: usize,
    parts: Vec<(Range<usize>, Box<dyn ProxOracle>)>,
}

impl SeparableSum {
    pub fn new(parts: Vec<Box<dyn ProxOracle>>) -> Self {
        let mut start = 0;
        let parts = parts
            .into_iter()
            .map(|p| {
                let r = start..start + p.dim();
                start = r.end;
                (r, p)
            })
            .collect();
        SeparableSum { dim: start, parts }
    }
}

impl ProxOracle for SeparableSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        check_len("separable sum point", self.dim, x)?;
        self.parts
            .iter()
            .map(|(r, p)| p.value(&x[r.clone()]))
            .sum()
    }

    fn prox(&self, gamma: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_len("separable sum prox", self.dim, x)?;
        let mut out = Vec::with_capacity(self.dim);
        let mut g = 0.0;
        for (r, p) in &self.parts {
            let (q, gq) = p.prox(gamma, &x[r.clone()])?;
            out.extend(q);
            g += gq;
        }
        Ok((out, g))
    }

    fn reset(&self) {
        self.parts.iter().for_each(|(_, p)| p.reset());
    }

    fn matvecs(&self) -> u64 {
        self.parts.iter().map(|(_, p)| p.matvecs()).sum()
    }

    fn svds(&self) -> u64 {
        self.parts.iter().map(|(_, p)| p.svds()).sum()
    }
}

/// Moreau envelope `g^γ(x) = g(p) + ‖p − x‖²/(2γ)` with `p = prox_{γg}(x)`.
pub fn moreau_env(oracle: &dyn ProxOracle, gamma: f64, x: &[f64]) -> Result<f64> {
    let (p, g) = oracle.prox(gamma, x)?;
    let d = dist(&p, x);
    Ok(g + d * d / (2.0 * gamma))
}
