//! Smooth terms `f` of the composite objective.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linops::{gram_norm_bound, LinearOperator};
use crate::vecops::{all_finite, norm};

/// Value, gradient and (optionally) Hessian-vector products of a `C^{1,1}` function.
pub trait SmoothOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// Fused `(f(x), ∇f(x))`.
    fn eval_fg(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn eval_f(&self, x: &[f64]) -> Result<f64> {
        self.eval_fg(x).map(|(f, _)| f)
    }

    fn has_hvp(&self) -> bool {
        false
    }

    /// `∇²f(x) v`. Only called when [`has_hvp`](Self::has_hvp) is true.
    fn hvp(&self, _x: &[f64], _v: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Unsupported("Hessian-vector product".into()))
    }

    /// Lipschitz constant of `∇f`, if known.
    fn lipschitz(&self) -> Option<f64>;

    /// Matrix-vector products spent by this oracle so far.
    fn matvecs(&self) -> u64 {
        0
    }

    /// `Some(m)` when `f(x) = h(Ax)` with `A: ℝⁿ → ℝᵐ`. The `*_image` methods are then
    /// available, so callers can carry `Ax` along and combine images linearly.
    fn image_dim(&self) -> Option<usize> {
        None
    }

    /// `Ax`.
    fn image(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Unsupported("affine image".into()))
    }

    /// `h(z)` for `z = Ax`; no matrix-vector product.
    fn eval_f_image(&self, _z: &[f64]) -> Result<f64> {
        Err(Error::Unsupported("affine image".into()))
    }

    /// `(h(z), Aᵀ∇h(z))` for `z = Ax`; one adjoint product.
    fn eval_fg_image(&self, _z: &[f64]) -> Result<(f64, Vec<f64>)> {
        Err(Error::Unsupported("affine image".into()))
    }

    /// `Aᵀ∇²h(z) u` for `z = Ax`, `u = Av`, i.e. `∇²f(x) v`; one adjoint product.
    fn hvp_image(&self, _z: &[f64], _u: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Unsupported("affine image".into()))
    }

    /// `∇²f` does not depend on `x`.
    fn constant_hessian(&self) -> bool {
        false
    }
}

impl<T: SmoothOracle + ?Sized> SmoothOracle for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_fg(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).eval_fg(x)
    }
    fn eval_f(&self, x: &[f64]) -> Result<f64> {
        (**self).eval_f(x)
    }
    fn has_hvp(&self) -> bool {
        (**self).has_hvp()
    }
    fn hvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        (**self).hvp(x, v)
    }
    fn lipschitz(&self) -> Option<f64> {
        (**self).lipschitz()
    }
    fn matvecs(&self) -> u64 {
        (**self).matvecs()
    }
    fn image_dim(&self) -> Option<usize> {
        (**self).image_dim()
    }
    fn image(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).image(x)
    }
    fn eval_f_image(&self, z: &[f64]) -> Result<f64> {
        (**self).eval_f_image(z)
    }
    fn eval_fg_image(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).eval_fg_image(z)
    }
    fn hvp_image(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        (**self).hvp_image(z, u)
    }
    fn constant_hessian(&self) -> bool {
        (**self).constant_hessian()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `½ (t - b)²`
    Quadratic,
    /// `log(1 + exp(-b t))`, `b ∈ {-1, +1}`
    Logistic,
    /// `log(1 + (t - b)²)`
    Robust,
}

/// `f(x) = Σ_i ψ_i((Ax)_i)` for a separable scalar loss `ψ_i` parameterised by `data[i]`.
#[derive(Debug, Clone)]
pub struct LinearLoss {
    op: Arc<LinearOperator>,
    data: Vec<f64>,
    kind: LossKind,
    lipschitz: Option<f64>,
}

/// `softplus(t) = log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LossKind {
    /// `(ψ(t), ψ'(t))` for data entry `b`.
    fn value_slope(self, t: f64, b: f64) -> (f64, f64) {
        match self {
            LossKind::Quadratic => {
                let r = t - b;
                (0.5 * r * r, r)
            }
            LossKind::Logistic => {
                let margin = b * t;
                (softplus(-margin), -b * sigmoid(-margin))
            }
            LossKind::Robust => {
                let r = t - b;
                ((r * r).ln_1p(), 2.0 * r / (1.0 + r * r))
            }
        }
    }

    fn value(self, t: f64, b: f64) -> f64 {
        self.value_slope(t, b).0
    }

    fn curvature(self, t: f64, b: f64) -> f64 {
        match self {
            LossKind::Quadratic => 1.0,
            LossKind::Logistic => {
                let margin = b * t;
                sigmoid(margin) * sigmoid(-margin)
            }
            LossKind::Robust => {
                let r2 = (t - b) * (t - b);
                2.0 * (1.0 - r2) / ((1.0 + r2) * (1.0 + r2))
            }
        }
    }
}

/// `½‖Ax − b‖²`, with `L_f = ‖AᵀA‖` from power iteration.
pub fn quadratic_loss(op: Arc<LinearOperator>, b: Vec<f64>) -> Result<LinearLoss> {
    check_len("quadratic loss data", op.output_dim(), &b)?;
    let l = gram_norm_bound(&op)?;
    Ok(LinearLoss {
        op,
        data: b,
        kind: LossKind::Quadratic,
        lipschitz: Some(l),
    })
}

/// `Σ log(1 + exp(−b_i ⟨a_i, x⟩))` with labels in `{−1, +1}`; `L_f = ‖AᵀA‖/4`.
pub fn logistic_loss(op: Arc<LinearOperator>, labels: Vec<f64>) -> Result<LinearLoss> {
    check_len("logistic labels", op.output_dim(), &labels)?;
    if let Some((i, b)) = labels
        .iter()
        .enumerate()
        .find(|(_, &b)| b != 1.0 && b != -1.0)
    {
        return Err(Error::param(format!("label {b} at row {i} is not ±1")));
    }
    let l = gram_norm_bound(&op)? / 4.0;
    Ok(LinearLoss {
        op,
        data: labels,
        kind: LossKind::Logistic,
        lipschitz: Some(l),
    })
}

/// `Σ log(1 + ((Ax − b)_i)²)`; `L_f = 2‖AᵀA‖`.
pub fn robust_loss(op: Arc<LinearOperator>, b: Vec<f64>) -> Result<LinearLoss> {
    check_len("robust loss data", op.output_dim(), &b)?;
    let l = 2.0 * gram_norm_bound(&op)?;
    Ok(LinearLoss {
        op,
        data: b,
        kind: LossKind::Robust,
        lipschitz: Some(l),
    })
}

impl LinearLoss {
    /// Replaces the stored Lipschitz constant, e.g. with an exactly known value.
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn operator(&self) -> &Arc<LinearOperator> {
        &self.op
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }
}

impl SmoothOracle for LinearLoss {
    fn dim(&self) -> usize {
        self.op.input_dim()
    }

    fn eval_fg(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let z = self.op.apply(x)?;
        self.eval_fg_image(&z)
    }

    fn eval_f(&self, x: &[f64]) -> Result<f64> {
        let z = self.op.apply(x)?;
        self.eval_f_image(&z)
    }

    fn has_hvp(&self) -> bool {
        true
    }

    fn hvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len("hvp direction", self.dim(), v)?;
        let av = self.op.apply(v)?;
        match self.kind {
            LossKind::Quadratic => self.op.apply_adjoint(&av),
            _ => {
                let z = self.op.apply(x)?;
                self.hvp_image(&z, &av)
            }
        }
    }

    fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    fn matvecs(&self) -> u64 {
        self.op.matvecs()
    }

    fn image_dim(&self) -> Option<usize> {
        Some(self.op.output_dim())
    }

    fn image(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.op.apply(x)
    }

    fn eval_f_image(&self, z: &[f64]) -> Result<f64> {
        check_len("loss image", self.data.len(), z)?;
        Ok(z
            .iter()
            .zip(&self.data)
            .map(|(&t, &b)| self.kind.value(t, b))
            .sum())
    }

    fn eval_fg_image(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("loss image", self.data.len(), z)?;
        let mut f = 0.0;
        let slopes: Vec<f64> = z
            .iter()
            .zip(&self.data)
            .map(|(&t, &b)| {
                let (v, s) = self.kind.value_slope(t, b);
                f += v;
                s
            })
            .collect();
        Ok((f, self.op.apply_adjoint(&slopes)?))
    }

    fn hvp_image(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("loss image", self.data.len(), z)?;
        check_len("hvp image direction", self.data.len(), u)?;
        let weighted: Vec<f64> = z
            .iter()
            .zip(&self.data)
            .zip(u)
            .map(|((&t, &b), &w)| self.kind.curvature(t, b) * w)
            .collect();
        self.op.apply_adjoint(&weighted)
    }

    fn constant_hessian(&self) -> bool {
        self.kind == LossKind::Quadratic
    }
}

type FgFn = dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync;
type HvpFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// Smooth oracle built from closures; handy for small analytic test functions.
pub struct FnOracle {
    dim: usize,
    fg: Box<FgFn>,
    hvp: Option<Box<HvpFn>>,
    lipschitz: Option<f64>,
}

impl FnOracle {
    pub fn new(
        dim: usize,
        fg: impl Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    ) -> Self {
        FnOracle {
            dim,
            fg: Box::new(fg),
            hvp: None,
            lipschitz: None,
        }
    }

    pub fn with_hvp(mut self, hvp: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.hvp = Some(Box::new(hvp));
        self
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    /// `½ Σ c_i x_i²`, with exact Hessian and Lipschitz constant.
    pub fn diagonal_quadratic(coeffs: Vec<f64>) -> Self {
        let l = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        let c1 = coeffs.clone();
        let c2 = coeffs.clone();
        FnOracle::new(coeffs.len(), move |x| {
            let f = 0.5 * x.iter().zip(&c1).map(|(v, c)| c * v * v).sum::<f64>();
            (f, x.iter().zip(&c1).map(|(v, c)| c * v).collect())
        })
        .with_hvp(move |_, v| v.iter().zip(&c2).map(|(a, c)| c * a).collect())
        .with_lipschitz(l)
    }
}

impl SmoothOracle for FnOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_fg(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("smooth oracle point", self.dim, x)?;
        Ok((self.fg)(x))
    }

    fn has_hvp(&self) -> bool {
        self.hvp.is_some()
    }

    fn hvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len("hvp direction", self.dim, v)?;
        match &self.hvp {
            Some(h) => Ok(h(x, v)),
            None => Err(Error::Unsupported("Hessian-vector product".into())),
        }
    }

    fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }
}

/// Hides the analytic Hessian and any affine structure of the wrapped oracle.
pub struct WithoutHvp<O>(pub O);

impl<O: SmoothOracle> SmoothOracle for WithoutHvp<O> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval_fg(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.0.eval_fg(x)
    }
    fn eval_f(&self, x: &[f64]) -> Result<f64> {
        self.0.eval_f(x)
    }
    fn lipschitz(&self) -> Option<f64> {
        self.0.lipschitz()
    }
    fn matvecs(&self) -> u64 {
        self.0.matvecs()
    }
}

/// A Hessian-vector product together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Hvp {
    pub value: Vec<f64>,
    pub analytic: bool,
}

/// `∇²f(x) v`: analytic when the oracle provides it, otherwise a forward difference of `∇f`.
pub fn hvp_or_fd(oracle: &dyn SmoothOracle, x: &[f64], v: &[f64]) -> Result<Hvp> {
    hvp_or_fd_with_grad(oracle, x, v, None)
}

/// As [`hvp_or_fd`], reusing `∇f(x)` for the difference quotient when it is already known.
pub fn hvp_or_fd_with_grad(
    oracle: &dyn SmoothOracle,
    x: &[f64],
    v: &[f64],
    grad_at_x: Option<&[f64]>,
) -> Result<Hvp> {
    check_len("hvp point", oracle.dim(), x)?;
    check_len("hvp direction", oracle.dim(), v)?;
    let nv = norm(v);
    if nv == 0.0 {
        return Ok(Hvp {
            value: vec![0.0; v.len()],
            analytic: true,
        });
    }
    if oracle.has_hvp() {
        return Ok(Hvp {
            value: oracle.hvp(x, v)?,
            analytic: true,
        });
    }
    let eps = f64::EPSILON.sqrt() * (1.0 + norm(x)) / nv.max(f64::MIN_POSITIVE);
    let shifted: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + eps * b).collect();
    let (_, g1) = oracle.eval_fg(&shifted)?;
    let owned;
    let g0 = match grad_at_x {
        Some(g) => g,
        None => {
            owned = oracle.eval_fg(x)?.1;
            &owned
        }
    };
    let value: Vec<f64> = g1.iter().zip(g0).map(|(a, b)| (a - b) / eps).collect();
    if !all_finite(&value) {
        return Err(Error::NonFinite {
            what: "finite-difference Hessian-vector product",
            x: x.to_vec(),
        });
    }
    Ok(Hvp {
        value,
        analytic: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::{dist, dot};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rvec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn rdense(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Arc<LinearOperator> {
        Arc::new(LinearOperator::dense(m, n, rvec(m * n, rng)).unwrap())
    }

    fn central_fd_grad(o: &dyn SmoothOracle, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * (1.0 + x[i].abs());
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (o.eval_f(&p).unwrap() - o.eval_f(&m).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        dist(a, b) / norm(b).max(1e-300)
    }

    fn families(rng: &mut ChaCha8Rng) -> Vec<LinearLoss> {
        let a = rdense(10, 20, rng);
        let b = rvec(10, rng);
        let labels = rvec(8, rng)
            .iter()
            .map(|v| if *v >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        vec![
            quadratic_loss(a.clone(), b.clone()).unwrap(),
            logistic_loss(rdense(8, 5, rng), labels).unwrap(),
            robust_loss(a, b).unwrap(),
        ]
    }

    #[test]
    fn quadratic_scalar_example() {
        let q = quadratic_loss(Arc::new(LinearOperator::identity(1)), vec![0.0]).unwrap();
        let (f, g) = q.eval_fg(&[3.0]).unwrap();
        assert_eq!(f, 4.5);
        assert_eq!(g, vec![3.0]);
        assert_eq!(q.eval_f(&[3.0]).unwrap(), 4.5);
    }

    #[test]
    fn quadratic_hessian_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = quadratic_loss(rdense(6, 9, &mut rng), rvec(6, &mut rng)).unwrap();
        for _ in 0..10 {
            let x = rvec(9, &mut rng);
            let v = rvec(9, &mut rng);
            assert_eq!(q.hvp(&x, &v).unwrap(), q.hvp(&[0.0; 9], &v).unwrap());
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for loss in families(&mut rng) {
            for _ in 0..100 {
                let x = rvec(loss.dim(), &mut rng);
                let g = loss.eval_fg(&x).unwrap().1;
                let fd = central_fd_grad(&loss, &x);
                let err = dist(&g, &fd) / (1.0 + norm(&g));
                assert!(err <= 1e-5, "{:?}: {err}", loss.kind());
            }
        }
    }

    #[test]
    fn quadratic_gradient_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = quadratic_loss(rdense(10, 20, &mut rng), rvec(10, &mut rng)).unwrap();
        let x = rvec(20, &mut rng);
        let g = q.eval_fg(&x).unwrap().1;
        assert!(rel(&central_fd_grad(&q, &x), &g) <= 1e-6);
    }

    #[test]
    fn lipschitz_bound_and_descent_lemma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for loss in families(&mut rng) {
            let l = loss.lipschitz().unwrap();
            for _ in 0..100 {
                let x = rvec(loss.dim(), &mut rng);
                let y = rvec(loss.dim(), &mut rng);
                let (fx, gx) = loss.eval_fg(&x).unwrap();
                let (fy, gy) = loss.eval_fg(&y).unwrap();
                assert!(dist(&gx, &gy) <= l * dist(&x, &y) * (1.0 + 1e-12));
                let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
                let upper = fx + dot(&gx, &d) + 0.5 * l * dot(&d, &d);
                assert!(upper - fy >= -1e-10 * (1.0 + fx.abs()));
            }
        }
    }

    #[test]
    fn hvp_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for loss in families(&mut rng) {
            for _ in 0..100 {
                let x = rvec(loss.dim(), &mut rng);
                let u = rvec(loss.dim(), &mut rng);
                let v = rvec(loss.dim(), &mut rng);
                let a = dot(&loss.hvp(&x, &u).unwrap(), &v);
                let b = dot(&u, &loss.hvp(&x, &v).unwrap());
                assert!((a - b).abs() <= 1e-8 * (a.abs() + b.abs()).max(1e-300));
            }
        }
    }

    #[test]
    fn logistic_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rdense(8, 5, &mut rng);
        let labels = vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0];
        let loss = logistic_loss(a.clone(), labels.clone()).unwrap();
        let (f, g) = loss.eval_fg(&[0.0; 5]).unwrap();
        assert!((f - 8.0 * 2f64.ln()).abs() < 1e-12);
        let expect: Vec<f64> = a
            .apply_adjoint(&labels)
            .unwrap()
            .iter()
            .map(|v| -0.5 * v)
            .collect();
        assert!(dist(&g, &expect) < 1e-12);
    }

    #[test]
    fn logistic_large_margin_no_overflow() {
        let loss = logistic_loss(Arc::new(LinearOperator::diagonal(vec![40.0])), vec![1.0]).unwrap();
        let (f, g) = loss.eval_fg(&[1.0]).unwrap();
        assert!((0.0..=1e-15).contains(&f));
        assert!(g[0].is_finite());
        let (f, _) = loss.eval_fg(&[-1000.0]).unwrap();
        assert!((f - 40_000.0).abs() < 1e-9);
    }

    #[test]
    fn logistic_rejects_bad_labels() {
        let err = logistic_loss(Arc::new(LinearOperator::identity(2)), vec![1.0, 0.0]);
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn logistic_hvp_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let labels = (0..8).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let loss = logistic_loss(rdense(8, 5, &mut rng), labels).unwrap();
        for _ in 0..20 {
            let x = rvec(5, &mut rng);
            let v = rvec(5, &mut rng);
            let h = 1e-5;
            let gp = loss.eval_fg(&crate::vecops::add_scaled(&x, h, &v)).unwrap().1;
            let gm = loss.eval_fg(&crate::vecops::add_scaled(&x, -h, &v)).unwrap().1;
            let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            assert!(rel(&fd, &loss.hvp(&x, &v).unwrap()) <= 1e-5);
        }
    }

    #[test]
    fn robust_examples() {
        let loss = robust_loss(Arc::new(LinearOperator::identity(1)), vec![0.0]).unwrap();
        assert_eq!(loss.eval_fg(&[0.0]).unwrap(), (0.0, vec![0.0]));
        let (f, g) = loss.eval_fg(&[1.0]).unwrap();
        assert!((f - 2f64.ln()).abs() < 1e-15);
        assert!((g[0] - 1.0).abs() < 1e-15);
        assert_eq!(loss.lipschitz(), Some(2.0));
    }

    #[test]
    fn robust_sampled_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let loss = robust_loss(Arc::new(LinearOperator::diagonal(vec![1.7])), vec![0.3]).unwrap();
        let l = loss.lipschitz().unwrap();
        for _ in 0..1000 {
            let x: f64 = 3.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let y: f64 = 3.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let gx = loss.eval_fg(&[x]).unwrap().1[0];
            let gy = loss.eval_fg(&[y]).unwrap().1[0];
            assert!((gx - gy).abs() <= l * (x - y).abs() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn hvp_or_fd_paths() {
        let q = quadratic_loss(Arc::new(LinearOperator::diagonal(vec![1.0, 3.0])), vec![0.0; 2])
            .unwrap();
        let h = hvp_or_fd(&q, &[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!(h.analytic);
        assert_eq!(h.value, q.hvp(&[1.0, 2.0], &[1.0, 1.0]).unwrap());

        let z = hvp_or_fd(&q, &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(z.value, vec![0.0, 0.0]);
        assert!(z.analytic);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let labels = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let loss = logistic_loss(rdense(8, 5, &mut rng), labels).unwrap();
        let x = rvec(5, &mut rng);
        let v = rvec(5, &mut rng);
        let analytic = loss.hvp(&x, &v).unwrap();
        let stripped = WithoutHvp(loss);
        let fd = hvp_or_fd(&stripped, &x, &v).unwrap();
        assert!(!fd.analytic);
        assert!(rel(&fd.value, &analytic) <= 1e-6, "{}", rel(&fd.value, &analytic));
    }
}
