//! Forward-backward quantities at a point: `T_γ`, `R_γ`, the envelope `φ_γ` and its gradient.
//!
//! When `f(x) = h(Ax)` the caches also carry `Ax` and `A T_γ(x)`, so points built as affine
//! combinations of cached points need no extra forward product.

use std::sync::Arc;

use crate::counters::{Counters, Tally};
use crate::error::{check_len, Error, Result};
use crate::prox::ProxOracle;
use crate::smooth::{hvp_or_fd_with_grad, SmoothOracle};
use crate::vecops::{all_finite, dot, norm_sq};

/// Relative slack of the γ test, absorbing rounding in `φ_γ` once `R_γ` is tiny.
pub const GAMMA_TEST_RTOL: f64 = 1e-12;

/// `φ = f + g` with oracle bookkeeping.
pub struct CompositeProblem {
    smooth: Arc<dyn SmoothOracle>,
    nonsmooth: Arc<dyn ProxOracle>,
    f_evals: Tally,
    grad_evals: Tally,
    hvps: Tally,
    prox_calls: Tally,
}

impl CompositeProblem {
    pub fn new(smooth: Arc<dyn SmoothOracle>, nonsmooth: Arc<dyn ProxOracle>) -> Result<Self> {
        if smooth.dim() != nonsmooth.dim() {
            return Err(Error::dims(
                "composite problem",
                smooth.dim(),
                nonsmooth.dim(),
            ));
        }
        Ok(CompositeProblem {
            smooth,
            nonsmooth,
            f_evals: Tally::default(),
            grad_evals: Tally::default(),
            hvps: Tally::default(),
            prox_calls: Tally::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }

    pub fn smooth(&self) -> &Arc<dyn SmoothOracle> {
        &self.smooth
    }

    pub fn nonsmooth(&self) -> &Arc<dyn ProxOracle> {
        &self.nonsmooth
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.smooth.lipschitz()
    }

    /// `f(x) = h(Ax)` and images may be cached.
    pub fn has_image(&self) -> bool {
        self.smooth.image_dim().is_some()
    }

    /// Clears per-run oracle state (e.g. the rank guess of an adaptive SVD).
    pub fn reset(&self) {
        self.nonsmooth.reset();
    }

    pub fn counters(&self) -> Counters {
        Counters {
            f_evals: self.f_evals.get(),
            grad_evals: self.grad_evals.get(),
            hvps: self.hvps.get(),
            prox_calls: self.prox_calls.get(),
            matvecs: self.smooth.matvecs() + self.nonsmooth.matvecs(),
            svds: self.nonsmooth.svds(),
        }
    }

    fn finite_value(f: f64, x: &[f64]) -> Result<f64> {
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::NonFinite {
                what: "smooth value",
                x: x.to_vec(),
            })
        }
    }

    fn finite_pair(f: f64, g: Vec<f64>, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if f.is_finite() && all_finite(&g) {
            Ok((f, g))
        } else {
            Err(Error::NonFinite {
                what: "smooth value or gradient",
                x: x.to_vec(),
            })
        }
    }

    pub fn eval_fg(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("smooth evaluation", self.dim(), x)?;
        self.f_evals.bump();
        self.grad_evals.bump();
        let (f, g) = self.smooth.eval_fg(x)?;
        Self::finite_pair(f, g, x)
    }

    pub fn eval_f(&self, x: &[f64]) -> Result<f64> {
        check_len("smooth evaluation", self.dim(), x)?;
        self.f_evals.bump();
        Self::finite_value(self.smooth.eval_f(x)?, x)
    }

    /// `Ax` when the smooth term has affine structure.
    pub fn image(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        if self.has_image() {
            check_len("image argument", self.dim(), x)?;
            Ok(Some(self.smooth.image(x)?))
        } else {
            Ok(None)
        }
    }

    /// `(f(x), ∇f(x), Ax)`, reusing `image = Ax` when supplied.
    pub fn eval_point(
        &self,
        x: &[f64],
        image: Option<Vec<f64>>,
    ) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
        if !self.has_image() {
            let (f, g) = self.eval_fg(x)?;
            return Ok((f, g, None));
        }
        check_len("smooth evaluation", self.dim(), x)?;
        let z = match image {
            Some(z) => z,
            None => self.smooth.image(x)?,
        };
        self.f_evals.bump();
        self.grad_evals.bump();
        let (f, g) = self.smooth.eval_fg_image(&z)?;
        let (f, g) = Self::finite_pair(f, g, x)?;
        Ok((f, g, Some(z)))
    }

    pub fn g_value(&self, x: &[f64]) -> Result<f64> {
        self.nonsmooth.value(x)
    }

    /// `φ(x)`, possibly `+∞`.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_f(x)? + self.g_value(x)?)
    }

    pub fn prox(&self, gamma: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.prox_calls.bump();
        self.nonsmooth.prox(gamma, x)
    }

    /// `∇²f(x) v`, analytic or by a forward difference reusing `∇f(x)`.
    pub fn hessian_product(&self, x: &[f64], v: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        if norm_sq(v) == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        if self.smooth.has_hvp() {
            self.hvps.bump();
        } else {
            self.grad_evals.bump();
        }
        Ok(hvp_or_fd_with_grad(self.smooth.as_ref(), x, v, Some(grad))?.value)
    }
}

/// Forward-backward quantities at one point for one `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbCache {
    pub x: Vec<f64>,
    pub gamma: f64,
    pub f_x: f64,
    pub grad_f_x: Vec<f64>,
    /// `T_γ(x) = prox_{γg}(x − γ∇f(x))`
    pub t_x: Vec<f64>,
    /// `g(T_γ(x))`
    pub g_at_t: f64,
    /// `R_γ(x) = (x − T_γ(x))/γ`
    pub r_x: Vec<f64>,
    pub r_norm: f64,
    /// `φ_γ(x)`
    pub fbe: f64,
    /// `Ax` for affine-structured `f`.
    pub image: Option<Vec<f64>>,
    /// `A T_γ(x)`, filled on first use.
    pub t_image: Option<Vec<f64>>,
}

/// Evaluates `f`, `∇f` and one prox at `x`.
pub fn fb_cache(problem: &CompositeProblem, gamma: f64, x: &[f64]) -> Result<FbCache> {
    fb_cache_with_image(problem, gamma, x, None)
}

/// As [`fb_cache`], reusing a known `Ax`.
pub fn fb_cache_with_image(
    problem: &CompositeProblem,
    gamma: f64,
    x: &[f64],
    image: Option<Vec<f64>>,
) -> Result<FbCache> {
    if !all_finite(x) {
        return Err(Error::NonFinite {
            what: "iterate",
            x: x.to_vec(),
        });
    }
    let (f, g, image) = problem.eval_point(x, image)?;
    FbCache::from_parts(problem, gamma, x.to_vec(), f, g, image)
}

impl FbCache {
    /// Builds the cache from an already computed `(f(x), ∇f(x))`; costs one prox.
    pub fn from_gradient(
        problem: &CompositeProblem,
        gamma: f64,
        x: Vec<f64>,
        f_x: f64,
        grad_f_x: Vec<f64>,
    ) -> Result<FbCache> {
        FbCache::from_parts(problem, gamma, x, f_x, grad_f_x, None)
    }

    pub fn from_parts(
        problem: &CompositeProblem,
        gamma: f64,
        x: Vec<f64>,
        f_x: f64,
        grad_f_x: Vec<f64>,
        image: Option<Vec<f64>>,
    ) -> Result<FbCache> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::param(format!("γ = {gamma} must be positive")));
        }
        let forward: Vec<f64> = x
            .iter()
            .zip(&grad_f_x)
            .map(|(xi, gi)| xi - gamma * gi)
            .collect();
        let (t_x, g_at_t) = problem.prox(gamma, &forward)?;
        let r_x: Vec<f64> = x
            .iter()
            .zip(&t_x)
            .map(|(xi, ti)| (xi - ti) / gamma)
            .collect();
        let r_sq = norm_sq(&r_x);
        let fbe = f_x - gamma * dot(&grad_f_x, &r_x) + 0.5 * gamma * r_sq + g_at_t;
        Ok(FbCache {
            x,
            gamma,
            f_x,
            grad_f_x,
            t_x,
            g_at_t,
            r_x,
            r_norm: r_sq.sqrt(),
            fbe,
            image,
            t_image: None,
        })
    }

    /// Same point, new `γ`: reuses `f`, `∇f` and `Ax`, recomputes the prox.
    pub fn with_gamma(&self, problem: &CompositeProblem, gamma: f64) -> Result<FbCache> {
        FbCache::from_parts(
            problem,
            gamma,
            self.x.clone(),
            self.f_x,
            self.grad_f_x.clone(),
            self.image.clone(),
        )
    }

    fn ensure_t_image(&mut self, problem: &CompositeProblem) -> Result<()> {
        if self.image.is_some() && self.t_image.is_none() {
            self.t_image = problem.image(&self.t_x)?;
        }
        Ok(())
    }

    /// `f(T_γ(x))`.
    pub fn forward_value(&mut self, problem: &CompositeProblem) -> Result<f64> {
        self.ensure_t_image(problem)?;
        match &self.t_image {
            Some(z) => {
                problem.f_evals.bump();
                CompositeProblem::finite_value(problem.smooth.eval_f_image(z)?, &self.t_x)
            }
            None => problem.eval_f(&self.t_x),
        }
    }

    /// `(f(T_γ(x)), ∇f(T_γ(x)))`.
    pub fn forward_point(&mut self, problem: &CompositeProblem) -> Result<(f64, Vec<f64>)> {
        self.ensure_t_image(problem)?;
        let (f, g, _) = problem.eval_point(&self.t_x, self.t_image.clone())?;
        Ok((f, g))
    }

    /// Cache at `T_γ(x)` for the same `γ`, given `(f, ∇f)` there.
    pub fn advance(
        &self,
        problem: &CompositeProblem,
        f_t: f64,
        grad_t: Vec<f64>,
    ) -> Result<FbCache> {
        FbCache::from_parts(
            problem,
            self.gamma,
            self.t_x.clone(),
            f_t,
            grad_t,
            self.t_image.clone(),
        )
    }
}

fn combine_gradient(cache: &FbCache, hr: &[f64]) -> Result<Vec<f64>> {
    let grad: Vec<f64> = cache
        .r_x
        .iter()
        .zip(hr)
        .map(|(r, h)| r - cache.gamma * h)
        .collect();
    if !all_finite(&grad) {
        return Err(Error::NonFinite {
            what: "envelope gradient",
            x: cache.x.clone(),
        });
    }
    Ok(grad)
}

/// `∇φ_γ(x) = R_γ(x) − γ∇²f(x)R_γ(x)`, using one Hessian-vector product.
pub fn fbe_gradient(problem: &CompositeProblem, cache: &mut FbCache) -> Result<Vec<f64>> {
    cache.ensure_t_image(problem)?;
    let hr = match (&cache.image, &cache.t_image) {
        (Some(z), Some(zt)) => {
            // A R = (Ax − A T(x))/γ
            let ar: Vec<f64> = z
                .iter()
                .zip(zt)
                .map(|(a, b)| (a - b) / cache.gamma)
                .collect();
            if norm_sq(&cache.r_x) == 0.0 {
                vec![0.0; cache.x.len()]
            } else {
                problem.hvps.bump();
                problem.smooth.hvp_image(z, &ar)?
            }
        }
        _ => problem.hessian_product(&cache.x, &cache.r_x, &cache.grad_f_x)?,
    };
    combine_gradient(cache, &hr)
}

/// `∇φ_γ(x)` given `∇f(T_γ(x))`. Free when `∇²f` is constant, since then
/// `γ∇²f R_γ(x) = ∇f(x) − ∇f(T_γ(x))`.
pub fn fbe_gradient_with_forward(
    problem: &CompositeProblem,
    cache: &mut FbCache,
    grad_at_t: &[f64],
) -> Result<Vec<f64>> {
    if !problem.smooth.constant_hessian() {
        return fbe_gradient(problem, cache);
    }
    let hr: Vec<f64> = cache
        .grad_f_x
        .iter()
        .zip(grad_at_t)
        .map(|(a, b)| (a - b) / cache.gamma)
        .collect();
    combine_gradient(cache, &hr)
}

/// True when `φ(T_γ(w)) + (βγ/2)‖R_γ(w)‖² > φ_γ(w)`, i.e. `γ` has to shrink.
/// `phi_at_t` is `f(T_γ(w)) + g(T_γ(w))`.
pub fn gamma_condition(beta: f64, cache_w: &FbCache, phi_at_t: f64) -> bool {
    let lhs = phi_at_t + beta * cache_w.gamma / 2.0 * cache_w.r_norm * cache_w.r_norm;
    lhs > cache_w.fbe + GAMMA_TEST_RTOL * (1.0 + cache_w.fbe.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::LinearOperator;
    use crate::prox::{moreau_env, BoxIndicator, L1Norm, Zero};
    use crate::smooth::{quadratic_loss, FnOracle, WithoutHvp};
    use crate::vecops::{dist, norm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rvec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn half_square_orthant(n: usize) -> CompositeProblem {
        CompositeProblem::new(
            Arc::new(FnOracle::diagonal_quadratic(vec![1.0; n])),
            Arc::new(BoxIndicator::nonneg(n)),
        )
        .unwrap()
    }

    fn lasso(m: usize, n: usize, seed: u64) -> CompositeProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = LinearOperator::dense(m, n, rvec(m * n, &mut rng)).unwrap();
        let b = rvec(m, &mut rng);
        CompositeProblem::new(
            Arc::new(quadratic_loss(Arc::new(a), b).unwrap()),
            Arc::new(L1Norm::new(0.5, n).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn critical_point_example() {
        let p = half_square_orthant(1);
        let mut c = fb_cache(&p, 0.5, &[0.0]).unwrap();
        assert_eq!(c.t_x, vec![0.0]);
        assert_eq!(c.r_x, vec![0.0]);
        assert_eq!(c.fbe, 0.0);
        assert_eq!(fbe_gradient(&p, &mut c).unwrap(), vec![0.0]);
    }

    #[test]
    fn negative_point_example() {
        let p = half_square_orthant(1);
        let mut c = fb_cache(&p, 0.5, &[-1.0]).unwrap();
        assert_eq!(c.t_x, vec![0.0]);
        assert_eq!(c.r_x, vec![-2.0]);
        assert!((c.fbe - 0.5).abs() < 1e-15);
        let g = fbe_gradient(&p, &mut c).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-15);
        // central differences of the envelope agree
        let h = 1e-6;
        let fp = fb_cache(&p, 0.5, &[-1.0 + h]).unwrap().fbe;
        let fm = fb_cache(&p, 0.5, &[-1.0 - h]).unwrap().fbe;
        assert!(((fp - fm) / (2.0 * h) - g[0]).abs() < 1e-8);
    }

    #[test]
    fn one_f_eval_and_one_prox() {
        let p = lasso(5, 8, 1);
        let before = p.counters();
        fb_cache(&p, 0.1, &[0.0; 8]).unwrap();
        let d = p.counters() - before;
        assert_eq!((d.f_evals, d.grad_evals, d.prox_calls, d.hvps), (1, 1, 1, 0));
        assert_eq!(d.matvecs, 2);
    }

    #[test]
    fn envelope_matches_moreau_form() {
        let p = lasso(10, 20, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = rvec(20, &mut rng);
            let gamma = 0.9 / p.lipschitz().unwrap();
            let c = fb_cache(&p, gamma, &x).unwrap();
            let forward: Vec<f64> = x
                .iter()
                .zip(&c.grad_f_x)
                .map(|(a, g)| a - gamma * g)
                .collect();
            let alt = c.f_x - 0.5 * gamma * norm_sq(&c.grad_f_x)
                + moreau_env(p.nonsmooth().as_ref(), gamma, &forward).unwrap();
            assert!((alt - c.fbe).abs() <= 1e-10 * (1.0 + c.fbe.abs()));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = lasso(10, 20, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gamma = 0.5 / p.lipschitz().unwrap();
        for _ in 0..20 {
            let x = rvec(20, &mut rng);
            let mut c = fb_cache(&p, gamma, &x).unwrap();
            let g = fbe_gradient(&p, &mut c).unwrap();
            let fd: Vec<f64> = (0..20)
                .map(|i| {
                    let h = 1e-6 * (1.0 + x[i].abs());
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[i] += h;
                    b[i] -= h;
                    (fb_cache(&p, gamma, &a).unwrap().fbe - fb_cache(&p, gamma, &b).unwrap().fbe)
                        / (2.0 * h)
                })
                .collect();
            assert!(dist(&fd, &g) <= 1e-5 * norm(&g).max(1.0));
        }
    }

    #[test]
    fn fd_fallback_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Arc::new(LinearOperator::dense(6, 4, rvec(24, &mut rng)).unwrap());
        let b = rvec(6, &mut rng);
        let exact = CompositeProblem::new(
            Arc::new(quadratic_loss(a.clone(), b.clone()).unwrap()),
            Arc::new(L1Norm::new(0.1, 4).unwrap()),
        )
        .unwrap();
        let approx = CompositeProblem::new(
            Arc::new(WithoutHvp(quadratic_loss(a, b).unwrap())),
            Arc::new(L1Norm::new(0.1, 4).unwrap()),
        )
        .unwrap();
        let x = rvec(4, &mut rng);
        let mut ce = fb_cache(&exact, 0.01, &x).unwrap();
        let mut ca = fb_cache(&approx, 0.01, &x).unwrap();
        let before = approx.counters();
        let ga = fbe_gradient(&approx, &mut ca).unwrap();
        let d = approx.counters() - before;
        assert_eq!((d.hvps, d.grad_evals), (0, 1));
        let ge = fbe_gradient(&exact, &mut ce).unwrap();
        assert!(dist(&ga, &ge) <= 1e-6 * norm(&ge));
    }

    #[test]
    fn image_caching_costs() {
        let p = lasso(6, 9, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rvec(9, &mut rng);
        let gamma = 0.5 / p.lipschitz().unwrap();
        let before = p.counters();
        let mut c = fb_cache(&p, gamma, &x).unwrap();
        let g = fbe_gradient(&p, &mut c).unwrap();
        // Ax, Aᵀ(·), A T(x), Aᵀ(·)
        assert_eq!((p.counters() - before).matvecs, 4);
        let mark = p.counters();
        let (_, grad_t) = c.forward_point(&p).unwrap();
        let free = fbe_gradient_with_forward(&p, &mut c, &grad_t).unwrap();
        // A T(x) is already cached: only the adjoint product
        assert_eq!((p.counters() - mark).matvecs, 1);
        assert!(dist(&g, &free) <= 1e-10 * (1.0 + norm(&g)));
        let direct = p.hessian_product(&c.x, &c.r_x, &c.grad_f_x).unwrap();
        let via = combine_gradient(&c, &direct).unwrap();
        assert!(dist(&g, &via) <= 1e-10 * (1.0 + norm(&g)));
        // cached image of an affine combination
        let d = rvec(9, &mut rng);
        let ad = p.image(&d).unwrap().unwrap();
        let w = crate::vecops::add_scaled(&x, 0.3, &d);
        let zw: Vec<f64> = c.image.as_ref().unwrap().iter().zip(&ad).map(|(a, b)| a + 0.3 * b).collect();
        let cw = fb_cache_with_image(&p, gamma, &w, Some(zw)).unwrap();
        let fresh = fb_cache(&p, gamma, &w).unwrap();
        assert!((cw.fbe - fresh.fbe).abs() <= 1e-12 * (1.0 + fresh.fbe.abs()));
    }

    #[test]
    fn gamma_condition_examples() {
        // r = 0: both sides equal φ(T(w))
        let p = half_square_orthant(1);
        let c = fb_cache(&p, 0.5, &[0.0]).unwrap();
        assert!(!gamma_condition(0.05, &c, 0.0));

        // f = x²/2 with γ = 3 beyond 1/L
        let q = CompositeProblem::new(
            Arc::new(FnOracle::diagonal_quadratic(vec![1.0])),
            Arc::new(Zero::new(1)),
        )
        .unwrap();
        let c = fb_cache(&q, 3.0, &[1.0]).unwrap();
        assert_eq!(c.t_x, vec![-2.0]);
        assert!((c.fbe + 1.0).abs() < 1e-15);
        let phi_t = q.objective(&c.t_x).unwrap();
        assert!(gamma_condition(0.05, &c, phi_t));
    }

    #[test]
    fn gamma_condition_never_fires_below_bound() {
        let p = lasso(10, 20, 9);
        let l = p.lipschitz().unwrap();
        let beta = 0.05;
        let gamma = 0.95 * (1.0 - beta) / l;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let x = rvec(20, &mut rng);
            let c = fb_cache(&p, gamma, &x).unwrap();
            let phi_t = p.objective(&c.t_x).unwrap();
            assert!(!gamma_condition(beta, &c, phi_t));
        }
    }

    #[test]
    fn non_finite_gradient_reports_point() {
        let bad = CompositeProblem::new(
            Arc::new(FnOracle::new(1, |x| (x[0].ln(), vec![1.0 / x[0]]))),
            Arc::new(Zero::new(1)),
        )
        .unwrap();
        match fb_cache(&bad, 1.0, &[-1.0]) {
            Err(Error::NonFinite { x, .. }) => assert_eq!(x, vec![-1.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = CompositeProblem::new(
            Arc::new(FnOracle::diagonal_quadratic(vec![1.0; 2])),
            Arc::new(Zero::new(3)),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
