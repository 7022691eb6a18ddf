//! Seeded reference instances and trace helpers shared by the acceptance suite.

use std::sync::Arc;

use anyhow::{ensure, Result};
use fbe_core::fbe::CompositeProblem;
use fbe_core::linops::LinearOperator;
use fbe_core::problems::{gen_synthetic, BuiltProblem, Family, ProblemSpec};
use fbe_core::prox::L1Norm;
use fbe_core::smooth::{quadratic_loss, robust_loss};
use fbe_core::solver::{solve, SolveParams, SolveTrace};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Generator instance with 20% support density and the family's default λ.
pub fn synthetic(family: Family, m: usize, n: usize, seed: u64) -> Result<BuiltProblem> {
    let mut s = ProblemSpec::new(family);
    s.seed = seed;
    s.m = Some(m);
    s.n = Some(n);
    s.density = Some(0.2);
    Ok(gen_synthetic(&s)?)
}

/// Gaussian least squares plus λ‖x‖₁ whose `L_f` is the largest eigenvalue of AᵀA
/// rather than a power-iteration bound. Returns the problem and that `L_f`.
pub fn exact_lasso(m: usize, n: usize, lambda: f64, seed: u64) -> Result<(CompositeProblem, f64)> {
    let mut r = rng(seed);
    let data = gaussian(&mut r, m * n);
    let b = gaussian(&mut r, m);
    let a = DMatrix::from_row_slice(m, n, &data);
    let l = SymmetricEigen::new(a.transpose() * &a).eigenvalues.max();
    let op = Arc::new(LinearOperator::dense(m, n, data)?);
    let f = quadratic_loss(op, b)?.with_lipschitz(l);
    let p = CompositeProblem::new(Arc::new(f), Arc::new(L1Norm::new(lambda, n)?))?;
    Ok((p, l))
}

/// 40×20 robust regression where every eighth measurement is a gross outlier;
/// nonconvex smooth part plus 0.1‖x‖₁.
pub fn robust_toy(seed: u64) -> Result<CompositeProblem> {
    let (m, n) = (40, 20);
    let mut r = rng(seed);
    let a = gaussian(&mut r, m * n);
    let op = Arc::new(LinearOperator::dense(m, n, a)?);
    let x_true = gaussian(&mut r, n);
    let noise = gaussian(&mut r, m);
    let mut b = op.apply(&x_true)?;
    for (i, (bi, e)) in b.iter_mut().zip(&noise).enumerate() {
        *bi += if i % 8 == 0 { 20.0 } else { 0.05 * e };
    }
    let f = robust_loss(op, b)?;
    Ok(CompositeProblem::new(Arc::new(f), Arc::new(L1Norm::new(0.1, n)?))?)
}

/// Iterates `x⁰, …, x^K` of a deterministic run, recovered by rerunning with a
/// growing iteration cap. Quadratic in K, so meant for short runs. Each rerun must
/// replay the full trace's prefix bitwise.
pub fn iterates(p: &CompositeProblem, params: &SolveParams, x0: &[f64]) -> Result<(SolveTrace, Vec<Vec<f64>>)> {
    let full = solve(p, params, x0)?;
    let k_end = full.trace.iterations();
    let mut xs = Vec::with_capacity(k_end + 1);
    for k in 0..k_end {
        let part = solve(p, &SolveParams { max_iters: k, ..params.clone() }, x0)?;
        let head = part.trace.last();
        ensure!(
            head.k == k && head.objective.to_bits() == full.trace.records[k].objective.to_bits(),
            "rerun capped at {k} iterations diverged from the full trace"
        );
        xs.push(part.x);
    }
    xs.push(full.x);
    Ok((full.trace, xs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fbe_core::vecops::dist;

    #[test]
    fn exact_lipschitz_bounds_the_curvature() {
        let (p, l) = exact_lasso(12, 5, 0.1, 1).unwrap();
        let est = synthetic(Family::Lasso, 12, 5, 1).unwrap();
        assert!(l > 0.0 && est.problem.lipschitz().unwrap() > 0.0);
        // f(x + v) − f(x) − ⟨∇f(x), v⟩ = ½‖Av‖² ≤ (L/2)‖v‖².
        let mut r = rng(2);
        for _ in 0..50 {
            let x = gaussian(&mut r, 5);
            let v = gaussian(&mut r, 5);
            let xv: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
            let (fx, gx) = p.eval_fg(&x).unwrap();
            let fxv = p.eval_f(&xv).unwrap();
            let lin: f64 = gx.iter().zip(&v).map(|(g, d)| g * d).sum();
            let vv: f64 = v.iter().map(|d| d * d).sum();
            assert!(fxv - fx - lin <= 0.5 * l * vv * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn iterates_end_at_the_returned_point() {
        let p = robust_toy(3).unwrap();
        let params = SolveParams {
            max_iters: 15,
            ..SolveParams::default()
        };
        let x0 = vec![0.0; p.dim()];
        let (trace, xs) = iterates(&p, &params, &x0).unwrap();
        assert_eq!(xs.len(), trace.iterations() + 1);
        assert_eq!(xs[0], x0);
        let sol = solve(&p, &params, &x0).unwrap();
        assert_eq!(dist(xs.last().unwrap(), &sol.x), 0.0);
    }
}
