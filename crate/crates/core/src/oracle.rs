//! Verification oracles that share no code with the paths they check.
//!
//! `fd_gradient` only sees field values, `prox_grid_oracle` only sees `g(u)`, and
//! `reference_solution` drives the public solver with tight tolerances.

use crate::directions::DirectionMode;
use crate::error::{Error, Result};
use crate::fbe::CompositeProblem;
use crate::prox::ProxOracle;
use crate::solver::{solve, SolveParams, Variant};
use crate::vecops::dist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    #[default]
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub stencil: Stencil,
    /// Coordinate `i` is perturbed by `step·(1 + |x_i|)`.
    pub step: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            stencil: Stencil::Central,
            step: 1e-6,
        }
    }
}

pub fn fd_gradient<F>(mut field: F, x: &[f64], config: &FdConfig) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(config.step > 0.0 && config.step.is_finite()) {
        return Err(Error::param(format!("finite-difference step {} must be positive", config.step)));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = config.step * (1.0 + x[i].abs());
        let mut side = |v: f64, probe: &mut Vec<f64>| -> Result<f64> {
            probe[i] = v;
            let value = field(probe)?;
            if value.is_finite() {
                Ok(value)
            } else {
                Err(Error::NonFiniteField { coordinate: i, value })
            }
        };
        let up = side(x[i] + h, &mut probe)?;
        let down = side(x[i] - h, &mut probe)?;
        probe[i] = x[i];
        // The realized spacing, not 2h, keeps the quotient exact on quadratics.
        let spacing = (x[i] + h) - (x[i] - h);
        grad.push((up - down) / spacing);
    }
    Ok(grad)
}

/// `x + k·step` for `|k·step| ≤ half_width`; contains `x` exactly.
pub fn centered_grid(x: f64, half_width: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && half_width >= 0.0 && step.is_finite() && half_width.is_finite()) {
        return Err(Error::param("grid needs a positive step and nonnegative half-width"));
    }
    let k = (half_width / step).floor() as i64;
    Ok((-k..=k).map(|j| x + j as f64 * step).collect())
}

/// Minimizer of `g(u) + (u − x)²/(2γ)` over `grid`; the first one on ties.
pub fn prox_grid_oracle<G>(g: G, gamma: f64, x: f64, grid: &[f64]) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    if grid.is_empty() {
        return Err(Error::param("empty grid"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param(format!("γ = {gamma} must be positive")));
    }
    let mut best = (f64::INFINITY, grid[0]);
    for &u in grid {
        let v = g(u) + (u - x) * (u - x) / (2.0 * gamma);
        if v < best.0 {
            best = (v, u);
        }
    }
    Ok(best.1)
}

/// Smallest slack of `h(u) ≥ h(p) + ‖u − p‖²/(2γ)` over the probes, where
/// `h = g + ‖· − x‖²/(2γ)` and `p = prox_{γg}(x)`. Convex `g` makes every slack
/// nonnegative; probes outside `dom g` are skipped.
pub fn sampled_optimality(oracle: &dyn ProxOracle, gamma: f64, x: &[f64], probes: &[Vec<f64>]) -> Result<f64> {
    let (p, gp) = oracle.prox(gamma, x)?;
    let hp = gp + dist(&p, x).powi(2) / (2.0 * gamma);
    let mut worst = f64::INFINITY;
    for u in probes {
        let gu = oracle.value(u)?;
        if !gu.is_finite() {
            continue;
        }
        let hu = gu + dist(u, x).powi(2) / (2.0 * gamma);
        worst = worst.min(hu - hp - dist(u, &p).powi(2) / (2.0 * gamma));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceConfig {
    pub tol: f64,
    /// `(mode, iteration budget)`, run in order, each warm-started from the previous endpoint.
    pub schedule: Vec<(DirectionMode, usize)>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            tol: 1e-12,
            schedule: vec![(DirectionMode::Steepest, 500), (DirectionMode::default(), 20_000)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    pub phi: f64,
    pub residual: f64,
    /// `residual ≤ tol` was reached; otherwise the budget ran out or progress stalled.
    pub converged: bool,
    pub iterations: usize,
}

/// Restarts happen in chunks so a run stuck at the rounding floor stops early.
const REFERENCE_CHUNK: usize = 500;

pub fn reference_solution(problem: &CompositeProblem, x0: &[f64], config: &ReferenceConfig) -> Result<ReferenceSolution> {
    if config.schedule.is_empty() {
        return Err(Error::param("reference solve needs at least one direction mode"));
    }
    let phi0 = problem.objective(x0)?;
    let mut best = ReferenceSolution {
        x: x0.to_vec(),
        phi: phi0,
        residual: f64::INFINITY,
        converged: false,
        iterations: 0,
    };
    let mut x = x0.to_vec();
    for &(direction, budget) in &config.schedule {
        let mut spent = 0;
        while spent < budget {
            let params = SolveParams {
                variant: Variant::Adaptive,
                direction,
                tol_abs: config.tol,
                max_iters: REFERENCE_CHUNK.min(budget - spent),
                ..SolveParams::default()
            };
            let sol = solve(problem, &params, &x)?;
            let head = sol.trace.last().clone();
            spent += head.k;
            best.iterations += head.k;
            let improved = head.objective < best.phi;
            if improved || (head.objective == best.phi && head.residual < best.residual) {
                best.x = sol.x.clone();
                best.phi = head.objective;
                best.residual = head.residual;
            }
            x = sol.x;
            if head.residual <= config.tol {
                best.converged = best.residual <= config.tol;
                break;
            }
            if !improved || head.k == 0 {
                break;
            }
        }
    }
    best.converged = best.residual <= config.tol;
    Ok(best)
}
