//! Forward-backward line-search methods on the envelope, plus FBS and fast FBS baselines.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::counters::Counters;
use crate::directions::{descent_check, DirectionMode, QnState, UpdateOutcome};
use crate::error::{check_len, Error, Result};
use crate::fbe::{
    fb_cache_with_image, fbe_gradient, fbe_gradient_with_forward, gamma_condition, CompositeProblem,
    FbCache,
};
use crate::linops::seeded_unit_vector;
use crate::vecops::{add_scaled, all_finite, dist, dot, norm, sub};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// γ shrinks whenever the sufficient-decrease test on `T_γ(w)` fails.
    Adaptive,
    /// Fixed `γ ≤ (1−β)/L_f`.
    Fixed,
    /// `x⁺ = w` with a Wolfe line search on the envelope.
    ClassicalLs,
    Fbs,
    FastFbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIters,
    DivergingObjective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub gamma0: Option<f64>,
    pub beta: f64,
    pub sigma: f64,
    pub max_iters: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub direction: DirectionMode,
    pub variant: Variant,
    pub ls_max_backtracks: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub wolfe_max_iters: usize,
    /// Seeds the perturbation of the curvature estimate for `γ₀`.
    pub seed: u64,
    /// Also stop once `φ(x^k) ≤ target`.
    pub objective_target: Option<f64>,
    /// Force `τ ≡ 0` and skip direction work.
    pub zero_step: bool,
    pub divergence_floor: f64,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            gamma0: None,
            beta: 0.05,
            sigma: 0.5,
            max_iters: 1000,
            tol_abs: 1e-8,
            tol_rel: 0.0,
            direction: DirectionMode::default(),
            variant: Variant::Adaptive,
            ls_max_backtracks: 50,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            wolfe_max_iters: 30,
            seed: 0,
            objective_target: None,
            zero_step: false,
            divergence_floor: -1e30,
        }
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::param(format!("β = {} outside [0, 1)", self.beta)));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::param(format!("σ = {} outside (0, 1)", self.sigma)));
        }
        if let Some(g) = self.gamma0 {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::param(format!("γ₀ = {g} must be positive")));
            }
        }
        if !(self.tol_abs >= 0.0 && self.tol_rel >= 0.0) {
            return Err(Error::param("tolerances must be nonnegative"));
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::param("Wolfe constants need 0 < c1 < c2 < 1"));
        }
        if let DirectionMode::Lbfgs { memory: 0 } = self.direction {
            return Err(Error::param("L-BFGS memory must be at least 1"));
        }
        Ok(())
    }
}

/// One row per iterate `x^k`. `work` is the oracle work spent since the previous row,
/// so the rows sum to the run totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub gamma: f64,
    pub tau: Option<f64>,
    pub residual: f64,
    pub objective: f64,
    pub fbe_x: f64,
    pub fbe_w: Option<f64>,
    pub residual_w: Option<f64>,
    pub descent_replaced: bool,
    pub gamma_shrinks: u32,
    pub qn_update: Option<UpdateOutcome>,
    /// Wolfe search ended without both conditions.
    pub wolfe_failed: bool,
    pub work: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub params: SolveParams,
    pub gamma0: f64,
    pub lipschitz: Option<f64>,
    pub initial_residual: f64,
    pub records: Vec<IterationRecord>,
    pub totals: Counters,
    pub status: Status,
}

pub const CSV_HEADER: &str = "k,gamma,tau,residual,objective,fbe_x,fbe_w,residual_w,\
descent_replaced,gamma_shrinks,qn_update,f_evals,grad_evals,hvps,prox_calls,matvecs,svds";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl SolveTrace {
    /// Completed iterations.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.k)
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace has at least one record")
    }

    /// Counters accumulated up to and including each row.
    pub fn cumulative(&self) -> Vec<Counters> {
        let mut acc = Counters::default();
        self.records
            .iter()
            .map(|r| {
                acc = acc + r.work;
                acc
            })
            .collect()
    }

    /// One row per record; counter columns are cumulative.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (r, c) in self.records.iter().zip(self.cumulative()) {
            let qn = r
                .qn_update
                .map(|u| serde_json::to_value(u).unwrap().as_str().unwrap().to_string())
                .unwrap_or_default();
            writeln!(
                out,
                "{},{:e},{},{:e},{:e},{:e},{},{},{},{},{},{},{},{},{},{},{}",
                r.k,
                r.gamma,
                opt(r.tau),
                r.residual,
                r.objective,
                r.fbe_x,
                opt(r.fbe_w),
                opt(r.residual_w),
                r.descent_replaced,
                r.gamma_shrinks,
                qn,
                c.f_evals,
                c.grad_evals,
                c.hvps,
                c.prox_calls,
                c.matvecs,
                c.svds
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_json())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub trace: SolveTrace,
}

/// `‖R_γ(x^k)‖ ≤ tol_abs + tol_rel·‖R_{γ₀}(x⁰)‖`.
pub fn check_termination(head: &IterationRecord, initial_residual: f64, tol_abs: f64, tol_rel: f64) -> bool {
    head.residual <= tol_abs + tol_rel * initial_residual
}

/// First `τ ∈ {1, ½, …, 2^{−max_backtracks}}` with `φ_γ(x+τd) ≤ φ_γ(x)`, else 0.
pub fn backtrack_nonincrease<F>(mut fbe_at: F, fbe_x: f64, max_backtracks: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut tau = 1.0;
    for _ in 0..=max_backtracks {
        if fbe_at(tau)? <= fbe_x {
            return Ok(tau);
        }
        tau *= 0.5;
    }
    Ok(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WolfeOutcome {
    pub tau: f64,
    /// False when the search ran out and fell back to the last Armijo point.
    pub satisfied: bool,
}

/// Weak Wolfe search by bracketing and bisection. `eval(τ)` returns `(φ(τ), φ'(τ))`;
/// a non-finite value counts as an Armijo failure.
pub fn wolfe_search<F>(
    mut eval: F,
    phi0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    max_iters: usize,
) -> Result<WolfeOutcome>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    if !(slope0 < 0.0) {
        return Err(Error::param(format!(
            "Wolfe search needs a descent slope, got {slope0}"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut tau = 1.0;
    for _ in 0..max_iters {
        let (phi, slope) = eval(tau)?;
        if !(phi <= phi0 + c1 * tau * slope0) {
            hi = tau;
        } else if !(slope >= c2 * slope0) {
            lo = tau;
        } else {
            return Ok(WolfeOutcome {
                tau,
                satisfied: true,
            });
        }
        tau = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo };
    }
    Ok(WolfeOutcome {
        tau: lo,
        satisfied: false,
    })
}

// NonFinite from an oracle means the run diverged; other errors propagate.
fn soft<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NonFinite { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

struct Recorder<'a> {
    problem: &'a CompositeProblem,
    mark: Counters,
    records: Vec<IterationRecord>,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a CompositeProblem) -> Self {
        Recorder {
            problem,
            mark: problem.counters(),
            records: Vec::new(),
        }
    }

    fn take_work(&mut self) -> Counters {
        let now = self.problem.counters();
        let w = now - self.mark;
        self.mark = now;
        w
    }

    /// Step 1 entry for `x^k`; a re-entry after a γ shrink updates the same row.
    fn enter(&mut self, k: usize, cache: &FbCache, objective: f64) -> &mut IterationRecord {
        let work = self.take_work();
        let reentry = self.records.last().is_some_and(|r| r.k == k);
        if reentry {
            let r = self.records.last_mut().unwrap();
            r.gamma = cache.gamma;
            r.residual = cache.r_norm;
            r.fbe_x = cache.fbe;
            r.work = r.work + work;
        } else {
            self.records.push(IterationRecord {
                k,
                gamma: cache.gamma,
                tau: None,
                residual: cache.r_norm,
                objective,
                fbe_x: cache.fbe,
                fbe_w: None,
                residual_w: None,
                descent_replaced: false,
                gamma_shrinks: 0,
                qn_update: None,
                wolfe_failed: false,
                work,
            });
        }
        self.records.last_mut().unwrap()
    }

    fn head(&mut self) -> &mut IterationRecord {
        self.records.last_mut().unwrap()
    }

    fn finish(mut self) -> (Vec<IterationRecord>, Counters) {
        let tail = self.take_work();
        if let Some(r) = self.records.last_mut() {
            r.work = r.work + tail;
        }
        let totals = self.records.iter().map(|r| r.work).sum();
        (self.records, totals)
    }
}

/// `γ₀` and the Lipschitz constant it was derived from.
fn initial_gamma(
    problem: &CompositeProblem,
    params: &SolveParams,
    beta: f64,
    x0: &[f64],
    grad0: &[f64],
) -> Result<f64> {
    let lf = problem.lipschitz();
    if params.variant == Variant::Fixed {
        let gamma = params
            .gamma0
            .ok_or_else(|| Error::param("fixed variant needs γ₀"))?;
        let l = lf.ok_or_else(|| Error::param("fixed variant needs a known L_f"))?;
        let bound = (1.0 - beta) / l;
        if gamma > bound * (1.0 + 1e-12) {
            return Err(Error::param(format!(
                "fixed γ₀ = {gamma} exceeds (1−β)/L_f = {bound}"
            )));
        }
        return Ok(gamma);
    }
    if let Some(g) = params.gamma0 {
        return Ok(g);
    }
    // FBS-type methods use the full 1/L bound
    let l = match lf {
        Some(l) => l,
        None => {
            let n = x0.len();
            let u = seeded_unit_vector(n, params.seed);
            let scale = 1e-6 * (1.0 + norm(x0));
            let xp = add_scaled(x0, scale, &u);
            let (_, gp) = problem.eval_fg(&xp)?;
            dist(&gp, grad0) / scale
        }
    };
    Ok(if l > 0.0 && l.is_finite() {
        (1.0 - beta) / l
    } else {
        1.0
    })
}

pub fn solve(problem: &CompositeProblem, params: &SolveParams, x0: &[f64]) -> Result<Solution> {
    params.validate()?;
    check_len("initial point", problem.dim(), x0)?;
    if !all_finite(x0) {
        return Err(Error::param("initial point must be finite"));
    }
    problem.reset();
    match params.variant {
        Variant::Adaptive | Variant::Fixed | Variant::ClassicalLs => line_search_method(problem, params, x0),
        Variant::Fbs => fbs(problem, params, x0),
        Variant::FastFbs => fast_fbs(problem, params, x0),
    }
}

struct Start {
    cache: FbCache,
    phi: f64,
    gamma0: f64,
}

fn start(problem: &CompositeProblem, params: &SolveParams, beta: f64, x0: &[f64]) -> Result<Start> {
    let (f0, grad0, image) = problem.eval_point(x0, None)?;
    let gamma0 = initial_gamma(problem, params, beta, x0, &grad0)?;
    let phi = f0 + problem.g_value(x0)?;
    let cache = FbCache::from_parts(problem, gamma0, x0.to_vec(), f0, grad0, image)?;
    Ok(Start { cache, phi, gamma0 })
}

fn stop_now(params: &SolveParams, head: &IterationRecord, r0: f64) -> bool {
    check_termination(head, r0, params.tol_abs, params.tol_rel)
        || params.objective_target.is_some_and(|t| head.objective <= t)
}

fn finish(
    problem: &CompositeProblem,
    params: &SolveParams,
    rec: Recorder,
    gamma0: f64,
    initial_residual: f64,
    status: Status,
    x: Vec<f64>,
) -> Solution {
    let (records, totals) = rec.finish();
    Solution {
        x,
        trace: SolveTrace {
            params: params.clone(),
            gamma0,
            lipschitz: problem.lipschitz(),
            initial_residual,
            records,
            totals,
            status,
        },
    }
}

// `A(x + τd)` from cached `Ax` and `Ad`.
fn shifted_image(base: &Option<Vec<f64>>, tau: f64, dir: &Option<Vec<f64>>) -> Option<Vec<f64>> {
    match (base, dir) {
        (Some(z), Some(u)) => Some(add_scaled(z, tau, u)),
        _ => None,
    }
}

fn line_search_method(problem: &CompositeProblem, params: &SolveParams, x0: &[f64]) -> Result<Solution> {
    let beta = params.beta;
    let adaptive = params.variant != Variant::Fixed;
    let classical = params.variant == Variant::ClassicalLs;
    let uses_grad = !params.zero_step;
    let mut rec = Recorder::new(problem);
    let Start {
        mut cache,
        mut phi,
        gamma0,
    } = start(problem, params, beta, x0)?;
    let r0 = cache.r_norm;
    let mut grad = if uses_grad {
        Some(fbe_gradient(problem, &mut cache)?)
    } else {
        None
    };
    let mut qn = QnState::new(params.direction, problem.dim());
    let mut k = 0;
    let status = loop {
        let head = rec.enter(k, &cache, phi);
        if stop_now(params, head, r0) {
            break Status::Converged;
        }
        if k >= params.max_iters {
            break Status::MaxIters;
        }

        // step 2
        let mut d = match &grad {
            Some(g) => qn.direction(g),
            None => vec![0.0; problem.dim()],
        };
        if let Some(g) = &grad {
            if !descent_check(&d, g) || !all_finite(&d) {
                d = g.iter().map(|v| -v).collect();
                rec.head().descent_replaced = true;
            }
        }
        let moving = uses_grad && d.iter().any(|&v| v != 0.0);

        // step 3
        let mut trials: Vec<(f64, FbCache, Option<Vec<f64>>)> = Vec::new();
        let mut wolfe_failed = false;
        let tau = if !moving {
            0.0
        } else {
            let ad = if cache.image.is_some() {
                problem.image(&d)?
            } else {
                None
            };
            let trial = |t: f64| -> Result<Option<FbCache>> {
                let w = add_scaled(&cache.x, t, &d);
                let zw = shifted_image(&cache.image, t, &ad);
                soft(fb_cache_with_image(problem, cache.gamma, &w, zw))
            };
            if classical {
                let slope0 = dot(grad.as_ref().unwrap(), &d);
                let out = wolfe_search(
                    |t| {
                        let Some(mut c) = trial(t)? else {
                            return Ok((f64::INFINITY, f64::NAN));
                        };
                        let Some(gw) = soft(fbe_gradient(problem, &mut c))? else {
                            return Ok((f64::INFINITY, f64::NAN));
                        };
                        let r = (c.fbe, dot(&gw, &d));
                        trials.push((t, c, Some(gw)));
                        Ok(r)
                    },
                    cache.fbe,
                    slope0,
                    params.wolfe_c1,
                    params.wolfe_c2,
                    params.wolfe_max_iters,
                )?;
                wolfe_failed = !out.satisfied;
                out.tau
            } else {
                backtrack_nonincrease(
                    |t| match trial(t)? {
                        None => Ok(f64::INFINITY),
                        Some(c) => {
                            let v = c.fbe;
                            trials.push((t, c, None));
                            Ok(v)
                        }
                    },
                    cache.fbe,
                    params.ls_max_backtracks,
                )?
            }
        };
        let (mut cache_w, grad_w) = if tau == 0.0 {
            (cache.clone(), grad.clone())
        } else {
            let (_, c, g) = trials
                .into_iter()
                .rev()
                .find(|(t, _, _)| *t == tau)
                .expect("accepted trial was evaluated");
            (c, g)
        };
        {
            let head = rec.head();
            head.tau = Some(tau);
            head.fbe_w = Some(cache_w.fbe);
            head.residual_w = Some(cache_w.r_norm);
            head.wolfe_failed = wolfe_failed;
        }

        // step 4
        let Some((f_t, grad_t)) = soft(cache_w.forward_point(problem))? else {
            break Status::DivergingObjective;
        };
        let phi_t = f_t + cache_w.g_at_t;
        if adaptive && gamma_condition(beta, &cache_w, phi_t) {
            let gamma = cache.gamma * params.sigma;
            qn.clear();
            rec.head().gamma_shrinks += 1;
            cache = cache.with_gamma(problem, gamma)?;
            if uses_grad {
                match soft(fbe_gradient(problem, &mut cache))? {
                    Some(g) => grad = Some(g),
                    None => break Status::DivergingObjective,
                }
            }
            continue;
        }

        // quasi-Newton pair
        let mut grad_w = grad_w;
        if tau > 0.0 && qn.mode() != DirectionMode::Steepest {
            if grad_w.is_none() {
                match soft(fbe_gradient_with_forward(problem, &mut cache_w, &grad_t))? {
                    Some(g) => grad_w = Some(g),
                    None => break Status::DivergingObjective,
                }
            }
            let s = sub(&cache_w.x, &cache.x);
            let y = sub(grad_w.as_ref().unwrap(), grad.as_ref().unwrap());
            rec.head().qn_update = Some(qn.observe(&s, &y));
        }

        // step 5
        if classical && tau > 0.0 {
            let Some(g_w) = soft(problem.g_value(&cache_w.x))? else {
                break Status::DivergingObjective;
            };
            phi = cache_w.f_x + g_w;
            cache = cache_w;
            grad = grad_w;
        } else {
            // a classical step with τ = 0 falls back to the forward-backward step
            cache = cache_w.advance(problem, f_t, grad_t)?;
            phi = phi_t;
            if uses_grad {
                match soft(fbe_gradient(problem, &mut cache))? {
                    Some(g) => grad = Some(g),
                    None => break Status::DivergingObjective,
                }
            }
        }
        k += 1;
        if phi < params.divergence_floor {
            rec.enter(k, &cache, phi);
            break Status::DivergingObjective;
        }
    };
    let x = cache.x;
    Ok(finish(problem, params, rec, gamma0, r0, status, x))
}

fn fbs(problem: &CompositeProblem, params: &SolveParams, x0: &[f64]) -> Result<Solution> {
    let mut rec = Recorder::new(problem);
    let Start {
        mut cache,
        mut phi,
        gamma0,
    } = start(problem, params, 0.0, x0)?;
    let r0 = cache.r_norm;
    let mut k = 0;
    let status = loop {
        let head = rec.enter(k, &cache, phi);
        if stop_now(params, head, r0) {
            break Status::Converged;
        }
        if k >= params.max_iters {
            break Status::MaxIters;
        }
        let head = rec.head();
        head.tau = Some(0.0);
        head.fbe_w = Some(cache.fbe);
        head.residual_w = Some(cache.r_norm);
        let Some((f_t, grad_t)) = soft(cache.forward_point(problem))? else {
            break Status::DivergingObjective;
        };
        let phi_t = f_t + cache.g_at_t;
        if gamma_condition(0.0, &cache, phi_t) {
            rec.head().gamma_shrinks += 1;
            cache = cache.with_gamma(problem, cache.gamma * params.sigma)?;
            continue;
        }
        cache = cache.advance(problem, f_t, grad_t)?;
        phi = phi_t;
        k += 1;
        if phi < params.divergence_floor {
            rec.enter(k, &cache, phi);
            break Status::DivergingObjective;
        }
    };
    let x = cache.x;
    Ok(finish(problem, params, rec, gamma0, r0, status, x))
}

// Residuals are measured at the extrapolated point y^k; objectives at x^k.
fn fast_fbs(problem: &CompositeProblem, params: &SolveParams, x0: &[f64]) -> Result<Solution> {
    let mut rec = Recorder::new(problem);
    let Start {
        cache: mut cache_y,
        mut phi,
        gamma0,
    } = start(problem, params, 0.0, x0)?;
    let r0 = cache_y.r_norm;
    let mut x = x0.to_vec();
    let mut x_image = cache_y.image.clone();
    let mut t = 1.0_f64;
    let mut k = 0;
    let status = loop {
        let head = rec.enter(k, &cache_y, phi);
        if stop_now(params, head, r0) {
            break Status::Converged;
        }
        if k >= params.max_iters {
            break Status::MaxIters;
        }
        let Some(f_t) = soft(cache_y.forward_value(problem))? else {
            break Status::DivergingObjective;
        };
        let phi_t = f_t + cache_y.g_at_t;
        if gamma_condition(0.0, &cache_y, phi_t) {
            rec.head().gamma_shrinks += 1;
            cache_y = cache_y.with_gamma(problem, cache_y.gamma * params.sigma)?;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_new;
        let x_new = cache_y.t_x.clone();
        let y = add_scaled(&x_new, momentum, &sub(&x_new, &x));
        let new_image = cache_y.t_image.clone();
        let y_image = match (&new_image, &x_image) {
            (Some(a), Some(b)) => Some(add_scaled(a, momentum, &sub(a, b))),
            _ => None,
        };
        x = x_new;
        x_image = new_image;
        t = t_new;
        phi = phi_t;
        k += 1;
        let Some(c) = soft(fb_cache_with_image(problem, cache_y.gamma, &y, y_image))? else {
            break Status::DivergingObjective;
        };
        cache_y = c;
        if phi < params.divergence_floor {
            rec.enter(k, &cache_y, phi);
            break Status::DivergingObjective;
        }
    };
    Ok(finish(problem, params, rec, gamma0, r0, status, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::LinearOperator;
    use crate::prox::{L1Norm, Zero};
    use crate::smooth::{quadratic_loss, FnOracle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    fn rvec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect()
    }

    fn lasso(m: usize, n: usize, lam: f64, seed: u64) -> CompositeProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = LinearOperator::dense(m, n, rvec(m * n, &mut rng)).unwrap();
        let b = rvec(m, &mut rng);
        CompositeProblem::new(
            Arc::new(quadratic_loss(Arc::new(a), b).unwrap()),
            Arc::new(L1Norm::new(lam, n).unwrap()),
        )
        .unwrap()
    }

    fn half_square() -> CompositeProblem {
        CompositeProblem::new(
            Arc::new(FnOracle::diagonal_quadratic(vec![1.0])),
            Arc::new(Zero::new(1)),
        )
        .unwrap()
    }

    fn params(variant: Variant, direction: DirectionMode) -> SolveParams {
        SolveParams {
            variant,
            direction,
            tol_abs: 1e-10,
            max_iters: 5000,
            ..SolveParams::default()
        }
    }

    const ALL: [(Variant, DirectionMode); 7] = [
        (Variant::Adaptive, DirectionMode::Lbfgs { memory: 5 }),
        (Variant::Adaptive, DirectionMode::BfgsDense),
        (Variant::Adaptive, DirectionMode::Steepest),
        (Variant::Fixed, DirectionMode::Lbfgs { memory: 5 }),
        (Variant::ClassicalLs, DirectionMode::Lbfgs { memory: 5 }),
        (Variant::Fbs, DirectionMode::Steepest),
        (Variant::FastFbs, DirectionMode::Steepest),
    ];

    fn run(p: &CompositeProblem, v: Variant, d: DirectionMode) -> Solution {
        let mut prm = params(v, d);
        if v == Variant::Fixed {
            prm.gamma0 = Some(0.95 / p.lipschitz().unwrap());
        }
        solve(p, &prm, &vec![0.0; p.dim()]).unwrap()
    }

    #[test]
    fn steepest_fixed_contracts_by_twenty() {
        let p = half_square();
        let prm = SolveParams {
            gamma0: Some(0.95),
            max_iters: 6,
            tol_abs: 0.0,
            ..params(Variant::Fixed, DirectionMode::Steepest)
        };
        let sol = solve(&p, &prm, &[1.0]).unwrap();
        let r: Vec<f64> = sol.trace.records.iter().map(|r| r.residual).collect();
        assert_eq!(r[0], 1.0);
        for w in r.windows(2) {
            assert!(w[1] <= w[0] / 20.0, "{w:?}");
            // closed-form factor (1−γ)·(1 − (1−γ)) with τ = 1
            assert!((w[1] / w[0] - 0.0475).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_floor_from_large_start() {
        let p = lasso(30, 60, 0.3, 1);
        let l = p.lipschitz().unwrap();
        let (beta, sigma) = (0.05, 0.5);
        let gamma0 = 10.0 * sigma * (1.0 - beta) / l;
        let prm = SolveParams {
            gamma0: Some(gamma0),
            ..params(Variant::Adaptive, DirectionMode::default())
        };
        let sol = solve(&p, &prm, &vec![0.0; 60]).unwrap();
        assert_eq!(sol.trace.status, Status::Converged);
        let floor = gamma0.min(sigma * (1.0 - beta) / l);
        assert!(sol.trace.records.iter().all(|r| r.gamma >= floor));
        assert!(sol.trace.records.iter().any(|r| r.gamma_shrinks > 0));
    }

    #[test]
    fn critical_start_stops_at_zero() {
        let p = half_square();
        for (v, d) in ALL {
            let mut prm = params(v, d);
            if v == Variant::Fixed {
                prm.gamma0 = Some(0.5);
            }
            let sol = solve(&p, &prm, &[0.0]).unwrap();
            assert_eq!(sol.trace.status, Status::Converged);
            assert_eq!(sol.trace.iterations(), 0);
            assert!(sol.trace.records.iter().all(|r| r.qn_update.is_none()));
        }
    }

    #[test]
    fn backtrack_examples() {
        assert_eq!(backtrack_nonincrease(|t| Ok(-t), 0.0, 50).unwrap(), 1.0);
        // φ(τ) = (τ − 0.25)² − 1/16: increases at 1, nonincreasing at ½
        let f = |t: f64| Ok((t - 0.25) * (t - 0.25) - 0.0625);
        assert_eq!(backtrack_nonincrease(f, 0.0, 50).unwrap(), 0.5);
        assert_eq!(backtrack_nonincrease(|t| Ok(1.0 + t), 0.0, 50).unwrap(), 0.0);
        let mut calls = 0;
        backtrack_nonincrease(
            |_| {
                calls += 1;
                Ok(1.0)
            },
            0.0,
            3,
        )
        .unwrap();
        assert_eq!(calls, 4);
    }

    #[test]
    fn wolfe_examples() {
        let q = |t: f64| Ok((0.5 * t * t - t, t - 1.0));
        assert_eq!(wolfe_search(q, 0.0, -1.0, 1e-4, 0.9, 30).unwrap().tau, 1.0);
        let q = |t: f64| Ok((t * t - 2.0 * t, 2.0 * t - 2.0));
        assert_eq!(wolfe_search(q, 0.0, -2.0, 1e-4, 0.9, 30).unwrap().tau, 1.0);
        assert!(wolfe_search(q, 0.0, 0.5, 1e-4, 0.9, 30).is_err());

        // Rosenbrock section from (−1.2, 1) along the steepest direction
        let rosen = |x: f64, y: f64| 100.0 * (y - x * x).powi(2) + (1.0 - x).powi(2);
        let grad = |x: f64, y: f64| (-400.0 * x * (y - x * x) - 2.0 * (1.0 - x), 200.0 * (y - x * x));
        let (x0, y0) = (-1.2, 1.0);
        let (gx, gy) = grad(x0, y0);
        let (dx, dy) = (-gx, -gy);
        let section = |t: f64| {
            let (x, y) = (x0 + t * dx, y0 + t * dy);
            let (a, b) = grad(x, y);
            Ok((rosen(x, y), a * dx + b * dy))
        };
        let phi0 = rosen(x0, y0);
        let slope0 = gx * dx + gy * dy;
        let out = wolfe_search(section, phi0, slope0, 1e-4, 0.9, 60).unwrap();
        assert!(out.satisfied);
        let (phi, slope) = section(out.tau).unwrap();
        assert!(phi <= phi0 + 1e-4 * out.tau * slope0);
        assert!(slope >= 0.9 * slope0);
    }

    #[test]
    fn termination_examples() {
        let p = half_square();
        let sol = solve(&p, &params(Variant::Fbs, DirectionMode::Steepest), &[0.0]).unwrap();
        assert!(check_termination(sol.trace.last(), 5.0, 0.0, 0.0));
        let sol = solve(
            &p,
            &SolveParams {
                tol_abs: 0.0,
                tol_rel: 1.0,
                ..params(Variant::Adaptive, DirectionMode::default())
            },
            &[3.0],
        )
        .unwrap();
        assert_eq!(sol.trace.iterations(), 0);
    }

    #[test]
    fn sufficient_decrease_every_iteration() {
        let p = lasso(40, 100, 0.5, 2);
        for v in [Variant::Adaptive, Variant::Fixed] {
            for d in [DirectionMode::Lbfgs { memory: 5 }, DirectionMode::BfgsDense, DirectionMode::Steepest] {
                let mut prm = params(v, d);
                prm.max_iters = 1500;
                if v == Variant::Fixed {
                    prm.gamma0 = Some(0.95 / p.lipschitz().unwrap());
                }
                let sol = solve(&p, &prm, &[0.0; 100]).unwrap();
                let beta = sol.trace.params.beta;
                for w in sol.trace.records.windows(2) {
                    let (a, b) = (&w[0], &w[1]);
                    let rw = a.residual_w.unwrap();
                    let bound = a.objective
                        - beta * a.gamma / 2.0 * rw * rw
                        - a.gamma / 2.0 * a.residual * a.residual;
                    assert!(b.objective <= bound + 1e-9 * (1.0 + a.objective.abs()), "{v:?} {d:?} k={}", a.k);
                    // strictness is only observable above rounding level
                    if a.gamma / 2.0 * a.residual * a.residual > 1e-12 * (1.0 + a.objective.abs()) {
                        assert!(b.objective < a.objective);
                    }
                }
            }
        }
    }

    #[test]
    fn residual_rate_bound() {
        let p = lasso(40, 100, 0.5, 3);
        let reference = run(&p, Variant::Adaptive, DirectionMode::BfgsDense);
        let phi_star = reference.trace.last().objective;
        let l = p.lipschitz().unwrap();
        for (v, d) in ALL.iter().take(5) {
            let sol = run(&p, *v, *d);
            let t = &sol.trace;
            let gmin = t.gamma0.min(t.params.sigma * (1.0 - t.params.beta) / l);
            let phi0 = t.records[0].objective;
            let mut best = f64::INFINITY;
            for r in &t.records {
                best = best.min(r.residual * r.residual);
                let rhs = 2.0 * (phi0 - phi_star) / ((r.k as f64 + 1.0) * gmin);
                assert!(best <= rhs * (1.0 + 1e-9) + 1e-18, "{v:?} k={}", r.k);
            }
        }
    }

    #[test]
    fn all_variants_agree() {
        let p = lasso(30, 50, 0.4, 4);
        let reference = run(&p, Variant::Adaptive, DirectionMode::BfgsDense);
        let phi_star = reference.trace.last().objective;
        for (v, d) in ALL {
            let mut prm = params(v, d);
            prm.tol_abs = 1e-6;
            if v == Variant::Fixed {
                prm.gamma0 = Some(0.95 / p.lipschitz().unwrap());
            }
            let sol = solve(&p, &prm, &[0.0; 50]).unwrap();
            assert_eq!(sol.trace.status, Status::Converged, "{v:?} {d:?}");
            let phi = p.objective(&sol.x).unwrap();
            assert!((phi - phi_star).abs() <= 1e-8 * (1.0 + phi_star.abs()), "{v:?} {d:?}");
        }
    }

    #[test]
    fn zero_step_matches_fbs_bitwise() {
        let p = lasso(30, 50, 0.4, 5);
        let base = SolveParams {
            beta: 0.0,
            max_iters: 200,
            ..params(Variant::Fbs, DirectionMode::Steepest)
        };
        let fbs = solve(&p, &base, &vec![0.0; 50]).unwrap();
        let alg = solve(
            &p,
            &SolveParams {
                variant: Variant::Adaptive,
                zero_step: true,
                ..base.clone()
            },
            &vec![0.0; 50],
        )
        .unwrap();
        assert_eq!(fbs.x, alg.x);
        assert_eq!(fbs.trace.records.len(), alg.trace.records.len());
        for (a, b) in fbs.trace.records.iter().zip(&alg.trace.records) {
            assert_eq!(a.objective.to_bits(), b.objective.to_bits());
            assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
        }
    }

    #[test]
    fn oracle_counts_per_iteration() {
        let p = lasso(20, 40, 0.3, 6);
        let prm = SolveParams {
            max_iters: 3,
            tol_abs: 0.0,
            ..params(Variant::Adaptive, DirectionMode::Lbfgs { memory: 5 })
        };
        let before = p.counters();
        let sol = solve(&p, &prm, &vec![0.0; 40]).unwrap();
        let t = &sol.trace;
        assert_eq!(t.records.len(), 4);
        // setup: f+∇f at x⁰, one prox, one HVP
        let w0 = t.records[0].work;
        assert_eq!((w0.f_evals, w0.grad_evals, w0.prox_calls, w0.hvps, w0.matvecs), (1, 1, 1, 1, 4));
        for k in 0..3 {
            let r = &t.records[k];
            assert_eq!(r.gamma_shrinks, 0);
            let trials = (-(r.tau.unwrap().log2())).round() as u64 + 1;
            let w = t.records[k + 1].work;
            // A d; one adjoint per trial; A T(w) and its adjoint; prox at x⁺;
            // A T(x⁺) and one HVP at x⁺. The gradient at w is free for quadratics.
            assert_eq!(w.f_evals, trials + 1);
            assert_eq!(w.grad_evals, trials + 1);
            assert_eq!(w.prox_calls, trials + 1);
            assert_eq!(w.hvps, 1);
            assert_eq!(w.matvecs, trials + 5);
        }
        let sum: Counters = t.records.iter().map(|r| r.work).sum();
        assert_eq!(sum, t.totals);
        assert_eq!(t.totals, p.counters() - before);
    }

    #[test]
    fn fixed_requires_valid_gamma() {
        let p = lasso(10, 20, 0.3, 7);
        let l = p.lipschitz().unwrap();
        let x0 = vec![0.0; 20];
        let mut prm = params(Variant::Fixed, DirectionMode::default());
        assert!(matches!(solve(&p, &prm, &x0), Err(Error::InvalidParameter(_))));
        prm.gamma0 = Some(1.0 / l);
        assert!(matches!(solve(&p, &prm, &x0), Err(Error::InvalidParameter(_))));
        prm.gamma0 = Some(0.95 / l);
        assert!(solve(&p, &prm, &x0).is_ok());
        let bad = SolveParams {
            beta: 1.0,
            ..SolveParams::default()
        };
        assert!(solve(&p, &bad, &x0).is_err());
        assert!(solve(&p, &SolveParams::default(), &[f64::NAN; 20]).is_err());
    }

    #[test]
    fn unbounded_objective_diverges() {
        let p = CompositeProblem::new(
            Arc::new(FnOracle::new(1, |x| (-x[0], vec![-1.0]))),
            Arc::new(Zero::new(1)),
        )
        .unwrap();
        for (v, d) in [ALL[0], ALL[5], ALL[6]] {
            let prm = SolveParams {
                divergence_floor: -1e3,
                ..params(v, d)
            };
            let sol = solve(&p, &prm, &[0.0]).unwrap();
            assert_eq!(sol.trace.status, Status::DivergingObjective, "{v:?}");
        }
    }

    #[test]
    fn curvature_estimate_without_lipschitz() {
        let p = CompositeProblem::new(
            Arc::new(FnOracle::new(2, |x| {
                (0.5 * x[0] * x[0] + 2.0 * x[1] * x[1], vec![x[0], 4.0 * x[1]])
            })),
            Arc::new(L1Norm::new(0.1, 2).unwrap()),
        )
        .unwrap();
        let sol = solve(&p, &params(Variant::Adaptive, DirectionMode::default()), &[1.0, 1.0]).unwrap();
        assert_eq!(sol.trace.status, Status::Converged);
        assert!(sol.trace.gamma0 >= 0.95 / 4.0 - 1e-6);
        // both coordinates sit inside the l1 dead zone
        assert_eq!(sol.x, vec![0.0, 0.0]);
    }

    #[test]
    fn trace_serialization() {
        let p = lasso(10, 20, 0.3, 8);
        let sol = run(&p, Variant::Adaptive, DirectionMode::default());
        let csv = sol.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.count(), sol.trace.records.len());
        let back: SolveTrace = serde_json::from_str(&sol.trace.to_json()).unwrap();
        assert_eq!(back, sol.trace);
    }
}
