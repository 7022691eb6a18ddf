//! Invariant suite behind the `check` verb, run on small built-in instances.

use anyhow::Result;
use fbe_core::directions::DirectionMode;
use fbe_core::fbe::{fb_cache, fbe_gradient};
use fbe_core::oracle::{fd_gradient, FdConfig};
use fbe_core::problems::{gen_synthetic, BuiltProblem, Family, LambdaSpec, ProblemSpec};
use fbe_core::solver::{solve, SolveParams, Variant};
use fbe_core::vecops::{dist, norm};
use fbe_core::Counters;

use crate::presets::preset;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn instance(family: Family, lambda: Option<LambdaSpec>) -> Result<BuiltProblem> {
    let mut s = ProblemSpec::new(family);
    s.seed = 1;
    match family {
        Family::GroupLasso => {
            s.m = Some(20);
            s.blocks = Some(8);
            s.block_size = Some(4);
            s.active_blocks = Some(2);
        }
        Family::Matcomp => {
            s.m = Some(12);
            s.n = Some(10);
            s.rank = Some(2);
        }
        Family::Imrestore => s.image_size = Some(16),
        _ => {
            s.m = Some(20);
            s.n = Some(30);
            s.density = Some(0.2);
        }
    }
    if lambda.is_some() {
        s.lambda = lambda;
    }
    Ok(gen_synthetic(&s)?)
}

fn record(out: &mut Vec<CheckResult>, name: &str, result: Result<(bool, String)>) {
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e:#}")));
    out.push(CheckResult {
        name: name.to_string(),
        passed,
        detail,
    });
}

fn gradient_check(family: Family) -> Result<(bool, String)> {
    let built = instance(family, None)?;
    let p = &built.problem;
    let gamma = 0.5 / p.lipschitz().unwrap_or(1.0);
    let x: Vec<f64> = (0..p.dim()).map(|i| ((i * 7 + 3) as f64).sin()).collect();
    let mut cache = fb_cache(p, gamma, &x)?;
    let exact = fbe_gradient(p, &mut cache)?;
    let fd = fd_gradient(|y| Ok(fb_cache(p, gamma, y)?.fbe), &x, &FdConfig::default())?;
    let rel = dist(&exact, &fd) / norm(&exact).max(1e-12);
    Ok((rel <= 1e-5, format!("relative error {rel:.2e}")))
}

fn zero_critical(family: Family) -> Result<(bool, String)> {
    let lmax = instance(family, Some(LambdaSpec::Fraction(1.0)))?.meta.lambda_max.unwrap_or(0.0);
    let built = instance(family, Some(LambdaSpec::Absolute(lmax * 1.0001)))?;
    let sol = solve(&built.problem, &SolveParams::default(), &built.x0())?;
    let k = sol.trace.iterations();
    Ok((k == 0, format!("λ_max = {lmax:.6e}, iterations at 1.0001·λ_max = {k}")))
}

fn zero_step_is_fbs() -> Result<(bool, String)> {
    let built = instance(Family::Lasso, None)?;
    let base = SolveParams {
        beta: 0.0,
        direction: DirectionMode::Steepest,
        max_iters: 50,
        tol_abs: 0.0,
        ..SolveParams::default()
    };
    let fbs = solve(&built.problem, &SolveParams { variant: Variant::Fbs, ..base.clone() }, &built.x0())?;
    let zero = solve(&built.problem, &SolveParams { zero_step: true, ..base }, &built.x0())?;
    let same = fbs.x.iter().zip(&zero.x).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((same, format!("{} iterations compared bitwise", fbs.trace.iterations())))
}

fn monotone_objective(family: Family) -> Result<(bool, String)> {
    let built = instance(family, None)?;
    let params = SolveParams {
        max_iters: 300,
        ..preset("alg1-lbfgs", built.problem.lipschitz())?
    };
    let sol = solve(&built.problem, &params, &built.x0())?;
    let worst = sol
        .trace
        .records
        .windows(2)
        .map(|w| w[1].objective - w[0].objective - 1e-9 * (1.0 + w[0].objective.abs()))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((worst <= 0.0, format!("largest increase beyond slack {worst:.2e}")))
}

fn counters_reconcile() -> Result<(bool, String)> {
    let built = instance(Family::Lasso, None)?;
    let mut bad = Vec::new();
    for name in crate::presets::PRESETS {
        let params = SolveParams {
            max_iters: 100,
            ..preset(name, built.problem.lipschitz())?
        };
        // The problem's tallies are lifetime counts; compare the change across the run.
        let before = built.problem.counters();
        let sol = solve(&built.problem, &params, &built.x0())?;
        let spent = built.problem.counters() - before;
        let sum: Counters = sol.trace.records.iter().map(|r| r.work).sum();
        if sum != sol.trace.totals || sum != spent {
            bad.push(format!("{name}: trace {sum:?}, totals {:?}, oracle {spent:?}", sol.trace.totals));
        }
    }
    if bad.is_empty() {
        Ok((true, "trace sums equal run totals for every preset".into()))
    } else {
        Ok((false, bad.join("; ")))
    }
}

fn fbs_residual_monotone() -> Result<(bool, String)> {
    let built = instance(Family::Lasso, None)?;
    let params = SolveParams {
        max_iters: 500,
        ..preset("fbs", built.problem.lipschitz())?
    };
    let sol = solve(&built.problem, &params, &built.x0())?;
    let worst = sol
        .trace
        .records
        .windows(2)
        .map(|w| w[1].residual - w[0].residual - 1e-12)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((worst <= 0.0, format!("largest residual increase beyond slack {worst:.2e}")))
}

pub fn run_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    for family in [Family::Lasso, Family::Logreg, Family::GroupLasso, Family::Imrestore] {
        record(&mut out, &format!("envelope gradient vs differences ({family})"), gradient_check(family));
    }
    for family in [Family::Lasso, Family::Logreg, Family::GroupLasso, Family::Matcomp] {
        record(&mut out, &format!("zero optimal above λ_max ({family})"), zero_critical(family));
    }
    record(&mut out, "zero step reproduces fbs bitwise", zero_step_is_fbs());
    for family in [Family::Lasso, Family::Imrestore] {
        record(&mut out, &format!("monotone objective, alg1-lbfgs ({family})"), monotone_objective(family));
    }
    record(&mut out, "counter reconciliation", counters_reconcile());
    record(&mut out, "fbs residual monotone (lasso)", fbs_residual_monotone());
    out
}
