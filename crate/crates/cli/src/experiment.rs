//! Runs each solver preset on one instance and writes traces, plot data and a summary.
//!
//! Files in the output directory: `<solver>.trace.csv`, `<solver>.trace.json`,
//! `plot.csv` (tidy: solver, k, matvecs, objective gap, residual), `summary.csv`,
//! `summary.txt` and `metadata.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use fbe_core::oracle::{reference_solution, ReferenceConfig};
use fbe_core::problems::{build_problem, BuiltProblem};
use fbe_core::solver::{solve, SolveTrace, Status};
use fbe_core::Counters;
use serde::Serialize;

use crate::presets::preset;
use crate::spec::{RunSpec, StopRule};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub solver: String,
    pub status: Status,
    pub iterations: usize,
    /// Sum of the per-iteration work in the trace.
    pub work: Counters,
    pub final_objective: f64,
    pub objective_gap: Option<f64>,
    pub residual: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub lambda: f64,
    pub phi_star: Option<f64>,
    pub reference_converged: Option<bool>,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.status == Status::Converged)
    }

    pub fn row(&self, solver: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.solver == solver)
    }

    pub const CSV_HEADER: &'static str =
        "solver,status,iterations,f_evals,grad_evals,hvps,prox_calls,matvecs,svds,final_objective,objective_gap,residual,wall_time_s";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let w = &r.work;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{:e},{},{:e},{:.6}",
                r.solver,
                status_name(r.status),
                r.iterations,
                w.f_evals,
                w.grad_evals,
                w.hvps,
                w.prox_calls,
                w.matvecs,
                w.svds,
                r.final_objective,
                r.objective_gap.map(|g| format!("{g:e}")).unwrap_or_default(),
                r.residual,
                r.wall_time_s
            );
        }
        out
    }

    /// Column-aligned text rendering of the same table.
    pub fn to_text(&self) -> String {
        let headers: Vec<&str> = Self::CSV_HEADER.split(',').collect();
        let mut cells: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let w = &r.work;
            cells.push(vec![
                r.solver.clone(),
                status_name(r.status).to_string(),
                r.iterations.to_string(),
                w.f_evals.to_string(),
                w.grad_evals.to_string(),
                w.hvps.to_string(),
                w.prox_calls.to_string(),
                w.matvecs.to_string(),
                w.svds.to_string(),
                format!("{:.10e}", r.final_objective),
                r.objective_gap.map(|g| format!("{g:.3e}")).unwrap_or_else(|| "-".into()),
                format!("{:.3e}", r.residual),
                format!("{:.3}", r.wall_time_s),
            ]);
        }
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "lambda = {:e}", self.lambda);
        if let Some(p) = self.phi_star {
            let _ = writeln!(out, "phi_star = {p:.15e}");
        }
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, &w))| if i < 2 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Converged => "converged",
        Status::MaxIters => "max-iters",
        Status::DivergingObjective => "diverging",
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Tidy rows `solver,k,matvecs,objective_gap,residual` for one trace.
pub fn plot_rows(solver: &str, trace: &SolveTrace, phi_star: Option<f64>, out: &mut String) {
    for (rec, cum) in trace.records.iter().zip(trace.cumulative()) {
        let gap = phi_star.map(|p| format!("{:e}", rec.objective - p)).unwrap_or_default();
        let _ = writeln!(out, "{solver},{},{},{gap},{:e}", rec.k, cum.matvecs, rec.residual);
    }
}

/// Builds the instance and runs every preset in order. Runs share the problem, whose
/// counters are reset at the start of each solve, so they execute one after another.
pub fn run_experiment(spec: &RunSpec) -> Result<Summary> {
    spec.validate()?;
    let built = build_problem(&spec.problem, &spec.base_dir)
        .with_context(|| format!("building the {} problem", spec.problem.family))?;
    run_built(spec, &built)
}

pub fn run_built(spec: &RunSpec, built: &BuiltProblem) -> Result<Summary> {
    spec.validate()?;
    fs::create_dir_all(&spec.out).with_context(|| format!("creating {}", spec.out.display()))?;
    let problem = &built.problem;
    let x0 = built.x0();
    let reference = if spec.reference {
        Some(reference_solution(problem, &x0, &ReferenceConfig::default())?)
    } else {
        None
    };
    let phi_star = reference.as_ref().map(|r| r.phi);
    let mut rows = Vec::new();
    let mut plot = String::from("solver,k,matvecs,objective_gap,residual\n");
    for name in &spec.solvers {
        let mut params = preset(name, problem.lipschitz())?;
        params.max_iters = spec.max_iters;
        match spec.stop {
            StopRule::Residual { tol } => params.tol_abs = tol,
            StopRule::Gap { tol } => {
                let p = phi_star.expect("validated: gap rule has a reference");
                params.tol_abs = 0.0;
                params.objective_target = Some(p + tol * (1.0 + p.abs()));
            }
        }
        let clock = Instant::now();
        let sol = solve(problem, &params, &x0).with_context(|| format!("solver {name}"))?;
        let wall = clock.elapsed().as_secs_f64();
        let trace = &sol.trace;
        trace.write_csv(&spec.out.join(format!("{name}.trace.csv")))?;
        trace.write_json(&spec.out.join(format!("{name}.trace.json")))?;
        plot_rows(name, trace, phi_star, &mut plot);
        let work = trace
            .records
            .iter()
            .fold(Counters::default(), |acc, r| acc + r.work);
        let head = trace.last();
        rows.push(SummaryRow {
            solver: name.clone(),
            status: trace.status,
            iterations: trace.iterations(),
            work,
            final_objective: head.objective,
            objective_gap: phi_star.map(|p| head.objective - p),
            residual: head.residual,
            wall_time_s: wall,
        });
    }
    let summary = Summary {
        lambda: built.meta.lambda,
        phi_star,
        reference_converged: reference.as_ref().map(|r| r.converged),
        rows,
    };
    write(&spec.out.join("plot.csv"), &plot)?;
    write(&spec.out.join("summary.csv"), &summary.to_csv())?;
    write(&spec.out.join("summary.txt"), &summary.to_text())?;
    let meta = serde_json::json!({
        "problem": built.meta,
        "run": spec,
        "phi_star": phi_star,
        "reference_converged": summary.reference_converged,
        "reference_residual": reference.as_ref().map(|r| r.residual),
    });
    write(
        &spec.out.join("metadata.json"),
        &serde_json::to_string_pretty(&meta).expect("metadata serializes"),
    )?;
    Ok(summary)
}
