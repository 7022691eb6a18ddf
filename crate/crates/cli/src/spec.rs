//! Run specifications: a problem spec plus solver list, stopping rule and output directory,
//! all in one `key = value` file.
//!
//! Run keys: `solvers` (comma list of presets), `stop` (`gap` or `residual`), `tol`,
//! `max_iters`, `out`, `reference` (`true`/`false`). Every other key belongs to the problem.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fbe_core::problems::{for_each_setting, Family, ProblemSpec};
use serde::{Deserialize, Serialize};

use crate::presets::{check_name, PRESETS};

pub const DEFAULT_GAP_TOL: f64 = 1e-6;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum StopRule {
    /// `‖R_γ(x^k)‖ ≤ tol`.
    Residual { tol: f64 },
    /// `φ(x^k) − φ⋆ ≤ tol·(1 + |φ⋆|)` against the reference solution.
    Gap { tol: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub problem: ProblemSpec,
    pub solvers: Vec<String>,
    pub stop: StopRule,
    pub max_iters: usize,
    pub out: PathBuf,
    /// Compute `φ⋆` by a tight reference solve; required by the gap rule.
    pub reference: bool,
    /// Directory that relative data paths resolve against.
    pub base_dir: PathBuf,
}

impl RunSpec {
    /// Gap stopping for the convex families, residual stopping for restoration.
    pub fn new(problem: ProblemSpec) -> Self {
        let stop = if problem.family == Family::Imrestore {
            StopRule::Residual {
                tol: DEFAULT_RESIDUAL_TOL,
            }
        } else {
            StopRule::Gap { tol: DEFAULT_GAP_TOL }
        };
        RunSpec {
            problem,
            solvers: PRESETS.iter().map(|s| s.to_string()).collect(),
            stop,
            max_iters: DEFAULT_MAX_ITERS,
            out: PathBuf::from("results"),
            reference: true,
            base_dir: PathBuf::from("."),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut problem = ProblemSpec::new(Family::Lasso);
        let mut run = Vec::new();
        let mut saw_family = false;
        for_each_setting(text, path, |line, key, value| {
            saw_family |= key == "family";
            match problem.set(key, value) {
                Ok(true) => {}
                Ok(false) => run.push((line, key.to_string(), value.to_string())),
                Err(e) => {
                    return Err(fbe_core::Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: e.to_string(),
                    })
                }
            }
            Ok(())
        })?;
        if !saw_family {
            bail!("{}: missing 'family'", path.display());
        }
        let mut spec = RunSpec::new(problem);
        let mut stop_kind = None;
        let mut tol = None;
        for (line, key, value) in run {
            let at = || format!("{}:{line}", path.display());
            match key.as_str() {
                "solvers" => spec.set_solvers(&value).with_context(at)?,
                "stop" => stop_kind = Some(value),
                "tol" => tol = Some(value.parse::<f64>().with_context(|| format!("{}: bad tol", at()))?),
                "max_iters" => {
                    spec.max_iters = value
                        .parse()
                        .with_context(|| format!("{}: bad max_iters", at()))?
                }
                "out" => spec.out = PathBuf::from(value),
                "reference" => {
                    spec.reference = value
                        .parse()
                        .with_context(|| format!("{}: reference must be true or false", at()))?
                }
                _ => bail!("{}: unknown key '{key}'", at()),
            }
        }
        if let Some(kind) = stop_kind {
            spec.stop = match kind.as_str() {
                "gap" => StopRule::Gap { tol: DEFAULT_GAP_TOL },
                "residual" => StopRule::Residual {
                    tol: DEFAULT_RESIDUAL_TOL,
                },
                other => bail!("{}: stop must be gap or residual, got '{other}'", path.display()),
            };
        }
        if let Some(t) = tol {
            spec.set_tol(t);
        }
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if spec.out.is_relative() {
            spec.out = spec.base_dir.join(&spec.out);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path)
    }

    pub fn set_solvers(&mut self, list: &str) -> Result<()> {
        let names: Vec<String> = list
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        for n in &names {
            check_name(n)?;
        }
        self.solvers = names;
        Ok(())
    }

    pub fn set_tol(&mut self, tol: f64) {
        self.stop = match self.stop {
            StopRule::Residual { .. } => StopRule::Residual { tol },
            StopRule::Gap { .. } => StopRule::Gap { tol },
        };
    }

    pub fn validate(&self) -> Result<()> {
        if self.solvers.is_empty() {
            bail!("at least one solver is required");
        }
        for n in &self.solvers {
            check_name(n)?;
        }
        let tol = match self.stop {
            StopRule::Residual { tol } | StopRule::Gap { tol } => tol,
        };
        if !(tol >= 0.0 && tol.is_finite()) {
            bail!("tolerance {tol} must be nonnegative");
        }
        if matches!(self.stop, StopRule::Gap { .. }) && !self.reference {
            bail!("the gap stopping rule needs reference = true");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_problem_and_run_keys() {
        let text = "family = lasso\nm = 20\nn = 30\nsolvers = fbs, alg2-lbfgs\nstop = residual\ntol = 1e-7\nout = res\n";
        let s = RunSpec::parse(text, Path::new("/tmp/x/spec.txt")).unwrap();
        assert_eq!(s.problem.m, Some(20));
        assert_eq!(s.solvers, vec!["fbs", "alg2-lbfgs"]);
        assert_eq!(s.stop, StopRule::Residual { tol: 1e-7 });
        assert_eq!(s.out, PathBuf::from("/tmp/x/res"));
    }

    #[test]
    fn rejects_unknown_solver_with_list() {
        let err = RunSpec::parse("family = lasso\nsolvers = newton-exact\n", Path::new("s")).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("newton-exact") && msg.contains("alg2-bfgs"), "{msg}");
    }

    #[test]
    fn rejects_bad_files() {
        assert!(RunSpec::parse("m = 3\n", Path::new("s")).is_err());
        assert!(RunSpec::parse("family = lasso\nwhat = 1\n", Path::new("s")).is_err());
        assert!(RunSpec::parse("family = lasso\nsolvers = \n", Path::new("s")).is_err());
        assert!(RunSpec::parse("family = lasso\nreference = false\n", Path::new("s")).is_err());
        assert!(RunSpec::parse("family = lasso\nstop = never\n", Path::new("s")).is_err());
    }

    #[test]
    fn restoration_defaults_to_residual_stop() {
        let s = RunSpec::parse("family = imrestore\n", Path::new("s")).unwrap();
        assert_eq!(s.stop, StopRule::Residual { tol: DEFAULT_RESIDUAL_TOL });
    }
}
