//! Named solver settings. All use `β = 0.05`; the fixed-γ presets take `γ = 0.95/L_f`
//! and the limited-memory ones keep five pairs.

use anyhow::{anyhow, bail, Result};
use fbe_core::directions::DirectionMode;
use fbe_core::solver::{SolveParams, Variant};

pub const PRESETS: [&str; 6] = [
    "fbs",
    "fast-fbs",
    "lbfgs-classical",
    "alg1-lbfgs",
    "alg2-lbfgs",
    "alg2-bfgs",
];

pub const BETA: f64 = 0.05;
pub const FIXED_GAMMA_FACTOR: f64 = 0.95;
pub const MEMORY: usize = 5;

pub fn check_name(name: &str) -> Result<()> {
    if PRESETS.contains(&name) {
        Ok(())
    } else {
        bail!("unknown solver preset '{name}'; valid presets: {}", PRESETS.join(", "))
    }
}

/// Parameters for `name`. The fixed-γ presets need the Lipschitz constant.
pub fn preset(name: &str, lipschitz: Option<f64>) -> Result<SolveParams> {
    check_name(name)?;
    let lbfgs = DirectionMode::Lbfgs { memory: MEMORY };
    let base = SolveParams {
        beta: BETA,
        ..SolveParams::default()
    };
    let fixed = |direction| -> Result<SolveParams> {
        let l = lipschitz.ok_or_else(|| anyhow!("preset '{name}' needs a known Lipschitz constant"))?;
        Ok(SolveParams {
            variant: Variant::Fixed,
            direction,
            gamma0: Some(FIXED_GAMMA_FACTOR / l),
            ..base.clone()
        })
    };
    Ok(match name {
        "fbs" => SolveParams {
            variant: Variant::Fbs,
            ..base
        },
        "fast-fbs" => SolveParams {
            variant: Variant::FastFbs,
            ..base
        },
        "lbfgs-classical" => SolveParams {
            variant: Variant::ClassicalLs,
            direction: lbfgs,
            ..base
        },
        "alg1-lbfgs" => SolveParams {
            variant: Variant::Adaptive,
            direction: lbfgs,
            ..base
        },
        "alg2-lbfgs" => fixed(lbfgs)?,
        "alg2-bfgs" => fixed(DirectionMode::BfgsDense)?,
        _ => unreachable!("checked above"),
    })
}
