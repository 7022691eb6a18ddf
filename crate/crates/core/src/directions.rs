//! Quasi-Newton search directions for the envelope: dense inverse BFGS and L-BFGS.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::vecops::{all_finite, dot, norm};

pub const DEFAULT_MEMORY: usize = 5;
pub const CURVATURE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum DirectionMode {
    Steepest,
    BfgsDense,
    Lbfgs { memory: usize },
}

impl Default for DirectionMode {
    fn default() -> Self {
        DirectionMode::Lbfgs {
            memory: DEFAULT_MEMORY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOutcome {
    Accepted,
    /// `⟨s,y⟩ ≤ floor·‖s‖‖y‖`; state untouched.
    SkippedCurvature,
    SkippedNonFinite,
    /// Steepest mode keeps no state.
    Ignored,
}

#[derive(Debug, Clone)]
struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Single-owner quasi-Newton memory.
#[derive(Debug, Clone)]
pub struct QnState {
    mode: DirectionMode,
    dim: usize,
    /// Inverse Hessian approximation; `None` until the first accepted pair.
    h: Option<DMatrix<f64>>,
    pairs: VecDeque<Pair>,
    curvature_floor: f64,
}

impl QnState {
    pub fn new(mode: DirectionMode, dim: usize) -> Self {
        QnState::with_floor(mode, dim, CURVATURE_FLOOR)
    }

    pub fn with_floor(mode: DirectionMode, dim: usize, curvature_floor: f64) -> Self {
        if let DirectionMode::Lbfgs { memory } = mode {
            assert!(memory >= 1, "L-BFGS memory must be at least 1");
        }
        QnState {
            mode,
            dim,
            h: None,
            pairs: VecDeque::new(),
            curvature_floor,
        }
    }

    pub fn mode(&self) -> DirectionMode {
        self.mode
    }

    /// Stored pairs (L-BFGS) or accepted-update indicator (dense).
    pub fn len(&self) -> usize {
        match self.mode {
            DirectionMode::Lbfgs { .. } => self.pairs.len(),
            DirectionMode::BfgsDense => usize::from(self.h.is_some()),
            DirectionMode::Steepest => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Current dense inverse approximation, identity before any update.
    pub fn inverse_hessian(&self) -> DMatrix<f64> {
        self.h
            .clone()
            .unwrap_or_else(|| DMatrix::identity(self.dim, self.dim))
    }

    pub fn clear(&mut self) {
        self.h = None;
        self.pairs.clear();
    }

    pub fn observe(&mut self, s: &[f64], y: &[f64]) -> UpdateOutcome {
        assert_eq!(s.len(), self.dim, "pair dimension");
        assert_eq!(y.len(), self.dim, "pair dimension");
        if self.mode == DirectionMode::Steepest {
            return UpdateOutcome::Ignored;
        }
        if !all_finite(s) || !all_finite(y) {
            return UpdateOutcome::SkippedNonFinite;
        }
        let sy = dot(s, y);
        if !(sy > self.curvature_floor * norm(s) * norm(y)) {
            return UpdateOutcome::SkippedCurvature;
        }
        let rho = 1.0 / sy;
        match self.mode {
            DirectionMode::BfgsDense => self.dense_update(s, y, rho),
            DirectionMode::Lbfgs { memory } => {
                if self.pairs.len() == memory {
                    self.pairs.pop_front();
                }
                self.pairs.push_back(Pair {
                    s: s.to_vec(),
                    y: y.to_vec(),
                    rho,
                });
            }
            DirectionMode::Steepest => unreachable!(),
        }
        UpdateOutcome::Accepted
    }

    // H⁺ = (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ, with H scaled by ⟨s,y⟩/⟨y,y⟩ at the first pair.
    fn dense_update(&mut self, s: &[f64], y: &[f64], rho: f64) {
        let n = self.dim;
        let h = self.h.get_or_insert_with(|| {
            let scale = 1.0 / (rho * dot(y, y));
            DMatrix::identity(n, n) * scale
        });
        let sv = DVector::from_column_slice(s);
        let yv = DVector::from_column_slice(y);
        let hy = &*h * &yv;
        let yhy = yv.dot(&hy);
        h.ger(-rho, &sv, &hy, 1.0);
        h.ger(-rho, &hy, &sv, 1.0);
        h.ger(rho * rho * yhy + rho, &sv, &sv, 1.0);
        // keep exact symmetry against drift
        let sym = (&*h + h.transpose()) * 0.5;
        *h = sym;
    }

    /// `−H·grad`; L-BFGS via the two-loop recursion.
    pub fn direction(&self, grad: &[f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.dim, "gradient dimension");
        match self.mode {
            DirectionMode::Steepest => grad.iter().map(|g| -g).collect(),
            DirectionMode::BfgsDense => match &self.h {
                None => grad.iter().map(|g| -g).collect(),
                Some(h) => {
                    let d = h * DVector::from_column_slice(grad);
                    d.iter().map(|v| -v).collect()
                }
            },
            DirectionMode::Lbfgs { .. } => self.two_loop(grad),
        }
    }

    fn two_loop(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let Some(last) = self.pairs.back() else {
            return q.iter().map(|g| -g).collect();
        };
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for p in self.pairs.iter().rev() {
            let a = p.rho * dot(&p.s, &q);
            for (qi, yi) in q.iter_mut().zip(&p.y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma0 = 1.0 / (last.rho * dot(&last.y, &last.y));
        for qi in q.iter_mut() {
            *qi *= gamma0;
        }
        for (p, a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = p.rho * dot(&p.y, &q);
            for (qi, si) in q.iter_mut().zip(&p.s) {
                *qi += (a - b) * si;
            }
        }
        q.iter().map(|v| -v).collect()
    }
}

/// `⟨d, grad⟩ ≤ 0`.
pub fn descent_check(d: &[f64], grad: &[f64]) -> bool {
    dot(d, grad) <= 0.0
}
