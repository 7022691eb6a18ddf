use std::ops::{Add, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Snapshot of oracle work. Differences of two snapshots give the work done in between.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub f_evals: u64,
    pub grad_evals: u64,
    pub hvps: u64,
    pub prox_calls: u64,
    pub matvecs: u64,
    pub svds: u64,
}

impl Sub for Counters {
    type Output = Counters;

    fn sub(self, rhs: Counters) -> Counters {
        Counters {
            f_evals: self.f_evals - rhs.f_evals,
            grad_evals: self.grad_evals - rhs.grad_evals,
            hvps: self.hvps - rhs.hvps,
            prox_calls: self.prox_calls - rhs.prox_calls,
            matvecs: self.matvecs - rhs.matvecs,
            svds: self.svds - rhs.svds,
        }
    }
}

impl Add for Counters {
    type Output = Counters;

    fn add(self, rhs: Counters) -> Counters {
        Counters {
            f_evals: self.f_evals + rhs.f_evals,
            grad_evals: self.grad_evals + rhs.grad_evals,
            hvps: self.hvps + rhs.hvps,
            prox_calls: self.prox_calls + rhs.prox_calls,
            matvecs: self.matvecs + rhs.matvecs,
            svds: self.svds + rhs.svds,
        }
    }
}

impl std::iter::Sum for Counters {
    fn sum<I: Iterator<Item = Counters>>(iter: I) -> Counters {
        iter.fold(Counters::default(), |a, b| a + b)
    }
}

/// Relaxed atomic counter; operators and oracles are shared immutably.
#[derive(Debug, Default)]
pub struct Tally(AtomicU64);

impl Tally {
    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

impl Clone for Tally {
    fn clone(&self) -> Self {
        Tally(AtomicU64::new(self.get()))
    }
}
