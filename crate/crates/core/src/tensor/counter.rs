//! Optional instrumentation of arithmetic work.
//!
//! Counting is scoped per thread: [`measure`] enables it for the duration of
//! a closure, and nested scopes roll their counts into the enclosing one.
//! Outside a scope the hooks are a single thread-local read.

use std::cell::Cell;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    /// Multiply-accumulates performed by matrix products.
    pub macs: u64,
    /// Element-wise additions of whole matrices (residuals, context sums).
    pub adds: u64,
}

impl Add for OpCounts {
    type Output = OpCounts;

    fn add(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            macs: self.macs + rhs.macs,
            adds: self.adds + rhs.adds,
        }
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: OpCounts) {
        *self = *self + rhs;
    }
}

thread_local! {
    static ACTIVE: Cell<Option<OpCounts>> = const { Cell::new(None) };
}

pub fn record_macs(n: u64) {
    ACTIVE.with(|c| {
        if let Some(mut counts) = c.get() {
            counts.macs += n;
            c.set(Some(counts));
        }
    });
}

pub fn record_adds(n: u64) {
    ACTIVE.with(|c| {
        if let Some(mut counts) = c.get() {
            counts.adds += n;
            c.set(Some(counts));
        }
    });
}

/// Runs `f` with counting enabled on this thread and returns what it did.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, OpCounts) {
    let outer = ACTIVE.with(|c| c.replace(Some(OpCounts::default())));
    let result = f();
    let inner = ACTIVE
        .with(|c| c.replace(outer))
        .unwrap_or_default();
    if let Some(o) = outer {
        ACTIVE.with(|c| c.set(Some(o + inner)));
    }
    (result, inner)
}
