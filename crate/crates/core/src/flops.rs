//! Multiply-add instrumentation.
//!
//! Kernels report their analytic multiply-add count through [`record`] on the
//! calling thread, before any data-parallel dispatch, so counts are exact
//! integers independent of thread scheduling. A count only lands in a
//! counter while [`FlopCounter::measure`] is active on that thread.

use std::cell::RefCell;

thread_local! {
    static ACTIVE: RefCell<Vec<u64>> = const { RefCell::new(Vec::new()) };
}

/// Accumulates multiply-adds. Disabled counters ignore every addition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCounter {
    multiply_adds: u64,
    enabled: bool,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self {
            multiply_adds: 0,
            enabled: true,
        }
    }

    pub fn disabled() -> Self {
        Self {
            multiply_adds: 0,
            enabled: false,
        }
    }

    pub fn multiply_adds(&self) -> u64 {
        self.multiply_adds
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.enabled = enabled;
    }

    pub fn add(&mut self, n: u64) {
        if self.enabled {
            self.multiply_adds = self.multiply_adds.saturating_add(n);
        }
    }

    /// Runs `f` and adds every multiply-add it records on this thread.
    /// Nested measurements also propagate into the enclosing one.
    pub fn measure<R>(&mut self, f: impl FnOnce() -> R) -> R {
        ACTIVE.with(|a| a.borrow_mut().push(0));
        let out = f();
        let n = ACTIVE.with(|a| {
            let mut a = a.borrow_mut();
            let n = a.pop().unwrap_or(0);
            if let Some(parent) = a.last_mut() {
                *parent += n;
            }
            n
        });
        self.add(n);
        out
    }
}

/// Records `n` multiply-adds against the innermost active measurement.
pub fn record(n: u64) {
    ACTIVE.with(|a| {
        if let Some(top) = a.borrow_mut().last_mut() {
            *top += n;
        }
    });
}

/// Convenience wrapper returning `(result, multiply_adds)`.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let mut c = FlopCounter::new();
    let out = c.measure(f);
    (out, c.multiply_adds())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_recorded_outside_measure() {
        record(10);
        let (_, n) = count(|| ());
        assert_eq!(n, 0);
    }

    #[test]
    fn nested_measurements_propagate() {
        let mut outer = FlopCounter::new();
        let mut inner = FlopCounter::new();
        outer.measure(|| {
            record(3);
            inner.measure(|| record(4));
        });
        assert_eq!(inner.multiply_adds(), 4);
        assert_eq!(outer.multiply_adds(), 7);
    }

    #[test]
    fn disabled_counter_never_changes() {
        let mut c = FlopCounter::disabled();
        c.measure(|| record(100));
        c.add(5);
        assert_eq!(c.multiply_adds(), 0);
    }

    #[test]
    fn counter_is_monotone() {
        let mut c = FlopCounter::new();
        let mut last = 0;
        for n in [0, 1, 7, 0, 3] {
            c.add(n);
            assert!(c.multiply_adds() >= last);
            last = c.multiply_adds();
        }
        assert_eq!(last, 11);
    }
}
