//! Thread-local instrumentation of tensor-buffer allocations.
//!
//! The benchmark harness measures peak memory by counting the logical bytes
//! of every tensor buffer created and dropped while tracking is active, not
//! by sampling OS resident-set size. The count is exact and deterministic:
//! the same forward pass always reports the same peak.

use std::cell::Cell;

thread_local! {
    static ENABLED: Cell<bool> = const { Cell::new(false) };
    static CURRENT: Cell<i64> = const { Cell::new(0) };
    static PEAK: Cell<i64> = const { Cell::new(0) };
}

/// Reset counters and start tracking on the current thread.
pub fn begin() {
    CURRENT.with(|c| c.set(0));
    PEAK.with(|p| p.set(0));
    ENABLED.with(|e| e.set(true));
}

/// Stop tracking and return the peak live tensor bytes observed since
/// [`begin`]. Tensors allocated before tracking began are not counted.
pub fn end() -> u64 {
    ENABLED.with(|e| e.set(false));
    PEAK.with(|p| p.get().max(0) as u64)
}

#[inline]
pub(crate) fn on_alloc(bytes: usize) {
    ENABLED.with(|e| {
        if e.get() {
            let cur = CURRENT.with(|c| {
                let v = c.get() + bytes as i64;
                c.set(v);
                v
            });
            PEAK.with(|p| p.set(p.get().max(cur)));
        }
    });
}

#[inline]
pub(crate) fn on_free(bytes: usize) {
    ENABLED.with(|e| {
        if e.get() {
            CURRENT.with(|c| c.set(c.get() - bytes as i64));
        }
    });
}
