//! Float-buffer accounting for [`Matrix`](super::Matrix) storage.
//!
//! Every matrix registers its element count on construction and releases it
//! on drop. Counters are thread-local so concurrently running tests do not
//! see each other's buffers.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
    static TOTAL: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn track(len: usize) {
    LIVE.with(|live| {
        let now = live.get() + len;
        live.set(now);
        PEAK.with(|peak| peak.set(peak.get().max(now)));
    });
    TOTAL.with(|t| t.set(t.get() + len as u64));
}

pub(crate) fn release(len: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(len)));
}

/// Float counts observed while running a measured closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocStats {
    /// Largest number of simultaneously live floats above the starting level.
    pub peak_floats: usize,
    /// Floats allocated in total, including buffers already released.
    pub total_floats: u64,
}

/// Floats currently held by live matrices on this thread.
pub fn live_floats() -> usize {
    LIVE.with(Cell::get)
}

/// Runs `f` and reports the matrix storage it needed beyond what was already live.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, AllocStats) {
    let base = live_floats();
    let outer_peak = PEAK.with(|p| p.replace(base));
    let total_before = TOTAL.with(Cell::get);
    let out = f();
    let inner_peak = PEAK.with(Cell::get);
    PEAK.with(|p| p.set(outer_peak.max(inner_peak)));
    let stats = AllocStats {
        peak_floats: inner_peak.saturating_sub(base),
        total_floats: TOTAL.with(Cell::get) - total_before,
    };
    (out, stats)
}
