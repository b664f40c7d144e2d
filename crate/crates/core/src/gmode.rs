//! Process-wide toggle for normalisation-constant bookkeeping.
//!
//! When disabled, the operations skip the final `g` update of each algorithm
//! and report `g = 0`. Moments are unaffected, but anything depending on
//! normalisation information (model evidence, log densities) becomes
//! meaningless, so evidence-based entry points must refuse to run in this
//! mode.

use std::sync::atomic::{AtomicBool, Ordering};

static SKIP_G: AtomicBool = AtomicBool::new(false);

/// Whether `g` bookkeeping is currently enabled (the default).
pub fn g_enabled() -> bool {
    !SKIP_G.load(Ordering::Relaxed)
}

/// Enables or disables `g` bookkeeping for the whole process.
pub fn set_g_enabled(enabled: bool) {
    SKIP_G.store(!enabled, Ordering::Relaxed);
}

/// Runs `f` only when `g` bookkeeping is enabled, else returns 0.
pub(crate) fn g_value(f: impl FnOnce() -> f64) -> f64 {
    if g_enabled() {
        f()
    } else {
        0.0
    }
}
