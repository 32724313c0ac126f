//! Rounding helpers that tolerate floating-point noise around integers.
//!
//! Closed-form constants such as `ceil(4 M^2 / (beta^2 delta))` land exactly on
//! integers for common inputs, where a naive `ceil` can overshoot by one
//! because of a last-bit error. Values within a relative `1e-9` of an integer
//! are snapped to it first.

const REL_TOL: f64 = 1e-9;

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= REL_TOL * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// `ceil(x)` after snapping near-integers.
pub fn ceil_snapped(x: f64) -> f64 {
    snap(x).ceil()
}

/// `floor(x)` after snapping near-integers.
pub fn floor_snapped(x: f64) -> f64 {
    snap(x).floor()
}

/// `ceil(log2(1 / delta))`, at least 1.
pub fn log2_inv_ceil(delta: f64) -> u64 {
    (ceil_snapped((1.0 / delta).log2()) as u64).max(1)
}
