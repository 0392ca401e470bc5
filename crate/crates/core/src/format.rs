//! Shortest round-trip decimal text for reals.

/// Formats `v` so that parsing the text yields the identical `f64`.
///
/// Plain notation is used for moderate magnitudes and scientific notation for
/// very small or very large ones; both forms are the shortest digit strings
/// that round-trip.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && v.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}
