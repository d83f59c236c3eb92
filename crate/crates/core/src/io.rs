//! Shared output formatting.

/// Fixed 12-significant-digit scientific notation, e.g. `1.23456789012e-1`.
/// Negative zero prints as zero so output does not depend on sign noise.
pub fn sig12(x: f64) -> String {
    if x == 0.0 {
        return format!("{:.11e}", 0.0);
    }
    format!("{x:.11e}")
}
