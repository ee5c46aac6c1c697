//! Locale-independent float formatting for text artifacts.
//!
//! Floats are written in the shortest decimal form that parses back to the
//! identical `f64`, never in exponent notation. Re-serializing a parsed value
//! therefore reproduces the same bytes.

/// Shortest round-trip decimal form of `x`; `-0` prints as `0`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    x.to_string()
}

/// Space-separated triple, as used by URDF `xyz`/`rpy` attributes.
pub fn fmt_vec3(v: [f64; 3]) -> String {
    format!("{} {} {}", fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(v[2]))
}
