//! Text formatting shared by the CSV writers.

/// Shortest decimal string that parses back to the same `f64`, switching to
/// exponent notation for very large or small magnitudes.
pub fn float(x: f64) -> String {
    format!("{x:?}")
}
