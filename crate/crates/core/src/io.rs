//! Text formatting shared by every serializer.

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn f17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Joins formatted values into one CSV row.
pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| f17(*v)).collect::<Vec<_>>().join(",")
}
