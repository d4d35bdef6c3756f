//! Float formatting shared by the text file writers.

/// 17 significant digits; parses back to the identical `f64`.
pub(crate) fn exact(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}
