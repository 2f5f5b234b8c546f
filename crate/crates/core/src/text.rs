//! Number formatting shared by every CSV writer.

/// Scientific notation with 12 significant digits. Fixed width per magnitude
/// so reruns are byte-identical.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.11e}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_at_least_nine_significant_digits() {
        let s = fmt_real(std::f64::consts::PI);
        assert_eq!(s, "3.14159265359e0");
        let back: f64 = s.parse().unwrap();
        assert!((back - std::f64::consts::PI).abs() < 1e-11);
        assert_eq!(fmt_opt(None), "");
    }
}
