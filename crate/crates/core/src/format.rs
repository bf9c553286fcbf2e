//! Fixed-width numeric formatting shared by every CSV and matrix writer.

/// C-style `%.12e`: twelve fraction digits and a signed, at least two-digit
/// exponent.
pub fn sci(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{x:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Comment line carrying run provenance, e.g. `# aess 0.1.0 model=... W=...`.
pub fn provenance_line(fields: &[(&str, String)]) -> String {
    let mut line = format!("# aess {}", env!("CARGO_PKG_VERSION"));
    for (k, v) in fields {
        line.push(' ');
        line.push_str(k);
        line.push('=');
        line.push_str(v);
    }
    line
}
