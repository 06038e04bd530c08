//! Fixed-precision number formatting shared by the text file formats.

/// Formats `x` with nine significant digits. Plain decimal notation inside
/// `[1e-4, 1e9)`, scientific notation outside it.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs();
    if !(1e-4..1e9).contains(&mag) {
        return format!("{x:.8e}");
    }
    let exp = mag.log10().floor() as i32;
    let prec = (8 - exp).max(0) as usize;
    format!("{x:.prec$}")
}

/// Rounds `x` to the value its nine-significant-digit text parses back to.
pub fn round_sig9(x: f64) -> f64 {
    sig9(x).parse().expect("sig9 output parses")
}
