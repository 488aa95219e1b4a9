//! Number formatting in the style of C's `%g`.

/// Formats `x` with `digits` significant digits, switching to exponent form
/// for very small or very large magnitudes and trimming trailing zeros.
pub fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "Inf".into()
        } else {
            "-Inf".into()
        };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!(
            "{}e{}{:02}",
            trim(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Enough digits to read back the same double.
pub fn full(x: f64) -> String {
    sig(x, 17)
}

/// P-values: 6 significant digits.
pub fn pval(x: f64) -> String {
    sig(x, 6)
}

/// Statistics and q-values: 10 significant digits.
pub fn stat(x: f64) -> String {
    sig(x, 10)
}
