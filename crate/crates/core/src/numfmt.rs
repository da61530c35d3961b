//! Float formatting shared by every CSV writer: 9 significant digits,
//! trailing zeros trimmed, like C's `%.9g` but with a bare exponent
//! (`1e-7` rather than `1e-07`).

pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    // Rounding can carry into the next decade (9.9999999995 -> 10.0000000).
    let sci = format!("{:.8e}", x);
    let (mantissa, e) = sci.split_once('e').expect("scientific format");
    let e: i32 = e.parse().expect("exponent");
    let exp = if e != exp { e } else { exp };
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), e)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" {
            "0".to_string()
        } else {
            t.to_string()
        }
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::sig9;

    #[test]
    fn matches_printf_g() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(-2.5), "-2.5");
        assert_eq!(sig9(0.1), "0.1");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(271.445616976604), "271.445617");
        assert_eq!(sig9(123456789.0), "123456789");
        assert_eq!(sig9(1234567890.0), "1.23456789e9");
        assert_eq!(sig9(1e-7), "1e-7");
        assert_eq!(sig9(0.0001), "0.0001");
        assert_eq!(sig9(9.9999999996), "10");
    }
}
