//! Numeric canonicalization shared by table loading, answer scoring and
//! logical verification.
//!
//! A cell is numeric when, after trimming, it consists of an optional sign,
//! digits (optionally grouped with "," thousands separators), an optional
//! decimal part and an optional trailing "%". Percentages keep their displayed
//! magnitude: "12.5%" parses as 12.5.

use std::str::FromStr;

use rust_decimal::{Decimal, RoundingStrategy};

/// Decimal places kept for derived results that do not terminate (means).
pub const RESULT_DP: u32 = 4;

pub fn parse_numeric(raw: &str) -> Option<Decimal> {
    let s = raw.trim();
    let s = s.strip_suffix('%').unwrap_or(s);
    let (neg, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let int_digits = strip_grouping(int_part)?;
    if let Some(f) = frac_part {
        if !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        if int_digits.is_empty() && f.is_empty() {
            return None;
        }
    } else if int_digits.is_empty() {
        return None;
    }
    let mut text = String::with_capacity(body.len() + 2);
    if neg {
        text.push('-');
    }
    text.push_str(if int_digits.is_empty() { "0" } else { &int_digits });
    if let Some(f) = frac_part.filter(|f| !f.is_empty()) {
        text.push('.');
        text.push_str(f);
    }
    Decimal::from_str(&text).ok()
}

/// Accepts plain digits or digits grouped as `d{1,3}(,ddd)+`.
fn strip_grouping(int_part: &str) -> Option<String> {
    if !int_part.contains(',') {
        return int_part
            .bytes()
            .all(|b| b.is_ascii_digit())
            .then(|| int_part.to_string());
    }
    let mut groups = int_part.split(',');
    let head = groups.next()?;
    if head.is_empty() || head.len() > 3 || !head.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut out = head.to_string();
    for g in groups {
        if g.len() != 3 || !g.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        out.push_str(g);
    }
    Some(out)
}

/// Shortest plain decimal rendering: no exponent, no trailing zeros, no
/// thousands separators, and never "-0".
pub fn format_decimal(value: Decimal) -> String {
    let v = value.normalize();
    if v.is_zero() {
        return "0".to_string();
    }
    v.to_string()
}

pub fn round_result(value: Decimal) -> Decimal {
    value.round_dp_with_strategy(RESULT_DP, RoundingStrategy::MidpointAwayFromZero)
}

/// Relative comparison used by the logical verifier (tolerance 1e-9).
pub fn approx_eq(a: Decimal, b: Decimal) -> bool {
    if a == b {
        return true;
    }
    let scale = a.abs().max(b.abs());
    let tol = scale * Decimal::new(1, 9);
    (a - b).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    #[test]
    fn accepts_common_statistical_forms() {
        assert_eq!(parse_numeric("10"), Some(d("10")));
        assert_eq!(parse_numeric(" -3.5 "), Some(d("-3.5")));
        assert_eq!(parse_numeric("+7"), Some(d("7")));
        assert_eq!(parse_numeric("1,234"), Some(d("1234")));
        assert_eq!(parse_numeric("1,234,567.25"), Some(d("1234567.25")));
        assert_eq!(parse_numeric("12.5%"), Some(d("12.5")));
        assert_eq!(parse_numeric(".5"), Some(d("0.5")));
        assert_eq!(parse_numeric("5."), Some(d("5")));
    }

    #[test]
    fn rejects_non_numbers() {
        for raw in ["", "-", "abc", "1,23", "12,3456", "1.2.3", "n/a", "%", "1e5", "--1", ","] {
            assert_eq!(parse_numeric(raw), None, "{raw:?}");
        }
    }

    #[test]
    fn formatting_is_shortest_plain() {
        assert_eq!(format_decimal(d("42.000")), "42");
        assert_eq!(format_decimal(d("-0.0")), "0");
        assert_eq!(format_decimal(d("1234.50")), "1234.5");
        assert_eq!(format_decimal(d("0.0001")), "0.0001");
    }

    #[test]
    fn result_rounding_is_half_up() {
        assert_eq!(round_result(d("1.00005")), d("1.0001"));
        assert_eq!(round_result(d("-1.00005")), d("-1.0001"));
        assert_eq!(round_result(Decimal::from(10) / Decimal::from(3)), d("3.3333"));
    }

    #[test]
    fn relative_tolerance() {
        assert!(approx_eq(d("30"), d("30.0")));
        assert!(approx_eq(d("1000000000"), d("1000000000.5")));
        assert!(!approx_eq(d("25"), d("30")));
    }
}
