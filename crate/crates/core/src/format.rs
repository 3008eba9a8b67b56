//! Six-significant-digit number formatting for reports and tables.

use serde_json::{Number, Value};

/// Fixed decimal with 6 significant digits; scientific outside `[1e-5, 1e15)`.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent present") + 1..]
        .parse()
        .expect("integer exponent");
    if !(-5..15).contains(&exp) {
        return sci;
    }
    let decimals = (5 - exp).max(0) as usize;
    let rounded: f64 = sci.parse().expect("valid float");
    format!("{rounded:.decimals$}")
}

/// `x` rounded to 6 significant digits.
pub fn round6(x: f64) -> f64 {
    if x.is_finite() {
        sig6(x).parse().expect("sig6 output parses")
    } else {
        x
    }
}

/// Rounds every non-integer JSON number in place.
pub fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round6).and_then(Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1.00000");
        assert_eq!(sig6(0.1234567), "0.123457");
        assert_eq!(sig6(-1234.5678), "-1234.57");
        assert_eq!(sig6(9.999996), "10.0000");
        assert_eq!(sig6(123456789.0), "123457000");
        assert_eq!(sig6(1e-7), "1.00000e-7");
        assert_eq!(round6(2.5f64.sqrt()), 1.58114);
    }

    #[test]
    fn rounds_nested_json() {
        let mut v = serde_json::json!({"a": [0.1234567, 3], "b": {"c": 2.345678912}});
        round_floats(&mut v);
        assert_eq!(v.to_string(), r#"{"a":[0.123457,3],"b":{"c":2.34568}}"#);
    }
}
