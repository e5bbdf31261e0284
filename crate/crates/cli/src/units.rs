//! Quantities with unit suffixes, converted to SI by decimal exponent shift.
//!
//! `7.875 GHz` and `7875 MHz` denote the same decimal number of hertz, so both
//! are rewritten to the same decimal string and parsed once. The conversion
//! never multiplies in floating point and equivalent spellings give
//! bit-identical values.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Frequency,
    Field,
    Length,
    Time,
    Volume,
    Gyromagnetic,
    Density,
    Dimensionless,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Dimension::Frequency => "frequency (Hz, kHz, MHz, GHz)",
            Dimension::Field => "magnetic field (T, mT, uT)",
            Dimension::Length => "length (m, mm, um)",
            Dimension::Time => "time (s, ms, us, ns, ps)",
            Dimension::Volume => "volume (m3, mm3)",
            Dimension::Gyromagnetic => "gyromagnetic ratio (Hz/T, MHz/T, GHz/T)",
            Dimension::Density => "number density (1/m3, 1/cm3)",
            Dimension::Dimensionless => "a plain number",
        };
        f.write_str(name)
    }
}

/// `(suffix, dimension, power of ten to SI)`.
const UNITS: &[(&str, Dimension, i32)] = &[
    ("Hz", Dimension::Frequency, 0),
    ("kHz", Dimension::Frequency, 3),
    ("MHz", Dimension::Frequency, 6),
    ("GHz", Dimension::Frequency, 9),
    ("T", Dimension::Field, 0),
    ("mT", Dimension::Field, -3),
    ("uT", Dimension::Field, -6),
    ("m", Dimension::Length, 0),
    ("mm", Dimension::Length, -3),
    ("um", Dimension::Length, -6),
    ("s", Dimension::Time, 0),
    ("ms", Dimension::Time, -3),
    ("us", Dimension::Time, -6),
    ("ns", Dimension::Time, -9),
    ("ps", Dimension::Time, -12),
    ("m3", Dimension::Volume, 0),
    ("mm3", Dimension::Volume, -9),
    ("Hz/T", Dimension::Gyromagnetic, 0),
    ("MHz/T", Dimension::Gyromagnetic, 6),
    ("GHz/T", Dimension::Gyromagnetic, 9),
    ("1/m3", Dimension::Density, 0),
    ("1/cm3", Dimension::Density, 6),
];

pub fn unit_exponent(unit: &str) -> Option<(Dimension, i32)> {
    UNITS.iter().find(|(s, _, _)| *s == unit).map(|&(_, d, e)| (d, e))
}

/// Parses a plain decimal number after shifting its exponent by `shift`.
///
/// Accepts an optional sign, digits with at most one decimal point, and an
/// optional `e`/`E` exponent.
pub fn parse_shifted(number: &str, shift: i32) -> Result<f64, String> {
    let (mantissa, exp) = match number.find(['e', 'E']) {
        Some(i) => {
            let e: i32 = number[i + 1..]
                .parse()
                .map_err(|_| format!("bad exponent in `{number}`"))?;
            (&number[..i], e)
        }
        None => (number, 0),
    };
    let digits = mantissa.strip_prefix(['+', '-']).unwrap_or(mantissa);
    let valid = !digits.is_empty()
        && digits.chars().all(|c| c.is_ascii_digit() || c == '.')
        && digits.chars().filter(|&c| c == '.').count() <= 1
        && digits.chars().any(|c| c.is_ascii_digit());
    if !valid {
        return Err(format!("`{number}` is not a number"));
    }
    let total = exp
        .checked_add(shift)
        .ok_or_else(|| format!("exponent overflow in `{number}`"))?;
    let value: f64 = format!("{mantissa}e{total}")
        .parse()
        .map_err(|_| format!("`{number}` is not a number"))?;
    if !value.is_finite() {
        return Err(format!("`{number}` is out of range"));
    }
    Ok(value)
}

/// Parses `<number> <unit>` (or a bare number for dimensionless input) into SI.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64, String> {
    let text = text.trim();
    let (number, unit) = match text.split_once(char::is_whitespace) {
        Some((n, u)) => (n, u.trim()),
        None => (text, ""),
    };
    if dim == Dimension::Dimensionless {
        if !unit.is_empty() {
            return Err(format!("`{text}`: expected {dim}, found unit `{unit}`"));
        }
        return parse_shifted(number, 0);
    }
    if unit.is_empty() {
        return Err(format!("`{text}`: missing unit, expected {dim}"));
    }
    match unit_exponent(unit) {
        Some((d, shift)) if d == dim => parse_shifted(number, shift),
        Some((d, _)) => Err(format!("`{text}`: unit `{unit}` is {d}, expected {dim}")),
        None => Err(format!("`{text}`: unknown unit `{unit}`, expected {dim}")),
    }
}

/// Comma-separated list of quantities of one dimension.
pub fn parse_list(text: &str, dim: Dimension) -> Result<Vec<f64>, String> {
    text.split(',').map(|item| parse_quantity(item, dim)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equivalent_spellings_are_bit_identical() {
        let a = parse_quantity("7.875 GHz", Dimension::Frequency).unwrap();
        let b = parse_quantity("7875 MHz", Dimension::Frequency).unwrap();
        let c = parse_quantity("7875000 kHz", Dimension::Frequency).unwrap();
        let d = parse_quantity("0.007875e3 GHz", Dimension::Frequency).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(a.to_bits(), c.to_bits());
        assert_eq!(a.to_bits(), d.to_bits());
        assert_eq!(a, 7.875e9);
        let x = parse_quantity("0.18 mm", Dimension::Length).unwrap();
        let y = parse_quantity("180 um", Dimension::Length).unwrap();
        assert_eq!(x.to_bits(), y.to_bits());
        assert_eq!(x, 0.18e-3);
    }

    #[test]
    fn field_and_time() {
        assert_eq!(parse_quantity("281 mT", Dimension::Field).unwrap(), 0.281);
        assert_eq!(parse_quantity("0.02 ns", Dimension::Time).unwrap(), 2e-11);
        assert_eq!(parse_quantity("-1.5", Dimension::Dimensionless).unwrap(), -1.5);
        assert_eq!(parse_quantity("28 GHz/T", Dimension::Gyromagnetic).unwrap(), 28e9);
    }

    #[test]
    fn rejects_wrong_or_missing_units() {
        assert!(parse_quantity("7 GHz", Dimension::Field).is_err());
        assert!(parse_quantity("7", Dimension::Frequency).is_err());
        assert!(parse_quantity("7 furlongs", Dimension::Length).is_err());
        assert!(parse_quantity("1 mm", Dimension::Dimensionless).is_err());
        assert!(parse_quantity("abc MHz", Dimension::Frequency).is_err());
        assert!(parse_quantity("1.2.3 MHz", Dimension::Frequency).is_err());
        assert!(parse_quantity("1e MHz", Dimension::Frequency).is_err());
        assert!(parse_quantity("1e999 MHz", Dimension::Frequency).is_err());
    }

    #[test]
    fn lists() {
        let v = parse_list("43 mm, 21 mm, 9 mm", Dimension::Length).unwrap();
        assert_eq!(v, vec![0.043, 0.021, 0.009]);
    }
}
