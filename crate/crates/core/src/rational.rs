//! Exact rational helpers and the `p/q` wire format.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::error::{Error, Result};

/// Exact rational number; always kept in lowest terms by `num_rational`.
pub type Rat = BigRational;

/// Parse `"p/q"` or a bare integer `"p"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rat> {
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let num: BigInt = num
        .parse()
        .map_err(|_| Error::InvalidParams(format!("bad rational numerator in {s:?}")))?;
    let den: BigInt = den
        .parse()
        .map_err(|_| Error::InvalidParams(format!("bad rational denominator in {s:?}")))?;
    if den.is_zero() {
        return Err(Error::InvalidParams(format!("zero denominator in {s:?}")));
    }
    Ok(Rat::new(num, den))
}

/// Format a rational as `"p/q"`, denominator always explicit (`"3/2"`, `"1/1"`).
pub fn format_rational(r: &Rat) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Exact conversion of an unsigned big integer to a rational.
pub fn uint_to_rat(u: &BigUint) -> Rat {
    Rat::from_integer(BigInt::from(u.clone()))
}

/// Serde helper: rationals cross the wire as `"p/q"` strings.
pub(crate) fn ser_rat<S: serde::Serializer>(
    r: &Rat,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_rational(r))
}

/// Serde helper: big integers cross the wire as decimal strings.
pub(crate) fn ser_bigint<S: serde::Serializer>(
    n: &BigInt,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&n.to_string())
}

/// Serde helper: big unsigned integers cross the wire as decimal strings.
pub(crate) fn ser_biguint<S: serde::Serializer>(
    n: &BigUint,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&n.to_string())
}

/// Lossy conversion for statistical reporting only; exact paths never use it.
pub fn rat_to_f64(r: &Rat) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or_else(|| {
        // Fall back to a quotient of truncated parts for extreme magnitudes.
        let n = r.numer().to_f64().unwrap_or(if r.numer().is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        });
        let d = r.denom().to_f64().unwrap_or(f64::INFINITY);
        n / d
    })
}
