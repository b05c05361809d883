//! Two's-complement saturating fixed-point words of 8 to 16 bits.
//!
//! A [`FixedFormat`] of `bits` total and `frac` fractional bits represents
//! `raw * 2^-frac` with `raw` in `[-2^(bits-1), 2^(bits-1) - 1]`. Every
//! operation rounds to nearest with ties away from zero and saturates.

use crate::error::{Error, Result};

pub const MIN_BITS: u32 = 8;
pub const MAX_BITS: u32 = 16;

/// Integer bits (excluding sign) of the default split.
pub const DEFAULT_INT_BITS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedFormat {
    bits: u32,
    frac: u32,
}

impl FixedFormat {
    pub fn new(bits: u32, frac: u32) -> Result<Self> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::BitsOutOfRange(bits));
        }
        if frac >= bits {
            return Err(Error::InvalidFormat(format!(
                "frac bits {frac} must be below total bits {bits}"
            )));
        }
        Ok(FixedFormat { bits, frac })
    }

    /// Sign bit, three integer bits, the rest fraction.
    pub fn with_default_split(bits: u32) -> Result<Self> {
        Self::new(bits, bits.saturating_sub(1 + DEFAULT_INT_BITS))
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn frac(self) -> u32 {
        self.frac
    }

    pub fn raw_min(self) -> i32 {
        -(1 << (self.bits - 1))
    }

    pub fn raw_max(self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    /// Value of one unit in the last place.
    pub fn ulp(self) -> f64 {
        (-(self.frac as f64)).exp2()
    }

    pub fn min_value(self) -> f64 {
        self.raw_min() as f64 * self.ulp()
    }

    pub fn max_value(self) -> f64 {
        self.raw_max() as f64 * self.ulp()
    }

    fn saturate(self, wide: i64) -> i32 {
        wide.clamp(self.raw_min() as i64, self.raw_max() as i64) as i32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedValue {
    raw: i32,
    fmt: FixedFormat,
}

impl FixedValue {
    /// Wraps a raw word, saturating it into range.
    pub fn from_raw(raw: i64, fmt: FixedFormat) -> Self {
        FixedValue {
            raw: fmt.saturate(raw),
            fmt,
        }
    }

    pub fn zero(fmt: FixedFormat) -> Self {
        FixedValue { raw: 0, fmt }
    }

    pub fn raw(self) -> i32 {
        self.raw
    }

    pub fn format(self) -> FixedFormat {
        self.fmt
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 * self.fmt.ulp()
    }
}

/// Rounds `x` to the nearest representable value (ties away from zero),
/// saturating out-of-range and infinite inputs.
pub fn quantize(x: f64, fmt: FixedFormat) -> Result<FixedValue> {
    if x.is_nan() {
        return Err(Error::NanInput);
    }
    let scaled = (x * (fmt.frac as f64).exp2()).round();
    let raw = scaled.clamp(fmt.raw_min() as f64, fmt.raw_max() as f64) as i32;
    Ok(FixedValue { raw, fmt })
}

pub fn dequantize(v: FixedValue) -> f64 {
    v.to_f64()
}

/// Arithmetic shift right by `shift` with round-half-away-from-zero.
fn round_shift(wide: i64, shift: u32) -> i64 {
    if shift == 0 {
        return wide;
    }
    let half = 1i64 << (shift - 1);
    if wide >= 0 {
        (wide + half) >> shift
    } else {
        -((-wide + half) >> shift)
    }
}

/// `acc + a*b`: the product is formed at double width, the accumulator is
/// aligned to it, and the sum is rounded back once and saturated.
pub fn mac(acc: FixedValue, a: FixedValue, b: FixedValue) -> Result<FixedValue> {
    let fmt = acc.fmt;
    for other in [a.fmt, b.fmt] {
        if other != fmt {
            return Err(Error::FormatMismatch(fmt, other));
        }
    }
    let wide = ((acc.raw as i64) << fmt.frac) + a.raw as i64 * b.raw as i64;
    Ok(FixedValue::from_raw(round_shift(wide, fmt.frac), fmt))
}

pub fn relu_fixed(x: FixedValue) -> FixedValue {
    FixedValue {
        raw: x.raw.max(0),
        fmt: x.fmt,
    }
}
