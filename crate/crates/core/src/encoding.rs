//! Balanced base-`(2^(S+1) - 1)` activation encoding.
//!
//! With scale factor `S` every digit lies in `[-(2^S - 1), 2^S - 1]` and is
//! realised by `2S` fixed resistors: `S` in a positive column storing
//! `1, 2, ..., 2^(S-1)` and `S` in a negative column storing their negatives.
//! Digits are kept most-significant first, which is the order the
//! shift-and-add unit consumes them in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SCALE_FACTOR: u32 = 1;
pub const MAX_SCALE_FACTOR: u32 = 7;

/// Encoding parameters for one activation bit width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemeRepr", into = "SchemeRepr")]
pub struct EncodingScheme {
    scale_factor: u32,
    bits: u32,
    n_digits: u32,
}

#[derive(Serialize, Deserialize)]
struct SchemeRepr {
    scale_factor: u32,
    bits: u32,
}

impl TryFrom<SchemeRepr> for EncodingScheme {
    type Error = Error;
    fn try_from(r: SchemeRepr) -> Result<Self> {
        EncodingScheme::new(r.scale_factor, r.bits)
    }
}

impl From<EncodingScheme> for SchemeRepr {
    fn from(s: EncodingScheme) -> Self {
        SchemeRepr {
            scale_factor: s.scale_factor,
            bits: s.bits,
        }
    }
}

impl EncodingScheme {
    pub fn new(scale_factor: u32, bits: u32) -> Result<Self> {
        if !(MIN_SCALE_FACTOR..=MAX_SCALE_FACTOR).contains(&scale_factor) {
            return Err(Error::Config(format!(
                "scale factor must be in [{MIN_SCALE_FACTOR}, {MAX_SCALE_FACTOR}], got {scale_factor}"
            )));
        }
        if !(2..=32).contains(&bits) {
            return Err(Error::Config(format!("activation bits must be in [2, 32], got {bits}")));
        }
        Ok(EncodingScheme {
            scale_factor,
            bits,
            n_digits: digits_required(bits, scale_factor),
        })
    }

    pub fn scale_factor(&self) -> u32 {
        self.scale_factor
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn base(&self) -> i64 {
        base_of(self.scale_factor)
    }

    pub fn digit_bound(&self) -> i32 {
        (1 << self.scale_factor) - 1
    }

    pub fn n_digits(&self) -> u32 {
        self.n_digits
    }

    pub fn resistors_per_activation(&self) -> u32 {
        2 * self.scale_factor
    }

    /// Largest magnitude representable with `n_digits` digits.
    pub fn max_value(&self) -> i64 {
        let full = (self.base() as i128).pow(self.n_digits);
        ((full - 1) / 2).min(i64::MAX as i128) as i64
    }

    /// Multiply by the base with a shift and a subtraction.
    #[inline]
    pub fn times_base(&self, acc: i64) -> i64 {
        (acc << (self.scale_factor + 1)) - acc
    }
}

fn base_of(scale_factor: u32) -> i64 {
    (1i64 << (scale_factor + 1)) - 1
}

/// Signed digits, most significant first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitCode {
    pub digits: Vec<i32>,
}

pub fn encode(value: i64, scheme: &EncodingScheme) -> Result<DigitCode> {
    let limit = scheme.max_value();
    if value.abs() > limit {
        return Err(Error::Range {
            what: format!("balanced base-{} with {} digits", scheme.base(), scheme.n_digits()),
            value,
            limit,
        });
    }
    let base = scheme.base();
    let bound = scheme.digit_bound() as i64;
    let mut rest = value;
    let mut digits = vec![0i32; scheme.n_digits() as usize];
    for slot in digits.iter_mut().rev() {
        let mut r = rest.rem_euclid(base);
        if r > bound {
            r -= base;
        }
        *slot = r as i32;
        rest = (rest - r) / base;
    }
    debug_assert_eq!(rest, 0);
    Ok(DigitCode { digits })
}

pub fn decode(code: &DigitCode, scheme: &EncodingScheme) -> Result<i64> {
    let bound = scheme.digit_bound();
    let base = scheme.base();
    let mut acc = 0i64;
    for &d in &code.digits {
        if d.abs() > bound {
            return Err(Error::Encoding(format!("digit {d} outside ±{bound} for base {base}")));
        }
        acc = acc * base + d as i64;
    }
    Ok(acc)
}

/// Minimal digit count covering `±(2^(bits-1) - 1)`.
pub fn digits_required(bits: u32, scale_factor: u32) -> u32 {
    let need = (1u128 << (bits - 1)) - 1;
    let base = base_of(scale_factor) as u128;
    let mut digits = 1;
    let mut full = base;
    while (full - 1) / 2 < need {
        full *= base;
        digits += 1;
    }
    digits
}

/// Cycles normalised to one resistor unit: `S * digits`.
pub fn scale_cycle_product(bits: u32, scale_factor: u32) -> u32 {
    scale_factor * digits_required(bits, scale_factor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseRow {
    pub scale_factor: u32,
    pub base: i64,
    pub digits: u32,
    pub scale_cycle_product: u32,
}

/// Digits and scale-cycle product for every supported scale factor.
pub fn base_table(bits: u32) -> Vec<BaseRow> {
    (MIN_SCALE_FACTOR..=MAX_SCALE_FACTOR)
        .map(|s| BaseRow {
            scale_factor: s,
            base: base_of(s),
            digits: digits_required(bits, s),
            scale_cycle_product: scale_cycle_product(bits, s),
        })
        .collect()
}

/// On/off state of the `2S` resistors of one activation for one digit.
///
/// Index `k` of each column is the resistor storing `2^k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchStates {
    pub positive: Vec<bool>,
    pub negative: Vec<bool>,
}

impl SwitchStates {
    /// Sum of the values of every switched-on resistor, negative column subtracted.
    pub fn signed_sum(&self) -> i32 {
        let col = |c: &[bool]| -> i32 {
            c.iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(k, _)| 1 << k)
                .sum()
        };
        col(&self.positive) - col(&self.negative)
    }

    /// Exchange the two columns; used when the driving weight is negative.
    pub fn swapped(&self) -> Self {
        SwitchStates {
            positive: self.negative.clone(),
            negative: self.positive.clone(),
        }
    }

    pub fn on_count(&self) -> u32 {
        self.positive.iter().chain(&self.negative).filter(|&&b| b).count() as u32
    }

    /// Register image: one column-select bit followed by `S` magnitude bits.
    pub fn register_bits(&self) -> u32 {
        1 + self.positive.len() as u32
    }
}

pub fn digit_to_switch_states(d: i32, scale_factor: u32) -> SwitchStates {
    let s = scale_factor as usize;
    debug_assert!(d.unsigned_abs() < (1 << s), "digit {d} exceeds 2^S-1");
    let mag = d.unsigned_abs();
    let bits: Vec<bool> = (0..s).map(|k| (mag >> k) & 1 == 1).collect();
    let off = vec![false; s];
    if d >= 0 {
        SwitchStates {
            positive: bits,
            negative: off,
        }
    } else {
        SwitchStates {
            positive: off,
            negative: bits,
        }
    }
}
