//! Bit-exact fixed-point kernels shared by the golden model and the simulator.
//!
//! Everything here is a pure function over integers (or caller-owned state).
//! Real-valued helpers exist only as references for the integer paths.

mod exp;
mod normq;
mod quantize;
pub mod suite;
mod welford;

pub use exp::{exp2_approx, exp_approx, EXP_REL_ERROR_BOUND, EXP_SATURATION, LOG2E_FRAC_BITS};
pub use normq::{NormQParams, NormThreshold};
pub use quantize::{
    comparator_quantize, quantize_linear, scale_quantize, scale_step_table, FixedQuantizer,
};
pub use welford::{fixed_stats_error, fixed_stats_errors, reciprocal_table, FixedVariance, WelfordFixed, WelfordState};

use crate::error::{Error, Result};

/// Whether a code range is symmetric signed or non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signedness {
    Signed,
    Unsigned,
}

/// Inclusive code range for a bit width.
///
/// Signed codes use the symmetric range `[-(2^(b-1)-1), 2^(b-1)-1]`, unsigned
/// codes use `[0, 2^b - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeRange {
    pub min: i32,
    pub max: i32,
}

impl CodeRange {
    pub fn new(bits: u8, signedness: Signedness) -> Self {
        assert!((1..=16).contains(&bits), "unsupported bit width {bits}");
        match signedness {
            Signedness::Unsigned => CodeRange {
                min: 0,
                max: (1 << bits) - 1,
            },
            Signedness::Signed => {
                let m = (1 << (bits - 1)) - 1;
                CodeRange { min: -m, max: m }
            }
        }
    }

    /// Number of decision thresholds a comparator bank needs.
    pub fn thresholds(&self) -> usize {
        (self.max - self.min) as usize
    }

    pub fn contains(&self, code: i32) -> bool {
        (self.min..=self.max).contains(&code)
    }

    pub fn clamp(&self, v: i64) -> i32 {
        v.clamp(self.min as i64, self.max as i64) as i32
    }

    pub fn check(&self, code: i32) -> Result<()> {
        if self.contains(code) {
            Ok(())
        } else {
            Err(Error::CodeOutOfRange {
                code,
                min: self.min,
                max: self.max,
            })
        }
    }
}

/// A single low-bit code with its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantCode {
    pub code: i32,
    pub bits: u8,
    pub signedness: Signedness,
}

impl QuantCode {
    pub fn new(code: i32, bits: u8, signedness: Signedness) -> Result<Self> {
        CodeRange::new(bits, signedness).check(code)?;
        Ok(QuantCode {
            code,
            bits,
            signedness,
        })
    }

    pub fn range(&self) -> CodeRange {
        CodeRange::new(self.bits, self.signedness)
    }

    pub fn dequantize(&self, step: f64) -> f64 {
        self.code as f64 * step
    }
}

/// Fixed-point formats used by the normalization and softmax datapaths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointParams {
    /// Reciprocal table numerator exponent (numerator is `2^nu_exp`).
    pub nu_exp: u32,
    /// Prescale applied to normalization inputs; a power of two.
    pub prescale: i64,
    /// Prescale of exponential inputs; a power of two.
    pub exp_prescale: i64,
    /// Accumulator and running-statistics width in bits.
    pub acc_bits: u32,
    /// Fraction bits of post-MAC scale/bias results.
    pub postmac_frac_bits: u32,
    /// Fraction bits of exponential outputs.
    pub exp_out_frac_bits: u32,
    /// Fraction bits of precomputed quantizer thresholds.
    pub thresh_frac_bits: u32,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        FixedPointParams {
            nu_exp: 6,
            prescale: 32,
            exp_prescale: 1024,
            acc_bits: 32,
            postmac_frac_bits: 16,
            exp_out_frac_bits: 20,
            thresh_frac_bits: 16,
        }
    }
}

impl FixedPointParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.prescale < 1 || (self.prescale & (self.prescale - 1)) != 0 {
            return bad(format!("prescale {} must be a power of two", self.prescale));
        }
        if self.exp_prescale < 2 || (self.exp_prescale & (self.exp_prescale - 1)) != 0 {
            return bad(format!(
                "exp_prescale {} must be a power of two >= 2",
                self.exp_prescale
            ));
        }
        if self.nu_exp > 24 {
            return bad(format!("nu_exp {} too large", self.nu_exp));
        }
        if !(8..=62).contains(&self.acc_bits) {
            return bad(format!("acc_bits {} outside [8, 62]", self.acc_bits));
        }
        if self.postmac_frac_bits > 30 || self.thresh_frac_bits > 30 {
            return bad("fraction bits must be <= 30".into());
        }
        if self.exp_out_frac_bits > 40 {
            return bad("exp_out_frac_bits must be <= 40".into());
        }
        Ok(())
    }

    pub fn prescale_shift(&self) -> u32 {
        self.prescale.trailing_zeros()
    }

    pub fn exp_prescale_shift(&self) -> u32 {
        self.exp_prescale.trailing_zeros()
    }

    /// Largest magnitude representable in the accumulator width.
    pub fn acc_limit(&self) -> i128 {
        (1i128 << (self.acc_bits - 1)) - 1
    }
}

/// `⌈v⌋` with ties toward +∞.
pub fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Arithmetic right shift rounding ties toward +∞.
pub fn shift_round(v: i64, shift: u32) -> i64 {
    if shift == 0 {
        v
    } else {
        (v + (1i64 << (shift - 1))) >> shift
    }
}

pub(crate) fn fits(value: i128, bits: u32) -> bool {
    let lim = (1i128 << (bits - 1)) - 1;
    (-lim..=lim).contains(&value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_ranges() {
        assert_eq!(CodeRange::new(3, Signedness::Signed), CodeRange { min: -3, max: 3 });
        assert_eq!(CodeRange::new(3, Signedness::Unsigned), CodeRange { min: 0, max: 7 });
        assert_eq!(CodeRange::new(3, Signedness::Unsigned).thresholds(), 7);
        assert_eq!(CodeRange::new(3, Signedness::Signed).thresholds(), 6);
    }

    #[test]
    fn rounding_ties_go_up() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(-2.5), -2);
        assert_eq!(round_half_up(-2.51), -3);
        assert_eq!(shift_round(5, 1), 3);
        assert_eq!(shift_round(-5, 1), -2);
    }

    #[test]
    fn default_params_validate() {
        FixedPointParams::default().validate().unwrap();
        let mut fp = FixedPointParams::default();
        fp.prescale = 24;
        assert!(fp.validate().is_err());
        fp.prescale = 32;
        fp.exp_prescale = 1000;
        assert!(fp.validate().is_err());
    }

    #[test]
    fn quant_code_rejects_out_of_range() {
        assert!(QuantCode::new(4, 3, Signedness::Signed).is_err());
        assert!(QuantCode::new(7, 3, Signedness::Unsigned).is_ok());
        assert!(QuantCode::new(-1, 3, Signedness::Unsigned).is_err());
    }
}
