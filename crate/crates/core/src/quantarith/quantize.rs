use super::{round_half_up, CodeRange, QuantCode, Signedness};
use crate::error::{Error, Result};

/// Reference quantizer: `clamp(⌈x/step⌋)` in real arithmetic.
pub fn quantize_linear(x: f64, step: f64, bits: u8, signedness: Signedness) -> Result<QuantCode> {
    if !x.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    if !(step > 0.0) {
        return Err(Error::NonPositiveStep(step));
    }
    let range = CodeRange::new(bits, signedness);
    let code = range.clamp(round_half_up(x / step));
    Ok(QuantCode {
        code,
        bits,
        signedness,
    })
}

/// Seven-comparator unsigned 3-bit quantizer.
///
/// `x` and `step` share one fixed-point format. Comparator `i` fires when
/// `x >= (i + 1/2) * step`, evaluated as `2x >= (2i + 1) * step` so no
/// fraction bit is lost.
pub fn comparator_quantize(x: i64, step: i64) -> QuantCode {
    assert!(step > 0, "comparator step must be positive");
    let fired = (0..7i64)
        .filter(|&i| 2 * x as i128 >= (2 * i + 1) as i128 * step as i128)
        .count();
    QuantCode {
        code: fired as i32,
        bits: 3,
        signedness: Signedness::Unsigned,
    }
}

/// Threshold ROM for [`scale_quantize`]: `(j + 1/2) * step` in `frac_bits`
/// fixed point for the `2^bits - 1` unsigned decision levels.
pub fn scale_step_table(step: f64, bits: u8, frac_bits: u32) -> Vec<i64> {
    let n = CodeRange::new(bits, Signedness::Unsigned).thresholds();
    (0..n)
        .map(|j| round_half_up((j as f64 + 0.5) * step * (1u64 << frac_bits) as f64))
        .collect()
}

/// Dynamically scaled quantizer: counts thresholds with `x >= scale * table[j]`.
///
/// With `x = exp(z_i)` and `scale = Σ exp(z_j)` this quantizes the softmax
/// probability without dividing.
pub fn scale_quantize(x: i64, scale: i64, table: &[i64], frac_bits: u32) -> Result<QuantCode> {
    if scale <= 0 {
        return Err(Error::NonPositiveScale);
    }
    let lhs = (x as i128) << frac_bits;
    let fired = table
        .iter()
        .filter(|&&t| lhs >= scale as i128 * t as i128)
        .count();
    let bits = (table.len() + 1).trailing_zeros() as u8;
    Ok(QuantCode {
        code: fired as i32,
        bits,
        signedness: Signedness::Unsigned,
    })
}

/// Comparator-bank quantizer over integer inputs of a known real unit.
///
/// Input `x` represents `x * unit`; the output is `clamp(⌈x*unit/step⌋)`.
/// Thresholds are stored as `ceil((k + 1/2) * step / unit * 2^frac)`, which
/// makes the integer comparison exact whenever that product is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedQuantizer {
    pub range: CodeRange,
    pub bits: u8,
    pub signedness: Signedness,
    pub frac_bits: u32,
    pub thresholds: Vec<i64>,
}

impl FixedQuantizer {
    pub fn new(unit: f64, step: f64, bits: u8, signedness: Signedness, frac_bits: u32) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::NonPositiveStep(step));
        }
        if !(unit > 0.0) || !unit.is_finite() {
            return Err(Error::InvalidConfig(format!("quantizer unit {unit} must be positive")));
        }
        let range = CodeRange::new(bits, signedness);
        let scale = (1u64 << frac_bits) as f64;
        let thresholds = (range.min..range.max)
            .map(|k| ((k as f64 + 0.5) * step / unit * scale).ceil() as i64)
            .collect();
        Ok(FixedQuantizer {
            range,
            bits,
            signedness,
            frac_bits,
            thresholds,
        })
    }

    pub fn quantize(&self, x: i64) -> i32 {
        let lhs = (x as i128) << self.frac_bits;
        let fired = self.thresholds.iter().filter(|&&t| lhs >= t as i128).count();
        self.range.min + fired as i32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_linear_examples() {
        let c = quantize_linear(0.0, 0.5, 3, Signedness::Signed).unwrap();
        assert_eq!(c.code, 0);
        // 1.3 / 0.5 = 2.6 rounds to 3
        let c = quantize_linear(1.3, 0.5, 3, Signedness::Unsigned).unwrap();
        assert_eq!(c.code, 3);
        let c = quantize_linear(100.0, 0.5, 3, Signedness::Signed).unwrap();
        assert_eq!(c.code, 3);
        let c = quantize_linear(-100.0, 0.5, 3, Signedness::Signed).unwrap();
        assert_eq!(c.code, -3);
    }

    #[test]
    fn quantize_linear_errors() {
        assert_eq!(
            quantize_linear(f64::NAN, 0.5, 3, Signedness::Signed),
            Err(Error::NonFiniteInput)
        );
        assert!(quantize_linear(1.0, 0.0, 3, Signedness::Signed).is_err());
    }

    #[test]
    fn comparator_examples() {
        assert_eq!(comparator_quantize(0, 4).code, 0);
        // tie at 2.5 * step resolves upward, like round-half-up
        assert_eq!(comparator_quantize(10, 4).code, 3);
        assert_eq!(comparator_quantize(9, 4).code, 2);
        assert_eq!(comparator_quantize(1000, 4).code, 7);
        assert_eq!(comparator_quantize(-5, 4).code, 0);
    }

    #[test]
    fn comparator_matches_linear_on_grid() {
        // x in units of 1/256, steps are small integers in the same units
        for step in [1i64, 3, 4, 7, 16, 37] {
            for x in -64..(16 * step + 64) {
                let a = comparator_quantize(x, step).code;
                let b = quantize_linear(x as f64 / 256.0, step as f64 / 256.0, 3, Signedness::Unsigned)
                    .unwrap()
                    .code;
                assert_eq!(a, b, "x={x} step={step}");
            }
        }
    }

    #[test]
    fn scale_quantize_examples() {
        let table = scale_step_table(0.125, 3, 16);
        assert_eq!(table.len(), 7);
        let scale = 1 << 20;
        let above = ((scale as i128 * table[6] as i128) >> 16) as i64 + 1;
        assert_eq!(scale_quantize(above, scale, &table, 16).unwrap().code, 7);
        // a single-token softmax is exactly one
        assert_eq!(scale_quantize(scale, scale, &table, 16).unwrap().code, 7);
        assert_eq!(scale_quantize(0, scale, &table, 16).unwrap().code, 0);
        assert_eq!(scale_quantize(5, 0, &table, 16), Err(Error::NonPositiveScale));
    }

    #[test]
    fn scale_quantize_halves() {
        let table = scale_step_table(0.125, 3, 16);
        // p = 0.5 -> 4
        assert_eq!(scale_quantize(500, 1000, &table, 16).unwrap().code, 4);
    }

    #[test]
    fn fixed_quantizer_signed() {
        let q = FixedQuantizer::new(1.0 / 16.0, 0.5, 3, Signedness::Signed, 8).unwrap();
        for x in -80i64..80 {
            let expect = quantize_linear(x as f64 / 16.0, 0.5, 3, Signedness::Signed)
                .unwrap()
                .code;
            assert_eq!(q.quantize(x), expect, "x={x}");
        }
    }
}
