use super::FixedPointParams;

/// Fraction bits of the `log2(e)` constant multiplier.
pub const LOG2E_FRAC_BITS: u32 = 15;
const LOG2E_FX: i64 = 47274; // round(log2(e) * 2^15)

/// Worst relative error of [`exp_approx`] on `[-8, 0]` with default
/// parameters. The first-order segment alone contributes 0.06148.
pub const EXP_REL_ERROR_BOUND: f64 = 0.0615;

/// Largest exponential output; larger results saturate.
pub const EXP_SATURATION: i64 = 1 << 50;

/// Shift-based exponential.
///
/// `x` is the input scaled by `exp_prescale`. The product `x * log2(e)` is
/// split into an integer part `k` (the shift) and a fraction `f` in
/// `[0, 1)`. The fraction approximates `2^(f-1)` as `f/2 + 1/2`, realized by
/// a one-bit right shift and overwriting the half bit; the result is then
/// shifted left by `k + 1`. The output has `exp_out_frac_bits` fraction bits.
pub fn exp_approx(x: i64, fp: &FixedPointParams) -> i64 {
    let y = ((x as i128 * LOG2E_FX as i128) >> LOG2E_FRAC_BITS) as i64;
    exp2_approx(y, fp)
}

/// Power-of-two stage of [`exp_approx`]; `y` is `x * log2(e)` scaled by
/// `exp_prescale`.
pub fn exp2_approx(y: i64, fp: &FixedPointParams) -> i64 {
    let p = fp.exp_prescale_shift();
    let k = y >> p;
    let f = y & (fp.exp_prescale - 1);
    let lin = (f >> 1) | (1 << (p - 1));
    let shift = k + 1 + fp.exp_out_frac_bits as i64 - p as i64;
    if shift >= 0 {
        let width = 64 - lin.leading_zeros() as i64;
        if width + shift > EXP_SATURATION.trailing_zeros() as i64 {
            log::warn!("exponential saturated for y={y}");
            return EXP_SATURATION;
        }
        lin << shift
    } else if -shift >= 63 {
        0
    } else {
        lin >> -shift
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp() -> FixedPointParams {
        FixedPointParams::default()
    }

    fn to_real(e: i64, fp: &FixedPointParams) -> f64 {
        e as f64 / (1u64 << fp.exp_out_frac_bits) as f64
    }

    #[test]
    fn log2e_constant() {
        assert_eq!(LOG2E_FX, (std::f64::consts::LOG2_E * 32768.0).round() as i64);
    }

    #[test]
    fn zero_is_one() {
        let fp = fp();
        assert_eq!(exp_approx(0, &fp), 1 << fp.exp_out_frac_bits);
    }

    #[test]
    fn monotone_on_dense_grid() {
        let fp = fp();
        let mut prev = i64::MIN;
        for x in (-8 * 1024)..=(4 * 1024) {
            let e = exp_approx(x, &fp);
            assert!(e >= prev, "x={x}");
            prev = e;
        }
    }

    #[test]
    fn shift_linearity() {
        let fp = fp();
        for y in -4096..2048 {
            let a = exp2_approx(y, &fp);
            let b = exp2_approx(y + fp.exp_prescale, &fp);
            if a > (1 << 12) {
                assert_eq!(b, 2 * a, "y={y}");
            }
        }
    }

    #[test]
    fn saturates_large_inputs() {
        let fp = fp();
        assert_eq!(exp_approx(1024 * 100, &fp), EXP_SATURATION);
        assert_eq!(exp_approx(-1024 * 100, &fp), 0);
    }

    #[test]
    fn first_order_error_band() {
        let fp = fp();
        for i in 0..=8 * 1024 {
            let x = -(i as f64) / 1024.0;
            let e = to_real(exp_approx(-i, &fp), &fp);
            let rel = (e - x.exp()).abs() / x.exp();
            assert!(rel < EXP_REL_ERROR_BOUND, "x={x} rel={rel}");
        }
    }
}
