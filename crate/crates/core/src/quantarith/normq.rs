use super::{round_half_up, CodeRange, FixedVariance, Signedness};
use crate::error::{Error, Result};

/// One decision threshold `s_j` of the layer-norm quantizer, folded through
/// the affine parameters: `lin = (s_j - β) / |γ|`. The comparator works on
/// `(s_j - β)²` in fixed point and scales the other side by `γ²`, so dyadic
/// `γ`, `β` and steps give exact comparisons, ties included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormThreshold {
    pub lin: f64,
    pub lin_positive: bool,
    /// `(s_j - β)²` with `frac_bits` fraction bits.
    pub sq_fx: i64,
}

/// Division-free, square-root-free `q(γ(x-µ)/σ + β)` for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NormQParams {
    pub gamma: f64,
    pub beta: f64,
    pub step: f64,
    pub range: CodeRange,
    pub frac_bits: u32,
    /// γ < 0 mirrors the deviation.
    pub negate: bool,
    /// `γ²` with `frac_bits` fraction bits.
    pub gamma_sq_fx: i64,
    pub thresholds: Vec<NormThreshold>,
}

impl NormQParams {
    pub fn new(gamma: f64, beta: f64, step: f64, bits: u8, frac_bits: u32) -> Result<Self> {
        if gamma == 0.0 || !gamma.is_finite() {
            return Err(Error::DegenerateGamma);
        }
        if !(step > 0.0) {
            return Err(Error::NonPositiveStep(step));
        }
        let range = CodeRange::new(bits, Signedness::Signed);
        let scale = (1u64 << frac_bits) as f64;
        let thresholds = (range.min..range.max)
            .map(|k| {
                let s = (k as f64 + 0.5) * step;
                let lin = (s - beta) / gamma.abs();
                NormThreshold {
                    lin,
                    lin_positive: s > beta,
                    sq_fx: round_half_up((s - beta) * (s - beta) * scale),
                }
            })
            .collect();
        Ok(NormQParams {
            gamma,
            beta,
            step,
            range,
            frac_bits,
            negate: gamma < 0.0,
            gamma_sq_fx: round_half_up(gamma * gamma * scale),
            thresholds,
        })
    }

    pub fn quantize(&self, x: i64, mean: i64, var: FixedVariance) -> i32 {
        self.quantize_dev(x - mean, var)
    }

    /// Two-stage comparison on the deviation `x - µ`.
    ///
    /// Stage one compares `γ² (x-µ)²` against `(s_j-β)² σ²` and takes the
    /// signs of `x-µ` and `lin`. Stage two:
    ///
    /// | x-µ > 0 | lin > 0 | pass                |
    /// |---------|---------|---------------------|
    /// | yes     | no      | always              |
    /// | no      | yes     | never               |
    /// | yes     | yes     | `(x-µ)² >= lin² σ²` |
    /// | no      | no      | `(x-µ)² <= lin² σ²` |
    pub fn quantize_dev(&self, dev: i64, var: FixedVariance) -> i32 {
        let d = if self.negate { -dev } else { dev } as i128;
        let lhs = d * d * var.den as i128 * self.gamma_sq_fx as i128;
        let positive = d > 0;
        let passed = self
            .thresholds
            .iter()
            .filter(|t| {
                let rhs = t.sq_fx as i128 * var.num as i128;
                match (positive, t.lin_positive) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => lhs >= rhs,
                    (false, false) => lhs <= rhs,
                }
            })
            .count();
        self.range.min + passed as i32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantarith::quantize_linear;

    fn real_code(dev: f64, sigma: f64, p: &NormQParams) -> i32 {
        let v = if sigma == 0.0 {
            p.beta
        } else {
            p.gamma * (dev / sigma) + p.beta
        };
        quantize_linear(v, p.step, 3, Signedness::Signed).unwrap().code
    }

    #[test]
    fn degenerate_gamma() {
        assert_eq!(NormQParams::new(0.0, 0.0, 0.5, 3, 16), Err(Error::DegenerateGamma));
    }

    #[test]
    fn mean_input_gives_middle_code() {
        let p = NormQParams::new(1.0, 0.0, 0.5, 3, 16).unwrap();
        let var = FixedVariance { num: 9, den: 1 };
        assert_eq!(p.quantize(7, 7, var), 0);
        // zero variance falls back to the sign logic
        assert_eq!(p.quantize(7, 7, FixedVariance { num: 0, den: 4 }), 0);
    }

    #[test]
    fn thresholds_increase_and_square() {
        let p = NormQParams::new(1.5, 0.25, 0.5, 3, 16).unwrap();
        for w in p.thresholds.windows(2) {
            assert!(w[0].lin < w[1].lin);
        }
        assert_eq!(p.gamma_sq_fx, 147456);
        for t in &p.thresholds {
            let sq = t.lin * t.lin * 2.25 * 65536.0;
            assert!((t.sq_fx as f64 - sq).abs() <= 0.5);
        }
    }

    #[test]
    fn exhaustive_sign_quadrants() {
        let k = 12i64;
        for gamma in [1.0, 2.0, 0.5, -1.0, -2.0] {
            for beta in [0.0, 0.25, -0.5, 0.75] {
                let p = NormQParams::new(gamma, beta, 0.5, 3, 16).unwrap();
                for sigma in 1..=k {
                    let var = FixedVariance {
                        num: sigma * sigma,
                        den: 1,
                    };
                    for dev in -k..=k {
                        assert_eq!(
                            p.quantize_dev(dev, var),
                            real_code(dev as f64, sigma as f64, &p),
                            "γ={gamma} β={beta} σ={sigma} dev={dev}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn negative_gamma_mirrors() {
        let pos = NormQParams::new(1.0, 0.0, 0.5, 3, 16).unwrap();
        let neg = NormQParams::new(-1.0, 0.0, 0.5, 3, 16).unwrap();
        let var = FixedVariance { num: 16, den: 1 };
        for dev in -20..=20 {
            // q(-v) = -q(v) except at exact ties, which round upward
            let a = neg.quantize_dev(dev, var);
            let b = pos.quantize_dev(-dev, var);
            assert_eq!(a, b);
        }
    }
}
