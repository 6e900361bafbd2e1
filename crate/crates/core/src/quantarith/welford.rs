use super::{fits, round_half_up, FixedPointParams};
use crate::error::{Error, Result};

/// Real-valued Welford running statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WelfordState {
    pub count: u64,
    pub mean: f64,
    /// Sum of squared deviations.
    pub m2: f64,
}

impl WelfordState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(self, x: f64) -> Self {
        let count = self.count + 1;
        let delta = x - self.mean;
        let mean = self.mean + delta / count as f64;
        let m2 = self.m2 + delta * (x - mean);
        WelfordState { count, mean, m2 }
    }

    pub fn population_variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

/// `entry[i] = ⌈2^ν / i⌋` for `1 <= i <= max_i`; index 0 is unused.
pub fn reciprocal_table(nu_exp: u32, max_i: usize) -> Vec<i64> {
    assert!(max_i >= 1);
    let num = (1u64 << nu_exp) as f64;
    std::iter::once(0)
        .chain((1..=max_i).map(|i| round_half_up(num / i as f64)))
        .collect()
}

/// Variance as an unreduced ratio `num / den`, so consumers never divide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedVariance {
    pub num: i64,
    pub den: i64,
}

/// Fixed-point running statistics over prescaled inputs.
///
/// Inputs arrive with `postmac_frac_bits` fraction bits and are rounded to
/// `s * x`. `mean` tracks the mean of `s * x`; `m2` tracks the sum of squared
/// deviations in the same units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WelfordFixed {
    pub count: u32,
    pub mean: i64,
    pub m2: i64,
}

impl WelfordFixed {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rounds a post-MAC value to the prescaled integer `⌈s * x⌋`.
    pub fn prescale(x: i64, fp: &FixedPointParams) -> i64 {
        let shifted = (x as i128) << fp.prescale_shift();
        let f = fp.postmac_frac_bits;
        if f == 0 {
            shifted as i64
        } else {
            ((shifted + (1i128 << (f - 1))) >> f) as i64
        }
    }

    pub fn update(self, x: i64, recip: &[i64], fp: &FixedPointParams) -> Result<Self> {
        self.update_prescaled(Self::prescale(x, fp), recip, fp)
    }

    /// One update step on an already prescaled input.
    pub fn update_prescaled(self, p: i64, recip: &[i64], fp: &FixedPointParams) -> Result<Self> {
        let count = self.count + 1;
        let r = *recip.get(count as usize).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "reciprocal table covers {} entries, needed {}",
                recip.len().saturating_sub(1),
                count
            ))
        })?;
        let check = |v: i128| {
            if fits(v, fp.acc_bits) {
                Ok(v as i64)
            } else {
                Err(Error::StatisticsOverflow {
                    value: v,
                    bits: fp.acc_bits,
                })
            }
        };
        let dev_prev = check(p as i128 - self.mean as i128)?;
        let step = check(round_shift(r as i128 * dev_prev as i128, fp.nu_exp))?;
        let mean = check(self.mean as i128 + step as i128)?;
        let dev_new = p as i128 - mean as i128;
        let m2 = check(self.m2 as i128 + dev_prev as i128 * dev_new)?;
        debug_assert!(m2 >= self.m2);
        Ok(WelfordFixed { count, mean, m2 })
    }

    pub fn variance(&self) -> FixedVariance {
        FixedVariance {
            num: self.m2,
            den: self.count.max(1) as i64,
        }
    }

    /// Mean and population variance scaled back to input units.
    pub fn to_real(&self, fp: &FixedPointParams) -> (f64, f64) {
        let s = fp.prescale as f64;
        let var = self.m2 as f64 / self.count.max(1) as f64;
        (self.mean as f64 / s, var / (s * s))
    }
}

/// Relative error of fixed-point statistics against real Welford, one
/// value per sequence: `|Δmean| / σ + |Δvar| / σ²`. Inputs are rounded to
/// `postmac_frac_bits` fraction bits first; constant sequences are skipped.
pub fn fixed_stats_errors(seqs: &[Vec<f64>], fp: &FixedPointParams) -> Result<Vec<f64>> {
    let scale = (1u64 << fp.postmac_frac_bits) as f64;
    let mut out = Vec::with_capacity(seqs.len());
    for xs in seqs {
        let recip = reciprocal_table(fp.nu_exp, xs.len().max(1));
        let mut fixed = WelfordFixed::new();
        let mut real = WelfordState::new();
        for &x in xs {
            let code = (x * scale).round();
            fixed = fixed.update(code as i64, &recip, fp)?;
            real = real.update(code / scale);
        }
        let var = real.population_variance();
        if var > 0.0 {
            let (m, v) = fixed.to_real(fp);
            out.push((m - real.mean).abs() / var.sqrt() + (v - var).abs() / var);
        }
    }
    Ok(out)
}

/// Mean of [`fixed_stats_errors`]; 0 when every sequence is constant.
pub fn fixed_stats_error(seqs: &[Vec<f64>], fp: &FixedPointParams) -> Result<f64> {
    let e = fixed_stats_errors(seqs, fp)?;
    Ok(if e.is_empty() { 0.0 } else { e.iter().sum::<f64>() / e.len() as f64 })
}

fn round_shift(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        v
    } else {
        (v + (1i128 << (shift - 1))) >> shift
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        (mean, m2)
    }

    #[test]
    fn constant_sequence() {
        let s = [4.25; 3].iter().fold(WelfordState::new(), |s, &x| s.update(x));
        assert_eq!(s.mean, 4.25);
        assert_eq!(s.m2, 0.0);
    }

    #[test]
    fn one_to_four() {
        let s = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .fold(WelfordState::new(), |s, &x| s.update(x));
        let (mean, m2) = two_pass(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((mean, m2), (2.5, 5.0));
        assert_eq!(s.mean, mean);
        assert_eq!(s.m2, m2);
        assert_eq!(s.population_variance(), 1.25);
    }

    #[test]
    fn reciprocal_examples() {
        let t = reciprocal_table(6, 64);
        assert_eq!(&t[1..4], &[64, 32, 21]);
        assert_eq!(t[64], 1);
        let t0 = reciprocal_table(0, 8);
        assert_eq!(t0[1], 1);
        assert!(t0[2..].iter().all(|&r| r == 0 || r == 1));
    }

    #[test]
    fn fixed_first_update_is_exact() {
        let fp = FixedPointParams::default();
        let recip = reciprocal_table(fp.nu_exp, 8);
        let x = 3 << fp.postmac_frac_bits;
        let s = WelfordFixed::new().update(x, &recip, &fp).unwrap();
        assert_eq!(s.mean, 3 * fp.prescale);
        assert_eq!(s.m2, 0);
    }

    #[test]
    fn fixed_constant_has_zero_m2() {
        for nu in [0, 2, 6, 10] {
            for s in [1, 4, 32] {
                let fp = FixedPointParams {
                    nu_exp: nu,
                    prescale: s,
                    ..Default::default()
                };
                let recip = reciprocal_table(nu, 16);
                let x = 12345;
                let st = (0..16).try_fold(WelfordFixed::new(), |st, _| st.update(x, &recip, &fp));
                assert_eq!(st.unwrap().m2, 0);
            }
        }
    }

    #[test]
    fn fixed_overflow_is_an_error() {
        let fp = FixedPointParams {
            acc_bits: 16,
            ..Default::default()
        };
        let recip = reciprocal_table(fp.nu_exp, 4);
        let big = 5000i64 << fp.postmac_frac_bits;
        let r = WelfordFixed::new()
            .update(big, &recip, &fp)
            .and_then(|s| s.update(-big, &recip, &fp));
        assert!(matches!(r, Err(Error::StatisticsOverflow { .. })));
    }
}
