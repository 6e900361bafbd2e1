//! Self-checks of the fixed-point kernels against their real-valued
//! definitions, runnable from the command line.

use super::{
    comparator_quantize, exp_approx, quantize_linear, FixedPointParams, FixedVariance, NormQParams, Signedness,
    EXP_REL_ERROR_BOUND,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checked: u64,
    pub failures: u64,
    pub detail: String,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Comparator quantizer against `quantize_linear` for steps `1..=128` (in
/// units of 2^-8) and inputs spanning the whole code range plus margins.
pub fn comparator_grid() -> SuiteResult {
    let (mut checked, mut failures, mut first) = (0, 0, String::new());
    for step in 1i64..=128 {
        for x in -64..(16 * step + 64) {
            let a = comparator_quantize(x, step).code;
            let b = quantize_linear(x as f64 / 256.0, step as f64 / 256.0, 3, Signedness::Unsigned)
                .map(|c| c.code)
                .unwrap_or(i32::MIN);
            checked += 1;
            if a != b {
                failures += 1;
                if first.is_empty() {
                    first = format!("x={x} step={step}: {a} != {b}");
                }
            }
        }
    }
    SuiteResult {
        name: "comparator_quantize",
        checked,
        failures,
        detail: first,
    }
}

/// Layer-norm quantizer against real normalize-then-quantize on integer
/// deviations and standard deviations, across all sign combinations of
/// `γ`, `β` and the deviation.
pub fn normq_grid() -> SuiteResult {
    let (mut checked, mut failures, mut first) = (0, 0, String::new());
    let k = 16i64;
    for gamma in [0.5, 1.0, 1.5, 2.0, -0.5, -1.0, -2.0] {
        for beta in [-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75] {
            let p = match NormQParams::new(gamma, beta, 0.5, 3, 16) {
                Ok(p) => p,
                Err(e) => {
                    return SuiteResult {
                        name: "normq",
                        checked,
                        failures: failures + 1,
                        detail: e.to_string(),
                    }
                }
            };
            for sigma in 1..=k {
                let var = FixedVariance {
                    num: sigma * sigma,
                    den: 1,
                };
                for dev in -3 * k..=3 * k {
                    let real = gamma * (dev as f64 / sigma as f64) + beta;
                    let expect = quantize_linear(real, 0.5, 3, Signedness::Signed)
                        .map(|c| c.code)
                        .unwrap_or(i32::MIN);
                    let got = p.quantize_dev(dev, var);
                    checked += 1;
                    if got != expect {
                        failures += 1;
                        if first.is_empty() {
                            first = format!("γ={gamma} β={beta} σ={sigma} dev={dev}: {got} != {expect}");
                        }
                    }
                }
            }
        }
    }
    SuiteResult {
        name: "normq",
        checked,
        failures,
        detail: first,
    }
}

/// Monotonicity of the exponential on every input in `[-8, 0]` and the
/// worst relative error against the frozen bound.
pub fn exp_grid(fp: &FixedPointParams) -> SuiteResult {
    let lo = -8 * fp.exp_prescale;
    let one = (1u64 << fp.exp_out_frac_bits) as f64;
    let (mut failures, mut worst, mut prev, mut first) = (0, 0.0f64, i64::MIN, String::new());
    for x in lo..=0 {
        let e = exp_approx(x, fp);
        if e < prev {
            failures += 1;
            if first.is_empty() {
                first = format!("not monotone at x={x}");
            }
        }
        prev = e;
        let real = (x as f64 / fp.exp_prescale as f64).exp();
        worst = worst.max((e as f64 / one - real).abs() / real);
    }
    if worst > EXP_REL_ERROR_BOUND {
        failures += 1;
        first = format!("relative error {worst:.5} exceeds {EXP_REL_ERROR_BOUND}");
    }
    SuiteResult {
        name: "exp_approx",
        checked: (-lo + 1) as u64,
        failures,
        detail: if first.is_empty() {
            format!("max relative error {worst:.5}")
        } else {
            first
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        let c = comparator_grid();
        assert!(c.passed() && c.checked >= 100_000, "{c:?}");
        let n = normq_grid();
        assert!(n.passed(), "{n:?}");
        let e = exp_grid(&FixedPointParams::default());
        assert!(e.passed(), "{e:?}");
    }
}
