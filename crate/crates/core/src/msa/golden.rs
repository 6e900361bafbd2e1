use rayon::prelude::*;

use super::params::{HeadParams, SaParams};
use super::tensor::{int_matmul, int_matmul_transposed, IntMatrix, Matrix, QuantTensor, StepSize};
use crate::error::{Error, Result};
use crate::quantarith::{
    exp_approx, reciprocal_table, round_half_up, scale_quantize, scale_step_table, shift_round,
    FixedPointParams, FixedQuantizer, NormQParams, Signedness, WelfordFixed,
};

/// Fraction bits of the fixed-point softmax input multiplier.
pub const LOGIT_FRAC_BITS: u32 = 8;

/// Which projection of a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Proj {
    Q = 0,
    K = 1,
    V = 2,
}

/// Raw accumulators of the three projections of one head, with the
/// dequantization factors `Δ̄_z · Δ_U[j]` kept beside them.
#[derive(Debug, Clone, PartialEq)]
pub struct QkvAccumulators {
    pub q: IntMatrix,
    pub k: IntMatrix,
    pub v: IntMatrix,
    pub scale: [Vec<f64>; 3],
}

impl QkvAccumulators {
    pub fn get(&self, p: Proj) -> &IntMatrix {
        match p {
            Proj::Q => &self.q,
            Proj::K => &self.k,
            Proj::V => &self.v,
        }
    }

    /// Real value of one accumulator entry, without bias.
    pub fn dequantize(&self, p: Proj, r: usize, c: usize) -> f64 {
        self.get(p).get(r, c) as f64 * self.scale[p as usize][c]
    }
}

/// Exact integer projection of `z3b` onto one head's weights.
pub fn qkv_project(z3b: &QuantTensor, params: &SaParams, head: usize) -> Result<QkvAccumulators> {
    let hp = params.head(head)?;
    if z3b.rows != params.dims.n_tokens || z3b.cols != params.dims.embed_dim {
        return Err(Error::ShapeMismatch {
            op: "qkv_project",
            expected: format!("{}x{}", params.dims.n_tokens, params.dims.embed_dim),
            got: format!("{}x{}", z3b.rows, z3b.cols),
        });
    }
    let z_step = z3b.global_step().unwrap_or(params.z_step);
    let scale = |u: &QuantTensor| (0..u.cols).map(|j| z_step * u.step.for_column(j)).collect();
    Ok(QkvAccumulators {
        q: int_matmul(z3b, &hp.u_q)?,
        k: int_matmul(z3b, &hp.u_k)?,
        v: int_matmul(z3b, &hp.u_v)?,
        scale: [scale(&hp.u_q), scale(&hp.u_k), scale(&hp.u_v)],
    })
}

/// Every fixed-point constant one head needs, derived once from the
/// real-valued parameters. The simulator loads the same constants.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadKernels {
    pub fp: FixedPointParams,
    pub bits: u8,
    /// `⌈Δ̄_z Δ_U[j] 2^F⌋` per projection and channel.
    pub postmac_mult: [Vec<i64>; 3],
    /// `⌈b[j] 2^F⌋`.
    pub bias_fx: [Vec<i64>; 3],
    pub recip: Vec<i64>,
    pub normq_q: Vec<NormQParams>,
    pub normq_k: Vec<NormQParams>,
    pub v_quant: FixedQuantizer,
    pub logit_mult: i64,
    pub a_table: Vec<i64>,
    pub sa_quant: FixedQuantizer,
    pub ln_step: f64,
    pub v_step: f64,
    pub a_step: f64,
    pub sa_step: f64,
}

impl HeadKernels {
    pub fn new(params: &SaParams, head: usize, fp: &FixedPointParams) -> Result<Self> {
        fp.validate()?;
        let hp: &HeadParams = params.head(head)?;
        let bits = params.dims.bits;
        let f = fp.postmac_frac_bits;
        let one = (1u64 << f) as f64;
        let mult = |u: &QuantTensor| -> Vec<i64> {
            (0..u.cols)
                .map(|j| round_half_up(params.z_step * u.step.for_column(j) * one))
                .collect()
        };
        let bias = |b: &[f64]| -> Vec<i64> { b.iter().map(|&v| round_half_up(v * one)).collect() };
        let normq = |g: &[f64], b: &[f64]| -> Result<Vec<NormQParams>> {
            g.iter()
                .zip(b)
                .map(|(&g, &b)| NormQParams::new(g, b, params.ln_step, bits, fp.thresh_frac_bits))
                .collect()
        };
        let logit = params.effective_softmax_scale() * fp.exp_prescale as f64 * (1u64 << LOGIT_FRAC_BITS) as f64;
        Ok(HeadKernels {
            fp: *fp,
            bits,
            postmac_mult: [mult(&hp.u_q), mult(&hp.u_k), mult(&hp.u_v)],
            bias_fx: [bias(&hp.b_q), bias(&hp.b_k), bias(&hp.b_v)],
            recip: reciprocal_table(fp.nu_exp, params.dims.head_dim()),
            normq_q: normq(&hp.gamma_q, &hp.beta_q)?,
            normq_k: normq(&hp.gamma_k, &hp.beta_k)?,
            v_quant: FixedQuantizer::new(1.0 / one, hp.v_step, bits, Signedness::Signed, 0)?,
            logit_mult: round_half_up(logit),
            a_table: scale_step_table(params.a_step, bits, fp.thresh_frac_bits),
            sa_quant: FixedQuantizer::new(
                params.a_step * hp.v_step,
                params.sa_step,
                bits,
                Signedness::Signed,
                0,
            )?,
            ln_step: params.ln_step,
            v_step: hp.v_step,
            a_step: params.a_step,
            sa_step: params.sa_step,
        })
    }

    /// Post-MAC unit: `acc · mult + bias`, a fixed-point value with
    /// `postmac_frac_bits` fraction bits.
    pub fn postmac(&self, p: Proj, col: usize, acc: i64) -> i64 {
        acc * self.postmac_mult[p as usize][col] + self.bias_fx[p as usize][col]
    }

    fn normq(&self, p: Proj) -> &[NormQParams] {
        match p {
            Proj::Q => &self.normq_q,
            Proj::K => &self.normq_k,
            Proj::V => panic!("V is not layer-normalized"),
        }
    }

    /// Layer-norm quantization of one accumulator row: running statistics
    /// left to right over the channels, then one NormQ per channel.
    pub fn layernorm_quantize_row(&self, p: Proj, acc: &[i64]) -> Result<Vec<i32>> {
        let pre: Vec<i64> = acc
            .iter()
            .enumerate()
            .map(|(j, &a)| WelfordFixed::prescale(self.postmac(p, j, a), &self.fp))
            .collect();
        let stats = pre
            .iter()
            .try_fold(WelfordFixed::new(), |s, &x| s.update_prescaled(x, &self.recip, &self.fp))?;
        let var = stats.variance();
        Ok(self
            .normq(p)
            .iter()
            .zip(&pre)
            .map(|(nq, &x)| nq.quantize(x, stats.mean, var))
            .collect())
    }

    pub fn layernorm_quantize_rows(&self, p: Proj, acc: &IntMatrix) -> Result<QuantTensor> {
        let mut codes = Vec::with_capacity(acc.data.len());
        for r in 0..acc.rows {
            codes.extend(self.layernorm_quantize_row(p, acc.row(r))?);
        }
        QuantTensor::new(acc.rows, acc.cols, self.bits, Signedness::Signed, StepSize::Global(self.ln_step), codes)
    }

    pub fn quantize_v(&self, acc: &IntMatrix) -> Result<QuantTensor> {
        let codes = acc
            .data
            .iter()
            .enumerate()
            .map(|(i, &a)| self.v_quant.quantize(self.postmac(Proj::V, i % acc.cols, a)))
            .collect();
        QuantTensor::new(acc.rows, acc.cols, self.bits, Signedness::Signed, StepSize::Global(self.v_step), codes)
    }

    /// Fixed-point softmax input `⌈S · scale · P⌋` for a raw `Q̃K̃ᵀ` entry.
    pub fn logit(&self, s: i64) -> i64 {
        shift_round(s * self.logit_mult, LOGIT_FRAC_BITS)
    }

    /// Softmax quantization of one score row: exponentials, a left-to-right
    /// running sum, then the division-free scaled quantizer.
    pub fn softmax_row(&self, scores: &[i64]) -> Result<Vec<i32>> {
        let e: Vec<i64> = scores.iter().map(|&s| exp_approx(self.logit(s), &self.fp)).collect();
        let sum = e.iter().fold(0i64, |acc, &x| acc.saturating_add(x));
        e.iter()
            .map(|&x| scale_quantize(x, sum, &self.a_table, self.fp.thresh_frac_bits).map(|c| c.code))
            .collect()
    }

    pub fn attention_scores(&self, q3b: &QuantTensor, k3b: &QuantTensor) -> Result<QuantTensor> {
        let s = int_matmul_transposed(q3b, k3b)?;
        let mut codes = Vec::with_capacity(s.data.len());
        for r in 0..s.rows {
            codes.extend(self.softmax_row(s.row(r))?);
        }
        QuantTensor::new(s.rows, s.cols, self.bits, Signedness::Unsigned, StepSize::Global(self.a_step), codes)
    }

    pub fn weighted_value(&self, a3b: &QuantTensor, v3b: &QuantTensor) -> Result<QuantTensor> {
        let acc = int_matmul(a3b, v3b)?;
        let codes = acc.data.iter().map(|&x| self.sa_quant.quantize(x)).collect();
        QuantTensor::new(acc.rows, acc.cols, self.bits, Signedness::Signed, StepSize::Global(self.sa_step), codes)
    }
}

/// Every intermediate tensor of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub q3b: QuantTensor,
    pub k3b: QuantTensor,
    pub v3b: QuantTensor,
    pub a3b: QuantTensor,
    pub sa3b: QuantTensor,
}

pub fn sa_head(z3b: &QuantTensor, params: &SaParams, head: usize, fp: &FixedPointParams) -> Result<HeadOutputs> {
    let kernels = HeadKernels::new(params, head, fp)?;
    let acc = qkv_project(z3b, params, head)?;
    let q3b = kernels.layernorm_quantize_rows(Proj::Q, &acc.q)?;
    let k3b = kernels.layernorm_quantize_rows(Proj::K, &acc.k)?;
    let v3b = kernels.quantize_v(&acc.v)?;
    let a3b = kernels.attention_scores(&q3b, &k3b)?;
    let sa3b = kernels.weighted_value(&a3b, &v3b)?;
    Ok(HeadOutputs {
        q3b,
        k3b,
        v3b,
        a3b,
        sa3b,
    })
}

/// All heads, evaluated in parallel. Heads share nothing, so the result is
/// identical to [`msa_heads_serial`].
pub fn msa_heads(z3b: &QuantTensor, params: &SaParams, fp: &FixedPointParams) -> Result<Vec<HeadOutputs>> {
    (0..params.dims.heads)
        .into_par_iter()
        .map(|h| sa_head(z3b, params, h, fp))
        .collect()
}

pub fn msa_heads_serial(z3b: &QuantTensor, params: &SaParams, fp: &FixedPointParams) -> Result<Vec<HeadOutputs>> {
    (0..params.dims.heads).map(|h| sa_head(z3b, params, h, fp)).collect()
}

/// Host-side tail: concatenation, low-bit projection, dequantization and the
/// residual connection.
pub fn msa_host_side(
    sa_heads: &[QuantTensor],
    heads: usize,
    u_msa: &QuantTensor,
    z_full: &Matrix,
) -> Result<Matrix> {
    if sa_heads.len() < heads {
        return Err(Error::MissingHead(sa_heads.len()));
    }
    let sa_heads = &sa_heads[..heads];
    let step = sa_heads[0]
        .global_step()
        .ok_or_else(|| Error::InvalidConfig("SA outputs need a global step".into()))?;
    if sa_heads.iter().any(|t| t.global_step() != Some(step) || t.rows != sa_heads[0].rows) {
        return Err(Error::InvalidConfig("SA heads disagree on step or row count".into()));
    }
    let rows = sa_heads[0].rows;
    let width: usize = sa_heads.iter().map(|t| t.cols).sum();
    let mut concat = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for t in sa_heads {
            concat.extend_from_slice(t.row(r));
        }
    }
    let cat = QuantTensor::new(rows, width, sa_heads[0].bits, Signedness::Signed, StepSize::Global(step), concat)?;
    let acc = int_matmul(&cat, u_msa)?;
    if (z_full.rows, z_full.cols) != (acc.rows, acc.cols) {
        return Err(Error::ShapeMismatch {
            op: "msa_host_side residual",
            expected: format!("{}x{}", acc.rows, acc.cols),
            got: format!("{}x{}", z_full.rows, z_full.cols),
        });
    }
    let mut out = z_full.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v += acc.data[i] as f64 * (step * u_msa.step.for_column(i % acc.cols));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msa::{ModelDims, SyntheticModel};
    use crate::quantarith::{quantize_linear, CodeRange};

    fn toy() -> SyntheticModel {
        SyntheticModel::generate(ModelDims::toy(), 11).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_accumulators() {
        let m = toy();
        let z = QuantTensor::zeros(8, 12, 3, Signedness::Signed, StepSize::Global(m.sa.z_step));
        let acc = qkv_project(&z, &m.sa, 0).unwrap();
        assert!(acc.q.data.iter().chain(&acc.k.data).chain(&acc.v.data).all(|&v| v == 0));
    }

    #[test]
    fn qkv_shape_mismatch() {
        let m = toy();
        let z = QuantTensor::zeros(8, 11, 3, Signedness::Signed, StepSize::Global(1.0));
        assert!(matches!(qkv_project(&z, &m.sa, 0), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(qkv_project(&m.z3b, &m.sa, 5), Err(Error::MissingHead(5))));
    }

    #[test]
    fn step_factoring_identity() {
        let m = toy();
        let hp = &m.sa.heads[1];
        let acc = qkv_project(&m.z3b, &m.sa, 1).unwrap();
        let real = m.z3b.dequantize().matmul(&hp.u_k.dequantize());
        for r in 0..8 {
            for c in 0..4 {
                let a = acc.dequantize(Proj::K, r, c);
                assert!((a - real.get(r, c)).abs() <= 1e-12 * real.get(r, c).abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_row_quantizes_beta() {
        let m = toy();
        let hp = &m.sa.heads[0];
        // A row of all-zero accumulators is constant whenever the biases agree.
        let mut sa = m.sa.clone();
        sa.heads[0].b_q = vec![0.0; 4];
        let k = HeadKernels::new(&sa, 0, &FixedPointParams::default()).unwrap();
        let codes = k.layernorm_quantize_row(Proj::Q, &[0, 0, 0, 0]).unwrap();
        for j in 0..4 {
            let want = quantize_linear(hp.beta_q[j], sa.ln_step, 3, Signedness::Signed).unwrap().code;
            assert_eq!(codes[j], want);
        }
    }

    fn softmax_oracle(scores: &[i64], k: &HeadKernels) -> Vec<i32> {
        let e: Vec<i128> = scores.iter().map(|&s| exp_approx(k.logit(s), &k.fp) as i128).collect();
        let sum: i128 = e.iter().sum();
        let levels = 1i128 << k.bits;
        let max = CodeRange::new(k.bits, Signedness::Unsigned).max as i128;
        // ⌈e·2^b / sum⌋ with ties upward, in exact rationals
        e.iter()
            .map(|&x| ((2 * x * levels + sum) / (2 * sum)).min(max) as i32)
            .collect()
    }

    #[test]
    fn softmax_singleton_and_pair() {
        let m = toy();
        let k = HeadKernels::new(&m.sa, 0, &FixedPointParams::default()).unwrap();
        let one = quantize_linear(1.0, 0.125, 3, Signedness::Unsigned).unwrap().code;
        assert_eq!(k.softmax_row(&[3]).unwrap(), vec![one]);
        let half = quantize_linear(0.5, 0.125, 3, Signedness::Unsigned).unwrap().code;
        assert_eq!(k.softmax_row(&[-2, -2]).unwrap(), vec![half, half]);
    }

    #[test]
    fn softmax_matches_exact_division_oracle() {
        let m = toy();
        let fp = FixedPointParams::default();
        let k = HeadKernels::new(&m.sa, 2, &fp).unwrap();
        let out = sa_head(&m.z3b, &m.sa, 2, &fp).unwrap();
        let s = int_matmul_transposed(&out.q3b, &out.k3b).unwrap();
        for r in 0..s.rows {
            assert_eq!(k.softmax_row(s.row(r)).unwrap(), softmax_oracle(s.row(r), &k));
        }
    }

    #[test]
    fn weighted_value_cases() {
        let m = toy();
        let fp = FixedPointParams::default();
        let k = HeadKernels::new(&m.sa, 0, &fp).unwrap();
        let out = sa_head(&m.z3b, &m.sa, 0, &fp).unwrap();
        let zeros = QuantTensor::zeros(8, 8, 3, Signedness::Unsigned, StepSize::Global(0.125));
        let sa = k.weighted_value(&zeros, &out.v3b).unwrap();
        assert!(sa.codes.iter().all(|&c| c == 0));

        // One-hot rows at full code select rows of V, scaled by 7/8.
        let mut onehot = zeros.clone();
        for r in 0..8 {
            onehot.codes[r * 8 + (7 - r)] = 7;
        }
        let sa = k.weighted_value(&onehot, &out.v3b).unwrap();
        for r in 0..8 {
            for c in 0..4 {
                let v = out.v3b.get(7 - r, c) as f64 * m.sa.heads[0].v_step * 0.875;
                let want = quantize_linear(v, m.sa.sa_step, 3, Signedness::Signed).unwrap().code;
                assert_eq!(sa.get(r, c), want);
            }
        }

        // Dense oracle on the real intermediate tensors.
        let acc = int_matmul(&out.a3b, &out.v3b).unwrap();
        for (i, &x) in acc.data.iter().enumerate() {
            let v = x as f64 * 0.125 * m.sa.heads[0].v_step;
            let want = quantize_linear(v, m.sa.sa_step, 3, Signedness::Signed).unwrap().code;
            assert_eq!(out.sa3b.codes[i], want);
        }
    }

    #[test]
    fn parallel_equals_serial() {
        let m = SyntheticModel::generate(ModelDims::new(16, 24, 4).unwrap(), 5).unwrap();
        let fp = FixedPointParams::default();
        assert_eq!(
            msa_heads(&m.z3b, &m.sa, &fp).unwrap(),
            msa_heads_serial(&m.z3b, &m.sa, &fp).unwrap()
        );
    }

    #[test]
    fn host_side_cases() {
        let m = toy();
        let zeros: Vec<QuantTensor> = (0..3)
            .map(|_| QuantTensor::zeros(8, 4, 3, Signedness::Signed, StepSize::Global(m.sa.sa_step)))
            .collect();
        let out = msa_host_side(&zeros, 3, &m.u_msa, &m.z_full).unwrap();
        assert_eq!(out, m.z_full);
        assert!(matches!(
            msa_host_side(&zeros[..2], 3, &m.u_msa, &m.z_full),
            Err(Error::MissingHead(2))
        ));

        let heads: Vec<QuantTensor> = msa_heads(&m.z3b, &m.sa, &FixedPointParams::default())
            .unwrap()
            .into_iter()
            .map(|h| h.sa3b)
            .collect();
        let out = msa_host_side(&heads, 3, &m.u_msa, &m.z_full).unwrap();
        let mut cat = Matrix::zeros(8, 12);
        for (h, t) in heads.iter().enumerate() {
            let dq = t.dequantize();
            for r in 0..8 {
                for c in 0..4 {
                    cat.set(r, h * 4 + c, dq.get(r, c));
                }
            }
        }
        let real = cat.matmul(&m.u_msa.dequantize());
        for i in 0..out.data.len() {
            let want = real.data[i] + m.z_full.data[i];
            assert!((out.data[i] - want).abs() < 1e-9, "i={i}");
        }
    }

    #[test]
    fn host_side_identity_projection() {
        let z = Matrix::from_vec(2, 2, vec![0.25, -1.0, 0.5, 2.0]);
        let sa = QuantTensor::new(2, 2, 3, Signedness::Signed, StepSize::Global(0.5), vec![1, -2, 3, 0]).unwrap();
        let u = QuantTensor::new(2, 2, 3, Signedness::Signed, StepSize::PerChannel(vec![1.0, 0.25]), vec![1, 0, 0, 2])
            .unwrap();
        let out = msa_host_side(&[sa], 1, &u, &z).unwrap();
        assert_eq!(out.data, vec![0.75, -1.5, 2.0, 2.0]);
    }
}
