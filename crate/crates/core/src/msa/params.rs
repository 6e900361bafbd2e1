use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dims::ModelDims;
use super::tensor::{Matrix, QuantTensor};
use crate::error::{Error, Result};
use crate::quantarith::{CodeRange, Signedness};

/// Full-precision weights of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct RealHeadWeights {
    /// `d × d_h` projections.
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub b_q: Vec<f64>,
    pub b_k: Vec<f64>,
    pub b_v: Vec<f64>,
    pub gamma_q: Vec<f64>,
    pub beta_q: Vec<f64>,
    pub gamma_k: Vec<f64>,
    pub beta_k: Vec<f64>,
}

/// Full-precision block parameters for the reference model.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMsaParams {
    pub dims: ModelDims,
    pub heads: Vec<RealHeadWeights>,
    /// `d × d` output projection.
    pub w_msa: Matrix,
}

/// Quantized parameters of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub u_q: QuantTensor,
    pub u_k: QuantTensor,
    pub u_v: QuantTensor,
    pub b_q: Vec<f64>,
    pub b_k: Vec<f64>,
    pub b_v: Vec<f64>,
    pub gamma_q: Vec<f64>,
    pub beta_q: Vec<f64>,
    pub gamma_k: Vec<f64>,
    pub beta_k: Vec<f64>,
    /// Step of the V codes.
    pub v_step: f64,
}

/// Parameter bank of a self-attention block: all heads plus shared steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SaParams {
    pub dims: ModelDims,
    /// Global activation step of `z`.
    pub z_step: f64,
    /// Output step of the layer-norm quantizers for Q̃ and K̃.
    pub ln_step: f64,
    /// Step of the attention-probability codes.
    pub a_step: f64,
    /// Step of the SA output codes, shared by all heads so the host can
    /// dequantize the concatenation with one scalar.
    pub sa_step: f64,
    /// Real factor applied to `Q̃ K̃ᵀ` codes before the exponential.
    /// `None` means `ln_step² / √d_h`.
    pub softmax_scale: Option<f64>,
    pub heads: Vec<HeadParams>,
}

impl SaParams {
    pub fn head(&self, h: usize) -> Result<&HeadParams> {
        self.heads.get(h).ok_or(Error::MissingHead(h))
    }

    pub fn effective_softmax_scale(&self) -> f64 {
        self.softmax_scale
            .unwrap_or(self.ln_step * self.ln_step / (self.dims.head_dim() as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.heads.len() != self.dims.heads {
            return Err(Error::ShapeMismatch {
                op: "SaParams",
                expected: format!("{} heads", self.dims.heads),
                got: format!("{} heads", self.heads.len()),
            });
        }
        let (d, dh) = (self.dims.embed_dim, self.dims.head_dim());
        for h in &self.heads {
            for u in [&h.u_q, &h.u_k, &h.u_v] {
                if (u.rows, u.cols) != (d, dh) {
                    return Err(Error::ShapeMismatch {
                        op: "SaParams weight",
                        expected: format!("{d}x{dh}"),
                        got: format!("{}x{}", u.rows, u.cols),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A complete seeded test vector: real and quantized parameters plus input.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub real: RealMsaParams,
    pub sa: SaParams,
    pub u_msa: QuantTensor,
    /// Full-precision block input (residual path).
    pub z_full: Matrix,
    /// Low-bit block input.
    pub z3b: QuantTensor,
}

impl SyntheticModel {
    /// Draws uniform input codes and weights from a seeded generator and
    /// calibrates the dynamic steps on the drawn data.
    pub fn generate(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, dh, bits) = (dims.n_tokens, dims.embed_dim, dims.head_dim(), dims.bits);
        let qmax = CodeRange::new(bits, Signedness::Signed).max;
        let z_step = 2.0 / qmax as f64;

        let codes: Vec<i32> = (0..n * d).map(|_| rng.gen_range(-qmax..=qmax)).collect();
        let z_full = Matrix::from_vec(
            n,
            d,
            codes
                .iter()
                .map(|&c| (c as f64 + rng.gen_range(-0.5..0.5)) * z_step)
                .collect(),
        );
        let z3b = QuantTensor::quantize(&z_full, z_step, bits, Signedness::Signed)?;

        let w_bound = (3.0 / d as f64).sqrt();
        let mat = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-w_bound..w_bound)).collect())
        };
        let mut real_heads = Vec::with_capacity(dims.heads);
        for _ in 0..dims.heads {
            let w_q = mat(d, dh, &mut rng);
            let w_k = mat(d, dh, &mut rng);
            let w_v = mat(d, dh, &mut rng);
            let mut vec = |lo: f64, hi: f64| (0..dh).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>();
            real_heads.push(RealHeadWeights {
                w_q,
                w_k,
                w_v,
                b_q: vec(-0.1, 0.1),
                b_k: vec(-0.1, 0.1),
                b_v: vec(-0.1, 0.1),
                gamma_q: vec(0.5, 1.5),
                beta_q: vec(-0.2, 0.2),
                gamma_k: vec(0.5, 1.5),
                beta_k: vec(-0.2, 0.2),
            });
        }
        let w_msa = mat(d, d, &mut rng);
        let real = RealMsaParams {
            dims,
            heads: real_heads,
            w_msa,
        };
        let sa = quantize_params(&real, z_step, &z3b)?;
        let u_msa = quantize_weight(&real.w_msa, bits)?;
        Ok(SyntheticModel {
            real,
            sa,
            u_msa,
            z_full,
            z3b,
        })
    }
}

/// Per-output-channel weight quantization with `step_j = max|w_j| / qmax`.
pub fn quantize_weight(w: &Matrix, bits: u8) -> Result<QuantTensor> {
    let qmax = CodeRange::new(bits, Signedness::Signed).max as f64;
    let steps = (0..w.cols)
        .map(|c| {
            let m = (0..w.rows).fold(0.0f64, |m, r| m.max(w.get(r, c).abs()));
            if m > 0.0 {
                m / qmax
            } else {
                1.0
            }
        })
        .collect();
    QuantTensor::quantize_per_channel(w, steps, bits, Signedness::Signed)
}

/// Quantizes real weights and calibrates the V and SA steps on `z3b`.
pub fn quantize_params(real: &RealMsaParams, z_step: f64, z3b: &QuantTensor) -> Result<SaParams> {
    let dims = real.dims;
    let bits = dims.bits;
    let qmax = CodeRange::new(bits, Signedness::Signed).max as f64;
    let z_hat = z3b.dequantize();
    let heads = real
        .heads
        .iter()
        .map(|rh| {
            let u_v = quantize_weight(&rh.w_v, bits)?;
            let v = z_hat.matmul(&u_v.dequantize());
            let v_max = (0..v.rows)
                .flat_map(|r| (0..v.cols).map(move |c| (r, c)))
                .fold(0.0f64, |m, (r, c)| m.max((v.get(r, c) + rh.b_v[c]).abs()));
            let v_step = if v_max > 0.0 { v_max / qmax } else { 1.0 };
            Ok(HeadParams {
                u_q: quantize_weight(&rh.w_q, bits)?,
                u_k: quantize_weight(&rh.w_k, bits)?,
                u_v,
                b_q: rh.b_q.clone(),
                b_k: rh.b_k.clone(),
                b_v: rh.b_v.clone(),
                gamma_q: rh.gamma_q.clone(),
                beta_q: rh.beta_q.clone(),
                gamma_k: rh.gamma_k.clone(),
                beta_k: rh.beta_k.clone(),
                v_step,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sa_step = heads.iter().fold(0.0f64, |m, h: &HeadParams| m.max(h.v_step));
    let params = SaParams {
        dims,
        sa_step,
        z_step,
        ln_step: 3.0 / qmax,
        a_step: 1.0 / (1u32 << bits) as f64,
        softmax_scale: None,
        heads,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = SyntheticModel::generate(ModelDims::toy(), 7).unwrap();
        let b = SyntheticModel::generate(ModelDims::toy(), 7).unwrap();
        let c = SyntheticModel::generate(ModelDims::toy(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.z3b, c.z3b);
    }

    #[test]
    fn shapes_and_steps() {
        let m = SyntheticModel::generate(ModelDims::toy(), 1).unwrap();
        assert_eq!(m.sa.heads.len(), 3);
        assert_eq!((m.z3b.rows, m.z3b.cols), (8, 12));
        assert_eq!(m.sa.a_step, 0.125);
        assert_eq!(m.sa.ln_step, 1.0);
        assert_eq!(m.sa.effective_softmax_scale(), 0.5);
        assert!(m.sa.head(3).is_err());
    }

    #[test]
    fn weight_codes_reach_full_scale() {
        let m = SyntheticModel::generate(ModelDims::toy(), 3).unwrap();
        let u = &m.sa.heads[0].u_q;
        for c in 0..u.cols {
            assert!((0..u.rows).any(|r| u.get(r, c).abs() == 3));
        }
    }
}
