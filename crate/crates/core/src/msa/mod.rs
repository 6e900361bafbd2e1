//! Integerized golden model of the self-attention block and a full-precision
//! reference.
//!
//! The integer path runs `z3b → (Q̃, K̃, V) → A → SA` per head. Linear and
//! matmul stages only ever see codes; real step sizes are folded into
//! fixed-point constants ([`HeadKernels`]) computed once per head.

mod dims;
mod golden;
mod params;
mod reference;
mod tensor;

pub use dims::ModelDims;
pub use golden::{
    msa_heads, msa_heads_serial, msa_host_side, qkv_project, sa_head, HeadKernels, HeadOutputs, Proj,
    QkvAccumulators, LOGIT_FRAC_BITS,
};
pub use params::{
    quantize_params, quantize_weight, HeadParams, RealHeadWeights, RealMsaParams, SaParams, SyntheticModel,
};
pub use reference::{float_reference_head, float_reference_msa, layer_norm, softmax_rows};
pub use tensor::{int_matmul, int_matmul_transposed, IntMatrix, Matrix, QuantTensor, StepSize};

use crate::error::Result;
use crate::quantarith::FixedPointParams;

/// Full integerized block: all heads, then the host-side tail.
pub fn msa_forward(model: &SyntheticModel, fp: &FixedPointParams) -> Result<Matrix> {
    let heads: Vec<QuantTensor> = msa_heads(&model.z3b, &model.sa, fp)?
        .into_iter()
        .map(|h| h.sa3b)
        .collect();
    msa_host_side(&heads, model.sa.dims.heads, &model.u_msa, &model.z_full)
}
