use super::params::RealMsaParams;
use super::tensor::Matrix;

/// Row-wise layer norm over the columns with per-column affine parameters.
/// A zero-variance row normalizes to zero.
pub fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        for (c, &v) in row.iter().enumerate() {
            let norm = if sd > 0.0 { (v - mean) / sd } else { 0.0 };
            out.set(r, c, gamma[c] * norm + beta[c]);
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (c, v) in e.into_iter().enumerate() {
            out.set(r, c, v / s);
        }
    }
    out
}

fn add_bias(mut x: Matrix, b: &[f64]) -> Matrix {
    for r in 0..x.rows {
        for c in 0..x.cols {
            x.data[r * x.cols + c] += b[c];
        }
    }
    x
}

/// One head in full precision, returning the attention matrix and output.
pub fn float_reference_head(z: &Matrix, params: &RealMsaParams, head: usize) -> (Matrix, Matrix) {
    let h = &params.heads[head];
    let dh = params.dims.head_dim() as f64;
    let q = layer_norm(&add_bias(z.matmul(&h.w_q), &h.b_q), &h.gamma_q, &h.beta_q);
    let k = layer_norm(&add_bias(z.matmul(&h.w_k), &h.b_k), &h.gamma_k, &h.beta_k);
    let v = add_bias(z.matmul(&h.w_v), &h.b_v);
    let mut s = q.matmul(&k.transpose());
    s.data.iter_mut().for_each(|x| *x /= dh.sqrt());
    let a = softmax_rows(&s);
    let sa = a.matmul(&v);
    (a, sa)
}

/// Full-precision block: per-head attention, concatenation, output
/// projection and residual.
pub fn float_reference_msa(z: &Matrix, params: &RealMsaParams) -> Matrix {
    let dims = params.dims;
    let dh = dims.head_dim();
    let mut cat = Matrix::zeros(z.rows, dims.embed_dim);
    for h in 0..dims.heads {
        let (_, sa) = float_reference_head(z, params, h);
        for r in 0..z.rows {
            cat.data[r * dims.embed_dim + h * dh..r * dims.embed_dim + (h + 1) * dh].copy_from_slice(sa.row(r));
        }
    }
    let mut out = cat.matmul(&params.w_msa);
    for (o, zi) in out.data.iter_mut().zip(&z.data) {
        *o += zi;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msa::{ModelDims, SyntheticModel};

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = SyntheticModel::generate(ModelDims::toy(), 2).unwrap();
        for h in 0..3 {
            let (a, _) = float_reference_head(&m.z_full, &m.real, h);
            for r in 0..a.rows {
                let s: f64 = a.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_leave_residual() {
        let mut m = SyntheticModel::generate(ModelDims::toy(), 2).unwrap();
        m.real.w_msa.data.iter_mut().for_each(|w| *w = 0.0);
        for h in &mut m.real.heads {
            for w in [&mut h.w_q, &mut h.w_k, &mut h.w_v] {
                w.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        assert_eq!(float_reference_msa(&m.z_full, &m.real), m.z_full);
    }

    #[test]
    fn layer_norm_hand_case() {
        let x = Matrix::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let y = layer_norm(&x, &[1.0; 4], &[0.0; 4]);
        let sd = 1.25f64.sqrt();
        for (c, v) in y.data.iter().enumerate() {
            assert!((v - (c as f64 + 1.0 - 2.5) / sd).abs() < 1e-12);
        }
    }
}
