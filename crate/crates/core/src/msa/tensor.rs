use crate::error::{Error, Result};
use crate::quantarith::{quantize_linear, CodeRange, Signedness};

/// Step-size metadata of a quantized tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSize {
    /// One step for the whole tensor (activations, dynamic operands).
    Global(f64),
    /// One step per output channel (column) of a static weight.
    PerChannel(Vec<f64>),
}

impl StepSize {
    pub fn for_column(&self, col: usize) -> f64 {
        match self {
            StepSize::Global(s) => *s,
            StepSize::PerChannel(v) => v[col],
        }
    }
}

/// Row-major low-bit integer tensor with its step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub rows: usize,
    pub cols: usize,
    pub bits: u8,
    pub signedness: Signedness,
    pub step: StepSize,
    pub codes: Vec<i32>,
}

impl QuantTensor {
    pub fn new(
        rows: usize,
        cols: usize,
        bits: u8,
        signedness: Signedness,
        step: StepSize,
        codes: Vec<i32>,
    ) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "QuantTensor::new",
                expected: format!("{} codes", rows * cols),
                got: format!("{} codes", codes.len()),
            });
        }
        match &step {
            StepSize::Global(s) if !(*s > 0.0) => return Err(Error::NonPositiveStep(*s)),
            StepSize::PerChannel(v) => {
                if v.len() != cols {
                    return Err(Error::ShapeMismatch {
                        op: "QuantTensor::new",
                        expected: format!("{cols} channel steps"),
                        got: format!("{} channel steps", v.len()),
                    });
                }
                if let Some(s) = v.iter().find(|s| !(**s > 0.0)) {
                    return Err(Error::NonPositiveStep(*s));
                }
            }
            _ => {}
        }
        let range = CodeRange::new(bits, signedness);
        for &c in &codes {
            range.check(c)?;
        }
        Ok(QuantTensor {
            rows,
            cols,
            bits,
            signedness,
            step,
            codes,
        })
    }

    pub fn zeros(rows: usize, cols: usize, bits: u8, signedness: Signedness, step: StepSize) -> Self {
        QuantTensor {
            rows,
            cols,
            bits,
            signedness,
            step,
            codes: vec![0; rows * cols],
        }
    }

    /// Quantizes a real matrix with a global step.
    pub fn quantize(m: &Matrix, step: f64, bits: u8, signedness: Signedness) -> Result<Self> {
        let codes = m
            .data
            .iter()
            .map(|&x| quantize_linear(x, step, bits, signedness).map(|c| c.code))
            .collect::<Result<Vec<_>>>()?;
        QuantTensor::new(m.rows, m.cols, bits, signedness, StepSize::Global(step), codes)
    }

    /// Quantizes a real matrix with one step per column.
    pub fn quantize_per_channel(m: &Matrix, steps: Vec<f64>, bits: u8, signedness: Signedness) -> Result<Self> {
        let codes = m
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| quantize_linear(x, steps[i % m.cols], bits, signedness).map(|c| c.code))
            .collect::<Result<Vec<_>>>()?;
        QuantTensor::new(m.rows, m.cols, bits, signedness, StepSize::PerChannel(steps), codes)
    }

    pub fn get(&self, r: usize, c: usize) -> i32 {
        self.codes[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[i32] {
        &self.codes[r * self.cols..(r + 1) * self.cols]
    }

    pub fn range(&self) -> CodeRange {
        CodeRange::new(self.bits, self.signedness)
    }

    pub fn global_step(&self) -> Option<f64> {
        match self.step {
            StepSize::Global(s) => Some(s),
            StepSize::PerChannel(_) => None,
        }
    }

    pub fn dequantize(&self) -> Matrix {
        let data = self
            .codes
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * self.step.for_column(i % self.cols))
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Column slice `[start, start + width)`.
    pub fn columns(&self, start: usize, width: usize) -> QuantTensor {
        let mut codes = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            codes.extend_from_slice(&self.row(r)[start..start + width]);
        }
        let step = match &self.step {
            StepSize::Global(s) => StepSize::Global(*s),
            StepSize::PerChannel(v) => StepSize::PerChannel(v[start..start + width].to_vec()),
        };
        QuantTensor {
            rows: self.rows,
            cols: width,
            bits: self.bits,
            signedness: self.signedness,
            step,
            codes,
        }
    }
}

/// Dense row-major integer matrix (accumulator outputs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i64>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[i64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn max_abs(&self) -> i64 {
        self.data.iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

/// Integer matmul of code tensors. No real-valued arithmetic occurs here;
/// dequantization is the caller's business.
pub fn int_matmul(a: &QuantTensor, b: &QuantTensor) -> Result<IntMatrix> {
    int_matmul_codes(a.rows, a.cols, &a.codes, b.rows, b.cols, &b.codes)
}

/// `a · bᵀ` on code tensors with equal column counts.
pub fn int_matmul_transposed(a: &QuantTensor, b: &QuantTensor) -> Result<IntMatrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "int_matmul_transposed",
            expected: format!("{} columns", a.cols),
            got: format!("{} columns", b.cols),
        });
    }
    let mut out = IntMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = ar
                .iter()
                .zip(b.row(j))
                .fold(0i64, |acc, (&x, &y)| acc + x as i64 * y as i64);
        }
    }
    Ok(out)
}

pub(crate) fn int_matmul_codes(
    ar: usize,
    ac: usize,
    a: &[i32],
    br: usize,
    bc: usize,
    b: &[i32],
) -> Result<IntMatrix> {
    if ac != br {
        return Err(Error::ShapeMismatch {
            op: "int_matmul",
            expected: format!("inner dimension {ac}"),
            got: format!("inner dimension {br}"),
        });
    }
    let mut out = IntMatrix::zeros(ar, bc);
    for i in 0..ar {
        for k in 0..ac {
            let x = a[i * ac + k] as i64;
            if x == 0 {
                continue;
            }
            let brow = &b[k * bc..(k + 1) * bc];
            let orow = &mut out.data[i * bc..(i + 1) * bc];
            for (o, &w) in orow.iter_mut().zip(brow) {
                *o += x * w as i64;
            }
        }
    }
    Ok(out)
}

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let x = self.get(i, k);
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += x * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn columns(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.data[r * width..(r + 1) * width].copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn mean_abs_diff(&self, other: &Matrix) -> f64 {
        let n = self.data.len().max(1) as f64;
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
    }
}
