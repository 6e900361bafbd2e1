use log::debug;

use super::blocks::{AggregationRow, Fifo, MacArray, SumAggregate, WeightLoader, WelfordAggregate};
use super::config::{ArrayConfig, Variant};
use super::graph::{build_graph, Graph};
use super::schedule::{fifo_depths, run_timing, FifoDepths};
use super::trace::CycleTrace;
use crate::analytics::{comm_cycles, Bus};
use crate::error::{Error, Result};
use crate::msa::{HeadKernels, HeadOutputs, IntMatrix, ModelDims, Proj, QuantTensor, SaParams, StepSize};
use crate::quantarith::{exp_approx, scale_quantize, FixedPointParams, Signedness, WelfordFixed};

/// One SA pipeline instance with its parameter bank.
#[derive(Debug, Clone)]
pub struct Accelerator {
    pub dims: ModelDims,
    pub cfg: ArrayConfig,
    pub params: SaParams,
    pub fp: FixedPointParams,
    kernels: Vec<HeadKernels>,
    qkv: MacArray,
    a_array: MacArray,
    av_array: MacArray,
    pub k_loader: WeightLoader,
    pub v_loader: WeightLoader,
    ln_row: AggregationRow,
    softmax_row: AggregationRow,
    pub depths: FifoDepths,
    pub graph: Graph,
    cycle: u64,
}

/// Outputs and trace of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub heads: Vec<HeadOutputs>,
    pub trace: CycleTrace,
    /// `⌈bNd / bus⌉` transfer cycles with ideal packing.
    pub ideal_comm_cycles: u64,
    /// Transfer cycles with whole codes per bus word.
    pub packed_comm_cycles: u64,
}

impl SimOutput {
    pub fn sa_outputs(&self) -> Vec<QuantTensor> {
        self.heads.iter().map(|h| h.sa3b.clone()).collect()
    }
}

/// Builds the array template for `dims` and loads the parameter bank.
pub fn build_sa_pipeline(
    dims: &ModelDims,
    cfg: &ArrayConfig,
    params: &SaParams,
    fp: &FixedPointParams,
) -> Result<Accelerator> {
    cfg.validate(dims)?;
    params.validate()?;
    if params.dims != *dims {
        return Err(Error::InvalidConfig("parameter bank dims differ from the pipeline dims".into()));
    }
    let kernels = (0..dims.heads)
        .map(|h| HeadKernels::new(params, h, fp))
        .collect::<Result<Vec<_>>>()?;
    let (n, d, dh) = (dims.n_tokens, dims.embed_dim, dims.head_dim());
    let graph = build_graph(dims);
    graph.check_locality()?;
    let mul = cfg.mul_latencies();
    Ok(Accelerator {
        dims: *dims,
        cfg: *cfg,
        params: params.clone(),
        fp: *fp,
        kernels,
        qkv: MacArray::new(d, 3 * dh, fp.acc_bits),
        a_array: MacArray::new(dh, n, fp.acc_bits),
        av_array: MacArray::new(n, dh, fp.acc_bits),
        k_loader: WeightLoader::new(n, dh),
        v_loader: WeightLoader::new(dh, n),
        ln_row: AggregationRow::new(dh, mul.welford + 1),
        softmax_row: AggregationRow::new(n, 1),
        depths: fifo_depths(dims),
        graph,
        cycle: 0,
    })
}

impl Accelerator {
    /// Test hook: breaks the softmax delay line feeding post-aggregation
    /// unit `column`.
    pub fn inject_delay_fault(&mut self, column: usize) -> Result<()> {
        let w = self.softmax_row.width;
        if column >= w {
            return Err(Error::InvalidConfig(format!("fault column {column} outside 0..{w}")));
        }
        self.softmax_row.delay = self.softmax_row.delay.clone().with_off_by_one(w - 1 - column);
        Ok(())
    }

    fn layernorm(&self, k: &HeadKernels, p: Proj, acc: &IntMatrix, offset: usize) -> Result<QuantTensor> {
        let (n, dh) = (self.dims.n_tokens, self.dims.head_dim());
        let normq = match p {
            Proj::Q => &k.normq_q,
            _ => &k.normq_k,
        };
        let agg = WelfordAggregate {
            recip: &k.recip,
            fp: &self.fp,
        };
        let mut hold = Fifo::new("ln_hold", self.depths.ln_hold);
        let mut codes = Vec::with_capacity(n * dh);
        for t in 0..n {
            for j in 0..dh {
                let x = k.postmac(p, j, acc.get(t, offset + j));
                hold.push(WelfordFixed::prescale(x, &self.fp))?;
            }
            let row: Vec<i64> = std::iter::from_fn(|| hold.pop()).collect();
            let res = self.ln_row.run(&agg, t as u64, &row, self.cycle + t as u64)?;
            let var = res.aggregate.variance();
            for a in &res.aligned {
                codes.push(normq[a.column].quantize(a.element, a.aggregate.mean, var));
            }
        }
        QuantTensor::new(n, dh, k.bits, Signedness::Signed, StepSize::Global(k.ln_step), codes)
    }

    /// Runs one head through the value datapath.
    pub fn run_head(&mut self, z3b: &QuantTensor, head: usize) -> Result<HeadOutputs> {
        let (n, d, dh) = (self.dims.n_tokens, self.dims.embed_dim, self.dims.head_dim());
        if (z3b.rows, z3b.cols) != (n, d) {
            return Err(Error::ShapeMismatch {
                op: "run_head",
                expected: format!("{n}x{d}"),
                got: format!("{}x{}", z3b.rows, z3b.cols),
            });
        }
        let k = self.kernels.get(head).ok_or(Error::MissingHead(head))?.clone();
        let hp = self.params.head(head)?;

        // Parameter bank switch: U_q | U_k | U_v side by side.
        let mut w = Vec::with_capacity(d * 3 * dh);
        for r in 0..d {
            w.extend_from_slice(hp.u_q.row(r));
            w.extend_from_slice(hp.u_k.row(r));
            w.extend_from_slice(hp.u_v.row(r));
        }
        self.qkv.set_weights(&w)?;
        let acc = self.qkv.stream(n, &z3b.codes)?;

        let q3b = self.layernorm(&k, Proj::Q, &acc, 0)?;
        let k3b = self.layernorm(&k, Proj::K, &acc, dh)?;
        let v_codes = (0..n * dh)
            .map(|i| k.v_quant.quantize(k.postmac(Proj::V, i % dh, acc.get(i / dh, 2 * dh + i % dh))))
            .collect();
        let v3b = QuantTensor::new(n, dh, k.bits, Signedness::Signed, StepSize::Global(k.v_step), v_codes)?;

        // K̃ leaves token by token; the reorder FIFO turns each token into
        // one loader chain.
        let mut reorder = Fifo::new("k_reorder", self.depths.k_reorder);
        let mut k_streams = Vec::with_capacity(n);
        for t in 0..n {
            for ch in (0..dh).rev() {
                reorder.push(k3b.get(t, ch))?;
            }
            k_streams.push(std::iter::from_fn(|| reorder.pop()).collect::<Vec<_>>());
        }
        let latch = self.k_loader.load(&k_streams, self.cycle)?;
        debug!("head {head}: K loader latched at local cycle {latch}");
        self.a_array.set_weights(&self.k_loader.weights())?;
        let scores = self.a_array.stream(n, &q3b.codes)?;

        let mut hold = Fifo::new("softmax_hold", self.depths.softmax_hold);
        let mut a_codes = Vec::with_capacity(n * n);
        for t in 0..n {
            for j in 0..n {
                hold.push(exp_approx(k.logit(scores.get(t, j)), &self.fp))?;
            }
            let row: Vec<i64> = std::iter::from_fn(|| hold.pop()).collect();
            let res = self.softmax_row.run(&SumAggregate, t as u64, &row, self.cycle + t as u64)?;
            for a in &res.aligned {
                a_codes.push(scale_quantize(a.element, a.aggregate, &k.a_table, self.fp.thresh_frac_bits)?.code);
            }
        }
        let a3b = QuantTensor::new(n, n, k.bits, Signedness::Unsigned, StepSize::Global(k.a_step), a_codes)?;

        let v_streams: Vec<Vec<i32>> = (0..dh)
            .map(|ch| (0..n).rev().map(|t| v3b.get(t, ch)).collect())
            .collect();
        self.v_loader.load(&v_streams, self.cycle)?;
        self.av_array.set_weights(&self.v_loader.weights())?;
        let sa_acc = self.av_array.stream(n, &a3b.codes)?;
        let sa_codes = sa_acc.data.iter().map(|&x| k.sa_quant.quantize(x)).collect();
        let sa3b = QuantTensor::new(n, dh, k.bits, Signedness::Signed, StepSize::Global(k.sa_step), sa_codes)?;

        self.cycle += 1;
        Ok(HeadOutputs {
            q3b,
            k3b,
            v3b,
            a3b,
            sa3b,
        })
    }

    /// Replays `z3b` to every head in turn and produces the block trace.
    pub fn run_msa(&mut self, z3b: &QuantTensor) -> Result<SimOutput> {
        let heads = (0..self.dims.heads)
            .map(|h| self.run_head(z3b, h))
            .collect::<Result<Vec<_>>>()?;
        let trace = run_timing(&self.dims, &self.cfg, 1)?;
        let t = self.cfg.timing_inputs(&self.dims);
        Ok(SimOutput {
            heads,
            trace,
            ideal_comm_cycles: comm_cycles(&t),
            packed_comm_cycles: packed_comm_cycles(&self.dims, self.cfg.bus),
        })
    }
}

/// Transfer cycles when only whole codes fit in a bus word (21 three-bit
/// codes per 64-bit word, one pad bit).
pub fn packed_comm_cycles(dims: &ModelDims, bus: Bus) -> u64 {
    match bus {
        Bus::Infinite => 0,
        Bus::Bits(b) => {
            let per_word = (b / dims.bits as u64).max(1);
            ((dims.n_tokens * dims.embed_dim) as u64).div_ceil(per_word)
        }
    }
}

/// DSP and DSP-free runs of the same block.
#[derive(Debug, Clone, PartialEq)]
pub struct DspFreeReport {
    pub dsp: SimOutput,
    pub dsp_free: SimOutput,
    /// Extra single-SA latency of the DSP-free variant.
    pub extra_latency: u64,
}

/// Runs both multiplier variants and checks that only timing differs.
pub fn run_dsp_free(
    dims: &ModelDims,
    params: &SaParams,
    fp: &FixedPointParams,
    bus: Bus,
    z3b: &QuantTensor,
    mul_cycles: u64,
) -> Result<DspFreeReport> {
    let base = ArrayConfig::for_dims(dims, 1, bus);
    let free = ArrayConfig {
        variant: Variant::DspFree,
        mul_cycles,
        ..base
    };
    let dsp = build_sa_pipeline(dims, &base, params, fp)?.run_msa(z3b)?;
    let dsp_free = build_sa_pipeline(dims, &free, params, fp)?.run_msa(z3b)?;
    if dsp.heads != dsp_free.heads {
        return Err(Error::InvalidConfig("DSP-free outputs differ from DSP outputs".into()));
    }
    let lat = |o: &SimOutput| o.trace.sa_latency().expect("head 0 in trace");
    let extra_latency = lat(&dsp_free) - lat(&dsp);
    Ok(DspFreeReport {
        dsp,
        dsp_free,
        extra_latency,
    })
}
