//! Closed-form timing and roofline model of the accelerator.
//!
//! Every cycle count is an exact integer. The simulator's trace
//! measurements must reproduce these numbers with zero tolerance.

use crate::error::{Error, Result};
use crate::msa::ModelDims;

/// Host link width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bus {
    Bits(u64),
    /// Communication-free mode: transfers take no cycles.
    Infinite,
}

impl Bus {
    pub fn parse(s: &str) -> Option<Bus> {
        match s.trim() {
            "inf" | "infinite" => Some(Bus::Infinite),
            v => v.parse::<u64>().ok().filter(|&b| b > 0).map(Bus::Bits),
        }
    }
}

impl std::fmt::Display for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bus::Bits(b) => write!(f, "{b}"),
            Bus::Infinite => write!(f, "inf"),
        }
    }
}

/// Latencies of the multipliers on the attention critical path.
///
/// `welford` sits inside the per-channel statistics loop and is paid once
/// per head channel; the others are paid once per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MulLatencies {
    pub welford: u64,
    pub qk_postmac: u64,
    pub normq: u64,
    pub a_postmac: u64,
    pub exp: u64,
    pub scaleq: u64,
}

impl MulLatencies {
    pub fn uniform(mul: u64) -> Self {
        MulLatencies {
            welford: mul,
            qk_postmac: mul,
            normq: mul,
            a_postmac: mul,
            exp: mul,
            scaleq: mul,
        }
    }

    /// Pipelined LUT multipliers: two stages each, four for the wide
    /// threshold-scaling product.
    pub fn dsp_free() -> Self {
        MulLatencies {
            scaleq: 4,
            ..Self::uniform(2)
        }
    }

    pub fn per_token_sum(&self) -> u64 {
        self.qk_postmac + self.normq + self.a_postmac + self.exp + self.scaleq
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.welford, self.qk_postmac, self.normq, self.a_postmac, self.exp, self.scaleq];
        if all.contains(&0) {
            return Err(Error::InvalidConfig("multiplier latency must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingInputs {
    pub dims: ModelDims,
    pub mul: MulLatencies,
    pub bus: Bus,
    pub clock_ns: f64,
    /// Stages of the exponential unit beyond its multiplier.
    pub exp_depth: u64,
}

/// Default depth of the multi-cycle exponential unit.
pub const DEFAULT_EXP_DEPTH: u64 = 4;

/// Fixed register stages of one head outside the exponential unit.
pub const FIXED_REGISTER_STAGES: u64 = 20;

impl TimingInputs {
    pub fn new(dims: ModelDims, mul_cycles: u64, bus: Bus, clock_ns: f64) -> Self {
        TimingInputs {
            dims,
            mul: MulLatencies::uniform(mul_cycles),
            bus,
            clock_ns,
            exp_depth: DEFAULT_EXP_DEPTH,
        }
    }

    pub fn deit_small() -> Self {
        Self::new(ModelDims::deit_small(), 1, Bus::Bits(64), 2.5)
    }

    pub fn clock_hz(&self) -> f64 {
        1e9 / self.clock_ns
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.mul.validate()?;
        if !(self.clock_ns > 0.0) {
            return Err(Error::InvalidConfig("clock period must be positive".into()));
        }
        Ok(())
    }
}

/// Latency of one SA head from first input to first output, generalized
/// over per-multiplier latencies. With every multiplier at `MUL` and the
/// default exponential depth this is `d + 3d_h + d_h(MUL+1) + 3N + 5 MUL + 24`.
pub fn sa_latency(t: &TimingInputs) -> Result<u64> {
    t.validate()?;
    let (n, d, dh) = dims_u64(&t.dims);
    Ok(d + 3 * dh + dh * (t.mul.welford + 1) + 3 * n + t.mul.per_token_sum() + FIXED_REGISTER_STAGES + t.exp_depth)
}

/// Cycles to move one `N × d` tensor of `b`-bit codes over the bus with
/// ideal packing: `⌈bNd / bus⌉`, zero on an infinite bus.
pub fn comm_cycles(t: &TimingInputs) -> u64 {
    let (n, d, _) = dims_u64(&t.dims);
    match t.bus {
        Bus::Bits(b) => (t.dims.bits as u64 * n * d).div_ceil(b),
        Bus::Infinite => 0,
    }
}

/// Per-head share of [`comm_cycles`].
pub fn comm_per_head(t: &TimingInputs) -> u64 {
    comm_cycles(t).div_ceil(t.dims.heads as u64)
}

/// Which resource sets the token interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PitchBound {
    /// `N + d`: the shared input port streams all tokens and the weight load.
    InputPort,
    /// `d_h + 2N`: the dynamic weight loaders hold one slice.
    WeightHold,
    /// `bNd / (bus H)`: the host link.
    Communication,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pitch {
    pub cycles: u64,
    pub bound: PitchBound,
}

/// Interval between successive heads entering the pipeline.
pub fn pitch(t: &TimingInputs) -> Result<Pitch> {
    t.validate()?;
    let (n, d, dh) = dims_u64(&t.dims);
    let terms = [
        (n + d, PitchBound::InputPort),
        (dh + 2 * n, PitchBound::WeightHold),
        (comm_per_head(t), PitchBound::Communication),
    ];
    // The first maximal term wins ties so compute binds before communication.
    let (cycles, bound) = terms
        .iter()
        .fold(terms[0], |best, &cur| if cur.0 > best.0 { cur } else { best });
    Ok(Pitch { cycles, bound })
}

/// Multi-head latency: first head, `H-1` pipelined heads, and input and
/// output transfers.
pub fn msa_latency(t: &TimingInputs) -> Result<u64> {
    let lat1 = sa_latency(t)?;
    let p = pitch(t)?.cycles;
    let h = t.dims.heads as u64;
    let comm = comm_cycles(t);
    let compute = lat1 + (h - 1) * p;
    if comm > compute {
        return Err(Error::CommOverlap { comm, compute });
    }
    Ok(compute + 2 * comm)
}

/// Per-layer cycle breakdown under the MSA := SA(pipelined) + projection
/// composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerBreakdown {
    pub comm: u64,
    pub sa_pipelined: u64,
    pub projection: u64,
    pub mlp: u64,
    pub layer: u64,
}

pub fn layer_breakdown(t: &TimingInputs) -> Result<LayerBreakdown> {
    let lat1 = sa_latency(t)?;
    let (n, d, _) = dims_u64(&t.dims);
    let h = t.dims.heads as u64;
    let m = t.dims.mlp_ratio as u64;
    let comm = comm_cycles(t);
    let sa_pipelined = lat1 + (h - 1) * comm_per_head(t);
    let projection = 2 * d + n;
    let mlp = (m + 2) * d + n;
    Ok(LayerBreakdown {
        comm,
        sa_pipelined,
        projection,
        mlp,
        layer: 4 * comm + sa_pipelined + projection + mlp,
    })
}

/// Summary record of the closed-form model.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticReport {
    pub sa_latency_cycles: u64,
    pub msa_latency_cycles: u64,
    pub pitch_cycles: u64,
    pub pitch_bound: PitchBound,
    pub comm_cycles: u64,
    pub layer_cycles: u64,
    pub model_cycles: u64,
    pub msa_latency_us: f64,
    pub latency_us: f64,
    pub tokens_per_s: f64,
    pub bandwidth_gbps: f64,
    pub op_per_byte: f64,
    pub normalized_power: f64,
}

impl AnalyticReport {
    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let rows: [(&str, String); 13] = [
            ("sa_latency_cycles", self.sa_latency_cycles.to_string()),
            ("msa_latency_cycles", self.msa_latency_cycles.to_string()),
            ("pitch_cycles", self.pitch_cycles.to_string()),
            ("pitch_bound", format!("{:?}", self.pitch_bound)),
            ("comm_cycles", self.comm_cycles.to_string()),
            ("layer_cycles", self.layer_cycles.to_string()),
            ("model_cycles", self.model_cycles.to_string()),
            ("msa_latency_us", format!("{:.2}", self.msa_latency_us)),
            ("latency_us", format!("{:.1}", self.latency_us)),
            ("tokens_per_s", format!("{:.1}", self.tokens_per_s)),
            ("bandwidth_gbps", format!("{:.3}", self.bandwidth_gbps)),
            ("op_per_byte", format!("{:.2}", self.op_per_byte)),
            ("normalized_power", format!("{:.4}", self.normalized_power)),
        ];
        rows.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Operations of the offloaded part of one block: Q/K/V projections, `QKᵀ`
/// and `AV`, two operations per multiply-accumulate.
pub fn msa_ops(dims: &ModelDims) -> u64 {
    let (n, d, _) = dims_u64(dims);
    2 * (3 * n * d * d + 2 * n * n * d)
}

pub fn full_model_latency(t: &TimingInputs, layers: u64) -> Result<AnalyticReport> {
    if layers == 0 {
        return Err(Error::InvalidConfig("layers must be >= 1".into()));
    }
    let lb = layer_breakdown(t)?;
    let p = pitch(t)?;
    let msa = msa_latency(t)?;
    let model_cycles = layers * lb.layer;
    let ops = msa_ops(&t.dims);
    let bytes = 2 * (t.dims.n_tokens * t.dims.embed_dim) as u64 * t.dims.bits as u64 / 8;
    let bandwidth = match t.bus {
        Bus::Bits(b) => bandwidth_gbps(b, 1e3 / t.clock_ns),
        Bus::Infinite => f64::INFINITY,
    };
    Ok(AnalyticReport {
        sa_latency_cycles: sa_latency(t)?,
        msa_latency_cycles: msa,
        pitch_cycles: p.cycles,
        pitch_bound: p.bound,
        comm_cycles: lb.comm,
        layer_cycles: lb.layer,
        model_cycles,
        msa_latency_us: msa as f64 * t.clock_ns / 1000.0,
        latency_us: model_cycles as f64 * t.clock_ns / 1000.0,
        tokens_per_s: t.clock_hz() / p.cycles as f64,
        bandwidth_gbps: bandwidth,
        op_per_byte: intensity(ops as f64, bytes as f64),
        normalized_power: normalized_power(ops as f64, t.dims.bits as u32),
    })
}

/// Link bandwidth in GB/s, with 1 GB = 1.024e9 bytes.
pub fn bandwidth_gbps(bus_bits: u64, clock_mhz: f64) -> f64 {
    bus_bits as f64 / 8.0 * clock_mhz * 1e6 / 1.024e9
}

/// Operations per byte; zero when either side is zero.
pub fn intensity(ops: f64, bytes: f64) -> f64 {
    if ops <= 0.0 || bytes <= 0.0 {
        0.0
    } else {
        ops / bytes
    }
}

/// Bit-width-normalized power proxy `ops · (bits/8)²`.
pub fn normalized_power(ops: f64, bits: u32) -> f64 {
    let r = bits as f64 / 8.0;
    ops * r * r
}

/// Scales a result from a node `alpha` times more advanced back to the
/// reference node.
pub fn dennard_normalize(throughput: f64, power_eff: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} must be positive")));
    }
    Ok((throughput / (alpha * alpha), power_eff / alpha))
}

/// Attainable performance under the roofline.
pub fn roofline_point(intensity: f64, bandwidth_gbps: f64, peak_gops: f64) -> f64 {
    if intensity <= 0.0 {
        return 0.0;
    }
    peak_gops.min(intensity * bandwidth_gbps)
}

fn dims_u64(d: &ModelDims) -> (u64, u64, u64) {
    (d.n_tokens as u64, d.embed_dim as u64, d.head_dim() as u64)
}
