//! Timing engine: a cycle-stepped scheduler that admits heads into the
//! shared SA pipeline and walks each head through a declared stage table.

use super::config::{ArrayConfig, Topology};
use super::trace::{CycleTrace, EventKind};
use crate::analytics::{comm_cycles, comm_per_head};
use crate::error::{Error, Result};
use crate::msa::ModelDims;

/// Where a stage ends, if it marks an observable event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    None,
    LnAggDone,
    KLatch,
    SoftmaxAggDone,
    VLatch,
}

/// One segment of the head's critical path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub name: &'static str,
    pub cycles: u64,
    pub marker: Marker,
}

const fn st(name: &'static str, cycles: u64) -> Stage {
    Stage {
        name,
        cycles,
        marker: Marker::None,
    }
}

/// Critical path of token 0 from the input selector to the first SA output.
pub fn stage_table(dims: &ModelDims, cfg: &ArrayConfig) -> Vec<Stage> {
    let m = cfg.mul_latencies();
    let (n, d, dh) = (dims.n_tokens as u64, dims.embed_dim as u64, dims.head_dim() as u64);
    let mark = |s: Stage, marker| Stage { marker, ..s };
    vec![
        st("input_select", 1),
        st("qkv_mac", d),
        st("mac_drain", 1),
        st("qk_postmac", m.qk_postmac + 1),
        st("welford_in", 1),
        mark(st("ln_forward", dh * (m.welford + 1)), Marker::LnAggDone),
        st("ln_backward", dh),
        st("normq", m.normq + 1),
        st("normq_out", 1),
        st("k_reorder", 2),
        st("k_fill", n),
        mark(st("k_latch", 1), Marker::KLatch),
        st("a_mac", dh),
        st("a_out", 1),
        st("a_postmac", m.a_postmac + 1),
        st("exp_in", 1),
        st("exp", m.exp + cfg.exp_depth),
        mark(st("sum_forward", n), Marker::SoftmaxAggDone),
        st("sum_turn", 1),
        st("sum_backward", n),
        st("delay_out", 1),
        st("scaleq", m.scaleq + 1),
        st("scaleq_out", 1),
        mark(st("v_latch", 1), Marker::VLatch),
        st("av_in", 1),
        st("av_mac", dh),
        st("av_out", 1),
        st("output_reg", 1),
    ]
}

/// Total of the stage table.
pub fn head_latency(dims: &ModelDims, cfg: &ArrayConfig) -> u64 {
    stage_table(dims, cfg).iter().map(|s| s.cycles).sum()
}

/// Static FIFO depths derived from the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FifoDepths {
    /// One token of K̃ awaiting reorder into the loader chains.
    pub k_reorder: usize,
    /// Elements held while the layer-norm statistics aggregate.
    pub ln_hold: usize,
    /// Exponentials held while the softmax denominator aggregates.
    pub softmax_hold: usize,
}

pub fn fifo_depths(dims: &ModelDims) -> FifoDepths {
    FifoDepths {
        k_reorder: dims.head_dim(),
        ln_hold: dims.head_dim(),
        softmax_hold: dims.n_tokens,
    }
}

/// Resource busy intervals a head slot occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotCosts {
    pub input_port: u64,
    pub weight_hold: u64,
    pub bus_slice: u64,
}

pub fn slot_costs(dims: &ModelDims, cfg: &ArrayConfig) -> SlotCosts {
    let t = cfg.timing_inputs(dims);
    let (n, d, dh) = (dims.n_tokens as u64, dims.embed_dim as u64, dims.head_dim() as u64);
    SlotCosts {
        input_port: n + d,
        weight_hold: dh + 2 * n,
        bus_slice: comm_per_head(&t),
    }
}

/// Runs the timing engine for `blocks` consecutive attention blocks.
pub fn run_timing(dims: &ModelDims, cfg: &ArrayConfig, blocks: usize) -> Result<CycleTrace> {
    cfg.validate(dims)?;
    if blocks == 0 {
        return Err(Error::InvalidConfig("at least one block is required".into()));
    }
    let t = cfg.timing_inputs(dims);
    let comm = comm_cycles(&t);
    let stages = stage_table(dims, cfg);
    let lat1: u64 = stages.iter().map(|s| s.cycles).sum();
    let costs = slot_costs(dims, cfg);
    let n = dims.n_tokens as u64;
    let heads = dims.heads;
    let modules = match cfg.topology {
        Topology::Pipelined => 1,
        Topology::DaisyChain => heads,
    };

    let mut trace = CycleTrace::default();
    if comm > 0 {
        trace.push(0, "bus", EventKind::InputFirst);
        trace.push(comm - 1, "bus", EventKind::InputLast);
    }

    // Per-module resources; the bus is shared by every module.
    let mut port_free = vec![comm; modules];
    let mut hold_free = vec![comm; modules];
    let mut bus_free = comm;
    let total_slots = blocks * heads;
    let mut slot = 0usize;
    let mut last_out_first = vec![0u64; blocks];
    let mut cycle = 0u64;
    let daisy = cfg.topology == Topology::DaisyChain;
    let mut prev_start = 0u64;
    while slot < total_slots {
        let (block, head) = (slot / heads, slot % heads);
        let module = head % modules;
        // Pipelined heads each take a bus slice; a daisy chain moves a whole
        // block at once and forwards tokens one hop per module.
        let gate_bus = if !daisy || head == 0 { bus_free } else { 0 };
        let gate_hop = if daisy && head > 0 { prev_start + 1 } else { 0 };
        if cycle < port_free[module] || cycle < hold_free[module] || cycle < gate_bus || cycle < gate_hop {
            cycle += 1;
            continue;
        }
        let unit = if block == 0 {
            format!("head{head}")
        } else {
            format!("b{block}.head{head}")
        };
        trace.push(cycle, "selector", EventKind::HeadSwitch);
        trace.push(cycle, unit.as_str(), EventKind::InputFirst);
        let mut at = cycle;
        for s in &stages {
            at += s.cycles;
            match s.marker {
                Marker::None => {}
                Marker::LnAggDone => trace.push(at, format!("{unit}.ln"), EventKind::AggDone),
                Marker::KLatch => trace.push(at, format!("{unit}.k_loader"), EventKind::WeightLatch),
                Marker::SoftmaxAggDone => trace.push(at, format!("{unit}.softmax"), EventKind::AggDone),
                Marker::VLatch => trace.push(at, format!("{unit}.v_loader"), EventKind::WeightLatch),
            }
        }
        trace.push(cycle + n - 1, unit.as_str(), EventKind::InputLast);
        trace.push(cycle + lat1, unit.as_str(), EventKind::OutputFirst);
        trace.push(cycle + lat1 + n - 1, unit.as_str(), EventKind::OutputLast);
        last_out_first[block] = last_out_first[block].max(cycle + lat1);

        port_free[module] = cycle + costs.input_port;
        hold_free[module] = cycle + costs.weight_hold;
        if !daisy {
            bus_free = cycle + costs.bus_slice;
        } else if head == 0 {
            bus_free = cycle + comm;
        }
        prev_start = cycle;
        slot += 1;
    }

    // The output transfer starts once the last head of the first block
    // produces its first result.
    if comm > 0 {
        let start = last_out_first[0];
        trace.push(start, "bus", EventKind::OutputFirst);
        trace.push(start + comm - 1, "bus", EventKind::OutputLast);
    }
    trace.sort();
    trace.validate()?;
    Ok(trace)
}

/// Input bits per cycle needed to keep the array busy at steady state:
/// one block's input divided by the interval between block starts.
pub fn steady_input_bandwidth(dims: &ModelDims, cfg: &ArrayConfig) -> Result<f64> {
    let trace = run_timing(dims, cfg, 2)?;
    let switches = trace.all("selector", EventKind::HeadSwitch);
    let interval = switches[dims.heads] - switches[0];
    let bits = (dims.n_tokens * dims.embed_dim * dims.bits as usize) as f64;
    Ok(bits / interval as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{msa_latency, pitch, sa_latency, Bus};

    #[test]
    fn stage_table_matches_closed_form() {
        for dims in [ModelDims::deit_small(), ModelDims::deit_tiny(), ModelDims::toy()] {
            for mul in [1, 2, 4] {
                let cfg = ArrayConfig::for_dims(&dims, mul, Bus::Bits(64));
                assert_eq!(head_latency(&dims, &cfg), sa_latency(&cfg.timing_inputs(&dims)).unwrap());
            }
        }
        let s = ModelDims::deit_small();
        assert_eq!(head_latency(&s, &ArrayConfig::for_dims(&s, 1, Bus::Bits(64))), 1327);
    }

    #[test]
    fn deit_small_trace() {
        let dims = ModelDims::deit_small();
        let cfg = ArrayConfig::for_dims(&dims, 1, Bus::Bits(64));
        let tr = run_timing(&dims, &cfg, 1).unwrap();
        assert_eq!(tr.sa_latency(), Some(1327));
        assert_eq!(tr.pitches(), vec![594; 5]);
        assert_eq!(tr.msa_latency(), Some(11425));
        assert_eq!(tr.msa_latency().unwrap(), msa_latency(&cfg.timing_inputs(&dims)).unwrap());

        let inf = ArrayConfig::for_dims(&dims, 1, Bus::Infinite);
        let tr = run_timing(&dims, &inf, 1).unwrap();
        assert_eq!(tr.pitch(), Some(582));
        assert_eq!(tr.pitch().unwrap(), pitch(&inf.timing_inputs(&dims)).unwrap().cycles);
    }

    #[test]
    fn loader_hold_equals_pitch() {
        let dims = ModelDims::deit_small();
        let cfg = ArrayConfig::for_dims(&dims, 1, Bus::Bits(64));
        let tr = run_timing(&dims, &cfg, 1).unwrap();
        let latches: Vec<u64> = (0..6)
            .map(|h| tr.find(&format!("head{h}.k_loader"), EventKind::WeightLatch).unwrap())
            .collect();
        assert!(latches.windows(2).all(|w| w[1] - w[0] == 594));
    }

    #[test]
    fn pipelining_divides_bandwidth() {
        let dims = ModelDims::new(16, 24, 3).unwrap();
        let mut cfg = ArrayConfig::for_dims(&dims, 1, Bus::Infinite);
        let piped = steady_input_bandwidth(&dims, &cfg).unwrap();
        cfg.topology = Topology::DaisyChain;
        let chain = steady_input_bandwidth(&dims, &cfg).unwrap();
        assert!((piped * 3.0 - chain).abs() < 1e-12, "{piped} {chain}");
    }
}
