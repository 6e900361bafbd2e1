use crate::analytics::{Bus, MulLatencies, TimingInputs, DEFAULT_EXP_DEPTH};
use crate::error::{Error, Result};
use crate::msa::ModelDims;

/// Multiplier implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Hard multipliers, `mul_cycles` each.
    Dsp,
    /// Pipelined soft multipliers; the threshold-scaling product takes twice
    /// as many stages as the others.
    DspFree,
}

/// How the `H` heads share hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    /// One SA pipeline, time-multiplexed across heads.
    Pipelined,
    /// One SA pipeline per head, inputs forwarded module to module.
    DaisyChain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    /// Rows of the projection array (`d`).
    pub rows: usize,
    /// Columns of the projection array (`3 d_h`).
    pub cols: usize,
    pub mul_cycles: u64,
    pub bus: Bus,
    pub clock_ns: f64,
    pub variant: Variant,
    pub exp_depth: u64,
    pub topology: Topology,
}

impl ArrayConfig {
    pub fn for_dims(dims: &ModelDims, mul_cycles: u64, bus: Bus) -> Self {
        ArrayConfig {
            rows: dims.embed_dim,
            cols: 3 * dims.head_dim(),
            mul_cycles,
            bus,
            clock_ns: 2.5,
            variant: Variant::Dsp,
            exp_depth: DEFAULT_EXP_DEPTH,
            topology: Topology::Pipelined,
        }
    }

    pub fn dsp_free(dims: &ModelDims, bus: Bus) -> Self {
        ArrayConfig {
            variant: Variant::DspFree,
            ..Self::for_dims(dims, 2, bus)
        }
    }

    pub fn mul_latencies(&self) -> MulLatencies {
        match self.variant {
            Variant::Dsp => MulLatencies::uniform(self.mul_cycles),
            Variant::DspFree => MulLatencies {
                scaleq: 2 * self.mul_cycles,
                ..MulLatencies::uniform(self.mul_cycles)
            },
        }
    }

    pub fn timing_inputs(&self, dims: &ModelDims) -> TimingInputs {
        TimingInputs {
            dims: *dims,
            mul: self.mul_latencies(),
            bus: self.bus,
            clock_ns: self.clock_ns,
            exp_depth: self.exp_depth,
        }
    }

    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        dims.validate()?;
        if self.mul_cycles == 0 {
            return Err(Error::InvalidConfig("mul_cycles must be >= 1".into()));
        }
        if self.variant == Variant::DspFree && self.mul_cycles < 2 {
            return Err(Error::InvalidConfig("dsp_free needs mul_cycles >= 2".into()));
        }
        if let Bus::Bits(0) = self.bus {
            return Err(Error::InvalidConfig("bus_bits_per_cycle must be > 0".into()));
        }
        if !(self.clock_ns > 0.0) {
            return Err(Error::InvalidConfig("clock_ns must be positive".into()));
        }
        if (self.rows, self.cols) != (dims.embed_dim, 3 * dims.head_dim()) {
            return Err(Error::ShapeMismatch {
                op: "ArrayConfig",
                expected: format!("{}x{}", dims.embed_dim, 3 * dims.head_dim()),
                got: format!("{}x{}", self.rows, self.cols),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dsp_free_latencies() {
        let c = ArrayConfig::dsp_free(&ModelDims::deit_small(), Bus::Bits(64));
        assert_eq!(c.mul_latencies(), MulLatencies::dsp_free());
        assert!(c.validate(&ModelDims::deit_small()).is_ok());
        let bad = ArrayConfig {
            mul_cycles: 1,
            ..c
        };
        assert!(bad.validate(&ModelDims::deit_small()).is_err());
    }
}
