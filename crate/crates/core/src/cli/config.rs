//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. A `preset` key sets
//! all model dimensions at once; explicit dimension keys override it
//! regardless of order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::analytics::Bus;
use crate::error::{Error, Result};
use crate::msa::ModelDims;
use crate::quantarith::{fits, CodeRange, FixedPointParams, Signedness};
use crate::sim::{ArrayConfig, Topology, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Func,
    Sim,
    Verify,
    Analyze,
    Sweep,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        Some(match s {
            "func" => Mode::Func,
            "sim" => Mode::Sim,
            "verify" => Mode::Verify,
            "analyze" => Mode::Analyze,
            "sweep" => Mode::Sweep,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dims: ModelDims,
    pub array: ArrayConfig,
    pub fixedpoint: FixedPointParams,
    pub seed: u64,
    pub mode: Mode,
    pub out_dir: PathBuf,
    /// Optional quantized block input; synthetic when absent.
    pub input: Option<PathBuf>,
    /// Encoder layers for whole-model figures.
    pub layers: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dims = ModelDims::toy();
        RunConfig {
            dims,
            array: ArrayConfig::for_dims(&dims, 1, Bus::Bits(64)),
            fixedpoint: FixedPointParams::default(),
            seed: 0,
            mode: Mode::Func,
            out_dir: PathBuf::from("out"),
            input: None,
            layers: 12,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Parse {
        field: key.to_string(),
        detail: format!("invalid value {value:?}"),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

/// Splits config text into keys and values; later duplicates win.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            field: format!("line {}", i + 1),
            detail: "expected key = value".into(),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn from_pairs(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(p) = kv.get("preset") {
            c.dims = ModelDims::from_preset(p).ok_or_else(|| bad("preset", p))?;
        }
        let mut mul_cycles = 1;
        let mut bus = Bus::Bits(64);
        let mut clock_ns = 2.5;
        let mut variant = Variant::Dsp;
        let mut topology = Topology::Pipelined;
        let mut exp_depth = c.array.exp_depth;
        for (k, v) in kv {
            let v = v.as_str();
            match k.as_str() {
                "preset" => {}
                "n_tokens" => c.dims.n_tokens = num(k, v)?,
                "embed_dim" => c.dims.embed_dim = num(k, v)?,
                "heads" => c.dims.heads = num(k, v)?,
                "mlp_ratio" => c.dims.mlp_ratio = num(k, v)?,
                "bits" => c.dims.bits = num(k, v)?,
                "mul_cycles" => mul_cycles = num(k, v)?,
                "bus_bits_per_cycle" => bus = Bus::parse(v).ok_or_else(|| bad(k, v))?,
                "clock_ns" => clock_ns = num(k, v)?,
                "exp_depth" => exp_depth = num(k, v)?,
                "variant" => {
                    variant = match v {
                        "dsp" => Variant::Dsp,
                        "dsp_free" => Variant::DspFree,
                        _ => return Err(bad(k, v)),
                    }
                }
                "topology" => {
                    topology = match v {
                        "pipelined" => Topology::Pipelined,
                        "daisy_chain" => Topology::DaisyChain,
                        _ => return Err(bad(k, v)),
                    }
                }
                "nu_exp" => c.fixedpoint.nu_exp = num(k, v)?,
                "prescale" => c.fixedpoint.prescale = num(k, v)?,
                "exp_prescale" => c.fixedpoint.exp_prescale = num(k, v)?,
                "acc_bits" => c.fixedpoint.acc_bits = num(k, v)?,
                "postmac_frac_bits" => c.fixedpoint.postmac_frac_bits = num(k, v)?,
                "exp_out_frac_bits" => c.fixedpoint.exp_out_frac_bits = num(k, v)?,
                "thresh_frac_bits" => c.fixedpoint.thresh_frac_bits = num(k, v)?,
                "seed" => c.seed = num(k, v)?,
                "layers" => c.layers = num(k, v)?,
                "mode" => c.mode = Mode::parse(v).ok_or_else(|| bad(k, v))?,
                "out_dir" => c.out_dir = PathBuf::from(v),
                "input" => c.input = Some(PathBuf::from(v)),
                _ => {
                    return Err(Error::Parse {
                        field: k.clone(),
                        detail: "unknown key".into(),
                    })
                }
            }
        }
        c.array = ArrayConfig {
            variant,
            topology,
            clock_ns,
            exp_depth,
            ..ArrayConfig::for_dims(&c.dims, mul_cycles, bus)
        };
        c.validate()?;
        Ok(c)
    }

    /// Rebuilds the array shape after the dimensions change.
    pub fn with_dims(&self, dims: ModelDims) -> Self {
        RunConfig {
            dims,
            array: ArrayConfig {
                rows: dims.embed_dim,
                cols: 3 * dims.head_dim(),
                ..self.array
            },
            ..self.clone()
        }
    }

    /// Rejects invalid shapes or parameters, and MAC sums that could overflow.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.array.validate(&self.dims)?;
        self.fixedpoint.validate()?;
        if self.layers == 0 {
            return Err(Error::InvalidConfig("layers must be >= 1".into()));
        }
        let s = CodeRange::new(self.dims.bits, Signedness::Signed).max as i128;
        let u = CodeRange::new(self.dims.bits, Signedness::Unsigned).max as i128;
        let dh = self.dims.head_dim() as i128;
        let worst = [
            ("qkv", self.dims.embed_dim as i128 * s * s),
            ("score", dh * s * s),
            ("weighted value", self.dims.n_tokens as i128 * u * s),
        ];
        for (unit, value) in worst {
            if !fits(value, self.fixedpoint.acc_bits) {
                return Err(Error::InvalidConfig(format!(
                    "{unit} accumulator may reach {value}, beyond {} bits",
                    self.fixedpoint.acc_bits
                )));
            }
        }
        Ok(())
    }

    /// Flat listing of the effective configuration.
    pub fn to_kv(&self) -> String {
        let a = &self.array;
        let f = &self.fixedpoint;
        let d = &self.dims;
        format!(
            "n_tokens={}\nembed_dim={}\nheads={}\nmlp_ratio={}\nbits={}\nmul_cycles={}\nbus_bits_per_cycle={}\n\
             clock_ns={}\nexp_depth={}\nvariant={}\ntopology={}\nnu_exp={}\nprescale={}\nexp_prescale={}\n\
             acc_bits={}\npostmac_frac_bits={}\nexp_out_frac_bits={}\nthresh_frac_bits={}\nseed={}\nlayers={}\n",
            d.n_tokens,
            d.embed_dim,
            d.heads,
            d.mlp_ratio,
            d.bits,
            a.mul_cycles,
            a.bus,
            a.clock_ns,
            a.exp_depth,
            match a.variant {
                Variant::Dsp => "dsp",
                Variant::DspFree => "dsp_free",
            },
            match a.topology {
                Topology::Pipelined => "pipelined",
                Topology::DaisyChain => "daisy_chain",
            },
            f.nu_exp,
            f.prescale,
            f.exp_prescale,
            f.acc_bits,
            f.postmac_frac_bits,
            f.exp_out_frac_bits,
            f.thresh_frac_bits,
            self.seed,
            self.layers,
        )
    }
}
