use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use rayon::prelude::*;

use super::config::RunConfig;
use super::tensorfile;
use crate::analytics::{
    bandwidth_gbps, full_model_latency, layer_breakdown, msa_latency, pitch, sa_latency, Bus, PitchBound,
};
use crate::error::{Error, Result};
use crate::msa::{
    float_reference_msa, msa_heads, msa_host_side, quantize_params, Matrix, QuantTensor, SyntheticModel,
};
use crate::quantarith::{fixed_stats_error, suite, Signedness};
use crate::sim::{build_sa_pipeline, run_dsp_free, run_timing, steady_input_bandwidth, Variant};

/// Ordered flat `key=value` record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub fields: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.fields.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_kv(&self) -> String {
        self.fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn metric(v: f64) -> String {
    format!("{v:.9}")
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

/// Seeded parameters, with the block input replaced by `cfg.input` if set.
pub fn load_model(cfg: &RunConfig) -> Result<SyntheticModel> {
    let mut m = SyntheticModel::generate(cfg.dims, cfg.seed)?;
    if let Some(path) = &cfg.input {
        let z = tensorfile::read(path)?;
        let (n, d) = (cfg.dims.n_tokens, cfg.dims.embed_dim);
        if (z.rows, z.cols, z.bits, z.signedness) != (n, d, cfg.dims.bits, Signedness::Signed) {
            return Err(Error::InvalidConfig(format!(
                "input tensor must be {n}x{d} signed {}-bit, got {}x{} {:?} {}-bit",
                cfg.dims.bits, z.rows, z.cols, z.signedness, z.bits
            )));
        }
        let step = z
            .global_step()
            .ok_or_else(|| Error::InvalidConfig("input tensor needs a global step".into()))?;
        m.z_full = z.dequantize();
        m.sa = quantize_params(&m.real, step, &z)?;
        m.z3b = z;
    }
    Ok(m)
}

/// Real-valued inputs of every layer-norm row (Q and K of each head),
/// computed from the dequantized block input and weights.
pub fn layernorm_inputs(m: &SyntheticModel) -> Vec<Vec<f64>> {
    let z = m.z3b.dequantize();
    let mut rows = Vec::new();
    for hp in &m.sa.heads {
        for (u, b) in [(&hp.u_q, &hp.b_q), (&hp.u_k, &hp.b_k)] {
            let x = z.matmul(&u.dequantize());
            rows.extend((0..x.rows).map(|r| x.row(r).iter().zip(b).map(|(v, b)| v + b).collect::<Vec<_>>()));
        }
    }
    rows
}

/// Error metrics of the integer path against the float reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    pub welford_error: f64,
}

fn func_outputs(cfg: &RunConfig) -> Result<(SyntheticModel, Vec<QuantTensor>, Matrix, ErrorMetrics)> {
    let m = load_model(cfg)?;
    let heads: Vec<QuantTensor> = msa_heads(&m.z3b, &m.sa, &cfg.fixedpoint)?
        .into_iter()
        .map(|h| h.sa3b)
        .collect();
    let out = msa_host_side(&heads, cfg.dims.heads, &m.u_msa, &m.z_full)?;
    let reference = float_reference_msa(&m.z_full, &m.real);
    let metrics = ErrorMetrics {
        max_abs_error: out.max_abs_diff(&reference),
        mean_abs_error: out.mean_abs_diff(&reference),
        welford_error: fixed_stats_error(&layernorm_inputs(&m), &cfg.fixedpoint)?,
    };
    Ok((m, heads, out, metrics))
}

pub fn error_metrics(cfg: &RunConfig) -> Result<ErrorMetrics> {
    Ok(func_outputs(cfg)?.3)
}

fn matrix_csv(m: &Matrix) -> String {
    (0..m.rows)
        .map(|r| m.row(r).iter().map(|v| metric(*v)).collect::<Vec<_>>().join(",") + "\n")
        .collect()
}

/// Integer forward pass. Writes the per-head outputs and the block output
/// along with an error summary.
pub fn cmd_func(cfg: &RunConfig) -> Result<Summary> {
    cfg.validate()?;
    let (_, heads, out, e) = func_outputs(cfg)?;
    ensure_out_dir(cfg)?;
    for (h, t) in heads.iter().enumerate() {
        tensorfile::write(&cfg.out_dir.join(format!("head{h}_sa.qt")), t)?;
    }
    write_file(&cfg.out_dir, "msa_out.csv", &matrix_csv(&out))?;
    let mut s = Summary::default();
    s.push("mode", "func");
    s.push("seed", cfg.seed);
    s.push("heads", heads.len());
    s.push("max_abs_error", metric(e.max_abs_error));
    s.push("mean_abs_error", metric(e.mean_abs_error));
    s.push("welford_error", metric(e.welford_error));
    write_file(&cfg.out_dir, "func_summary.txt", &s.to_kv())?;
    info!("func: {} heads, max abs error {:.4}", heads.len(), e.max_abs_error);
    Ok(s)
}

fn analytic_msa(cfg: &RunConfig) -> String {
    match msa_latency(&cfg.array.timing_inputs(&cfg.dims)) {
        Ok(c) => c.to_string(),
        Err(Error::CommOverlap { .. }) => "comm_overlap".into(),
        Err(e) => e.to_string(),
    }
}

fn link_gbps(cfg: &RunConfig) -> String {
    match cfg.array.bus {
        Bus::Bits(b) => format!("{:.3}", bandwidth_gbps(b, 1e3 / cfg.array.clock_ns)),
        Bus::Infinite => "inf".into(),
    }
}

/// Cycle-level run. Writes the per-head outputs and the trace log along with
/// a timing summary.
pub fn cmd_sim(cfg: &RunConfig) -> Result<Summary> {
    cfg.validate()?;
    let m = load_model(cfg)?;
    let mut acc = build_sa_pipeline(&cfg.dims, &cfg.array, &m.sa, &cfg.fixedpoint)?;
    let out = acc.run_msa(&m.z3b)?;
    ensure_out_dir(cfg)?;
    for (h, t) in out.sa_outputs().iter().enumerate() {
        tensorfile::write(&cfg.out_dir.join(format!("head{h}_sa.qt")), t)?;
    }
    write_file(&cfg.out_dir, "trace.log", &out.trace.to_log())?;
    let t = cfg.array.timing_inputs(&cfg.dims);
    let missing = || Error::InvalidConfig("trace lacks head 0 events".into());
    let mut s = Summary::default();
    s.push("mode", "sim");
    s.push("seed", cfg.seed);
    s.push("sa_latency_cycles", out.trace.sa_latency().ok_or_else(missing)?);
    s.push(
        "pitch_cycles",
        out.trace.pitch().map(|p| p.to_string()).unwrap_or_else(|| "none".into()),
    );
    s.push("msa_latency_cycles", out.trace.msa_latency().ok_or_else(missing)?);
    s.push("analytic_sa_latency_cycles", sa_latency(&t)?);
    s.push("analytic_pitch_cycles", pitch(&t)?.cycles);
    s.push("analytic_msa_latency_cycles", analytic_msa(cfg));
    s.push("comm_cycles", out.ideal_comm_cycles);
    s.push("packed_comm_cycles", out.packed_comm_cycles);
    s.push("bus_bandwidth_gbps", link_gbps(cfg));
    s.push(
        "steady_input_bits_per_cycle",
        format!("{:.4}", steady_input_bandwidth(&cfg.dims, &cfg.array)?),
    );
    s.push("final_cycle", out.trace.final_cycle);
    write_file(&cfg.out_dir, "sim_summary.txt", &s.to_kv())?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    fn add(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{}\t{}\t{}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}

fn count_mismatches(a: &[QuantTensor], b: &[QuantTensor]) -> usize {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.codes.iter().zip(&y.codes).filter(|(p, q)| p != q).count() + x.codes.len().abs_diff(y.codes.len()))
        .sum::<usize>()
        + a.len().abs_diff(b.len())
}

/// Cross-checks the simulator against the golden model and the closed forms,
/// then runs the kernel oracle suites.
/// `fault` breaks one softmax delay line to exercise the alignment check.
pub fn cmd_verify(cfg: &RunConfig, fault: Option<usize>) -> Result<VerifyReport> {
    cfg.validate()?;
    let m = load_model(cfg)?;
    let fp = &cfg.fixedpoint;
    let mut r = VerifyReport::default();

    let golden: Vec<QuantTensor> = msa_heads(&m.z3b, &m.sa, fp)?.into_iter().map(|h| h.sa3b).collect();
    let mut acc = build_sa_pipeline(&cfg.dims, &cfg.array, &m.sa, fp)?;
    if let Some(c) = fault {
        acc.inject_delay_fault(c)?;
    }
    let sim = match acc.run_msa(&m.z3b) {
        Ok(out) => {
            let bad = count_mismatches(&golden, &out.sa_outputs());
            r.add("golden_vs_sim", bad == 0, format!("{bad} mismatched codes"));
            Some(out)
        }
        Err(e @ (Error::Alignment { .. } | Error::PrematureLatch { .. } | Error::FifoOverflow { .. })) => {
            r.add("golden_vs_sim", false, e.to_string());
            None
        }
        Err(e) => return Err(e),
    };

    let t = cfg.array.timing_inputs(&cfg.dims);
    let trace = match sim {
        Some(out) => out.trace,
        None => run_timing(&cfg.dims, &cfg.array, 1)?,
    };
    let mut diffs = Vec::new();
    if trace.sa_latency() != Some(sa_latency(&t)?) {
        diffs.push(format!("sa {:?} vs {}", trace.sa_latency(), sa_latency(&t)?));
    }
    let p = pitch(&t)?.cycles;
    if cfg.dims.heads > 1 && trace.pitches().iter().any(|&x| x != p) {
        diffs.push(format!("pitches {:?} vs {p}", trace.pitches()));
    }
    match msa_latency(&t) {
        Ok(c) if trace.msa_latency() != Some(c) => diffs.push(format!("msa {:?} vs {c}", trace.msa_latency())),
        Ok(_) | Err(Error::CommOverlap { .. }) => {}
        Err(e) => return Err(e),
    }
    r.add(
        "trace_vs_analytics",
        diffs.is_empty(),
        if diffs.is_empty() {
            format!("sa={} pitch={p} msa={}", sa_latency(&t)?, analytic_msa(cfg))
        } else {
            diffs.join("; ")
        },
    );

    if fault.is_none() {
        let mul = cfg.array.mul_cycles.max(2);
        let rep = run_dsp_free(&cfg.dims, &m.sa, fp, cfg.array.bus, &m.z3b, mul)?;
        let mut free = cfg.array;
        free.variant = Variant::DspFree;
        free.mul_cycles = mul;
        let mut base = cfg.array;
        base.variant = Variant::Dsp;
        base.mul_cycles = 1;
        let expect = sa_latency(&free.timing_inputs(&cfg.dims))? - sa_latency(&base.timing_inputs(&cfg.dims))?;
        let same = rep.dsp.heads == rep.dsp_free.heads;
        r.add(
            "dsp_vs_dsp_free",
            same && rep.extra_latency == expect,
            format!("outputs identical={same} extra_latency={} expected={expect}", rep.extra_latency),
        );
    }

    for s in [suite::comparator_grid(), suite::normq_grid(), suite::exp_grid(fp)] {
        r.add(
            s.name,
            s.passed(),
            format!("{} points, {} failures {}", s.checked, s.failures, s.detail).trim_end().to_string(),
        );
    }
    if !cfg.out_dir.as_os_str().is_empty() {
        ensure_out_dir(cfg)?;
        write_file(&cfg.out_dir, "verify_report.txt", &r.to_text())?;
    }
    Ok(r)
}

/// Closed-form timing report.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<Summary> {
    cfg.validate()?;
    let t = cfg.array.timing_inputs(&cfg.dims);
    let lb = layer_breakdown(&t)?;
    let mut s = Summary::default();
    s.push("mode", "analyze");
    match full_model_latency(&t, cfg.layers) {
        Ok(rep) => {
            for line in rep.to_kv().lines() {
                if let Some((k, v)) = line.split_once('=') {
                    s.push(k, v);
                }
            }
        }
        Err(Error::CommOverlap { comm, compute }) => {
            s.push("sa_latency_cycles", sa_latency(&t)?);
            s.push("msa_latency_cycles", "comm_overlap");
            s.push("comm_overlap", format!("{comm}>{compute}"));
        }
        Err(e) => return Err(e),
    }
    s.push("sa_pipelined_cycles", lb.sa_pipelined);
    s.push("projection_cycles", lb.projection);
    s.push("mlp_cycles", lb.mlp);
    s.push("bus_bandwidth_gbps", link_gbps(cfg));
    ensure_out_dir(cfg)?;
    write_file(&cfg.out_dir, "analyze_summary.txt", &s.to_kv())?;
    Ok(s)
}

/// One sweep dimension and its values.
#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    NuExp(Vec<u32>),
    Prescale(Vec<i64>),
    BusBits(Vec<Bus>),
    Heads(Vec<usize>),
    Mul(Vec<u64>),
}

fn parse_values<T>(name: &str, text: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr + TryFrom<i64>,
{
    let bad = || Error::Parse {
        field: format!("axes.{name}"),
        detail: format!("cannot parse {text:?}"),
    };
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (i64, i64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            for v in a..=b {
                out.push(T::try_from(v).map_err(|_| bad())?);
            }
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Parses `name=values;name=values`, where values are comma-separated
/// numbers or inclusive ranges `a..b`. Names: `nu_exp`, `prescale`,
/// `bus_bits` (accepts `inf`), `H`, `MUL`.
pub fn parse_axes(text: &str) -> Result<Vec<Axis>> {
    let mut axes = Vec::new();
    for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, values) = item.split_once('=').ok_or_else(|| Error::Parse {
            field: "axes".into(),
            detail: format!("expected name=values in {item:?}"),
        })?;
        axes.push(match name.trim() {
            "nu_exp" => Axis::NuExp(parse_values(name, values)?),
            "prescale" => Axis::Prescale(parse_values(name, values)?),
            "H" | "heads" => Axis::Heads(parse_values(name, values)?),
            "MUL" | "mul_cycles" => Axis::Mul(parse_values(name, values)?),
            "bus_bits" => Axis::BusBits(
                values
                    .split(',')
                    .map(|v| {
                        Bus::parse(v).ok_or_else(|| Error::Parse {
                            field: "axes.bus_bits".into(),
                            detail: format!("cannot parse {v:?}"),
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
            other => {
                return Err(Error::Parse {
                    field: "axes".into(),
                    detail: format!("unknown axis {other:?}"),
                })
            }
        });
    }
    Ok(axes)
}

/// Grid key in column order; `u64::MAX` stands for the infinite bus.
type GridKey = (u32, i64, u64, usize, u64);

fn bus_key(b: Bus) -> u64 {
    match b {
        Bus::Bits(v) => v,
        Bus::Infinite => u64::MAX,
    }
}

fn grid(cfg: &RunConfig, axes: &[Axis]) -> Vec<GridKey> {
    let base: GridKey = (
        cfg.fixedpoint.nu_exp,
        cfg.fixedpoint.prescale,
        bus_key(cfg.array.bus),
        cfg.dims.heads,
        cfg.array.mul_cycles,
    );
    let mut points = vec![base];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| -> Vec<GridKey> {
                match axis {
                    Axis::NuExp(v) => v.iter().map(|&x| (x, p.1, p.2, p.3, p.4)).collect(),
                    Axis::Prescale(v) => v.iter().map(|&x| (p.0, x, p.2, p.3, p.4)).collect(),
                    Axis::BusBits(v) => v.iter().map(|&x| (p.0, p.1, bus_key(x), p.3, p.4)).collect(),
                    Axis::Heads(v) => v.iter().map(|&x| (p.0, p.1, p.2, x, p.4)).collect(),
                    Axis::Mul(v) => v.iter().map(|&x| (p.0, p.1, p.2, p.3, x)).collect(),
                }
            })
            .collect();
    }
    points.sort_unstable();
    points.dedup();
    points
}

fn point_config(cfg: &RunConfig, k: GridKey) -> Result<RunConfig> {
    let mut dims = cfg.dims;
    dims.heads = k.3;
    let mut c = cfg.with_dims(dims);
    c.fixedpoint.nu_exp = k.0;
    c.fixedpoint.prescale = k.1;
    c.array.bus = if k.2 == u64::MAX { Bus::Infinite } else { Bus::Bits(k.2) };
    c.array.mul_cycles = k.4;
    c.validate()?;
    Ok(c)
}

pub const SWEEP_HEADER: &str = "nu_exp,prescale,bus_bits,heads,mul_cycles,max_abs_error,mean_abs_error,welford_error,\
sa_latency,pitch,pitch_bound,msa_latency";

/// Grid sweep over `axes` around `cfg`. Error metrics depend only on
/// `(nu_exp, prescale, H)` and are computed once per distinct triple; rows
/// come out sorted by grid key.
pub fn cmd_sweep(cfg: &RunConfig, axes: &[Axis]) -> Result<String> {
    cfg.validate()?;
    let points = grid(cfg, axes);
    let configs = points
        .iter()
        .map(|&k| point_config(cfg, k).map(|c| (k, c)))
        .collect::<Result<Vec<_>>>()?;
    let mut func_keys: Vec<(u32, i64, usize)> = points.iter().map(|k| (k.0, k.1, k.3)).collect();
    func_keys.sort_unstable();
    func_keys.dedup();
    let metrics: BTreeMap<(u32, i64, usize), ErrorMetrics> = func_keys
        .par_iter()
        .map(|&fk| {
            let c = configs.iter().find(|(k, _)| (k.0, k.1, k.3) == fk).expect("grid key").1.clone();
            error_metrics(&c).map(|e| (fk, e))
        })
        .collect::<Result<_>>()?;
    let mut rows = configs
        .par_iter()
        .map(|(k, c)| {
            let t = c.array.timing_inputs(&c.dims);
            let e = metrics[&(k.0, k.1, k.3)];
            let p = pitch(&t)?;
            let bound = match p.bound {
                PitchBound::InputPort => "input_port",
                PitchBound::WeightHold => "weight_hold",
                PitchBound::Communication => "communication",
            };
            let row = format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                k.0,
                k.1,
                c.array.bus,
                k.3,
                k.4,
                metric(e.max_abs_error),
                metric(e.mean_abs_error),
                metric(e.welford_error),
                sa_latency(&t)?,
                p.cycles,
                bound,
                analytic_msa(c)
            );
            Ok((*k, row))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.0);
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for (_, r) in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    ensure_out_dir(cfg)?;
    write_file(&cfg.out_dir, "sweep.csv", &csv)?;
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes_parse() {
        let a = parse_axes("nu_exp=2..4; bus_bits=8,inf;H=1,3").unwrap();
        assert_eq!(a[0], Axis::NuExp(vec![2, 3, 4]));
        assert_eq!(a[1], Axis::BusBits(vec![Bus::Bits(8), Bus::Infinite]));
        assert_eq!(a[2], Axis::Heads(vec![1, 3]));
        assert!(matches!(parse_axes("colour=1"), Err(Error::Parse { .. })));
        assert!(matches!(parse_axes("nu_exp=x"), Err(Error::Parse { field, .. }) if field == "axes.nu_exp"));
    }

    #[test]
    fn grid_is_sorted_product() {
        let cfg = RunConfig::default();
        let g = grid(&cfg, &parse_axes("MUL=2,1;nu_exp=7,3").unwrap());
        assert_eq!(g.len(), 4);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(grid(&cfg, &[]).len(), 1);
    }
}
