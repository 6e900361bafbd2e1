//! Cycle-stepped building blocks of the array template.
//!
//! Every block updates in two phases: all next-state values are computed
//! from the current registers, then committed together.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::msa::IntMatrix;
use crate::quantarith::{FixedPointParams, WelfordFixed};

/// Registers of one multiply-accumulate processing element.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeState {
    pub held_weight: i32,
    pub x_reg: i32,
    pub partial_sum: i64,
}

/// Weight-stationary MAC array. Inputs enter from the west, one row per
/// channel, and move east; partial sums move south.
#[derive(Debug, Clone)]
pub struct MacArray {
    pub rows: usize,
    pub cols: usize,
    pes: Vec<PeState>,
    acc_bits: u32,
    pub cycle: u64,
}

impl MacArray {
    pub fn new(rows: usize, cols: usize, acc_bits: u32) -> Self {
        MacArray {
            rows,
            cols,
            pes: vec![PeState::default(); rows * cols],
            acc_bits,
            cycle: 0,
        }
    }

    pub fn pe(&self, r: usize, c: usize) -> &PeState {
        &self.pes[r * self.cols + c]
    }

    /// Installs latched weights, row-major `rows × cols`.
    pub fn set_weights(&mut self, w: &[i32]) -> Result<()> {
        if w.len() != self.pes.len() {
            return Err(Error::ShapeMismatch {
                op: "MacArray::set_weights",
                expected: format!("{} weights", self.pes.len()),
                got: format!("{} weights", w.len()),
            });
        }
        for (pe, &v) in self.pes.iter_mut().zip(w) {
            pe.held_weight = v;
        }
        Ok(())
    }

    /// One clock: `west[r]` enters row `r`. Returns the sums leaving the
    /// bottom row.
    pub fn step(&mut self, west: &[i32]) -> Result<Vec<i64>> {
        let (rows, cols) = (self.rows, self.cols);
        let mut next = self.pes.clone();
        for r in 0..rows {
            for c in 0..cols {
                let x = if c == 0 { west[r] } else { self.pes[r * cols + c - 1].x_reg };
                let above = if r == 0 { 0 } else { self.pes[(r - 1) * cols + c].partial_sum };
                let pe = &mut next[r * cols + c];
                let sum = x as i64 * pe.held_weight as i64 + above;
                if !crate::quantarith::fits(sum as i128, self.acc_bits) {
                    return Err(Error::AccumulatorOverflow {
                        unit: format!("pe({r},{c})"),
                        value: sum as i128,
                        bits: self.acc_bits,
                    });
                }
                pe.x_reg = x;
                pe.partial_sum = sum;
            }
        }
        self.pes = next;
        self.cycle += 1;
        Ok((0..cols).map(|c| self.pes[(rows - 1) * cols + c].partial_sum).collect())
    }

    /// Streams `tokens × rows` codes through the array with the input skew
    /// (channel `r` of token `t` enters at cycle `t + r`) and collects the
    /// deskewed outputs (column `c` of token `t` leaves at `t + rows - 1 + c`).
    pub fn stream(&mut self, tokens: usize, input: &[i32]) -> Result<IntMatrix> {
        let (rows, cols) = (self.rows, self.cols);
        let mut out = IntMatrix::zeros(tokens, cols);
        let total = tokens + rows + cols;
        let mut west = vec![0i32; rows];
        for t in 0..total {
            for (r, w) in west.iter_mut().enumerate() {
                *w = t
                    .checked_sub(r)
                    .filter(|&tok| tok < tokens)
                    .map_or(0, |tok| input[tok * rows + r]);
            }
            let south = self.step(&west)?;
            for (c, &v) in south.iter().enumerate() {
                if let Some(tok) = t.checked_sub(rows - 1 + c).filter(|&tok| tok < tokens) {
                    out.data[tok * cols + c] = v;
                }
            }
        }
        Ok(out)
    }
}

/// Shift-register chains that deliver dynamic weights, one chain per array
/// column, plus the latches the PEs read.
#[derive(Debug, Clone)]
pub struct WeightLoader {
    pub len: usize,
    pub shift_chain: Vec<Vec<i32>>,
    filled: Vec<usize>,
    pub latches: Vec<Vec<i32>>,
    pub latched_at: Option<u64>,
    pub holds: Vec<(u64, u64)>,
}

impl WeightLoader {
    pub fn new(chains: usize, len: usize) -> Self {
        WeightLoader {
            len,
            shift_chain: vec![vec![0; len]; chains],
            filled: vec![0; chains],
            latches: vec![vec![0; len]; chains],
            latched_at: None,
            holds: Vec::new(),
        }
    }

    /// Shifts one value into every chain whose entry is `Some`.
    pub fn shift(&mut self, inputs: &[Option<i32>]) {
        for (k, v) in inputs.iter().enumerate() {
            if let Some(v) = *v {
                let chain = &mut self.shift_chain[k];
                chain.rotate_right(1);
                chain[0] = v;
                self.filled[k] = (self.filled[k] + 1).min(self.len);
            }
        }
    }

    /// Broadcast enable: every latch captures its chain in the same cycle.
    pub fn enable(&mut self, cycle: u64) -> Result<()> {
        if let Some((k, &f)) = self.filled.iter().enumerate().find(|(_, &f)| f < self.len) {
            return Err(Error::PrematureLatch {
                chain: k,
                filled: f,
                len: self.len,
            });
        }
        if let Some(prev) = self.latched_at {
            self.holds.push((prev, cycle));
        }
        self.latches = self.shift_chain.clone();
        self.latched_at = Some(cycle);
        self.filled.iter_mut().for_each(|f| *f = 0);
        Ok(())
    }

    /// Loads one full stream per chain with a one-cycle skew between
    /// neighbouring chains, then enables. Returns the enable cycle.
    ///
    /// `streams[k][i]` is the `i`-th value shifted into chain `k`; after
    /// `len` shifts the chain holds it at position `len - 1 - i`.
    pub fn load(&mut self, streams: &[Vec<i32>], start: u64) -> Result<u64> {
        let chains = self.shift_chain.len();
        if streams.len() != chains || streams.iter().any(|s| s.len() != self.len) {
            return Err(Error::ShapeMismatch {
                op: "WeightLoader::load",
                expected: format!("{chains} streams of {}", self.len),
                got: format!("{} streams", streams.len()),
            });
        }
        let span = self.len + chains - 1;
        for t in 0..span {
            let inputs: Vec<Option<i32>> = (0..chains)
                .map(|k| t.checked_sub(k).filter(|&i| i < self.len).map(|i| streams[k][i]))
                .collect();
            self.shift(&inputs);
        }
        let at = start + span as u64;
        self.enable(at)?;
        Ok(at)
    }

    /// Latched weights as a `len × chains` row-major matrix.
    pub fn weights(&self) -> Vec<i32> {
        let chains = self.latches.len();
        let mut w = vec![0; self.len * chains];
        for (k, latch) in self.latches.iter().enumerate() {
            for (i, &v) in latch.iter().enumerate() {
                w[i * chains + k] = v;
            }
        }
        w
    }
}

/// Bounded FIFO whose depth comes from the static schedule.
#[derive(Debug, Clone)]
pub struct Fifo<T> {
    pub name: &'static str,
    pub depth: usize,
    items: VecDeque<T>,
    pub max_occupancy: usize,
}

impl<T> Fifo<T> {
    pub fn new(name: &'static str, depth: usize) -> Self {
        Fifo {
            name,
            depth,
            items: VecDeque::with_capacity(depth),
            max_occupancy: 0,
        }
    }

    pub fn push(&mut self, v: T) -> Result<()> {
        if self.items.len() == self.depth {
            return Err(Error::FifoOverflow {
                name: self.name.to_string(),
                depth: self.depth,
            });
        }
        self.items.push_back(v);
        self.max_occupancy = self.max_occupancy.max(self.items.len());
        Ok(())
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Per-column delay lines whose depths form an arithmetic sequence.
///
/// Column `k` counts hops from the end of the aggregation row, i.e. the
/// order in which the backward-propagated aggregate reaches it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriangularDelay {
    pub depths: Vec<u64>,
}

impl TriangularDelay {
    pub fn new(columns: usize) -> Self {
        TriangularDelay {
            depths: (0..columns as u64).collect(),
        }
    }

    /// Test hook: shortens one line by a cycle (or lengthens line 0).
    pub fn with_off_by_one(mut self, column: usize) -> Self {
        let d = &mut self.depths[column];
        *d = if *d == 0 { 1 } else { *d - 1 };
        self
    }

    pub fn delay(&self, values: &[(u64, i64)], column: usize) -> Vec<(u64, i64)> {
        values.iter().map(|&(t, v)| (t + self.depths[column], v)).collect()
    }
}

/// A reduction performed by a systolic aggregation row.
pub trait Aggregate {
    type State: Copy + PartialEq + std::fmt::Debug;
    fn init(&self) -> Self::State;
    fn combine(&self, s: Self::State, x: i64) -> Result<Self::State>;
}

/// Running sum (softmax denominator).
#[derive(Debug, Clone, Copy)]
pub struct SumAggregate;

impl Aggregate for SumAggregate {
    type State = i64;
    fn init(&self) -> i64 {
        0
    }
    fn combine(&self, s: i64, x: i64) -> Result<i64> {
        Ok(s.saturating_add(x))
    }
}

/// Running mean and squared deviation (layer-norm statistics).
#[derive(Debug, Clone)]
pub struct WelfordAggregate<'a> {
    pub recip: &'a [i64],
    pub fp: &'a FixedPointParams,
}

impl Aggregate for WelfordAggregate<'_> {
    type State = WelfordFixed;
    fn init(&self) -> WelfordFixed {
        WelfordFixed::new()
    }
    fn combine(&self, s: WelfordFixed, x: i64) -> Result<WelfordFixed> {
        s.update_prescaled(x, self.recip, self.fp)
    }
}

/// Element and aggregate as seen by one post-aggregation unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aligned<S> {
    pub column: usize,
    pub element: i64,
    pub aggregate: S,
    pub cycle: u64,
}

/// Result of one row through the aggregation row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowResult<S> {
    pub aggregate: S,
    /// Cycle the last PE finished the forward pass.
    pub agg_done: u64,
    pub aligned: Vec<Aligned<S>>,
}

/// Systolic aggregation over one row of elements: a forward pass left to
/// right (`hop` cycles per PE), a backward pass right to left (one cycle per
/// PE), and a triangular delay that lines the elements up with the returning
/// aggregate.
#[derive(Debug, Clone)]
pub struct AggregationRow {
    pub width: usize,
    pub hop: u64,
    pub delay: TriangularDelay,
}

impl AggregationRow {
    pub fn new(width: usize, hop: u64) -> Self {
        AggregationRow {
            width,
            hop,
            delay: TriangularDelay::new(width),
        }
    }

    pub fn run<A: Aggregate>(&self, agg: &A, row: u64, elements: &[i64], start: u64) -> Result<RowResult<A::State>> {
        let w = self.width;
        assert_eq!(elements.len(), w);
        // Forward: the state register of PE j is valid from `start + (j+1)·hop`.
        let mut fwd: Vec<Option<A::State>> = vec![None; w];
        let mut state_in = Some(agg.init());
        let mut cycle = start;
        let mut j = 0;
        while j < w {
            let mut next = fwd.clone();
            cycle += 1;
            if (cycle - start) % self.hop == 0 {
                next[j] = Some(agg.combine(state_in.take().expect("state"), elements[j])?);
                state_in = next[j];
                j += 1;
            }
            fwd = next;
        }
        let agg_done = cycle;
        let total = fwd[w - 1].expect("forward pass complete");

        // Held elements are released into the delay lines at `agg_done`,
        // tagged with (row, column); the aggregate walks back one PE a cycle.
        let released: Vec<(u64, (u64, usize, i64))> = (0..w).map(|c| (agg_done, (row, c, elements[c]))).collect();
        let mut aligned = Vec::with_capacity(w);
        for c in 0..w {
            let k = w - 1 - c;
            let (_, (tag_row, tag_col, element)) = released[c];
            let arrive_elem = self.delay.delay(&[(agg_done, element)], k)[0].0;
            let arrive_agg = agg_done + k as u64;
            if arrive_elem != arrive_agg || tag_row != row || tag_col != c {
                return Err(Error::Alignment {
                    column: c,
                    cycle: arrive_agg,
                    detail: format!(
                        "row {row}: element arrived at {arrive_elem}, aggregate at {arrive_agg}"
                    ),
                });
            }
            aligned.push(Aligned {
                column: c,
                element,
                aggregate: total,
                cycle: arrive_agg,
            });
        }
        Ok(RowResult {
            aggregate: total,
            agg_done,
            aligned,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msa::{int_matmul, QuantTensor, StepSize};
    use crate::quantarith::Signedness;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mac_array_matches_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, r, c) in [(1, 1, 1), (5, 3, 4), (8, 12, 12), (3, 7, 2)] {
            let a: Vec<i32> = (0..n * r).map(|_| rng.gen_range(-3..=3)).collect();
            let w: Vec<i32> = (0..r * c).map(|_| rng.gen_range(-3..=3)).collect();
            let ta = QuantTensor::new(n, r, 3, Signedness::Signed, StepSize::Global(1.0), a.clone()).unwrap();
            let tw = QuantTensor::new(r, c, 3, Signedness::Signed, StepSize::Global(1.0), w.clone()).unwrap();
            let mut m = MacArray::new(r, c, 32);
            m.set_weights(&w).unwrap();
            assert_eq!(m.stream(n, &a).unwrap(), int_matmul(&ta, &tw).unwrap());
        }
    }

    #[test]
    fn single_pe_accumulates_down_a_column() {
        let mut m = MacArray::new(2, 1, 32);
        m.set_weights(&[2, 3]).unwrap();
        m.step(&[5, 0]).unwrap();
        // row 1 sees x=7 this cycle and the previous 5·2 from above
        let out = m.step(&[0, 7]).unwrap();
        assert_eq!(out, vec![31]);
        assert_eq!(m.pe(0, 0).x_reg, 0);
    }

    #[test]
    fn mac_overflow() {
        let mut m = MacArray::new(1, 1, 4);
        m.set_weights(&[3]).unwrap();
        assert!(matches!(m.step(&[3]), Err(Error::AccumulatorOverflow { .. })));
    }

    #[test]
    fn loader_hand_trace() {
        let mut wl = WeightLoader::new(1, 4);
        for v in [10, 11, 12] {
            wl.shift(&[Some(v)]);
        }
        assert!(matches!(wl.enable(3), Err(Error::PrematureLatch { filled: 3, .. })));
        wl.shift(&[Some(13)]);
        wl.enable(4).unwrap();
        assert_eq!(wl.latches[0], vec![13, 12, 11, 10]);
    }

    #[test]
    fn second_load_replaces_first() {
        let mut wl = WeightLoader::new(2, 3);
        wl.load(&[vec![1, 2, 3], vec![4, 5, 6]], 0).unwrap();
        assert_eq!(wl.weights(), vec![3, 6, 2, 5, 1, 4]);
        let at = wl.load(&[vec![7, 8, 9], vec![0, 0, 1]], 10).unwrap();
        assert_eq!(wl.weights(), vec![9, 1, 8, 0, 7, 0]);
        assert_eq!(wl.holds, vec![(4, at)]);
    }

    #[test]
    fn fifo_overflow_is_fatal() {
        let mut f = Fifo::new("k_reorder", 2);
        f.push(1).unwrap();
        f.push(2).unwrap();
        assert!(matches!(f.push(3), Err(Error::FifoOverflow { depth: 2, .. })));
        assert_eq!(f.pop(), Some(1));
        assert_eq!(f.max_occupancy, 2);
    }

    #[test]
    fn triangular_delay_definition() {
        let d = TriangularDelay::new(4);
        assert_eq!(d.delay(&[(5, 1), (9, 2)], 0), vec![(5, 1), (9, 2)]);
        let arrivals: Vec<u64> = (0..4).map(|k| d.delay(&[(0, 0)], k)[0].0).collect();
        assert_eq!(arrivals, vec![0, 1, 2, 3]);
    }

    #[test]
    fn aggregation_alignment() {
        let row = AggregationRow::new(6, 2);
        let r = row.run(&SumAggregate, 0, &[1, 2, 3, 4, 5, 6], 100).unwrap();
        assert_eq!(r.aggregate, 21);
        assert_eq!(r.agg_done, 112);
        for a in &r.aligned {
            assert_eq!(a.aggregate, 21);
            assert_eq!(a.cycle, 112 + (5 - a.column) as u64);
        }
        let mut broken = AggregationRow::new(6, 2);
        broken.delay = broken.delay.with_off_by_one(3);
        assert!(matches!(
            broken.run(&SumAggregate, 0, &[1, 2, 3, 4, 5, 6], 0),
            Err(Error::Alignment { column: 2, .. })
        ));
    }
}
