//! Cycle-level model of the array template and the head-pipelined
//! accelerator.
//!
//! Values flow through cycle-stepped blocks ([`blocks`]); the block timing
//! follows a declared stage table driven by a scheduler ([`schedule`]) that
//! admits heads as the shared resources free up.

pub mod accel;
pub mod blocks;
pub mod config;
pub mod graph;
pub mod schedule;
pub mod trace;

pub use accel::{build_sa_pipeline, packed_comm_cycles, run_dsp_free, Accelerator, DspFreeReport, SimOutput};
pub use blocks::{AggregationRow, Fifo, MacArray, PeState, TriangularDelay, WeightLoader};
pub use config::{ArrayConfig, Topology, Variant};
pub use schedule::{run_timing, stage_table, steady_input_bandwidth, Stage};
pub use trace::{CycleTrace, Event, EventKind};
