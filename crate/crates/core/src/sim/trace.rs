use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    InputFirst,
    InputLast,
    WeightLatch,
    AggDone,
    OutputFirst,
    OutputLast,
    HeadSwitch,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::InputFirst => "input_first",
            EventKind::InputLast => "input_last",
            EventKind::WeightLatch => "weight_latch",
            EventKind::AggDone => "agg_done",
            EventKind::OutputFirst => "output_first",
            EventKind::OutputLast => "output_last",
            EventKind::HeadSwitch => "head_switch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            EventKind::InputFirst,
            EventKind::InputLast,
            EventKind::WeightLatch,
            EventKind::AggDone,
            EventKind::OutputFirst,
            EventKind::OutputLast,
            EventKind::HeadSwitch,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Event {
    pub cycle: u64,
    pub unit: String,
    pub kind: EventKind,
}

/// Timestamped events of one simulation run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleTrace {
    pub events: Vec<Event>,
    pub final_cycle: u64,
}

impl CycleTrace {
    pub fn push(&mut self, cycle: u64, unit: impl Into<String>, kind: EventKind) {
        self.events.push(Event {
            cycle,
            unit: unit.into(),
            kind,
        });
        self.final_cycle = self.final_cycle.max(cycle + 1);
    }

    /// Orders events by cycle; ties keep emission order.
    pub fn sort(&mut self) {
        self.events.sort_by_key(|e| e.cycle);
    }

    /// Checks that every unit's events are non-decreasing in cycle.
    pub fn validate(&self) -> Result<()> {
        let mut last: HashMap<&str, u64> = HashMap::new();
        for e in &self.events {
            if let Some(&prev) = last.get(e.unit.as_str()) {
                if e.cycle < prev {
                    return Err(Error::InvalidConfig(format!(
                        "trace for {} goes back from {prev} to {}",
                        e.unit, e.cycle
                    )));
                }
            }
            last.insert(&e.unit, e.cycle);
        }
        Ok(())
    }

    pub fn find(&self, unit: &str, kind: EventKind) -> Option<u64> {
        self.events.iter().find(|e| e.unit == unit && e.kind == kind).map(|e| e.cycle)
    }

    pub fn all(&self, unit: &str, kind: EventKind) -> Vec<u64> {
        self.events
            .iter()
            .filter(|e| e.unit == unit && e.kind == kind)
            .map(|e| e.cycle)
            .collect()
    }

    /// Cycles from head 0's first input to its first output.
    pub fn sa_latency(&self) -> Option<u64> {
        Some(self.find("head0", EventKind::OutputFirst)? - self.find("head0", EventKind::InputFirst)?)
    }

    /// Spacing of the first two head switches.
    pub fn pitch(&self) -> Option<u64> {
        let s = self.all("selector", EventKind::HeadSwitch);
        Some(s.get(1)? - s.first()?)
    }

    /// All head-switch spacings.
    pub fn pitches(&self) -> Vec<u64> {
        self.all("selector", EventKind::HeadSwitch).windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Span of the first block: from the first bus input cycle to the end
    /// of the output transfer. Without bus events (communication-free mode)
    /// the span runs from head 0's first input to the latest first output of
    /// the block's heads.
    pub fn msa_latency(&self) -> Option<u64> {
        let start = self
            .find("bus", EventKind::InputFirst)
            .or_else(|| self.find("head0", EventKind::InputFirst))?;
        let end = match self.find("bus", EventKind::OutputLast) {
            Some(c) => c + 1,
            None => self
                .events
                .iter()
                .filter(|e| e.kind == EventKind::OutputFirst && e.unit.starts_with("head") && !e.unit.contains('.'))
                .map(|e| e.cycle)
                .max()?,
        };
        Some(end - start)
    }

    /// Tab-separated `cycle unit kind` lines.
    pub fn to_log(&self) -> String {
        self.events
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.cycle, e.unit, e.kind))
            .collect()
    }

    pub fn from_log(text: &str) -> Result<Self> {
        let mut t = CycleTrace::default();
        for (i, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = |detail: &str| Error::Parse {
                field: format!("trace line {}", i + 1),
                detail: detail.to_string(),
            };
            if parts.len() != 3 {
                return Err(bad("expected three tab-separated fields"));
            }
            let cycle = parts[0].parse().map_err(|_| bad("cycle is not an integer"))?;
            let kind = EventKind::parse(parts[2]).ok_or_else(|| bad("unknown event kind"))?;
            t.push(cycle, parts[1], kind);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trip() {
        let mut t = CycleTrace::default();
        t.push(0, "bus", EventKind::InputFirst);
        t.push(4, "head0", EventKind::OutputFirst);
        let back = CycleTrace::from_log(&t.to_log()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.final_cycle, 5);
        assert!(CycleTrace::from_log("1\tx\tnope\n").is_err());
    }

    #[test]
    fn non_monotone_unit_rejected() {
        let mut t = CycleTrace::default();
        t.push(5, "a", EventKind::InputFirst);
        t.push(3, "b", EventKind::InputFirst);
        assert!(t.validate().is_ok());
        t.push(4, "a", EventKind::InputLast);
        assert!(t.validate().is_err());
    }
}
