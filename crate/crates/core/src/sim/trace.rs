use std::collections::BTreeSet;
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Unit {
    Sa,
    Lsu,
    Perm,
    MemPort,
}

impl Unit {
    pub const ALL: [Unit; 4] = [Unit::Sa, Unit::Lsu, Unit::Perm, Unit::MemPort];

    pub fn name(self) -> &'static str {
        match self {
            Unit::Sa => "SA",
            Unit::Lsu => "LSU",
            Unit::Perm => "PERM",
            Unit::MemPort => "MEM_PORT",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|u| u.name() == s)
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    FetchOperands,
    Compute,
    Writeback,
    MemBurst,
    BufferDrain,
    Zero,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::FetchOperands,
        Stage::Compute,
        Stage::Writeback,
        Stage::MemBurst,
        Stage::BufferDrain,
        Stage::Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::FetchOperands => "FETCH_OPERANDS",
            Stage::Compute => "COMPUTE",
            Stage::Writeback => "WRITEBACK",
            Stage::MemBurst => "MEM_BURST",
            Stage::BufferDrain => "BUFFER_DRAIN",
            Stage::Zero => "ZERO",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Busy interval `[start_cycle, end_cycle)` of one stage of one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub unit: Unit,
    pub instr_id: usize,
    pub stage: Stage,
    pub start_cycle: u64,
    pub end_cycle: u64,
}

impl TraceEvent {
    pub fn len(&self) -> u64 {
        self.end_cycle - self.start_cycle
    }

    pub fn is_empty(&self) -> bool {
        self.end_cycle <= self.start_cycle
    }

    pub fn contains(&self, cycle: u64) -> bool {
        (self.start_cycle..self.end_cycle).contains(&cycle)
    }
}

fn union_len<'a>(events: impl Iterator<Item = &'a TraceEvent>) -> u64 {
    let mut spans: Vec<(u64, u64)> = events.map(|e| (e.start_cycle, e.end_cycle)).collect();
    spans.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in spans {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    total + cur.map_or(0, |(s, e)| e - s)
}

/// Distinct cycles in which any event of `unit` is active.
pub fn unit_busy_cycles(trace: &[TraceEvent], unit: Unit) -> u64 {
    union_len(trace.iter().filter(|e| e.unit == unit))
}

/// SA cycles spent in COMPUTE, the only MAC-active stage.
pub fn compute_active_cycles(trace: &[TraceEvent]) -> u64 {
    union_len(trace.iter().filter(|e| e.unit == Unit::Sa && e.stage == Stage::Compute))
}

/// Idle cycles of `unit` strictly inside `[from, to)`.
pub fn idle_cycles_in(trace: &[TraceEvent], unit: Unit, from: u64, to: u64) -> u64 {
    let clipped: Vec<TraceEvent> = trace
        .iter()
        .filter(|e| e.unit == unit && e.end_cycle > from && e.start_cycle < to)
        .map(|e| TraceEvent {
            start_cycle: e.start_cycle.max(from),
            end_cycle: e.end_cycle.min(to),
            ..*e
        })
        .collect();
    (to - from) - union_len(clipped.iter())
}

pub fn total_cycles(trace: &[TraceEvent]) -> u64 {
    trace.iter().map(|e| e.end_cycle).max().unwrap_or(0)
}

pub const TRACE_CSV_HEADER: [&str; 5] = ["unit", "instr_id", "stage", "start_cycle", "end_cycle"];

pub fn write_trace_csv<W: io::Write>(trace: &[TraceEvent], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_CSV_HEADER)?;
    for e in trace {
        w.write_record([
            e.unit.name().to_string(),
            e.instr_id.to_string(),
            e.stage.name().to_string(),
            e.start_cycle.to_string(),
            e.end_cycle.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_to_csv(trace: &[TraceEvent]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

#[derive(Debug, thiserror::Error)]
pub enum TraceParseError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Field { line: usize, msg: String },
}

pub fn read_trace_csv<R: io::Read>(input: R) -> Result<Vec<TraceEvent>, TraceParseError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| TraceParseError::Field { line, msg };
        let field = |k: usize| {
            rec.get(k)
                .ok_or_else(|| bad(format!("missing column {}", TRACE_CSV_HEADER[k])))
        };
        let unit = Unit::from_name(field(0)?).ok_or_else(|| bad("unknown unit".into()))?;
        let stage = Stage::from_name(field(2)?).ok_or_else(|| bad("unknown stage".into()))?;
        let num = |k: usize| -> Result<u64, TraceParseError> {
            field(k)?
                .parse()
                .map_err(|_| bad(format!("bad {}", TRACE_CSV_HEADER[k])))
        };
        out.push(TraceEvent {
            unit,
            instr_id: num(1)? as usize,
            stage,
            start_cycle: num(3)?,
            end_cycle: num(4)?,
        });
    }
    Ok(out)
}

/// Units that appear in the trace, in lane order.
pub fn units_present(trace: &[TraceEvent]) -> BTreeSet<Unit> {
    trace.iter().map(|e| e.unit).collect()
}
