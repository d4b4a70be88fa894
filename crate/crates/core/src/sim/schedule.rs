//! Timing: assigns every stage of every instruction a cycle window.
//!
//! Instructions are placed in program order against per-resource
//! reservation tables. Because each unit is in-order, placing the oldest
//! instruction first is exactly oldest-first arbitration.

use serde::{Deserialize, Serialize};

use super::ports::PortTable;
use super::trace::{Stage, TraceEvent, Unit};
use super::SimError;
use crate::config::MachineConfig;
use crate::isa::{MatInstruction, MatReg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StallCause {
    Raw,
    War,
    Waw,
    Port,
    Turnaround,
}

impl StallCause {
    pub const ALL: [StallCause; 5] = [
        StallCause::Raw,
        StallCause::War,
        StallCause::Waw,
        StallCause::Port,
        StallCause::Turnaround,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StallCause::Raw => "RAW",
            StallCause::War => "WAR",
            StallCause::Waw => "WAW",
            StallCause::Port => "PORT",
            StallCause::Turnaround => "TURNAROUND",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StallCounts([u64; 5]);

impl StallCounts {
    pub fn get(&self, cause: StallCause) -> u64 {
        self.0[cause as usize]
    }

    pub fn add(&mut self, cause: StallCause, cycles: u64) {
        self.0[cause as usize] += cycles;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn merge(&mut self, other: &StallCounts) {
        for c in StallCause::ALL {
            self.add(c, other.get(c));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrTiming {
    pub arrival: u64,
    pub dispatch: u64,
    pub events: Vec<TraceEvent>,
    pub complete: u64,
    pub stalls: StallCounts,
}

impl InstrTiming {
    pub fn stage(&self, stage: Stage) -> Option<&TraceEvent> {
        self.events.iter().find(|e| e.stage == stage)
    }

    pub fn burst(&self) -> Option<&TraceEvent> {
        self.events.iter().find(|e| e.unit == Unit::MemPort)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schedule {
    pub instrs: Vec<InstrTiming>,
}

impl Schedule {
    pub fn total_cycles(&self) -> u64 {
        self.instrs.iter().map(|t| t.complete).max().unwrap_or(0)
    }

    pub fn trace(&self) -> Vec<TraceEvent> {
        self.instrs.iter().flat_map(|t| t.events.iter().copied()).collect()
    }

    pub fn stalls(&self) -> StallCounts {
        let mut s = StallCounts::default();
        for t in &self.instrs {
            s.merge(&t.stalls);
        }
        s
    }
}

/// Raises a start time through successive lower bounds, charging each
/// increase to the bound's cause.
struct Bound<'a> {
    t: u64,
    stalls: &'a mut StallCounts,
}

impl<'a> Bound<'a> {
    fn new(base: u64, stalls: &'a mut StallCounts) -> Self {
        Self { t: base, stalls }
    }

    fn at_least(&mut self, cause: StallCause, bound: u64) -> &mut Self {
        if bound > self.t {
            self.stalls.add(cause, bound - self.t);
            self.t = bound;
        }
        self
    }
}

#[derive(Default, Clone, Copy)]
struct WriterInfo {
    write_start: u64,
    complete: u64,
}

struct Scheduler<'c> {
    cfg: &'c MachineConfig,
    rows: u64,
    burst: u64,
    read_ports: PortTable,
    write_ports: PortTable,
    writer: Vec<Option<WriterInfo>>,
    // fetch-end cycles of readers since the last writer was registered
    readers: Vec<Vec<u64>>,
    prev_dispatch: u64,
    horizon: u64,
    perm_free: u64,
    sa_fetch_free: u64,
    sa_compute_free: u64,
    sa_wb_free: u64,
    mem_free: u64,
    last_burst_was_load: bool,
    prev_load_drain: u64,
    prev_store_burst: u64,
}

impl<'c> Scheduler<'c> {
    fn new(cfg: &'c MachineConfig) -> Self {
        let regs = cfg.num_matrix_regs as usize;
        Self {
            cfg,
            rows: u64::from(cfg.rows_per_register()),
            burst: u64::from(cfg.burst_cycles()),
            read_ports: PortTable::new(cfg.mrf_read_ports),
            write_ports: PortTable::new(cfg.mrf_write_ports),
            writer: vec![None; regs],
            readers: vec![Vec::new(); regs],
            prev_dispatch: 0,
            horizon: 0,
            perm_free: 0,
            sa_fetch_free: 0,
            sa_compute_free: 0,
            sa_wb_free: 0,
            mem_free: 0,
            last_burst_was_load: false,
            prev_load_drain: 0,
            prev_store_burst: 0,
        }
    }

    fn watchdog(&self) -> u64 {
        10 * u64::from(self.cfg.sa_mmac_latency_cycles)
    }

    /// Reads may start one cycle after the producer's first row lands.
    fn raw_ready(&self, reg: MatReg) -> u64 {
        self.writer[reg.index()].map_or(0, |w| w.write_start + 1)
    }

    fn war_ready(&self, reg: MatReg) -> u64 {
        self.readers[reg.index()].iter().copied().max().unwrap_or(0)
    }

    fn waw_ready(&self, reg: MatReg) -> u64 {
        self.writer[reg.index()].map_or(0, |w| w.complete)
    }

    fn check_progress(&self, id: usize, start: u64, waiting_since: u64) -> Result<(), SimError> {
        if start > waiting_since.max(self.horizon) + self.watchdog() {
            return Err(SimError::Deadlock {
                cycle: start,
                blocked: vec![id],
            });
        }
        Ok(())
    }

    fn find_port(&self, write: bool, id: usize, from: u64, count: u32) -> Result<u64, SimError> {
        let table = if write { &self.write_ports } else { &self.read_ports };
        let limit = from.max(self.horizon) + self.watchdog();
        table.find(from, self.rows, count, limit).ok_or(SimError::Deadlock {
            cycle: limit,
            blocked: vec![id],
        })
    }

    fn register_write(&mut self, reg: MatReg, write_start: u64) {
        self.writer[reg.index()] = Some(WriterInfo {
            write_start,
            complete: write_start + self.rows,
        });
        self.readers[reg.index()].clear();
    }

    fn place(&mut self, id: usize, instr: &MatInstruction) -> Result<InstrTiming, SimError> {
        let rows = self.rows;
        let arrival = id as u64 / u64::from(self.cfg.offload_issue_per_cycle);
        let mut stalls = StallCounts::default();
        let in_order = arrival.max(self.prev_dispatch);
        let dispatch = match instr.dest() {
            Some(d) => {
                Bound::new(in_order, &mut stalls)
                    .at_least(StallCause::Waw, self.waw_ready(d))
                    .t
            }
            None => in_order,
        };
        self.prev_dispatch = dispatch;
        let ev = |unit, stage, start: u64, len: u64| TraceEvent {
            unit,
            instr_id: id,
            stage,
            start_cycle: start,
            end_cycle: start + len,
        };
        let mut events = Vec::with_capacity(3);

        match *instr {
            MatInstruction::Mz { md } => {
                let mut b = Bound::new(dispatch.max(self.perm_free), &mut stalls);
                let want = b.at_least(StallCause::War, self.war_ready(md)).t;
                let z = self.find_port(true, id, want, 1)?;
                b.at_least(StallCause::Port, z);
                self.check_progress(id, z, dispatch)?;
                self.write_ports.reserve(z, rows, 1);
                self.perm_free = z + rows;
                self.register_write(md, z);
                events.push(ev(Unit::Perm, Stage::Zero, z, rows));
            }
            MatInstruction::Mmac { md, ms1, ms2, .. } => {
                let mut b = Bound::new(dispatch.max(self.sa_fetch_free), &mut stalls);
                let want = b
                    .at_least(StallCause::Raw, self.raw_ready(ms1).max(self.raw_ready(ms2)))
                    .t;
                let f = self.find_port(false, id, want, 2)?;
                b.at_least(StallCause::Port, f);
                self.check_progress(id, f, dispatch)?;
                self.read_ports.reserve(f, rows, 2);
                self.sa_fetch_free = f + rows;

                let c = (f + rows).max(self.sa_compute_free);
                self.sa_compute_free = c + rows;

                let mut b = Bound::new((c + rows).max(self.sa_wb_free), &mut stalls);
                let want = b.at_least(StallCause::War, self.war_ready(md)).t;
                let w = self.find_port(true, id, want, 1)?;
                b.at_least(StallCause::Port, w);
                self.check_progress(id, w, c + rows)?;
                self.write_ports.reserve(w, rows, 1);
                self.sa_wb_free = w + rows;

                self.readers[ms1.index()].push(f + rows);
                self.readers[ms2.index()].push(f + rows);
                self.register_write(md, w);
                events.push(ev(Unit::Sa, Stage::FetchOperands, f, rows));
                events.push(ev(Unit::Sa, Stage::Compute, c, rows));
                events.push(ev(Unit::Sa, Stage::Writeback, w, rows));
            }
            MatInstruction::MldW { md, .. } => {
                // the single-register load buffer frees once the previous drain starts
                let burst_start = dispatch.max(self.mem_free).max(self.prev_load_drain);
                self.check_progress(id, burst_start, dispatch)?;
                self.mem_free = burst_start + self.burst;
                self.last_burst_was_load = true;

                // drain row r only once it has fully arrived
                let arrived = burst_start + self.burst - rows;
                let mut b = Bound::new(arrived, &mut stalls);
                let want = b.at_least(StallCause::War, self.war_ready(md)).t;
                let d = self.find_port(true, id, want, 1)?;
                b.at_least(StallCause::Port, d);
                self.check_progress(id, d, arrived)?;
                self.write_ports.reserve(d, rows, 1);
                self.prev_load_drain = d;
                self.register_write(md, d);
                events.push(ev(Unit::MemPort, Stage::MemBurst, burst_start, self.burst));
                events.push(ev(Unit::Lsu, Stage::BufferDrain, d, rows));
            }
            MatInstruction::MstW { ms, .. } => {
                let mut b = Bound::new(dispatch.max(self.prev_store_burst), &mut stalls);
                let want = b.at_least(StallCause::Raw, self.raw_ready(ms)).t;
                let r = self.find_port(false, id, want, 1)?;
                b.at_least(StallCause::Port, r);
                self.check_progress(id, r, dispatch)?;
                self.read_ports.reserve(r, rows, 1);

                let mut b = Bound::new(r.max(self.mem_free), &mut stalls);
                if self.last_burst_was_load {
                    b.at_least(
                        StallCause::Turnaround,
                        self.mem_free + u64::from(self.cfg.lsu_turnaround_cycles),
                    );
                }
                let burst_start = b.t;
                self.check_progress(id, burst_start, r)?;
                self.mem_free = burst_start + self.burst;
                self.last_burst_was_load = false;
                self.prev_store_burst = burst_start;
                self.readers[ms.index()].push(r + rows);
                events.push(ev(Unit::Lsu, Stage::FetchOperands, r, rows));
                events.push(ev(Unit::MemPort, Stage::MemBurst, burst_start, self.burst));
            }
        }

        let complete = events.iter().map(|e| e.end_cycle).max().unwrap_or(dispatch);
        self.horizon = self.horizon.max(complete);
        Ok(InstrTiming {
            arrival,
            dispatch,
            events,
            complete,
            stalls,
        })
    }
}

pub fn schedule(instructions: &[MatInstruction], cfg: &MachineConfig) -> Result<Schedule, SimError> {
    let mut s = Scheduler::new(cfg);
    let instrs = instructions
        .iter()
        .enumerate()
        .map(|(id, instr)| s.place(id, instr))
        .collect::<Result<_, _>>()?;
    Ok(Schedule { instrs })
}
