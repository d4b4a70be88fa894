//! Cycle-by-cycle replay of a schedule on real data.
//!
//! Each stage is expanded into row-level micro-operations at the cycles the
//! schedule assigned. Within a cycle they apply in the order memory reads,
//! MRF reads, MRF writes, memory writes. Data only moves through the
//! buffers a stage owns, so a schedule that violates a dependency produces
//! a wrong final state (or trips an assertion) rather than silently
//! borrowing the architectural result.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::schedule::Schedule;
use super::scoreboard::Scoreboard;
use super::trace::Stage;
use super::SimError;
use crate::config::MachineConfig;
use crate::functional::{accumulator_cells, cells_to_rows, mac_tile, ArchState};
use crate::isa::{ElemType, MatInstruction, MatReg};

/// Peak per-cycle resource use observed during a replay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayStats {
    pub max_row_reads: u32,
    pub max_row_writes: u32,
    pub max_load_buffer_rows: u32,
    pub max_store_buffer_rows: u32,
    pub mixed_burst_cycles: u64,
    pub bank_conflicts: u64,
    pub mrf_reads: u64,
    pub mrf_writes: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    MemRead,
    MrfRead,
    MrfWrite,
    MemWrite,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    LoadBeat {
        row: usize,
        lo: usize,
        hi: usize,
        addr: u64,
    },
    SaFetch {
        a: MatReg,
        b: MatReg,
        row: usize,
    },
    Compute {
        md: MatReg,
        etype: ElemType,
    },
    StoreRead {
        reg: MatReg,
        row: usize,
    },
    Drain {
        reg: MatReg,
        row: usize,
    },
    Writeback {
        reg: MatReg,
        row: usize,
    },
    Zero {
        reg: MatReg,
        row: usize,
    },
    StoreBeat {
        row: usize,
        lo: usize,
        hi: usize,
        addr: u64,
    },
}

impl Op {
    fn phase(&self) -> Phase {
        match self {
            Op::LoadBeat { .. } => Phase::MemRead,
            Op::SaFetch { .. } | Op::Compute { .. } | Op::StoreRead { .. } => Phase::MrfRead,
            Op::Drain { .. } | Op::Writeback { .. } | Op::Zero { .. } => Phase::MrfWrite,
            Op::StoreBeat { .. } => Phase::MemWrite,
        }
    }
}

/// Data owned by one in-flight instruction.
#[derive(Default)]
struct Buffers {
    // load/store buffer rows, or SA operand rows (a then b)
    rows: Vec<Vec<u8>>,
    filled: Vec<usize>,
    b_rows: Vec<Vec<u8>>,
    out: Vec<Vec<u8>>,
}

struct Replayer<'a> {
    cfg: &'a MachineConfig,
    rows: usize,
    row_bytes: usize,
    state: ArchState,
    bufs: HashMap<usize, Buffers>,
    stats: ReplayStats,
}

fn violation(cycle: u64, detail: impl Into<String>) -> SimError {
    SimError::Structural {
        cycle,
        detail: detail.into(),
    }
}

impl<'a> Replayer<'a> {
    fn buf(&mut self, id: usize) -> &mut Buffers {
        let rows = self.rows;
        let row_bytes = self.row_bytes;
        self.bufs.entry(id).or_insert_with(|| Buffers {
            rows: vec![vec![0; row_bytes]; rows],
            filled: vec![0; rows],
            b_rows: vec![vec![0; row_bytes]; rows],
            out: Vec::new(),
        })
    }

    fn apply(&mut self, cycle: u64, id: usize, op: Op) -> Result<(), SimError> {
        match op {
            Op::LoadBeat { row, lo, hi, addr } => {
                let data = self
                    .state
                    .memory
                    .read(addr, hi - lo)
                    .expect("range prechecked")
                    .to_vec();
                let b = self.buf(id);
                b.rows[row][lo..hi].copy_from_slice(&data);
                b.filled[row] += hi - lo;
            }
            Op::SaFetch { a, b: bb, row } => {
                let ra = self.state.mrf.row(a, row).to_vec();
                let rb = self.state.mrf.row(bb, row).to_vec();
                let row_bytes = self.row_bytes;
                let b = self.buf(id);
                b.rows[row] = ra;
                b.b_rows[row] = rb;
                b.filled[row] = row_bytes;
                self.stats.mrf_reads += 2;
            }
            Op::Compute { md, etype } => {
                let mut acc = accumulator_cells(&self.state.mrf, md);
                let rows = self.rows;
                let elems = self.row_bytes * 8 / etype.sew_bits() as usize;
                let row_bytes = self.row_bytes;
                let b = self.buf(id);
                if b.filled.iter().any(|&f| f != row_bytes) {
                    return Err(violation(
                        cycle,
                        format!("instruction {id} computes before its operands arrived"),
                    ));
                }
                let a_rows: Vec<&[u8]> = b.rows.iter().map(Vec::as_slice).collect();
                let b_rows: Vec<&[u8]> = b.b_rows.iter().map(Vec::as_slice).collect();
                let macs = mac_tile(&mut acc, &a_rows, &b_rows, etype, elems);
                b.out = cells_to_rows(&acc, rows);
                self.stats.macs += macs;
            }
            Op::StoreRead { reg, row } => {
                let data = self.state.mrf.row(reg, row).to_vec();
                let row_bytes = self.row_bytes;
                let b = self.buf(id);
                b.rows[row] = data;
                b.filled[row] = row_bytes;
                self.stats.mrf_reads += 1;
            }
            Op::Drain { reg, row } => {
                let row_bytes = self.row_bytes;
                let b = self.buf(id);
                if b.filled[row] != row_bytes {
                    return Err(violation(
                        cycle,
                        format!("instruction {id} drains row {row} before it arrived"),
                    ));
                }
                b.filled[row] = 0;
                let data = std::mem::take(&mut b.rows[row]);
                self.state.mrf.set_row(reg, row, &data);
                self.stats.mrf_writes += 1;
            }
            Op::Writeback { reg, row } => {
                let b = self.buf(id);
                if b.out.is_empty() {
                    return Err(violation(
                        cycle,
                        format!("instruction {id} writes back before computing"),
                    ));
                }
                let data = std::mem::take(&mut b.out[row]);
                self.state.mrf.set_row(reg, row, &data);
                self.stats.mrf_writes += 1;
            }
            Op::Zero { reg, row } => {
                let zero = vec![0; self.row_bytes];
                self.state.mrf.set_row(reg, row, &zero);
                self.stats.mrf_writes += 1;
            }
            Op::StoreBeat { row, lo, hi, addr } => {
                let row_bytes = self.row_bytes;
                let b = self.buf(id);
                if b.filled[row] != row_bytes {
                    return Err(violation(
                        cycle,
                        format!("instruction {id} stores row {row} before reading it"),
                    ));
                }
                let data = b.rows[row][lo..hi].to_vec();
                if hi == row_bytes {
                    b.filled[row] = 0;
                }
                self.state.memory.write(addr, &data).expect("range prechecked");
            }
        }
        Ok(())
    }

    fn check_banks(&mut self, addr: u64, len: usize) {
        let mut seen = vec![false; self.cfg.num_banks as usize];
        for w in 0..len / 4 {
            let bank = self.cfg.bank_of(addr + 4 * w as u64) as usize;
            if seen[bank] {
                self.stats.bank_conflicts += 1;
            }
            seen[bank] = true;
        }
    }

    /// Rows held in load buffers and store buffers at the end of a cycle.
    fn buffer_rows(&self, program: &[MatInstruction]) -> (u32, u32) {
        let mut load = 0;
        let mut store = 0;
        for (&id, b) in &self.bufs {
            let held = b.filled.iter().filter(|&&f| f > 0).count() as u32;
            match program[id] {
                MatInstruction::MldW { .. } => load += held,
                MatInstruction::MstW { .. } => store += held,
                _ => {}
            }
        }
        (load, store)
    }
}

fn micro_ops(
    program: &[MatInstruction],
    schedule: &Schedule,
    addrs: &[Vec<u64>],
    cfg: &MachineConfig,
) -> Vec<Vec<(usize, Op)>> {
    let rows = cfg.rows_per_register() as usize;
    let row_bytes = cfg.row_bytes() as usize;
    let rc = cfg.mem_cycles_per_row() as usize;
    let beat = row_bytes.div_ceil(rc);
    let mut by_cycle: Vec<Vec<(usize, Op)>> = vec![Vec::new(); schedule.total_cycles() as usize];
    let mut push = |cycle: u64, id: usize, op: Op| by_cycle[cycle as usize].push((id, op));
    let beats = |row_addr: u64| {
        (0..rc).map(move |k| {
            let lo = (k * beat).min(row_bytes);
            let hi = ((k + 1) * beat).min(row_bytes);
            (lo, hi, row_addr + lo as u64)
        })
    };

    for (id, (instr, t)) in program.iter().zip(&schedule.instrs).enumerate() {
        let start = |stage: Stage| t.stage(stage).expect("stage present").start_cycle;
        match *instr {
            MatInstruction::Mz { md } => {
                let z = start(Stage::Zero);
                for r in 0..rows {
                    push(z + r as u64, id, Op::Zero { reg: md, row: r });
                }
            }
            MatInstruction::Mmac { md, ms1, ms2, etype } => {
                let (f, c, w) = (
                    start(Stage::FetchOperands),
                    start(Stage::Compute),
                    start(Stage::Writeback),
                );
                for r in 0..rows {
                    push(f + r as u64, id, Op::SaFetch { a: ms1, b: ms2, row: r });
                    push(w + r as u64, id, Op::Writeback { reg: md, row: r });
                }
                push(c, id, Op::Compute { md, etype });
            }
            MatInstruction::MldW { md, .. } => {
                let b = t.burst().expect("burst").start_cycle;
                let d = start(Stage::BufferDrain);
                for (r, &row_addr) in addrs[id].iter().enumerate() {
                    for (k, (lo, hi, addr)) in beats(row_addr).enumerate() {
                        push(b + (r * rc + k) as u64, id, Op::LoadBeat { row: r, lo, hi, addr });
                    }
                    push(d + r as u64, id, Op::Drain { reg: md, row: r });
                }
            }
            MatInstruction::MstW { ms, .. } => {
                let b = t.burst().expect("burst").start_cycle;
                let rd = start(Stage::FetchOperands);
                for (r, &row_addr) in addrs[id].iter().enumerate() {
                    push(rd + r as u64, id, Op::StoreRead { reg: ms, row: r });
                    for (k, (lo, hi, addr)) in beats(row_addr).enumerate() {
                        push(b + (r * rc + k) as u64, id, Op::StoreBeat { row: r, lo, hi, addr });
                    }
                }
            }
        }
    }
    for ops in &mut by_cycle {
        ops.sort_by_key(|(id, op)| (op.phase(), *id));
    }
    by_cycle
}

pub fn replay(
    program: &[MatInstruction],
    schedule: &Schedule,
    addrs: &[Vec<u64>],
    initial: ArchState,
    cfg: &MachineConfig,
) -> Result<(ArchState, ReplayStats), SimError> {
    let by_cycle = micro_ops(program, schedule, addrs, cfg);
    let mut rp = Replayer {
        cfg,
        rows: cfg.rows_per_register() as usize,
        row_bytes: cfg.row_bytes() as usize,
        state: initial,
        bufs: HashMap::new(),
        stats: ReplayStats::default(),
    };

    // scoreboard bookkeeping, keyed by cycle
    let mut sb = Scoreboard::new(cfg.num_matrix_regs as usize);
    let mut begins: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut ends: HashMap<u64, Vec<usize>> = HashMap::new();
    for (id, t) in schedule.instrs.iter().enumerate() {
        begins.entry(t.dispatch).or_default().push(id);
        ends.entry(t.complete).or_default().push(id);
    }

    let total = by_cycle.len() as u64;
    for cycle in 0..=total {
        for &id in ends.get(&cycle).into_iter().flatten() {
            if let Some(d) = program[id].dest() {
                sb.complete_write(d, id);
            }
            rp.bufs.remove(&id);
        }
        for &id in begins.get(&cycle).into_iter().flatten() {
            if let Some(d) = program[id].dest() {
                sb.begin_write(d, id).map_err(|e| violation(cycle, e.to_string()))?;
            }
        }
        let Some(ops) = by_cycle.get(cycle as usize) else { break };

        let mut reads = 0u32;
        let mut writes = 0u32;
        let mut load_beat = false;
        let mut store_beat = false;
        for &(id, op) in ops {
            match op {
                Op::SaFetch { .. } => reads += 2,
                Op::StoreRead { .. } => reads += 1,
                Op::Drain { .. } | Op::Writeback { .. } | Op::Zero { .. } => writes += 1,
                Op::LoadBeat { lo, hi, addr, .. } => {
                    load_beat = true;
                    rp.check_banks(addr, hi - lo);
                }
                Op::StoreBeat { lo, hi, addr, .. } => {
                    store_beat = true;
                    rp.check_banks(addr, hi - lo);
                }
                Op::Compute { .. } => {}
            }
            rp.apply(cycle, id, op)?;
        }
        rp.stats.max_row_reads = rp.stats.max_row_reads.max(reads);
        rp.stats.max_row_writes = rp.stats.max_row_writes.max(writes);
        if load_beat && store_beat {
            rp.stats.mixed_burst_cycles += 1;
        }
        let (lb, stb) = rp.buffer_rows(program);
        rp.stats.max_load_buffer_rows = rp.stats.max_load_buffer_rows.max(lb);
        rp.stats.max_store_buffer_rows = rp.stats.max_store_buffer_rows.max(stb);

        if reads > cfg.mrf_read_ports {
            return Err(violation(
                cycle,
                format!("{reads} MRF row reads exceed {} ports", cfg.mrf_read_ports),
            ));
        }
        if writes > cfg.mrf_write_ports {
            return Err(violation(
                cycle,
                format!("{writes} MRF row writes exceed {} ports", cfg.mrf_write_ports),
            ));
        }
        if load_beat && store_beat {
            return Err(violation(cycle, "load and store bursts share the memory port"));
        }
        if rp.stats.bank_conflicts > 0 {
            return Err(violation(cycle, "a bus beat hit the same bank twice"));
        }
        let depth = rp.rows as u32;
        if lb > depth || stb > depth {
            return Err(violation(
                cycle,
                format!("buffers hold {lb} load rows and {stb} store rows, depth {depth}"),
            ));
        }
    }
    if !sb.is_idle() {
        return Err(violation(total, "scoreboard not drained at end of program"));
    }
    let mut state = rp.state;
    state.retired += program.len() as u64;
    state.macs += rp.stats.macs;
    Ok((state, rp.stats))
}
