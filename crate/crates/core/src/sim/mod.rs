//! Cycle-level timing model.
//!
//! [`schedule`] places every stage of every instruction in time; the
//! replay then executes the row-level data movement at those cycles,
//! asserting port, bus and buffer limits as it goes.

pub mod ports;
pub mod replay;
pub mod schedule;
pub mod scoreboard;
pub mod trace;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, MachineConfig};
use crate::functional::{row_addresses, ArchState, ExecError, RunError};
use crate::isa::MatInstruction;
use crate::program::{Program, ProgramError};

pub use replay::ReplayStats;
pub use schedule::{schedule, InstrTiming, Schedule, StallCause, StallCounts};
pub use scoreboard::{check_hazards, Hazard, HazardSet, Scoreboard};
pub use trace::{compute_active_cycles, unit_busy_cycles, Stage, TraceEvent, Unit};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("instruction {index}: {source}")]
    Exec {
        index: usize,
        #[source]
        source: ExecError,
    },
    #[error("deadlock at cycle {cycle}: no progress for instructions {blocked:?}")]
    Deadlock { cycle: u64, blocked: Vec<usize> },
    #[error("structural violation at cycle {cycle}: {detail}")]
    Structural { cycle: u64, detail: String },
}

impl From<RunError> for SimError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Program(p) => SimError::Program(p),
            RunError::Exec { index, source } => SimError::Exec { index, source },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_cycles: u64,
    pub retired_instructions: u64,
    pub total_macs: u64,
    pub per_unit_busy_cycles: BTreeMap<String, u64>,
    pub mrf_reads: u64,
    pub mrf_writes: u64,
    pub mem_bytes_loaded: u64,
    pub mem_bytes_stored: u64,
    pub stall_cycles: BTreeMap<String, u64>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything one simulation produces.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub state: ArchState,
    pub trace: Vec<TraceEvent>,
    pub report: SimReport,
    pub schedule: Schedule,
    pub stats: ReplayStats,
}

pub fn simulate_detailed(program: &Program, config: &MachineConfig) -> Result<SimOutcome, SimError> {
    config.validate()?;
    let initial = ArchState::with_program(config, program)?;
    let rows = config.rows_per_register() as usize;
    let row_bytes = config.row_bytes() as usize;

    let mut addrs = Vec::with_capacity(program.len());
    for (index, instr) in program.instructions.iter().enumerate() {
        let rows_at = match instr.scalar_operands() {
            Some(ops) => row_addresses(&initial.memory, rows, row_bytes, ops.base, ops.stride)
                .map_err(|source| SimError::Exec { index, source })?,
            None => Vec::new(),
        };
        addrs.push(rows_at);
    }

    let sched = schedule(&program.instructions, config)?;
    let (state, stats) = replay::replay(&program.instructions, &sched, &addrs, initial, config)?;
    let trace = sched.trace();

    let reg_bytes = u64::from(config.register_bytes());
    let count = |f: fn(&MatInstruction) -> bool| program.instructions.iter().filter(|i| f(i)).count() as u64;
    let stalls = sched.stalls();
    let report = SimReport {
        total_cycles: sched.total_cycles(),
        retired_instructions: program.len() as u64,
        total_macs: stats.macs,
        per_unit_busy_cycles: Unit::ALL
            .iter()
            .map(|&u| (u.name().to_string(), unit_busy_cycles(&trace, u)))
            .collect(),
        mrf_reads: stats.mrf_reads,
        mrf_writes: stats.mrf_writes,
        mem_bytes_loaded: reg_bytes * count(|i| matches!(i, MatInstruction::MldW { .. })),
        mem_bytes_stored: reg_bytes * count(|i| matches!(i, MatInstruction::MstW { .. })),
        stall_cycles: StallCause::ALL
            .iter()
            .map(|&c| (c.name().to_string(), stalls.get(c)))
            .collect(),
    };
    Ok(SimOutcome {
        state,
        trace,
        report,
        schedule: sched,
        stats,
    })
}

pub fn simulate(
    program: &Program,
    config: &MachineConfig,
) -> Result<(ArchState, Vec<TraceEvent>, SimReport), SimError> {
    let o = simulate_detailed(program, config)?;
    Ok((o.state, o.trace, o.report))
}
