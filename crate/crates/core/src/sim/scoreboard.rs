use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::{MatInstruction, MatReg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hazard {
    Raw,
    War,
    Waw,
}

impl fmt::Display for Hazard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hazard::Raw => "RAW",
            Hazard::War => "WAR",
            Hazard::Waw => "WAW",
        })
    }
}

pub type HazardSet = BTreeSet<Hazard>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingReader {
    pub id: usize,
    pub fetched: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegisterEntry {
    pub writer: Option<usize>,
    pub readers: Vec<PendingReader>,
}

/// In-flight producers and consumers of each matrix register.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scoreboard {
    regs: Vec<RegisterEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreboardError {
    #[error("m{reg} already has pending writer {existing}")]
    SecondWriter { reg: u8, existing: usize },
}

impl Scoreboard {
    pub fn new(num_regs: usize) -> Self {
        Self {
            regs: vec![RegisterEntry::default(); num_regs],
        }
    }

    pub fn entry(&self, reg: MatReg) -> &RegisterEntry {
        &self.regs[reg.index()]
    }

    pub fn is_idle(&self) -> bool {
        self.regs.iter().all(|r| r.writer.is_none() && r.readers.is_empty())
    }

    /// Record `id` as the writer of `reg`; a second pending writer is refused.
    pub fn begin_write(&mut self, reg: MatReg, id: usize) -> Result<(), ScoreboardError> {
        let e = &mut self.regs[reg.index()];
        if let Some(existing) = e.writer {
            return Err(ScoreboardError::SecondWriter { reg: reg.0, existing });
        }
        e.writer = Some(id);
        Ok(())
    }

    pub fn complete_write(&mut self, reg: MatReg, id: usize) {
        let e = &mut self.regs[reg.index()];
        if e.writer == Some(id) {
            e.writer = None;
        }
    }

    pub fn begin_read(&mut self, reg: MatReg, id: usize) {
        self.regs[reg.index()]
            .readers
            .push(PendingReader { id, fetched: false });
    }

    pub fn operands_fetched(&mut self, reg: MatReg, id: usize) {
        for r in &mut self.regs[reg.index()].readers {
            if r.id == id {
                r.fetched = true;
            }
        }
    }

    pub fn retire_reader(&mut self, reg: MatReg, id: usize) {
        self.regs[reg.index()].readers.retain(|r| r.id != id);
    }
}

/// Hazards `instr` would hit if it were dispatched against `sb` now.
pub fn check_hazards(sb: &Scoreboard, instr: &MatInstruction) -> HazardSet {
    let mut set = HazardSet::new();
    let mut reads = instr.sources();
    // the accumulator is read too
    if let MatInstruction::Mmac { md, .. } = instr {
        reads.push(*md);
    }
    if reads.iter().any(|r| sb.entry(*r).writer.is_some()) {
        set.insert(Hazard::Raw);
    }
    if let Some(d) = instr.dest() {
        let e = sb.entry(d);
        if e.writer.is_some() {
            set.insert(Hazard::Waw);
        }
        if e.readers.iter().any(|r| !r.fetched) {
            set.insert(Hazard::War);
        }
    }
    set
}
