use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MachineConfig;
use crate::isa::{IsaError, MatInstruction};

/// Initial contents for a region of data memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub address: u64,
    pub bytes: Vec<u8>,
}

impl Segment {
    pub fn new(name: impl Into<String>, address: u64, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            address,
            bytes,
        }
    }

    pub fn end(&self) -> u64 {
        self.address + self.bytes.len() as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub instructions: Vec<MatInstruction>,
    pub segments: Vec<Segment>,
    pub symbols: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("instruction {index}: {source}")]
    Instruction {
        index: usize,
        #[source]
        source: IsaError,
    },
    #[error("segments `{first}` and `{second}` overlap")]
    Overlap { first: String, second: String },
    #[error("segment `{name}` ends at {end:#x}, beyond memory capacity {capacity:#x}")]
    OutOfMemory { name: String, end: u64, capacity: u64 },
}

impl Program {
    pub fn from_instructions(instructions: Vec<MatInstruction>) -> Self {
        Self {
            instructions,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn validate(&self, config: &MachineConfig) -> Result<(), ProgramError> {
        for (index, instr) in self.instructions.iter().enumerate() {
            instr
                .validate(config.num_matrix_regs)
                .map_err(|source| ProgramError::Instruction { index, source })?;
        }
        let capacity = config.capacity_bytes();
        let mut sorted: Vec<&Segment> = self.segments.iter().filter(|s| !s.bytes.is_empty()).collect();
        sorted.sort_by_key(|s| s.address);
        for seg in &sorted {
            if seg.end() > capacity {
                return Err(ProgramError::OutOfMemory {
                    name: seg.name.clone(),
                    end: seg.end(),
                    capacity,
                });
            }
        }
        for pair in sorted.windows(2) {
            if pair[1].address < pair[0].end() {
                return Err(ProgramError::Overlap {
                    first: pair[0].name.clone(),
                    second: pair[1].name.clone(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::MatReg;

    #[test]
    fn overlapping_segments_rejected() {
        let mut p = Program::default();
        p.segments.push(Segment::new("a", 0, vec![0; 32]));
        p.segments.push(Segment::new("b", 16, vec![0; 32]));
        assert!(matches!(
            p.validate(&MachineConfig::default()),
            Err(ProgramError::Overlap { .. })
        ));
    }

    #[test]
    fn segment_past_capacity_rejected() {
        let cfg = MachineConfig::default();
        let mut p = Program::default();
        p.segments
            .push(Segment::new("tail", cfg.capacity_bytes() - 8, vec![0; 16]));
        assert!(matches!(p.validate(&cfg), Err(ProgramError::OutOfMemory { .. })));
    }

    #[test]
    fn bad_instruction_reports_index() {
        let p = Program::from_instructions(vec![
            MatInstruction::Mz { md: MatReg(0) },
            MatInstruction::MstW {
                ms: MatReg(1),
                base: 6,
                stride: 16,
            },
        ]);
        match p.validate(&MachineConfig::default()) {
            Err(ProgramError::Instruction { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
