//! Matrix instruction set: in-memory form and 32-bit encoding.
//!
//! Word layout (custom-1 major opcode):
//!
//! ```text
//!  31      25 24   20 19   15 14  12 11    7 6       0
//! | funct7   |  rs2  |  rs1  |funct3|  rd   | 0101011 |
//! ```
//!
//! `rd` holds `md` (or `ms` for `mst.w`); `rs1`/`rs2` are only used by
//! `mmac`, whose element type sits in `funct7`. Base address and row
//! stride never appear in the word: they travel beside it, the way a
//! scalar core forwards register values to a coprocessor.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MAX_MATRIX_REGS;

pub const OPCODE_CUSTOM1: u32 = 0b010_1011;

const FUNCT3_MLD: u32 = 0b000;
const FUNCT3_MST: u32 = 0b001;
const FUNCT3_MMAC: u32 = 0b010;
const FUNCT3_MZ: u32 = 0b011;

/// Matrix register index. Range is checked where it matters (encoding,
/// assembling, execution) so that out-of-range values can be represented
/// and rejected with a proper error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MatReg(pub u8);

impl MatReg {
    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

impl fmt::Display for MatReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    F32,
    I32,
    I16,
    I8,
}

impl ElemType {
    pub const ALL: [ElemType; 4] = [ElemType::F32, ElemType::I32, ElemType::I16, ElemType::I8];

    pub fn sew_bits(self) -> u32 {
        match self {
            ElemType::F32 | ElemType::I32 => 32,
            ElemType::I16 => 16,
            ElemType::I8 => 8,
        }
    }

    pub fn sew_bytes(self) -> u32 {
        self.sew_bits() / 8
    }

    pub fn is_float(self) -> bool {
        self == ElemType::F32
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemType::F32 => "f32",
            ElemType::I32 => "i32",
            ElemType::I16 => "i16",
            ElemType::I8 => "i8",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }

    fn funct7(self) -> u32 {
        match self {
            ElemType::F32 => 0,
            ElemType::I32 => 1,
            ElemType::I16 => 2,
            ElemType::I8 => 3,
        }
    }

    fn from_funct7(bits: u32) -> Option<Self> {
        Some(match bits {
            0 => ElemType::F32,
            1 => ElemType::I32,
            2 => ElemType::I16,
            3 => ElemType::I8,
            _ => return None,
        })
    }
}

impl fmt::Display for ElemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstrKind {
    Mz,
    MldW,
    MstW,
    Mmac,
}

impl InstrKind {
    pub const ALL: [InstrKind; 4] = [InstrKind::Mz, InstrKind::MldW, InstrKind::MstW, InstrKind::Mmac];

    pub fn mnemonic(self) -> &'static str {
        match self {
            InstrKind::Mz => "mz",
            InstrKind::MldW => "mld.w",
            InstrKind::MstW => "mst.w",
            InstrKind::Mmac => "mmac",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatInstruction {
    /// Clear every bit of `md`.
    Mz { md: MatReg },
    /// Load `rows` memory rows of RLEN bits, `stride` bytes apart, into `md`.
    MldW { md: MatReg, base: u64, stride: u64 },
    /// Store the rows of `ms` to memory, `stride` bytes apart.
    MstW { ms: MatReg, base: u64, stride: u64 },
    /// `md += ms1 * ms2^T` with 32-bit accumulators.
    Mmac {
        md: MatReg,
        ms1: MatReg,
        ms2: MatReg,
        etype: ElemType,
    },
}

/// Scalar values forwarded beside a memory instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ScalarOperands {
    pub base: u64,
    pub stride: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("register m{0} is outside the encodable range m0..m7")]
    EncodingRange(u8),
    #[error("register m{reg} does not exist (machine has {available} registers)")]
    RegisterRange { reg: u8, available: u32 },
    #[error("{what} {value:#x} is not 4-byte aligned")]
    Misaligned { what: &'static str, value: u64 },
    #[error("illegal instruction word {0:#010x}")]
    IllegalInstruction(u32),
}

impl MatInstruction {
    pub fn kind(&self) -> InstrKind {
        match self {
            MatInstruction::Mz { .. } => InstrKind::Mz,
            MatInstruction::MldW { .. } => InstrKind::MldW,
            MatInstruction::MstW { .. } => InstrKind::MstW,
            MatInstruction::Mmac { .. } => InstrKind::Mmac,
        }
    }

    /// Register written by the instruction, if any.
    pub fn dest(&self) -> Option<MatReg> {
        match *self {
            MatInstruction::Mz { md } | MatInstruction::MldW { md, .. } | MatInstruction::Mmac { md, .. } => Some(md),
            MatInstruction::MstW { .. } => None,
        }
    }

    /// Registers read through MRF read ports. The `mmac` accumulator is held
    /// inside the array and is not listed.
    pub fn sources(&self) -> Vec<MatReg> {
        match *self {
            MatInstruction::Mz { .. } | MatInstruction::MldW { .. } => Vec::new(),
            MatInstruction::MstW { ms, .. } => vec![ms],
            MatInstruction::Mmac { ms1, ms2, .. } => vec![ms1, ms2],
        }
    }

    pub fn registers(&self) -> Vec<MatReg> {
        let mut regs: Vec<MatReg> = self.dest().into_iter().collect();
        regs.extend(self.sources());
        regs
    }

    pub fn scalar_operands(&self) -> Option<ScalarOperands> {
        match *self {
            MatInstruction::MldW { base, stride, .. } | MatInstruction::MstW { base, stride, .. } => {
                Some(ScalarOperands { base, stride })
            }
            _ => None,
        }
    }

    /// Replace base/stride on a memory instruction; other kinds are returned as is.
    pub fn with_operands(self, ops: ScalarOperands) -> Self {
        match self {
            MatInstruction::MldW { md, .. } => MatInstruction::MldW {
                md,
                base: ops.base,
                stride: ops.stride,
            },
            MatInstruction::MstW { ms, .. } => MatInstruction::MstW {
                ms,
                base: ops.base,
                stride: ops.stride,
            },
            other => other,
        }
    }

    /// Structural checks that do not depend on memory contents.
    pub fn validate(&self, num_regs: u32) -> Result<(), IsaError> {
        for reg in self.registers() {
            if u32::from(reg.0) >= num_regs {
                return Err(IsaError::RegisterRange {
                    reg: reg.0,
                    available: num_regs,
                });
            }
        }
        if let Some(ops) = self.scalar_operands() {
            if ops.base % 4 != 0 {
                return Err(IsaError::Misaligned {
                    what: "base address",
                    value: ops.base,
                });
            }
            if ops.stride % 4 != 0 {
                return Err(IsaError::Misaligned {
                    what: "row stride",
                    value: ops.stride,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for MatInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            MatInstruction::Mz { md } => write!(f, "mz {md}"),
            MatInstruction::MldW { md, base, stride } => write!(f, "mld.w {md}, {base:#x}, {stride}"),
            MatInstruction::MstW { ms, base, stride } => write!(f, "mst.w {ms}, {base:#x}, {stride}"),
            MatInstruction::Mmac { md, ms1, ms2, etype } => write!(f, "mmac.{etype} {md}, {ms1}, {ms2}"),
        }
    }
}

fn reg_field(reg: MatReg) -> Result<u32, IsaError> {
    if u32::from(reg.0) >= MAX_MATRIX_REGS {
        return Err(IsaError::EncodingRange(reg.0));
    }
    Ok(u32::from(reg.0))
}

fn pack(funct7: u32, rs2: u32, rs1: u32, funct3: u32, rd: u32) -> u32 {
    (funct7 << 25) | (rs2 << 20) | (rs1 << 15) | (funct3 << 12) | (rd << 7) | OPCODE_CUSTOM1
}

/// Encode the register/function part of an instruction. Scalar operands are
/// not part of the word; see [`MatInstruction::scalar_operands`].
pub fn encode_instruction(instr: &MatInstruction) -> Result<u32, IsaError> {
    Ok(match *instr {
        MatInstruction::Mz { md } => pack(0, 0, 0, FUNCT3_MZ, reg_field(md)?),
        MatInstruction::MldW { md, .. } => pack(0, 0, 0, FUNCT3_MLD, reg_field(md)?),
        MatInstruction::MstW { ms, .. } => pack(0, 0, 0, FUNCT3_MST, reg_field(ms)?),
        MatInstruction::Mmac { md, ms1, ms2, etype } => pack(
            etype.funct7(),
            reg_field(ms2)?,
            reg_field(ms1)?,
            FUNCT3_MMAC,
            reg_field(md)?,
        ),
    })
}

/// Decode a word. Memory instructions come back with zero base and stride;
/// attach the forwarded values with [`MatInstruction::with_operands`].
pub fn decode_instruction(word: u32) -> Result<MatInstruction, IsaError> {
    let illegal = || IsaError::IllegalInstruction(word);
    if word & 0x7f != OPCODE_CUSTOM1 {
        return Err(illegal());
    }
    let rd = (word >> 7) & 0x1f;
    let funct3 = (word >> 12) & 0x7;
    let rs1 = (word >> 15) & 0x1f;
    let rs2 = (word >> 20) & 0x1f;
    let funct7 = word >> 25;
    let reg = |field: u32| {
        if field < MAX_MATRIX_REGS {
            Ok(MatReg(field as u8))
        } else {
            Err(illegal())
        }
    };
    let only_rd = rs1 == 0 && rs2 == 0 && funct7 == 0;
    match funct3 {
        FUNCT3_MZ if only_rd => Ok(MatInstruction::Mz { md: reg(rd)? }),
        FUNCT3_MLD if only_rd => Ok(MatInstruction::MldW {
            md: reg(rd)?,
            base: 0,
            stride: 0,
        }),
        FUNCT3_MST if only_rd => Ok(MatInstruction::MstW {
            ms: reg(rd)?,
            base: 0,
            stride: 0,
        }),
        FUNCT3_MMAC => Ok(MatInstruction::Mmac {
            md: reg(rd)?,
            ms1: reg(rs1)?,
            ms2: reg(rs2)?,
            etype: ElemType::from_funct7(funct7).ok_or_else(illegal)?,
        }),
        _ => Err(illegal()),
    }
}
