//! Architectural semantics, independent of timing.
//!
//! Everything here is bit-exact and sequential. The cycle model in
//! [`crate::sim`] replays the same row-level effects at scheduled cycles and
//! must end in an identical [`ArchState`].

use thiserror::Error;

use crate::config::MachineConfig;
use crate::isa::{ElemType, MatInstruction, MatReg};
use crate::program::{Program, ProgramError};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MatrixRegisterFile {
    rows: usize,
    row_bytes: usize,
    data: Vec<u8>,
}

impl MatrixRegisterFile {
    pub fn new(config: &MachineConfig) -> Self {
        let rows = config.rows_per_register() as usize;
        let row_bytes = config.row_bytes() as usize;
        Self {
            rows,
            row_bytes,
            data: vec![0; config.num_matrix_regs as usize * rows * row_bytes],
        }
    }

    pub fn num_regs(&self) -> usize {
        self.data.len() / (self.rows * self.row_bytes)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row_bytes(&self) -> usize {
        self.row_bytes
    }

    fn offset(&self, reg: MatReg, row: usize) -> usize {
        (reg.index() * self.rows + row) * self.row_bytes
    }

    pub fn row(&self, reg: MatReg, row: usize) -> &[u8] {
        let at = self.offset(reg, row);
        &self.data[at..at + self.row_bytes]
    }

    pub fn set_row(&mut self, reg: MatReg, row: usize, bytes: &[u8]) {
        let at = self.offset(reg, row);
        self.data[at..at + self.row_bytes].copy_from_slice(bytes);
    }

    pub fn register(&self, reg: MatReg) -> &[u8] {
        let at = self.offset(reg, 0);
        &self.data[at..at + self.rows * self.row_bytes]
    }

    pub fn set_register(&mut self, reg: MatReg, bytes: &[u8]) {
        let at = self.offset(reg, 0);
        self.data[at..at + self.rows * self.row_bytes].copy_from_slice(bytes);
    }

    /// 32-bit lane `lane` of row `row`, little-endian.
    pub fn lane(&self, reg: MatReg, row: usize, lane: usize) -> u32 {
        let r = self.row(reg, row);
        u32::from_le_bytes(r[lane * 4..lane * 4 + 4].try_into().expect("4-byte lane"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemoryImage {
    bytes: Vec<u8>,
}

impl MemoryImage {
    pub fn new(capacity: u64) -> Self {
        Self {
            bytes: vec![0; capacity as usize],
        }
    }

    pub fn capacity(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn range(&self, addr: u64, len: usize) -> Result<std::ops::Range<usize>, ExecError> {
        let end = addr.checked_add(len as u64).filter(|&e| e <= self.capacity());
        match end {
            Some(end) => Ok(addr as usize..end as usize),
            None => Err(ExecError::MemoryFault {
                address: addr,
                len,
                capacity: self.capacity(),
            }),
        }
    }

    pub fn read(&self, addr: u64, len: usize) -> Result<&[u8], ExecError> {
        Ok(&self.bytes[self.range(addr, len)?])
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Result<(), ExecError> {
        let r = self.range(addr, data.len())?;
        self.bytes[r].copy_from_slice(data);
        Ok(())
    }

    pub fn read_u32(&self, addr: u64) -> Result<u32, ExecError> {
        let b = self.read(addr, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchState {
    pub mrf: MatrixRegisterFile,
    pub memory: MemoryImage,
    pub retired: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("memory fault: {len} bytes at {address:#x} exceed capacity {capacity:#x}")]
    MemoryFault { address: u64, len: usize, capacity: u64 },
    #[error("{what} {value:#x} is not 4-byte aligned")]
    Alignment { what: &'static str, value: u64 },
    #[error("register m{reg} does not exist")]
    NoSuchRegister { reg: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("instruction {index}: {source}")]
    Exec {
        index: usize,
        #[source]
        source: ExecError,
    },
}

impl ArchState {
    pub fn new(config: &MachineConfig) -> Self {
        Self {
            mrf: MatrixRegisterFile::new(config),
            memory: MemoryImage::new(config.capacity_bytes()),
            retired: 0,
            macs: 0,
        }
    }

    /// Fresh state with the program's data segments copied into memory.
    pub fn with_program(config: &MachineConfig, program: &Program) -> Result<Self, RunError> {
        program.validate(config)?;
        let mut state = Self::new(config);
        for seg in &program.segments {
            state
                .memory
                .write(seg.address, &seg.bytes)
                .expect("segments validated against capacity");
        }
        Ok(state)
    }

    fn check_reg(&self, reg: MatReg) -> Result<(), ExecError> {
        if reg.index() >= self.mrf.num_regs() {
            return Err(ExecError::NoSuchRegister { reg: reg.0 });
        }
        Ok(())
    }
}

fn check_alignment(base: u64, stride: u64) -> Result<(), ExecError> {
    if !base.is_multiple_of(4) {
        return Err(ExecError::Alignment {
            what: "base address",
            value: base,
        });
    }
    if !stride.is_multiple_of(4) {
        return Err(ExecError::Alignment {
            what: "row stride",
            value: stride,
        });
    }
    Ok(())
}

/// Byte address of every row touched by a strided register transfer,
/// after checking alignment and bounds for the whole access.
pub fn row_addresses(
    memory: &MemoryImage,
    rows: usize,
    row_bytes: usize,
    base: u64,
    stride: u64,
) -> Result<Vec<u64>, ExecError> {
    check_alignment(base, stride)?;
    let mut addrs = Vec::with_capacity(rows);
    for r in 0..rows as u64 {
        let addr = stride
            .checked_mul(r)
            .and_then(|o| base.checked_add(o))
            .ok_or(ExecError::MemoryFault {
                address: base,
                len: row_bytes,
                capacity: memory.capacity(),
            })?;
        memory.read(addr, row_bytes)?;
        addrs.push(addr);
    }
    Ok(addrs)
}

pub fn exec_mz(state: &mut ArchState, md: MatReg) -> Result<(), ExecError> {
    state.check_reg(md)?;
    let zero = vec![0u8; state.mrf.rows() * state.mrf.row_bytes()];
    state.mrf.set_register(md, &zero);
    state.retired += 1;
    Ok(())
}

pub fn exec_mld_w(state: &mut ArchState, md: MatReg, base: u64, stride: u64) -> Result<(), ExecError> {
    state.check_reg(md)?;
    let (rows, row_bytes) = (state.mrf.rows(), state.mrf.row_bytes());
    let addrs = row_addresses(&state.memory, rows, row_bytes, base, stride)?;
    for (r, addr) in addrs.into_iter().enumerate() {
        let bytes = state.memory.read(addr, row_bytes)?.to_vec();
        state.mrf.set_row(md, r, &bytes);
    }
    state.retired += 1;
    Ok(())
}

pub fn exec_mst_w(state: &mut ArchState, ms: MatReg, base: u64, stride: u64) -> Result<(), ExecError> {
    state.check_reg(ms)?;
    let (rows, row_bytes) = (state.mrf.rows(), state.mrf.row_bytes());
    let addrs = row_addresses(&state.memory, rows, row_bytes, base, stride)?;
    for (r, addr) in addrs.into_iter().enumerate() {
        let bytes = state.mrf.row(ms, r).to_vec();
        state.memory.write(addr, &bytes)?;
    }
    state.retired += 1;
    Ok(())
}

/// Sign-extended element `k` of a packed row.
pub fn int_element(row: &[u8], k: usize, etype: ElemType) -> i32 {
    match etype {
        ElemType::I8 => row[k] as i8 as i32,
        ElemType::I16 => i16::from_le_bytes([row[2 * k], row[2 * k + 1]]) as i32,
        ElemType::I32 | ElemType::F32 => {
            i32::from_le_bytes([row[4 * k], row[4 * k + 1], row[4 * k + 2], row[4 * k + 3]])
        }
    }
}

pub fn f32_element(row: &[u8], k: usize) -> f32 {
    f32::from_le_bytes([row[4 * k], row[4 * k + 1], row[4 * k + 2], row[4 * k + 3]])
}

/// Accumulate `a * b^T` into `acc` (row-major `rows x rows` 32-bit cells).
///
/// `a_rows[i]` and `b_rows[j]` are packed rows of `elems` elements. The k
/// sum runs strictly ascending; f32 uses one fused multiply-add per step,
/// integers wrap in 32 bits. Returns the number of MACs performed.
pub fn mac_tile(acc: &mut [u32], a_rows: &[&[u8]], b_rows: &[&[u8]], etype: ElemType, elems: usize) -> u64 {
    let rows = a_rows.len();
    debug_assert_eq!(acc.len(), rows * rows);
    for i in 0..rows {
        for j in 0..rows {
            let cell = &mut acc[i * rows + j];
            if etype.is_float() {
                let mut sum = f32::from_bits(*cell);
                for k in 0..elems {
                    sum = f32_element(a_rows[i], k).mul_add(f32_element(b_rows[j], k), sum);
                }
                *cell = sum.to_bits();
            } else {
                let mut sum = *cell as i32;
                for k in 0..elems {
                    let p = int_element(a_rows[i], k, etype).wrapping_mul(int_element(b_rows[j], k, etype));
                    sum = sum.wrapping_add(p);
                }
                *cell = sum as u32;
            }
        }
    }
    (rows * rows * elems) as u64
}

/// Accumulator register as `rows x rows` 32-bit cells.
pub fn accumulator_cells(mrf: &MatrixRegisterFile, reg: MatReg) -> Vec<u32> {
    let rows = mrf.rows();
    (0..rows)
        .flat_map(|i| (0..rows).map(move |j| (i, j)))
        .map(|(i, j)| mrf.lane(reg, i, j))
        .collect()
}

pub fn cells_to_rows(cells: &[u32], rows: usize) -> Vec<Vec<u8>> {
    cells
        .chunks(rows)
        .map(|row| row.iter().flat_map(|c| c.to_le_bytes()).collect())
        .collect()
}

pub fn exec_mmac(
    state: &mut ArchState,
    md: MatReg,
    ms1: MatReg,
    ms2: MatReg,
    etype: ElemType,
) -> Result<(), ExecError> {
    for r in [md, ms1, ms2] {
        state.check_reg(r)?;
    }
    let rows = state.mrf.rows();
    let elems = state.mrf.row_bytes() * 8 / etype.sew_bits() as usize;
    // all operand reads happen before the accumulate, so md may alias a source
    let a: Vec<Vec<u8>> = (0..rows).map(|r| state.mrf.row(ms1, r).to_vec()).collect();
    let b: Vec<Vec<u8>> = (0..rows).map(|r| state.mrf.row(ms2, r).to_vec()).collect();
    let a_rows: Vec<&[u8]> = a.iter().map(Vec::as_slice).collect();
    let b_rows: Vec<&[u8]> = b.iter().map(Vec::as_slice).collect();
    let mut acc = accumulator_cells(&state.mrf, md);
    let macs = mac_tile(&mut acc, &a_rows, &b_rows, etype, elems);
    for (r, bytes) in cells_to_rows(&acc, rows).iter().enumerate() {
        state.mrf.set_row(md, r, bytes);
    }
    state.macs += macs;
    state.retired += 1;
    Ok(())
}

pub fn exec_instruction(state: &mut ArchState, instr: &MatInstruction) -> Result<(), ExecError> {
    match *instr {
        MatInstruction::Mz { md } => exec_mz(state, md),
        MatInstruction::MldW { md, base, stride } => exec_mld_w(state, md, base, stride),
        MatInstruction::MstW { ms, base, stride } => exec_mst_w(state, ms, base, stride),
        MatInstruction::Mmac { md, ms1, ms2, etype } => exec_mmac(state, md, ms1, ms2, etype),
    }
}

pub fn run_program(program: &Program, config: &MachineConfig) -> Result<ArchState, RunError> {
    let mut state = ArchState::with_program(config, program)?;
    for (index, instr) in program.instructions.iter().enumerate() {
        exec_instruction(&mut state, instr).map_err(|source| RunError::Exec { index, source })?;
    }
    Ok(state)
}
