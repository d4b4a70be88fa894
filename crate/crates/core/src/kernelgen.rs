//! Blocked matmul kernels.
//!
//! The output is split into 2R x 2R blocks (R rows per register). Each block
//! accumulates into four quadrant registers m4..m7 while A rows stream
//! through m0/m2 and transposed-B rows through m1/m3, one K-step of packed
//! elements at a time.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::disassemble;
use crate::config::MachineConfig;
use crate::functional::MemoryImage;
use crate::isa::{ElemType, MatInstruction, MatReg};
use crate::program::{Program, ProgramError, Segment};
use crate::reference::{accumulator_type, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatmulSpec {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub etype: ElemType,
    pub addr_a: u64,
    pub addr_b: u64,
    pub addr_c: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("{dim} = {value} must be a positive multiple of {multiple}")]
    Shape {
        dim: &'static str,
        value: usize,
        multiple: usize,
    },
    #[error("operand regions {0} and {1} overlap")]
    Overlap(&'static str, &'static str),
    #[error("operand {name} at {address:#x} is not 16-byte aligned")]
    Alignment { name: &'static str, address: u64 },
    #[error(transparent)]
    Program(#[from] ProgramError),
}

/// Packed elements moved per register row, the K advance of one mmac.
pub fn k_step(etype: ElemType, config: &MachineConfig) -> usize {
    (config.rlen_bits / etype.sew_bits()) as usize
}

/// Output block edge: two registers' worth of rows.
pub fn block_dim(config: &MachineConfig) -> usize {
    2 * config.rows_per_register() as usize
}

fn align_up(v: u64, to: u64) -> u64 {
    v.div_ceil(to) * to
}

impl MatmulSpec {
    /// Operands packed back to back from address 0, 64-byte aligned.
    pub fn new(m: usize, k: usize, n: usize, etype: ElemType) -> Self {
        let a_bytes = (m * k) as u64 * u64::from(etype.sew_bytes());
        let b_bytes = (k * n) as u64 * u64::from(etype.sew_bytes());
        let addr_b = align_up(a_bytes, 64);
        let addr_c = align_up(addr_b + b_bytes, 64);
        Self {
            m,
            k,
            n,
            etype,
            addr_a: 0,
            addr_b,
            addr_c,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn a_bytes(&self) -> u64 {
        (self.m * self.k) as u64 * u64::from(self.etype.sew_bytes())
    }

    pub fn b_bytes(&self) -> u64 {
        (self.k * self.n) as u64 * u64::from(self.etype.sew_bytes())
    }

    pub fn c_bytes(&self) -> u64 {
        (self.m * self.n) as u64 * 4
    }

    pub fn tiles(&self, config: &MachineConfig) -> usize {
        let b = block_dim(config);
        (self.m / b) * (self.n / b)
    }

    pub fn k_iterations(&self, config: &MachineConfig) -> usize {
        self.k / k_step(self.etype, config)
    }

    pub fn macs(&self) -> u64 {
        (self.m * self.k * self.n) as u64
    }

    pub fn validate(&self, config: &MachineConfig) -> Result<(), KernelError> {
        let b = block_dim(config);
        let ks = k_step(self.etype, config);
        for (dim, value, multiple) in [("M", self.m, b), ("N", self.n, b), ("K", self.k, ks)] {
            if value == 0 || value % multiple != 0 {
                return Err(KernelError::Shape { dim, value, multiple });
            }
        }
        let regions = [
            ("A", self.addr_a, self.a_bytes()),
            ("B", self.addr_b, self.b_bytes()),
            ("C", self.addr_c, self.c_bytes()),
        ];
        for (name, address, _) in regions {
            if address % 16 != 0 {
                return Err(KernelError::Alignment { name, address });
            }
        }
        for i in 0..regions.len() {
            for j in i + 1..regions.len() {
                let (x, y) = (regions[i], regions[j]);
                if x.1 < y.1 + y.2 && y.1 < x.1 + x.2 {
                    return Err(KernelError::Overlap(x.0, y.0));
                }
            }
        }
        Ok(())
    }

    /// Sizes rounded up to the nearest valid shape.
    pub fn padded_dims(m: usize, k: usize, n: usize, etype: ElemType, config: &MachineConfig) -> (usize, usize, usize) {
        let b = block_dim(config);
        let ks = k_step(etype, config);
        let up = |v: usize, to: usize| v.max(1).div_ceil(to) * to;
        (up(m, b), up(k, ks), up(n, b))
    }
}

/// Seeded operands: A is M x K, B is K x N.
///
/// Floats are drawn from [-2, 2); integers cover their type's full range,
/// so 32-bit accumulation wraps.
pub fn random_operands(spec: &MatmulSpec) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |rows, cols| {
        Matrix::from_fn(rows, cols, spec.etype, |_, _| match spec.etype {
            ElemType::F32 => (rng.random::<f32>() * 4.0 - 2.0).to_bits(),
            ElemType::I32 => rng.random::<i32>() as u32,
            ElemType::I16 => rng.random::<i16>() as i32 as u32,
            ElemType::I8 => rng.random::<i8>() as i32 as u32,
        })
    };
    let a = draw(spec.m, spec.k);
    let b = draw(spec.k, spec.n);
    (a, b)
}

/// Memory segments for explicit operands: A row-major, B transposed, C zero.
pub fn layout_with(
    spec: &MatmulSpec,
    a: &Matrix,
    b: &Matrix,
    config: &MachineConfig,
) -> Result<Vec<Segment>, KernelError> {
    spec.validate(config)?;
    let segments = vec![
        Segment::new("A", spec.addr_a, a.to_bytes()),
        Segment::new("B", spec.addr_b, b.transpose().to_bytes()),
        Segment::new("C", spec.addr_c, vec![0; spec.c_bytes() as usize]),
    ];
    let probe = Program {
        segments: segments.clone(),
        ..Program::default()
    };
    probe.validate(config)?;
    Ok(segments)
}

pub fn layout_operands(spec: &MatmulSpec, config: &MachineConfig) -> Result<Vec<Segment>, KernelError> {
    let (a, b) = random_operands(spec);
    layout_with(spec, &a, &b, config)
}

/// The unrolled instruction stream alone.
pub fn matmul_instructions(spec: &MatmulSpec, config: &MachineConfig) -> Result<Vec<MatInstruction>, KernelError> {
    spec.validate(config)?;
    let r = config.rows_per_register() as usize;
    let blk = block_dim(config);
    let ks = k_step(spec.etype, config);
    let sew = u64::from(spec.etype.sew_bytes());
    let k = spec.k as u64;
    let operand_stride = k * sew;
    let c_stride = spec.n as u64 * 4;
    let a_row = |row: usize, kk: usize| spec.addr_a + (row as u64 * k + kk as u64) * sew;
    let bt_row = |col: usize, kk: usize| spec.addr_b + (col as u64 * k + kk as u64) * sew;
    let c_at = |row: usize, col: usize| spec.addr_c + row as u64 * c_stride + col as u64 * 4;
    let m = MatReg;
    let mld = |md: u8, base| MatInstruction::MldW {
        md: m(md),
        base,
        stride: operand_stride,
    };
    let mmac = |md: u8, a: u8, b: u8| MatInstruction::Mmac {
        md: m(md),
        ms1: m(a),
        ms2: m(b),
        etype: spec.etype,
    };
    let mst = |ms: u8, base| MatInstruction::MstW {
        ms: m(ms),
        base,
        stride: c_stride,
    };

    let mut out = Vec::with_capacity(spec.tiles(config) * (8 * spec.k_iterations(config) + 8));
    for mm in (0..spec.m).step_by(blk) {
        for nn in (0..spec.n).step_by(blk) {
            out.extend((4..8).map(|d| MatInstruction::Mz { md: m(d) }));
            for kk in (0..spec.k).step_by(ks) {
                out.push(mld(0, a_row(mm, kk)));
                out.push(mld(1, bt_row(nn, kk)));
                out.push(mmac(4, 0, 1));
                out.push(mld(2, a_row(mm + r, kk)));
                out.push(mmac(6, 2, 1));
                out.push(mld(3, bt_row(nn + r, kk)));
                out.push(mmac(5, 0, 3));
                out.push(mmac(7, 2, 3));
            }
            out.push(mst(4, c_at(mm, nn)));
            out.push(mst(5, c_at(mm, nn + r)));
            out.push(mst(6, c_at(mm + r, nn)));
            out.push(mst(7, c_at(mm + r, nn + r)));
        }
    }
    Ok(out)
}

pub fn generate_with(
    spec: &MatmulSpec,
    a: &Matrix,
    b: &Matrix,
    config: &MachineConfig,
) -> Result<Program, KernelError> {
    let segments = layout_with(spec, a, b, config)?;
    let instructions = matmul_instructions(spec, config)?;
    let symbols: BTreeMap<String, u64> = segments.iter().map(|s| (s.name.clone(), s.address)).collect();
    let program = Program {
        instructions,
        segments,
        symbols,
    };
    program.validate(config)?;
    Ok(program)
}

/// Complete program: instructions plus seeded operand data.
pub fn generate_matmul(spec: &MatmulSpec, config: &MachineConfig) -> Result<Program, KernelError> {
    let (a, b) = random_operands(spec);
    generate_with(spec, &a, &b, config)
}

/// Assembler source for a generated program.
pub fn kernel_source(spec: &MatmulSpec, program: &Program) -> String {
    format!(
        "# matmul {}x{}x{} {}, seed {}\n# A row-major, B transposed, C row-major 32-bit\n{}",
        spec.m,
        spec.k,
        spec.n,
        spec.etype,
        spec.seed,
        disassemble(program)
    )
}

/// Read the M x N result back out of memory.
pub fn extract_c(memory: &MemoryImage, spec: &MatmulSpec) -> Matrix {
    let bytes = memory
        .read(spec.addr_c, spec.c_bytes() as usize)
        .expect("C region validated against capacity");
    Matrix::from_bytes(spec.m, spec.n, accumulator_type(spec.etype), bytes).expect("size matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::functional::run_program;
    use crate::reference::reference_matmul;

    fn cfg() -> MachineConfig {
        MachineConfig::default()
    }

    #[test]
    fn instruction_counts() {
        let p = generate_matmul(&MatmulSpec::new(8, 8, 8, ElemType::F32), &cfg()).unwrap();
        assert_eq!(p.len(), 24);
        let p = generate_matmul(&MatmulSpec::new(64, 64, 64, ElemType::F32), &cfg()).unwrap();
        assert_eq!(p.len(), 8704);
    }

    #[test]
    fn narrow_types_pack_k() {
        let i8k = matmul_instructions(&MatmulSpec::new(16, 64, 16, ElemType::I8), &cfg()).unwrap();
        let f32k = matmul_instructions(&MatmulSpec::new(16, 16, 16, ElemType::F32), &cfg()).unwrap();
        assert_eq!(i8k.len(), f32k.len());
    }

    #[test]
    fn layout_sizes_and_transpose() {
        let spec = MatmulSpec::new(8, 4, 8, ElemType::F32);
        let segs = layout_operands(&spec, &cfg()).unwrap();
        let sizes: Vec<usize> = segs.iter().map(|s| s.bytes.len()).collect();
        assert_eq!(sizes, vec![128, 128, 256]);

        let (_, b) = random_operands(&spec);
        let bt = &segs[1];
        for (kk, nn) in [(0, 0), (3, 5), (2, 7)] {
            let at = (nn * spec.k + kk) * 4;
            assert_eq!(
                u32::from_le_bytes(bt.bytes[at..at + 4].try_into().unwrap()),
                b.get(kk, nn)
            );
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let e = MatmulSpec::new(7, 4, 8, ElemType::F32).validate(&cfg()).unwrap_err();
        assert_eq!(
            e,
            KernelError::Shape {
                dim: "M",
                value: 7,
                multiple: 8
            }
        );
        let e = MatmulSpec::new(8, 4, 8, ElemType::I8).validate(&cfg()).unwrap_err();
        assert_eq!(
            e,
            KernelError::Shape {
                dim: "K",
                value: 4,
                multiple: 16
            }
        );
        let mut s = MatmulSpec::new(8, 4, 8, ElemType::F32);
        s.addr_b = s.addr_a + 64;
        assert_eq!(s.validate(&cfg()), Err(KernelError::Overlap("A", "B")));
        let mut s = MatmulSpec::new(8, 4, 8, ElemType::F32);
        s.addr_c = cfg().capacity_bytes() - 16;
        assert!(matches!(layout_operands(&s, &cfg()), Err(KernelError::Program(_))));
    }

    #[test]
    fn padding_rounds_up() {
        assert_eq!(MatmulSpec::padded_dims(7, 4, 8, ElemType::F32, &cfg()), (8, 4, 8));
        assert_eq!(MatmulSpec::padded_dims(9, 17, 1, ElemType::I8, &cfg()), (16, 32, 8));
    }

    #[test]
    fn functional_run_matches_reference() {
        for etype in ElemType::ALL {
            let ks = k_step(etype, &cfg());
            let spec = MatmulSpec::new(16, 2 * ks, 8, etype).with_seed(7);
            let p = generate_matmul(&spec, &cfg()).unwrap();
            let state = run_program(&p, &cfg()).unwrap();
            let (a, b) = random_operands(&spec);
            assert_eq!(
                extract_c(&state.memory, &spec),
                reference_matmul(&a, &b).unwrap(),
                "{etype}"
            );
        }
    }

    #[test]
    fn rectangular_rlen64() {
        let cfg = MachineConfig::with_rlen(64);
        let spec = MatmulSpec::new(4, 6, 8, ElemType::I32).with_seed(3);
        let p = generate_matmul(&spec, &cfg).unwrap();
        let state = run_program(&p, &cfg).unwrap();
        let (a, b) = random_operands(&spec);
        assert_eq!(extract_c(&state.memory, &spec), reference_matmul(&a, &b).unwrap());
    }

    #[test]
    fn source_round_trips() {
        let spec = MatmulSpec::new(8, 8, 8, ElemType::I16).with_seed(1);
        let p = generate_matmul(&spec, &cfg()).unwrap();
        let back = assemble(&kernel_source(&spec, &p)).unwrap();
        assert_eq!(back.instructions, p.instructions);
        assert_eq!(back.segments, p.segments);
    }
}
