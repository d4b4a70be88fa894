#![allow(dead_code)]

use mxsim_core::isa::{ElemType, MatInstruction, MatReg};
use mxsim_core::program::{Program, Segment};
use mxsim_core::MachineConfig;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bytes of memory the random programs read and write.
pub const ARENA: u64 = 4096;

/// A random but valid program: mixed kinds, aliasing registers, strided and
/// overlapping memory traffic, every element type.
pub fn random_program(seed: u64, config: &MachineConfig) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = u64::from(config.rows_per_register());
    let row_bytes = u64::from(config.row_bytes());
    let regs = config.num_matrix_regs as u8;

    let mut arena = vec![0u8; ARENA as usize];
    // first half small floats so f32 sums stay finite, second half raw bits
    for (i, chunk) in arena.chunks_mut(4).enumerate() {
        let word = if i < (ARENA / 8) as usize {
            (rng.random::<f32>() * 4.0 - 2.0).to_bits()
        } else {
            rng.random::<u32>()
        };
        chunk.copy_from_slice(&word.to_le_bytes());
    }

    let len = rng.random_range(1..=48);
    let mut instructions = Vec::with_capacity(len);
    for _ in 0..len {
        let reg = |rng: &mut ChaCha8Rng| MatReg(rng.random_range(0..regs));
        let instr = match rng.random_range(0..10) {
            0 => MatInstruction::Mz { md: reg(&mut rng) },
            1..=4 => {
                let stride = 4 * rng.random_range(0..=24u64);
                let span = stride * (rows - 1) + row_bytes;
                let base = 4 * rng.random_range(0..=(ARENA - span) / 4);
                if rng.random_bool(0.65) {
                    MatInstruction::MldW {
                        md: reg(&mut rng),
                        base,
                        stride,
                    }
                } else {
                    MatInstruction::MstW {
                        ms: reg(&mut rng),
                        base,
                        stride,
                    }
                }
            }
            _ => MatInstruction::Mmac {
                md: reg(&mut rng),
                ms1: reg(&mut rng),
                ms2: reg(&mut rng),
                etype: ElemType::ALL[rng.random_range(0..4)],
            },
        };
        instructions.push(instr);
    }
    Program {
        instructions,
        segments: vec![Segment::new("arena", 0, arena)],
        ..Program::default()
    }
}

pub fn rlen_for(seed: u64) -> MachineConfig {
    if seed.is_multiple_of(2) {
        MachineConfig::default()
    } else {
        MachineConfig::with_rlen(64)
    }
}
