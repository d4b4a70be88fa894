//! Simulator, assembler and analysis toolkit for a systolic matrix
//! coprocessor attached to a RISC-V core.

pub mod analysis;
pub mod asm;
pub mod config;
pub mod formats;
pub mod functional;
pub mod gantt;
pub mod isa;
pub mod kernelgen;
pub mod program;
pub mod reference;
pub mod sim;

pub use asm::{assemble, disassemble, AsmError};
pub use config::{ConfigError, MachineConfig};
pub use functional::{run_program, ArchState, ExecError, MatrixRegisterFile, MemoryImage, RunError};
pub use isa::{decode_instruction, encode_instruction, ElemType, InstrKind, IsaError, MatInstruction, MatReg};
pub use kernelgen::{generate_matmul, layout_operands, MatmulSpec};
pub use program::{Program, ProgramError, Segment};
pub use reference::{reference_matmul, Matrix};
pub use sim::{simulate, SimError, SimReport, TraceEvent};
