//! On-disk formats: program binaries, memory images and matrix operands.
//!
//! Program binary, little-endian throughout:
//!
//! ```text
//! "QDRL" | version: u16 | count: u32 | count x u32 words
//!        | per mld.w/mst.w, in program order: index u64, base u64, stride u64
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{decode_instruction, encode_instruction, ElemType, IsaError, ScalarOperands};
use crate::program::{Program, Segment};
use crate::reference::{Matrix, MatrixError};

pub const PROGRAM_MAGIC: &[u8; 4] = b"QDRL";
pub const PROGRAM_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("not a program binary (bad magic)")]
    BadMagic,
    #[error("unsupported program binary version {0}")]
    Version(u16),
    #[error("file truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("operand table entry {entry} names instruction {index}, expected {expected}")]
    OperandTable { entry: usize, index: u64, expected: usize },
    #[error("word {index}: {source}")]
    Word {
        index: usize,
        #[source]
        source: IsaError,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("image holds {got} bytes but the manifest describes {expected}")]
    ImageSize { got: usize, expected: usize },
    #[error("operand file: {0}")]
    Operand(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                offset: self.at,
                needed: n,
            });
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn encode_program(program: &Program) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(10 + 4 * program.len());
    out.extend_from_slice(PROGRAM_MAGIC);
    out.extend_from_slice(&PROGRAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(program.len() as u32).to_le_bytes());
    for (index, instr) in program.instructions.iter().enumerate() {
        let word = encode_instruction(instr).map_err(|source| FormatError::Word { index, source })?;
        out.extend_from_slice(&word.to_le_bytes());
    }
    for (index, instr) in program.instructions.iter().enumerate() {
        if let Some(ops) = instr.scalar_operands() {
            out.extend_from_slice(&(index as u64).to_le_bytes());
            out.extend_from_slice(&ops.base.to_le_bytes());
            out.extend_from_slice(&ops.stride.to_le_bytes());
        }
    }
    Ok(out)
}

/// Instructions from a program binary; data segments travel separately.
pub fn decode_program(bytes: &[u8]) -> Result<Program, FormatError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4).map_err(|_| FormatError::BadMagic)? != PROGRAM_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u16()?;
    if version != PROGRAM_VERSION {
        return Err(FormatError::Version(version));
    }
    let count = r.u32()? as usize;
    let mut instructions = Vec::with_capacity(count);
    for index in 0..count {
        let word = r.u32()?;
        instructions.push(decode_instruction(word).map_err(|source| FormatError::Word { index, source })?);
    }
    let wanted: Vec<usize> = instructions
        .iter()
        .enumerate()
        .filter(|(_, i)| i.scalar_operands().is_some())
        .map(|(i, _)| i)
        .collect();
    for (entry, &expected) in wanted.iter().enumerate() {
        let index = r.u64()?;
        if index != expected as u64 {
            return Err(FormatError::OperandTable { entry, index, expected });
        }
        let ops = ScalarOperands {
            base: r.u64()?,
            stride: r.u64()?,
        };
        instructions[expected] = instructions[expected].with_operands(ops);
    }
    if r.at != bytes.len() {
        return Err(FormatError::Trailing(bytes.len() - r.at));
    }
    Ok(Program::from_instructions(instructions))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEntry {
    pub name: String,
    pub address: u64,
    pub length: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryManifest {
    pub segments: Vec<SegmentEntry>,
}

/// Flat image (segments concatenated) and its manifest.
pub fn encode_memory_image(segments: &[Segment]) -> (Vec<u8>, MemoryManifest) {
    let mut flat = Vec::new();
    let mut manifest = MemoryManifest::default();
    for s in segments {
        flat.extend_from_slice(&s.bytes);
        manifest.segments.push(SegmentEntry {
            name: s.name.clone(),
            address: s.address,
            length: s.bytes.len() as u64,
        });
    }
    (flat, manifest)
}

pub fn decode_memory_image(flat: &[u8], manifest: &MemoryManifest) -> Result<Vec<Segment>, FormatError> {
    let expected: u64 = manifest.segments.iter().map(|s| s.length).sum();
    if expected != flat.len() as u64 {
        return Err(FormatError::ImageSize {
            got: flat.len(),
            expected: expected as usize,
        });
    }
    let mut at = 0usize;
    Ok(manifest
        .segments
        .iter()
        .map(|e| {
            let bytes = flat[at..at + e.length as usize].to_vec();
            at += e.length as usize;
            Segment::new(e.name.clone(), e.address, bytes)
        })
        .collect())
}

pub fn parse_manifest(text: &str) -> Result<MemoryManifest, FormatError> {
    serde_json::from_str(text).map_err(|e| FormatError::Manifest(e.to_string()))
}

pub fn manifest_to_json(m: &MemoryManifest) -> String {
    serde_json::to_string_pretty(m).expect("manifest serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperandHeader {
    pub rows: usize,
    pub cols: usize,
    pub etype: ElemType,
}

/// JSON header line, newline, then packed little-endian elements.
pub fn encode_operand(m: &Matrix) -> Vec<u8> {
    let header = OperandHeader {
        rows: m.rows,
        cols: m.cols,
        etype: m.etype,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&m.to_bytes());
    out
}

pub fn decode_operand(bytes: &[u8]) -> Result<Matrix, FormatError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FormatError::Operand("missing header line".into()))?;
    let header: OperandHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| FormatError::Operand(e.to_string()))?;
    Ok(Matrix::from_bytes(
        header.rows,
        header.cols,
        header.etype,
        &bytes[nl + 1..],
    )?)
}

/// FNV-1a over a byte string, for result spot checks.
pub fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    #[test]
    fn program_round_trip() {
        let p = assemble("mz m4\nmld.w m0, 0x40, 16\nmmac.i8 m4, m0, m1\nmst.w m4, 0x100, 64\n").unwrap();
        let bytes = encode_program(&p).unwrap();
        assert_eq!(&bytes[..4], b"QDRL");
        assert_eq!(bytes.len(), 4 + 2 + 4 + 4 * 4 + 2 * 24);
        assert_eq!(decode_program(&bytes).unwrap().instructions, p.instructions);
    }

    #[test]
    fn single_mz_is_one_word() {
        let bytes = encode_program(&assemble("mz m4\n").unwrap()).unwrap();
        assert_eq!(bytes.len(), 14);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 0x0000_322B);
    }

    #[test]
    fn corrupt_binaries_rejected() {
        let p = assemble("mld.w m0, 0, 16\n").unwrap();
        let good = encode_program(&p).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(decode_program(&bad), Err(FormatError::BadMagic));
        assert!(matches!(
            decode_program(&good[..good.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        let mut extra = good.clone();
        extra.push(0);
        assert_eq!(decode_program(&extra), Err(FormatError::Trailing(1)));
        let mut wrong_index = good.clone();
        wrong_index[14] = 5;
        assert!(matches!(
            decode_program(&wrong_index),
            Err(FormatError::OperandTable { .. })
        ));
        let mut v2 = good;
        v2[4] = 2;
        assert_eq!(decode_program(&v2), Err(FormatError::Version(2)));
    }

    #[test]
    fn memory_image_round_trip() {
        let segs = vec![
            Segment::new("A", 0, vec![1, 2, 3, 4]),
            Segment::new("C", 0x100, vec![9; 8]),
        ];
        let (flat, manifest) = encode_memory_image(&segs);
        let text = manifest_to_json(&manifest);
        assert!(text.contains("\"length\": 8"));
        assert_eq!(
            decode_memory_image(&flat, &parse_manifest(&text).unwrap()).unwrap(),
            segs
        );
        assert!(decode_memory_image(&flat[1..], &manifest).is_err());
    }

    #[test]
    fn operand_round_trip() {
        let m = Matrix::from_fn(2, 3, ElemType::I8, |r, c| (r as i32 * 3 - c as i32) as u32);
        let bytes = encode_operand(&m);
        assert!(bytes.starts_with(b"{\"rows\":2,\"cols\":3,\"etype\":\"i8\"}\n"));
        assert_eq!(decode_operand(&bytes).unwrap(), m);
        assert!(decode_operand(b"{\"rows\":2}").is_err());
    }
}
