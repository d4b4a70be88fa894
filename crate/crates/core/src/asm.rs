//! Text assembler and disassembler.
//!
//! ```text
//! # comment
//! mz      m4
//! mld.w   m0, A + 16, 64        # base and row stride, both byte expressions
//! mst.w   m4, C, 32
//! mmac.f32 m4, m0, m1
//! .data 0x100                   # switch to data, optionally at an address
//! A:  .word 1, 2, 0x3, -4
//!     .align 16
//! .text                         # back to instructions
//! ```
//!
//! Expressions are sums and differences of integers and labels. Labels in
//! the data section name byte addresses; labels among instructions name the
//! instruction's offset in the encoded stream (4 bytes per instruction).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::config::MAX_MATRIX_REGS;
use crate::isa::{ElemType, IsaError, MatInstruction, MatReg};
use crate::program::{Program, Segment};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("label `{0}` defined twice")]
    DuplicateLabel(String),
    #[error("register m{0} out of range (m0..m{max})", max = MAX_MATRIX_REGS - 1)]
    RegisterRange(u32),
    #[error(".align argument {0} is not a power of two")]
    BadAlign(i128),
    #[error("value {0} out of range")]
    ValueRange(i128),
    #[error("{0}")]
    Operand(IsaError),
}

fn err(line: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, kind }
}

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    err(line, AsmErrorKind::Syntax(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Term {
    Num(i128),
    Sym(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Expr(Vec<(bool, Term)>);

impl Expr {
    fn parse(text: &str, line: usize) -> Result<Self, AsmError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(syntax(line, "missing operand"));
        }
        let mut terms = Vec::new();
        let mut negate = false;
        let mut current = String::new();
        let mut flush = |current: &mut String, negate: bool| -> Result<(), AsmError> {
            let tok = current.trim();
            if tok.is_empty() {
                return Err(syntax(line, "dangling operator"));
            }
            terms.push((negate, parse_term(tok, line)?));
            current.clear();
            Ok(())
        };
        for (i, ch) in text.char_indices() {
            if (ch == '+' || ch == '-') && !current.trim().is_empty() {
                flush(&mut current, negate)?;
                negate = ch == '-';
            } else if ch == '-' && i == 0 {
                negate = true;
            } else if ch == '+' && i == 0 {
            } else {
                current.push(ch);
            }
        }
        flush(&mut current, negate)?;
        Ok(Expr(terms))
    }

    fn eval(&self, symbols: &BTreeMap<String, u64>, line: usize) -> Result<i128, AsmError> {
        let mut total: i128 = 0;
        for (neg, term) in &self.0 {
            let v = match term {
                Term::Num(n) => *n,
                Term::Sym(s) => i128::from(
                    *symbols
                        .get(s)
                        .ok_or_else(|| err(line, AsmErrorKind::UndefinedLabel(s.clone())))?,
                ),
            };
            total += if *neg { -v } else { v };
        }
        Ok(total)
    }
}

fn parse_term(tok: &str, line: usize) -> Result<Term, AsmError> {
    let first = tok.chars().next().unwrap_or(' ');
    if first.is_ascii_digit() {
        let lower = tok.to_ascii_lowercase();
        let parsed = if let Some(hex) = lower.strip_prefix("0x") {
            i128::from_str_radix(&hex.replace('_', ""), 16)
        } else if let Some(bin) = lower.strip_prefix("0b") {
            i128::from_str_radix(&bin.replace('_', ""), 2)
        } else {
            lower.replace('_', "").parse::<i128>()
        };
        parsed
            .map(Term::Num)
            .map_err(|_| syntax(line, format!("bad number `{tok}`")))
    } else if is_ident(tok) {
        Ok(Term::Sym(tok.to_string()))
    } else {
        Err(syntax(line, format!("bad expression term `{tok}`")))
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_reg(tok: &str, line: usize) -> Result<MatReg, AsmError> {
    let tok = tok.trim();
    let digits = tok
        .strip_prefix('m')
        .filter(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
        .ok_or_else(|| syntax(line, format!("expected matrix register, found `{tok}`")))?;
    let idx: u32 = digits
        .parse()
        .map_err(|_| syntax(line, format!("bad register `{tok}`")))?;
    if idx >= MAX_MATRIX_REGS {
        return Err(err(line, AsmErrorKind::RegisterRange(idx)));
    }
    Ok(MatReg(idx as u8))
}

fn split_operands(rest: &str) -> Vec<&str> {
    if rest.trim().is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    }
}

fn expect_count(ops: &[&str], n: usize, mnemonic: &str, line: usize) -> Result<(), AsmError> {
    if ops.len() != n {
        return Err(syntax(
            line,
            format!("`{mnemonic}` takes {n} operand(s), found {}", ops.len()),
        ));
    }
    Ok(())
}

/// An instruction whose address operands still need symbol resolution.
enum PendingInstr {
    Ready(MatInstruction),
    Memory {
        store: bool,
        reg: MatReg,
        base: Expr,
        stride: Expr,
    },
}

enum DataItem {
    Words(Vec<Expr>),
    Bytes(Vec<Expr>),
}

struct DataChunk {
    line: usize,
    address: u64,
    item: DataItem,
}

#[derive(PartialEq, Eq)]
enum Section {
    Text,
    Data,
}

fn to_address(v: i128, line: usize) -> Result<u64, AsmError> {
    u64::try_from(v).map_err(|_| err(line, AsmErrorKind::ValueRange(v)))
}

pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut symbols: BTreeMap<String, u64> = BTreeMap::new();
    let mut pending: Vec<(usize, PendingInstr)> = Vec::new();
    let mut chunks: Vec<DataChunk> = Vec::new();
    // (start address, name) of each explicit `.data` region start and of labels
    let mut data_labels: Vec<(u64, String)> = Vec::new();
    let mut region_starts: Vec<u64> = vec![0];
    let mut section = Section::Text;
    let mut loc: u64 = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut body = raw.split('#').next().unwrap_or("").trim();

        while let Some(colon) = body.find(':') {
            let label = body[..colon].trim();
            if !is_ident(label) {
                break;
            }
            let addr = match section {
                Section::Text => 4 * pending.len() as u64,
                Section::Data => loc,
            };
            if symbols.insert(label.to_string(), addr).is_some() {
                return Err(err(line, AsmErrorKind::DuplicateLabel(label.to_string())));
            }
            if section == Section::Data {
                data_labels.push((addr, label.to_string()));
            }
            body = body[colon + 1..].trim();
        }
        if body.is_empty() {
            continue;
        }

        let (head, rest) = match body.find(char::is_whitespace) {
            Some(pos) => (&body[..pos], body[pos..].trim()),
            None => (body, ""),
        };
        let ops = split_operands(rest);

        match head {
            ".data" => {
                section = Section::Data;
                if ops.len() > 1 {
                    return Err(syntax(line, "`.data` takes at most one address"));
                }
                if let Some(op) = ops.first() {
                    loc = to_address(Expr::parse(op, line)?.eval(&symbols, line)?, line)?;
                }
                region_starts.push(loc);
            }
            ".text" => {
                expect_count(&ops, 0, ".text", line)?;
                section = Section::Text;
            }
            ".align" => {
                expect_count(&ops, 1, ".align", line)?;
                let n = Expr::parse(ops[0], line)?.eval(&symbols, line)?;
                if n <= 0 || (n & (n - 1)) != 0 {
                    return Err(err(line, AsmErrorKind::BadAlign(n)));
                }
                if section != Section::Data {
                    return Err(syntax(line, "`.align` outside `.data`"));
                }
                let n = n as u64;
                let aligned = loc.div_ceil(n) * n;
                if aligned > loc {
                    let pad = (aligned - loc) as usize;
                    chunks.push(DataChunk {
                        line,
                        address: loc,
                        item: DataItem::Bytes(vec![Expr(vec![(false, Term::Num(0))]); pad]),
                    });
                }
                loc = aligned;
            }
            ".word" | ".byte" => {
                if section != Section::Data {
                    return Err(syntax(line, format!("`{head}` outside `.data`")));
                }
                if ops.is_empty() {
                    return Err(syntax(line, format!("`{head}` needs at least one value")));
                }
                let exprs = ops
                    .iter()
                    .map(|o| Expr::parse(o, line))
                    .collect::<Result<Vec<_>, _>>()?;
                let size = if head == ".word" { 4 } else { 1 };
                let n = exprs.len() as u64;
                chunks.push(DataChunk {
                    line,
                    address: loc,
                    item: if size == 4 {
                        DataItem::Words(exprs)
                    } else {
                        DataItem::Bytes(exprs)
                    },
                });
                loc += n * size;
            }
            d if d.starts_with('.') => {
                return Err(syntax(line, format!("unknown directive `{d}`")));
            }
            mnemonic => {
                if section == Section::Data {
                    return Err(syntax(line, "instruction inside `.data`; switch back with `.text`"));
                }
                let instr = match mnemonic {
                    "mz" => {
                        expect_count(&ops, 1, mnemonic, line)?;
                        PendingInstr::Ready(MatInstruction::Mz {
                            md: parse_reg(ops[0], line)?,
                        })
                    }
                    "mld.w" | "mst.w" => {
                        expect_count(&ops, 3, mnemonic, line)?;
                        PendingInstr::Memory {
                            store: mnemonic == "mst.w",
                            reg: parse_reg(ops[0], line)?,
                            base: Expr::parse(ops[1], line)?,
                            stride: Expr::parse(ops[2], line)?,
                        }
                    }
                    m if m.starts_with("mmac.") => {
                        let etype = ElemType::from_name(&m["mmac.".len()..])
                            .ok_or_else(|| err(line, AsmErrorKind::UnknownMnemonic(m.to_string())))?;
                        expect_count(&ops, 3, mnemonic, line)?;
                        PendingInstr::Ready(MatInstruction::Mmac {
                            md: parse_reg(ops[0], line)?,
                            ms1: parse_reg(ops[1], line)?,
                            ms2: parse_reg(ops[2], line)?,
                            etype,
                        })
                    }
                    other => return Err(err(line, AsmErrorKind::UnknownMnemonic(other.to_string()))),
                };
                pending.push((line, instr));
            }
        }
    }

    let mut instructions = Vec::with_capacity(pending.len());
    for (line, p) in pending {
        let instr = match p {
            PendingInstr::Ready(i) => i,
            PendingInstr::Memory {
                store,
                reg,
                base,
                stride,
            } => {
                let base = to_address(base.eval(&symbols, line)?, line)?;
                let stride = to_address(stride.eval(&symbols, line)?, line)?;
                if store {
                    MatInstruction::MstW { ms: reg, base, stride }
                } else {
                    MatInstruction::MldW { md: reg, base, stride }
                }
            }
        };
        instr
            .validate(MAX_MATRIX_REGS)
            .map_err(|e| err(line, AsmErrorKind::Operand(e)))?;
        instructions.push(instr);
    }

    let segments = build_segments(&chunks, &symbols, &data_labels, &region_starts)?;
    Ok(Program {
        instructions,
        segments,
        symbols,
    })
}

fn build_segments(
    chunks: &[DataChunk],
    symbols: &BTreeMap<String, u64>,
    data_labels: &[(u64, String)],
    region_starts: &[u64],
) -> Result<Vec<Segment>, AsmError> {
    let mut segments: Vec<Segment> = Vec::new();
    for chunk in chunks {
        let mut bytes = Vec::new();
        match &chunk.item {
            DataItem::Words(exprs) => {
                for e in exprs {
                    let v = e.eval(symbols, chunk.line)?;
                    if !(i128::from(i32::MIN)..=i128::from(u32::MAX)).contains(&v) {
                        return Err(err(chunk.line, AsmErrorKind::ValueRange(v)));
                    }
                    bytes.extend_from_slice(&(v as u32).to_le_bytes());
                }
            }
            DataItem::Bytes(exprs) => {
                for e in exprs {
                    let v = e.eval(symbols, chunk.line)?;
                    if !(-128..=255).contains(&v) {
                        return Err(err(chunk.line, AsmErrorKind::ValueRange(v)));
                    }
                    bytes.push(v as u8);
                }
            }
        }
        let contiguous = segments
            .last()
            .is_some_and(|s| s.end() == chunk.address && !region_starts[1..].contains(&chunk.address));
        if contiguous {
            segments.last_mut().expect("checked above").bytes.extend(bytes);
        } else {
            let name = data_labels
                .iter()
                .rev()
                .find(|(addr, _)| *addr == chunk.address)
                .map(|(_, n)| n.clone())
                .unwrap_or_else(|| format!("data_{:#x}", chunk.address));
            segments.push(Segment::new(name, chunk.address, bytes));
        }
    }
    Ok(segments)
}

/// Render a program as assembler text that reassembles to an equal program.
pub fn disassemble(program: &Program) -> String {
    let mut out = String::new();
    for instr in &program.instructions {
        let _ = writeln!(out, "{instr}");
    }
    let mut seg_starts: BTreeMap<u64, &Segment> = BTreeMap::new();
    for seg in &program.segments {
        seg_starts.insert(seg.address, seg);
    }
    // labels not sitting on a segment start are emitted on their own
    for (name, addr) in &program.symbols {
        let owns_segment = seg_starts.get(addr).is_some_and(|s| &s.name == name);
        if !owns_segment {
            let _ = writeln!(out, ".data {addr:#x}\n{name}:");
        }
    }
    for seg in &program.segments {
        let _ = writeln!(out, ".data {:#x}", seg.address);
        if program.symbols.get(&seg.name) == Some(&seg.address) {
            let _ = writeln!(out, "{}:", seg.name);
        }
        let words = seg.bytes.len() / 4;
        for chunk in seg.bytes[..words * 4].chunks(4 * 8) {
            let vals: Vec<String> = chunk
                .chunks(4)
                .map(|w| format!("{:#010x}", u32::from_le_bytes([w[0], w[1], w[2], w[3]])))
                .collect();
            let _ = writeln!(out, ".word {}", vals.join(", "));
        }
        let tail = &seg.bytes[words * 4..];
        if !tail.is_empty() {
            let vals: Vec<String> = tail.iter().map(|b| format!("{b:#04x}")).collect();
            let _ = writeln!(out, ".byte {}", vals.join(", "));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1_INNER: &str = "
        mld.w m0, 0, 32
        mld.w m1, 256, 32
        mmac.f32 m4, m0, m1
        mld.w m2, 128, 32
        mmac.f32 m6, m2, m1
        mld.w m3, 384, 32
        mmac.f32 m5, m0, m3
        mmac.f32 m7, m2, m3
    ";

    #[test]
    fn single_instructions() {
        let p = assemble("mz m4").unwrap();
        assert_eq!(p.instructions, vec![MatInstruction::Mz { md: MatReg(4) }]);
        let p = assemble("mmac.f32 m4, m0, m1").unwrap();
        assert_eq!(
            p.instructions,
            vec![MatInstruction::Mmac {
                md: MatReg(4),
                ms1: MatReg(0),
                ms2: MatReg(1),
                etype: ElemType::F32
            }]
        );
    }

    #[test]
    fn inner_loop_body_keeps_source_order() {
        let p = assemble(FIG1_INNER).unwrap();
        assert_eq!(p.instructions.len(), 8);
        let regs: Vec<u8> = p.instructions.iter().map(|i| i.dest().unwrap().0).collect();
        assert_eq!(regs, vec![0, 1, 4, 2, 6, 3, 5, 7]);
        assert!(matches!(
            p.instructions[3],
            MatInstruction::MldW {
                base: 128,
                stride: 32,
                ..
            }
        ));
    }

    #[test]
    fn labels_and_data() {
        let src = "
            mld.w m0, A, 16      # load A
            mst.w m0, C + 0x10, 16
            .data 0x40
            A: .word 1, 2, 3, -1
            .align 32
            C: .word 0
        ";
        let p = assemble(src).unwrap();
        assert_eq!(p.symbols["A"], 0x40);
        assert_eq!(p.symbols["C"], 0x60);
        assert!(matches!(p.instructions[0], MatInstruction::MldW { base: 0x40, .. }));
        assert!(matches!(p.instructions[1], MatInstruction::MstW { base: 0x70, .. }));
        assert_eq!(p.segments.len(), 1);
        assert_eq!(p.segments[0].name, "A");
        assert_eq!(p.segments[0].bytes.len(), 0x24);
        assert_eq!(&p.segments[0].bytes[12..16], &[0xff; 4]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = assemble("mz m0\nmfoo m1").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(matches!(e.kind, AsmErrorKind::UnknownMnemonic(_)));

        let e = assemble("\n\nmld.w m0, nowhere, 16").unwrap_err();
        assert_eq!(e, err(3, AsmErrorKind::UndefinedLabel("nowhere".into())));

        let e = assemble("mz m8").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::RegisterRange(8));

        let e = assemble(".data\n.align 12").unwrap_err();
        assert_eq!(e, err(2, AsmErrorKind::BadAlign(12)));

        let e = assemble("mmac.f64 m0, m1, m2").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::UnknownMnemonic(_)));

        let e = assemble("mld.w m0, 2, 16").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::Operand(IsaError::Misaligned { .. })));

        let e = assemble("mz m0, m1").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::Syntax(_)));

        let e = assemble("x:\nx: mz m0").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::DuplicateLabel("x".into()));
    }

    #[test]
    fn disassembly_reassembles() {
        let src = format!(
            "{FIG1_INNER}\nmz m3\nmst.w m3, C, 64\n.data 0x200\nC: .word 5, 6\n.byte 1, 2, 3\n.data 0x400\nD:\n"
        );
        let p = assemble(&src).unwrap();
        let text = disassemble(&p);
        let q = assemble(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(disassemble(&q), text);
    }

    #[test]
    fn adjacent_data_regions_stay_separate() {
        let p = assemble(".data 0\n.word 1\n.data 4\n.word 2").unwrap();
        assert_eq!(p.segments.len(), 2);
        let q = assemble(&disassemble(&p)).unwrap();
        assert_eq!(p, q);
    }
}
