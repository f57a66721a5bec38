//! Hex parsing, linear-sweep disassembly and reassembly.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::opcode::Opcode;
use crate::word::U256;

/// Where a piece of bytecode came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    File(String),
    Inline,
    Rpc { address: String, endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bytecode {
    pub bytes: Vec<u8>,
    pub source: Source,
}

impl Bytecode {
    pub fn inline(bytes: Vec<u8>) -> Self {
        Bytecode { bytes, source: Source::Inline }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn to_hex(&self) -> String {
        to_hex(&self.bytes)
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(2 + bytes.len() * 2);
    s.push_str("0x");
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HexError {
    #[error("odd number of hex digits (unpaired digit at index {index})")]
    OddLength { index: usize },
    #[error("non-hex character {ch:?} at index {index}")]
    NonHexCharacter { index: usize, ch: char },
}

/// Parses hex text with or without a `0x` prefix. Whitespace anywhere is ignored;
/// reported indices refer to `text` as given.
pub fn parse_hex(text: &str) -> Result<Bytecode, HexError> {
    let trimmed_start = text.len() - text.trim_start().len();
    let body = &text[trimmed_start..];
    let (skip, body) = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        Some(rest) => (trimmed_start + 2, rest),
        None => (trimmed_start, body),
    };
    let mut digits = Vec::with_capacity(body.len());
    for (i, ch) in body.char_indices() {
        if ch.is_whitespace() {
            continue;
        }
        match ch.to_digit(16) {
            Some(d) => digits.push((skip + i, d as u8)),
            None => return Err(HexError::NonHexCharacter { index: skip + i, ch }),
        }
    }
    if digits.len() % 2 == 1 {
        let index = digits.last().map(|d| d.0).unwrap_or(0);
        return Err(HexError::OddLength { index });
    }
    let bytes = digits.chunks(2).map(|p| (p[0].1 << 4) | p[1].1).collect();
    Ok(Bytecode::inline(bytes))
}

/// One decoded instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub offset: usize,
    pub opcode: Opcode,
    /// Immediate for PUSH1..PUSH32. Missing trailing bytes of a truncated push read as zero.
    pub operand: Option<U256>,
    pub width: usize,
    /// The push ran past end-of-code; this is always the last instruction.
    pub truncated: bool,
}

impl Instruction {
    pub fn end(&self) -> usize {
        self.offset + self.width
    }

    pub fn is_jumpdest(&self) -> bool {
        self.opcode == Opcode::JUMPDEST
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04x}: {}", self.offset, self.opcode)?;
        if let Some(v) = self.operand {
            write!(f, " 0x{}", operand_hex(self.opcode, v))?;
        }
        if self.truncated {
            f.write_str(" (truncated)")?;
        }
        Ok(())
    }
}

fn operand_hex(op: Opcode, v: U256) -> String {
    let n = op.push_width();
    let bytes = v.to_be_bytes::<32>();
    bytes[32 - n..].iter().map(|b| format!("{b:02x}")).collect()
}

/// Linear sweep over the whole code. Never fails: undefined bytes decode as
/// INVALID-class instructions and a push running off the end is flagged `truncated`.
pub fn disassemble(code: &[u8]) -> Vec<Instruction> {
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < code.len() {
        let opcode = Opcode(code[offset]);
        let n = opcode.push_width();
        if n == 0 {
            out.push(Instruction { offset, opcode, operand: None, width: 1, truncated: false });
            offset += 1;
            continue;
        }
        let avail = (code.len() - offset - 1).min(n);
        let mut buf = [0u8; 32];
        buf[32 - n..32 - n + avail].copy_from_slice(&code[offset + 1..offset + 1 + avail]);
        let truncated = avail < n;
        out.push(Instruction { offset, opcode, operand: Some(U256::from_be_bytes(buf)), width: 1 + avail, truncated });
        if truncated {
            break;
        }
        offset += 1 + n;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReassembleError {
    #[error("instruction {index} starts at offset {found}, expected {expected}")]
    InconsistentOffsets { index: usize, expected: usize, found: usize },
    #[error("instruction {index} ({opcode}) has width {width}, expected {expected}")]
    InconsistentWidth { index: usize, opcode: Opcode, width: usize, expected: usize },
}

/// Byte-exact inverse of [`disassemble`].
pub fn reassemble(instrs: &[Instruction]) -> Result<Bytecode, ReassembleError> {
    let mut bytes = Vec::new();
    for (index, ins) in instrs.iter().enumerate() {
        if ins.offset != bytes.len() {
            return Err(ReassembleError::InconsistentOffsets { index, expected: bytes.len(), found: ins.offset });
        }
        let n = ins.opcode.push_width();
        let expected = if ins.truncated { ins.width.clamp(1, n) } else { 1 + n };
        if ins.width != expected {
            return Err(ReassembleError::InconsistentWidth { index, opcode: ins.opcode, width: ins.width, expected });
        }
        bytes.push(ins.opcode.0);
        if n > 0 {
            let imm = ins.operand.unwrap_or_default().to_be_bytes::<32>();
            bytes.extend_from_slice(&imm[32 - n..32 - n + ins.width - 1]);
        }
    }
    Ok(Bytecode::inline(bytes))
}

/// One line of the JSON instruction listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListingLine {
    pub offset: usize,
    pub mnemonic: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operand_hex: Option<String>,
}

impl From<&Instruction> for ListingLine {
    fn from(ins: &Instruction) -> Self {
        ListingLine {
            offset: ins.offset,
            mnemonic: ins.opcode.to_string(),
            operand_hex: ins.operand.map(|v| format!("0x{}", operand_hex(ins.opcode, v))),
        }
    }
}

/// Instruction listing as JSON lines.
pub fn listing_json_lines(instrs: &[Instruction]) -> String {
    let mut out = String::new();
    for ins in instrs {
        out.push_str(&serde_json::to_string(&ListingLine::from(ins)).expect("listing serializes"));
        out.push('\n');
    }
    out
}
