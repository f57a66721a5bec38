//! A small label-aware assembler for writing test contracts as readable listings.
//!
//! One instruction per line. `name:` defines a label at the current offset (it does
//! not emit a JUMPDEST by itself). `PUSH <value>` picks the narrowest PUSHn,
//! `PUSHn <value>` forces a width and `PUSH @name` pushes a label as PUSH2.
//! `;` starts a comment.

use std::collections::HashMap;

use thiserror::Error;

use crate::opcode::Opcode;
use crate::word::{parse_word, U256};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}: unknown mnemonic {name:?}")]
    UnknownMnemonic { line: usize, name: String },
    #[error("line {line}: bad operand {text:?}")]
    BadOperand { line: usize, text: String },
    #[error("line {line}: operand does not fit in {width} bytes")]
    OperandTooWide { line: usize, width: usize },
    #[error("undefined label {0:?}")]
    UndefinedLabel(String),
    #[error("line {line}: duplicate label {name:?}")]
    DuplicateLabel { line: usize, name: String },
}

enum Item {
    Op(Opcode),
    Push(usize, U256),
    PushLabel(String),
}

fn byte_len(v: U256) -> usize {
    (256 - v.leading_zeros()).div_ceil(8)
}

pub fn assemble(text: &str) -> Result<Vec<u8>, AsmError> {
    let mut items = Vec::new();
    let mut labels = HashMap::new();
    let mut offset = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut rest = raw.split(';').next().unwrap_or("").trim();
        while let Some(colon) = rest.find(':') {
            let name = rest[..colon].trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                break;
            }
            if labels.insert(name.to_string(), offset).is_some() {
                return Err(AsmError::DuplicateLabel { line, name: name.to_string() });
            }
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let mut parts = rest.split_whitespace();
        let name = parts.next().unwrap_or_default().to_ascii_uppercase();
        let operand = parts.next();
        if name.starts_with("PUSH") && name != "PUSH0" {
            let text = operand.ok_or_else(|| AsmError::BadOperand { line, text: String::new() })?;
            let forced = match &name[4..] {
                "" => None,
                n => Some(
                    n.parse::<usize>()
                        .ok()
                        .filter(|n| (1..=32).contains(n))
                        .ok_or_else(|| AsmError::UnknownMnemonic { line, name: name.clone() })?,
                ),
            };
            if let Some(label) = text.strip_prefix('@') {
                items.push(Item::PushLabel(label.to_string()));
                offset += 3;
                continue;
            }
            let v = parse_word(text).ok_or_else(|| AsmError::BadOperand { line, text: text.to_string() })?;
            let width = match forced {
                Some(w) if byte_len(v) > w => return Err(AsmError::OperandTooWide { line, width: w }),
                Some(w) => w,
                None => byte_len(v).max(1),
            };
            items.push(Item::Push(width, v));
            offset += 1 + width;
            continue;
        }
        let op = Opcode::from_mnemonic(&name).ok_or(AsmError::UnknownMnemonic { line, name })?;
        if let Some(text) = operand {
            return Err(AsmError::BadOperand { line, text: text.to_string() });
        }
        items.push(Item::Op(op));
        offset += 1;
    }

    let mut out = Vec::with_capacity(offset);
    for item in items {
        match item {
            Item::Op(op) => out.push(op.0),
            Item::Push(width, v) => {
                out.push(0x5f + width as u8);
                out.extend_from_slice(&v.to_be_bytes::<32>()[32 - width..]);
            }
            Item::PushLabel(name) => {
                let target = *labels.get(&name).ok_or(AsmError::UndefinedLabel(name))?;
                out.push(Opcode::PUSH2.0);
                out.extend_from_slice(&(target as u16).to_be_bytes());
            }
        }
    }
    Ok(out)
}
