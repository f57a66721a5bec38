//! Storage slot structure inference.

use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::opcode::Opcode;
use crate::symex::SymExpr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Variable,
    Array,
    Mapping,
    /// No recognized layout; the family id is the slot expression itself.
    Unrecognized,
}

/// A storage location classified into a slot family.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotRef {
    /// `var:N`, `arr:N`, `map:N`, or the pretty slot expression.
    pub family: String,
    pub structure: Structure,
    /// The full slot expression.
    pub slot: SymExpr,
    /// Mapping key or array element offset, when there is one.
    pub selector: Option<SymExpr>,
}

impl fmt::Display for SlotRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.structure, &self.selector) {
            (Structure::Mapping, Some(k)) => write!(f, "{}[{k}]", self.family),
            (Structure::Array, Some(i)) => write!(f, "{}[{i}]", self.family),
            _ => f.write_str(&self.family),
        }
    }
}

/// Family and key of a mapping slot `keccak(key, base)`, nested mappings included.
fn mapping_family(inputs: &[SymExpr], len: usize) -> Option<String> {
    let [_, base] = inputs else { return None };
    if len != 64 {
        return None;
    }
    match base {
        SymExpr::Const(s) => Some(format!("map:{s}")),
        SymExpr::Hash { inputs, len } => mapping_family(inputs, *len),
        _ => None,
    }
}

fn classify_hash(h: &SymExpr, offset: Option<SymExpr>) -> Option<SlotRef> {
    let SymExpr::Hash { inputs, len } = h else { return None };
    let slot = match &offset {
        Some(o) => SymExpr::bin(Opcode::ADD, h.clone(), o.clone()),
        None => h.clone(),
    };
    match (inputs.as_slice(), *len) {
        ([SymExpr::Const(s)], 32) => Some(SlotRef {
            family: format!("arr:{s}"),
            structure: Structure::Array,
            slot,
            selector: Some(offset.unwrap_or(SymExpr::ZERO)),
        }),
        _ => {
            let family = mapping_family(inputs, *len)?;
            Some(SlotRef { family, structure: Structure::Mapping, slot, selector: Some(inputs[0].clone()) })
        }
    }
}

/// Classifies a slot expression. `None` means the shape is not recognized.
pub fn classify_slot(slot: &SymExpr) -> Option<SlotRef> {
    match slot {
        SymExpr::Const(s) => Some(SlotRef {
            family: format!("var:{s}"),
            structure: Structure::Variable,
            slot: slot.clone(),
            selector: None,
        }),
        SymExpr::Hash { .. } => classify_hash(slot, None),
        SymExpr::BinOp(Opcode::ADD, h, off) if matches!(**h, SymExpr::Hash { .. }) => {
            classify_hash(h, Some((**off).clone()))
        }
        _ => None,
    }
}

/// Like [`classify_slot`] but falls back to an `Unrecognized` family keyed by the
/// expression text.
pub fn slot_ref(slot: &SymExpr) -> SlotRef {
    classify_slot(slot).unwrap_or_else(|| SlotRef {
        family: slot.pretty(),
        structure: Structure::Unrecognized,
        slot: slot.clone(),
        selector: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: u64) -> SymExpr {
        SymExpr::constant(v)
    }

    #[test]
    fn constant_slot_is_variable() {
        let r = slot_ref(&c(2));
        assert_eq!((r.family.as_str(), r.structure), ("var:2", Structure::Variable));
    }

    #[test]
    fn hash_plus_offset_is_array() {
        let h = SymExpr::hash(vec![c(1)], 32);
        let i = SymExpr::sload(c(1), 0);
        let r = slot_ref(&SymExpr::bin(Opcode::ADD, h.clone(), i.clone()));
        assert_eq!((r.family.as_str(), r.structure), ("arr:1", Structure::Array));
        assert_eq!(r.selector, Some(i));
        // element 0 folds to the bare hash
        assert_eq!(slot_ref(&h).family, "arr:1");
    }

    #[test]
    fn keyed_hash_is_mapping() {
        let s = SymExpr::hash(vec![SymExpr::caller(), c(2)], 64);
        let r = slot_ref(&s);
        assert_eq!((r.family.as_str(), r.structure), ("map:2", Structure::Mapping));
        assert_eq!(r.to_string(), "map:2[CALLER]");
        let nested = SymExpr::hash(vec![SymExpr::callvalue(), s], 64);
        assert_eq!(slot_ref(&nested).family, "map:2");
    }

    #[test]
    fn unknown_shape_falls_back() {
        let r = slot_ref(&SymExpr::callvalue());
        assert_eq!(r.structure, Structure::Unrecognized);
        assert_eq!(r.family, "CALLVALUE");
        assert!(classify_slot(&SymExpr::callvalue()).is_none());
    }
}
