//! Semantic actions extracted from symbolic path runs.
//!
//! Raw machine events become four action kinds (write, payment, constraint,
//! read). Storage operands are classified into slot families, and a
//! contract-wide pass tags investing writes, update writes, payback payments and
//! rewarding payments.

mod rounds;
mod semantics;
mod slots;

use std::collections::BTreeSet;
use std::ops::Range;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::cfg::BlockId;
use crate::diagnostics::{Diagnostic, Stage};
use crate::symex::{canonical_condition, EnvKind, LoopContext, PathRun, RawEvent, RawEventKind, SymExpr};

pub use rounds::{diff_loop_rounds, FieldDiff, RoundDiff, Segment};
pub use semantics::{
    investing_rule_registry, translate_semantics, CallerContent, CallerKeyedDeposit, InvestingRule, InvestorRegistry,
};
pub use slots::{classify_slot, slot_ref, SlotRef, Structure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    WriteInformation,
    InvokePayment,
    CheckConstraint,
    ReadInformation,
}

impl ActionKind {
    /// One-letter code used in compact listings.
    pub fn letter(self) -> char {
        match self {
            ActionKind::WriteInformation => 'W',
            ActionKind::InvokePayment => 'P',
            ActionKind::CheckConstraint => 'C',
            ActionKind::ReadInformation => 'R',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ReadSource {
    Slot(SlotRef),
    Env(EnvKind, SymExpr),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operands {
    Write {
        slot: SlotRef,
        content: SymExpr,
        is_update: bool,
        is_investing: bool,
    },
    Payment {
        payee: SymExpr,
        value: SymExpr,
        payee_slot: Option<SlotRef>,
        value_slot: Option<SlotRef>,
        is_payback: bool,
        is_rewarding: bool,
    },
    Constraint {
        cond: SymExpr,
        polarity: bool,
    },
    Read {
        source: ReadSource,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    pub kind: ActionKind,
    pub pc: usize,
    pub block: BlockId,
    /// Index into the path's block sequence.
    pub position: usize,
    pub loop_context: Option<LoopContext>,
    pub operands: Operands,
}

impl Action {
    /// Operand fields as (name, rendered value) pairs, in a fixed order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        match &self.operands {
            Operands::Write { slot, content, .. } => vec![("slot", slot.to_string()), ("content", content.pretty())],
            Operands::Payment { payee, value, .. } => vec![("payee", payee.pretty()), ("value", value.pretty())],
            Operands::Constraint { cond, polarity } => {
                vec![("condition", cond.pretty()), ("polarity", polarity.to_string())]
            }
            Operands::Read { source } => vec![(
                "source",
                match source {
                    ReadSource::Slot(s) => s.to_string(),
                    ReadSource::Env(_, e) => e.pretty(),
                },
            )],
        }
    }

    /// Same kind and structurally equal operand expressions; tags are ignored.
    pub fn same_behavior(&self, other: &Action) -> bool {
        if self.kind != other.kind {
            return false;
        }
        match (&self.operands, &other.operands) {
            (Operands::Write { slot: a, content: x, .. }, Operands::Write { slot: b, content: y, .. }) => {
                a.slot == b.slot && x == y
            }
            (Operands::Payment { payee: a, value: x, .. }, Operands::Payment { payee: b, value: y, .. }) => {
                a == b && x == y
            }
            (Operands::Constraint { cond: a, polarity: p }, Operands::Constraint { cond: b, polarity: q }) => {
                a == b && p == q
            }
            (Operands::Read { source: a }, Operands::Read { source: b }) => match (a, b) {
                (ReadSource::Slot(x), ReadSource::Slot(y)) => x.slot == y.slot,
                (ReadSource::Env(_, x), ReadSource::Env(_, y)) => x == y,
                _ => false,
            },
            _ => false,
        }
    }

    pub fn is_investing(&self) -> bool {
        matches!(self.operands, Operands::Write { is_investing: true, .. })
    }

    pub fn is_update(&self) -> bool {
        matches!(self.operands, Operands::Write { is_update: true, .. })
    }

    pub fn is_payment(&self) -> bool {
        self.kind == ActionKind::InvokePayment
    }

    pub fn is_payback(&self) -> bool {
        matches!(self.operands, Operands::Payment { is_payback: true, .. })
    }

    pub fn is_rewarding(&self) -> bool {
        matches!(self.operands, Operands::Payment { is_rewarding: true, .. })
    }

    /// Slot families this action touches.
    pub fn families(&self) -> Vec<&str> {
        match &self.operands {
            Operands::Write { slot, .. } => vec![slot.family.as_str()],
            Operands::Payment { payee_slot, value_slot, .. } => {
                payee_slot.iter().chain(value_slot).map(|s| s.family.as_str()).collect()
            }
            Operands::Read { source: ReadSource::Slot(s) } => vec![s.family.as_str()],
            _ => Vec::new(),
        }
    }
}

/// Paired action index ranges for the two rounds of one loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPair {
    pub loop_id: usize,
    pub first: Range<usize>,
    pub second: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActionSequence {
    pub path_id: usize,
    pub actions: Vec<Action>,
    pub loop_rounds: Vec<RoundPair>,
    /// Second-round action indices whose operands differ from round one.
    pub diff_markers: BTreeSet<usize>,
    pub round_diffs: Vec<RoundDiff>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Store, call and branch operands in normalized form.
pub fn parse_operands(event: &RawEvent) -> Option<Operands> {
    Some(match &event.kind {
        RawEventKind::Store { slot, value } => Operands::Write {
            slot: slot_ref(&slot.normalize()),
            content: value.normalize(),
            is_update: false,
            is_investing: false,
        },
        RawEventKind::CallOut { to, value, .. } => Operands::Payment {
            payee: to.normalize(),
            value: value.normalize(),
            payee_slot: None,
            value_slot: None,
            is_payback: false,
            is_rewarding: false,
        },
        RawEventKind::Branch { cond, taken } => {
            let (cond, polarity) = canonical_condition(cond.normalize(), *taken);
            Operands::Constraint { cond, polarity }
        }
        _ => return None,
    })
}

fn provably_zero(e: &SymExpr) -> bool {
    e.as_const().is_some_and(|v| v.is_zero())
}

/// Turns a run's events into actions, in order. Zero-value calls move nothing
/// and only leave a diagnostic.
pub fn extract_actions(path_id: usize, run: &PathRun) -> ActionSequence {
    let mut seq = ActionSequence { path_id, ..Default::default() };
    for ev in run.events() {
        let (kind, operands) = match &ev.kind {
            RawEventKind::Store { .. } => (ActionKind::WriteInformation, parse_operands(ev).unwrap()),
            RawEventKind::CallOut { value, .. } if provably_zero(value) => {
                seq.diagnostics.push(
                    Diagnostic::new(Stage::Actions, "zero-value-call", "call transfers no value; not a payment")
                        .at_pc(ev.pc)
                        .in_block(ev.block)
                        .on_path(path_id),
                );
                continue;
            }
            RawEventKind::CallOut { .. } => (ActionKind::InvokePayment, parse_operands(ev).unwrap()),
            RawEventKind::Branch { .. } => (ActionKind::CheckConstraint, parse_operands(ev).unwrap()),
            RawEventKind::Load { slot, .. } => {
                (ActionKind::ReadInformation, Operands::Read { source: ReadSource::Slot(slot_ref(&slot.normalize())) })
            }
            RawEventKind::EnvRead { tag, expr } => {
                (ActionKind::ReadInformation, Operands::Read { source: ReadSource::Env(*tag, expr.normalize()) })
            }
        };
        seq.actions.push(Action {
            kind,
            pc: ev.pc,
            block: ev.block,
            position: ev.position,
            loop_context: ev.loop_context,
            operands,
        });
    }
    for span in &run.path.loop_spans {
        let idx = |r: &Range<usize>| {
            let lo = seq.actions.partition_point(|a| a.position < r.start);
            let hi = seq.actions.partition_point(|a| a.position < r.end);
            lo..hi
        };
        seq.loop_rounds.push(RoundPair {
            loop_id: span.loop_id,
            first: idx(&span.first_round),
            second: idx(&span.second_round),
        });
    }
    seq
}

/// Attaches slot families to payment operands and reports writes and reads
/// whose slot has no recognized layout.
pub fn link_storage(seq: &mut ActionSequence) {
    for a in &mut seq.actions {
        match &mut a.operands {
            Operands::Payment { payee, value, payee_slot, value_slot, .. } => {
                *payee_slot = payee.loaded_slots().first().map(|s| slot_ref(s));
                *value_slot = value.loaded_slots().first().map(|s| slot_ref(s));
            }
            Operands::Write { slot, .. } | Operands::Read { source: ReadSource::Slot(slot) }
                if slot.structure == Structure::Unrecognized =>
            {
                seq.diagnostics.push(
                    Diagnostic::new(
                        Stage::Actions,
                        "ambiguous-slot-shape",
                        format!("slot {} matches no variable, array or mapping layout", slot.family),
                    )
                    .at_pc(a.pc)
                    .in_block(a.block)
                    .on_path(seq.path_id),
                );
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::{disassemble, parse_hex};
    use crate::cfg::{enumerate_paths, resolve_cfg, split_blocks, PathLimits};
    use crate::symex::{run_path, BuiltinChecker};

    fn sequences(hex: &str) -> Vec<ActionSequence> {
        let instrs = disassemble(&parse_hex(hex).unwrap().bytes);
        let cfg = resolve_cfg(split_blocks(&instrs), &instrs).unwrap();
        let paths = enumerate_paths(&cfg, PathLimits::default());
        paths
            .paths
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut s = extract_actions(i, &run_path(p, &instrs, &cfg, &BuiltinChecker));
                link_storage(&mut s);
                s
            })
            .collect()
    }

    #[test]
    fn straight_line_store_is_one_write() {
        let s = &sequences("600160020160005500")[0];
        assert_eq!(s.actions.len(), 1);
        match &s.actions[0].operands {
            Operands::Write { slot, content, .. } => {
                assert_eq!(slot.family, "var:0");
                assert_eq!(*content, SymExpr::constant(3));
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn payback_fixture_actions() {
        let s = &sequences("600060006000600034335af100")[0];
        let kinds: Vec<ActionKind> = s.actions.iter().map(|a| a.kind).collect();
        assert_eq!(kinds, vec![ActionKind::ReadInformation, ActionKind::ReadInformation, ActionKind::InvokePayment]);
        assert_eq!(s.actions[2].fields(), vec![("payee", "CALLER".into()), ("value", "CALLVALUE".into())]);
    }

    #[test]
    fn zero_value_call_is_not_a_payment() {
        // CALL with value 0
        let s = &sequences(&"6000600060006000600033 5a f1 00".replace(' ', ""))[0];
        assert!(s.actions.iter().all(|a| a.kind != ActionKind::InvokePayment));
        assert_eq!(s.diagnostics[0].code, "zero-value-call");
    }

    #[test]
    fn empty_events_empty_sequence() {
        let run = PathRun {
            path: crate::cfg::BlockPath { blocks: vec![0], loop_spans: vec![] },
            status: crate::symex::RunStatus::Halted { halt: crate::symex::HaltKind::Stop },
            feasibility: crate::symex::Feasibility::Feasible,
            state: Default::default(),
            discovered_edges: vec![],
        };
        assert!(extract_actions(0, &run).actions.is_empty());
    }

    #[test]
    fn payment_value_slot_is_linked() {
        // CALL(gas, CALLER, SLOAD(5))
        let s = &sequences(&"60006000600060006005543 35a f1 00".replace(' ', ""))[0];
        let pay = s.actions.iter().find(|a| a.is_payment()).unwrap();
        match &pay.operands {
            Operands::Payment { value_slot, payee_slot, .. } => {
                assert_eq!(value_slot.as_ref().unwrap().family, "var:5");
                assert!(payee_slot.is_none());
            }
            _ => unreachable!(),
        }
    }
}
