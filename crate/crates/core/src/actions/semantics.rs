//! Contract-wide Ponzi tagging of linked action sequences.

use std::collections::BTreeSet;

use crate::strategy::Registry;
use crate::symex::{EnvKind, SymExpr};

use super::slots::{SlotRef, Structure};
use super::{ActionSequence, Operands};

/// Slot families that store investor addresses.
pub type InvestorRegistry = BTreeSet<String>;

/// Decides whether a storage write records an investor.
pub trait InvestingRule: Send + Sync {
    fn name(&self) -> &'static str;
    fn is_investing(&self, slot: &SlotRef, content: &SymExpr) -> bool;
}

/// True when CALLER occurs in `e` as a value. Slot addresses of loads and hash
/// inputs are skipped: `balance[CALLER] + x` reads by CALLER but stores no address.
fn caller_as_value(e: &SymExpr) -> bool {
    match e {
        SymExpr::Env(tag) => tag.kind() == EnvKind::Caller,
        SymExpr::SLoad { .. } | SymExpr::Hash { .. } => false,
        _ => e.children().into_iter().any(caller_as_value),
    }
}

/// Content carries the caller's address.
pub struct CallerContent;

impl InvestingRule for CallerContent {
    fn name(&self) -> &'static str {
        "caller-content"
    }

    fn is_investing(&self, _slot: &SlotRef, content: &SymExpr) -> bool {
        caller_as_value(content)
    }
}

/// [`CallerContent`], plus CALLVALUE-bearing writes into a mapping keyed by CALLER.
pub struct CallerKeyedDeposit;

impl InvestingRule for CallerKeyedDeposit {
    fn name(&self) -> &'static str {
        "caller-keyed-deposit"
    }

    fn is_investing(&self, slot: &SlotRef, content: &SymExpr) -> bool {
        if caller_as_value(content) {
            return true;
        }
        slot.structure == Structure::Mapping
            && slot.selector.as_ref().is_some_and(|k| k.contains_env(EnvKind::Caller))
            && content.contains_env(EnvKind::CallValue)
    }
}

pub fn investing_rule_registry() -> Registry<dyn InvestingRule> {
    let mut r: Registry<dyn InvestingRule> = Registry::new("investing rule", "caller-content");
    r.register("caller-content", |_| Ok(Box::new(CallerContent)));
    r.register("caller-keyed-deposit", |_| Ok(Box::new(CallerKeyedDeposit)));
    r
}

/// Sets investing, update, payback and rewarding tags on every sequence and
/// returns the investor-slot registry. Tags depend only on the set of sequences.
pub fn translate_semantics(seqs: &mut [ActionSequence], rule: &dyn InvestingRule) -> InvestorRegistry {
    let mut registry = InvestorRegistry::new();
    for a in seqs.iter_mut().flat_map(|s| s.actions.iter_mut()) {
        if let Operands::Write { slot, content, is_update, is_investing } = &mut a.operands {
            *is_update = content.loaded_slots().contains(&&slot.slot);
            *is_investing = rule.is_investing(slot, content);
            if *is_investing {
                registry.insert(slot.family.clone());
            }
        }
    }
    for a in seqs.iter_mut().flat_map(|s| s.actions.iter_mut()) {
        if let Operands::Payment { payee, payee_slot, is_payback, is_rewarding, .. } = &mut a.operands {
            *is_payback = *payee == SymExpr::caller();
            *is_rewarding = payee_slot.as_ref().is_some_and(|s| registry.contains(&s.family));
        }
    }
    registry
}
