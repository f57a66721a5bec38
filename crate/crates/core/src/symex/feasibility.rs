//! Path-condition feasibility checking.
//!
//! Checkers are selected by name from [`feasibility_registry`]:
//! `builtin` (constant, contradiction and interval reasoning), `trust` (never
//! refutes) and `smtlib-command` (pipes an SMT-LIB2 query into an external
//! process such as `z3 -in`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::process::{Command, Stdio};

use serde::Serialize;

use crate::opcode::Opcode;
use crate::strategy::Registry;
use crate::word::U256;

use super::expr::SymExpr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    Infeasible,
    Unknown,
}

impl Feasibility {
    /// Unknown is kept: paths are only dropped when refuted.
    pub fn admits(self) -> bool {
        self != Feasibility::Infeasible
    }
}

pub trait FeasibilityChecker: Send + Sync {
    fn name(&self) -> &'static str;
    fn check(&self, conds: &[(SymExpr, bool)]) -> Feasibility;
}

pub fn feasibility_registry() -> Registry<dyn FeasibilityChecker> {
    let mut r: Registry<dyn FeasibilityChecker> = Registry::new("solver", "builtin");
    r.register("builtin", |_| Ok(Box::new(BuiltinChecker)));
    r.register("trust", |_| Ok(Box::new(TrustChecker)));
    r.register("smtlib-command", |opts| {
        let cmd = opts.get("command").ok_or("option `command` is required (e.g. \"z3 -in\")")?;
        SmtlibCommand::parse(cmd).map(|c| Box::new(c) as Box<dyn FeasibilityChecker>)
    });
    r
}

/// Removes ISZERO wrappers, flipping the polarity for each.
pub fn canonical_condition(mut cond: SymExpr, mut polarity: bool) -> (SymExpr, bool) {
    while let SymExpr::UnOp(Opcode::ISZERO, inner) = &cond {
        let inner = (**inner).clone();
        cond = inner;
        polarity = !polarity;
    }
    (cond, polarity)
}

pub struct TrustChecker;

impl FeasibilityChecker for TrustChecker {
    fn name(&self) -> &'static str {
        "trust"
    }
    fn check(&self, _conds: &[(SymExpr, bool)]) -> Feasibility {
        Feasibility::Unknown
    }
}

pub struct BuiltinChecker;

/// Narrows a range; false when it becomes empty.
type RangeUpdate = Box<dyn Fn(&mut Range) -> bool>;

/// Unsigned range with excluded points.
#[derive(Debug, Clone)]
struct Range {
    lo: U256,
    hi: U256,
    excluded: BTreeSet<U256>,
}

impl Default for Range {
    fn default() -> Self {
        Range { lo: U256::ZERO, hi: U256::MAX, excluded: BTreeSet::new() }
    }
}

impl Range {
    fn at_least(&mut self, v: U256) {
        self.lo = self.lo.max(v);
    }
    fn at_most(&mut self, v: U256) {
        self.hi = self.hi.min(v);
    }
    fn empty(&self) -> bool {
        if self.lo > self.hi {
            return true;
        }
        let width = self.hi - self.lo;
        width < U256::from(self.excluded.len())
            && self.excluded.range(self.lo..=self.hi).count() as u128 == u128::try_from(width).unwrap() + 1
    }
}

impl FeasibilityChecker for BuiltinChecker {
    fn name(&self) -> &'static str {
        "builtin"
    }

    fn check(&self, conds: &[(SymExpr, bool)]) -> Feasibility {
        let mut asserted: BTreeMap<&SymExpr, bool> = BTreeMap::new();
        let mut ranges: BTreeMap<&SymExpr, Range> = BTreeMap::new();
        let mut all_env = true;
        for (cond, pol) in conds {
            if let Some(v) = cond.as_const() {
                if v.is_zero() == *pol {
                    return Feasibility::Infeasible;
                }
                continue;
            }
            if asserted.insert(cond, *pol).is_some_and(|prev| prev != *pol) {
                return Feasibility::Infeasible;
            }
            let (atom, apply): (&SymExpr, RangeUpdate) = match cond {
                SymExpr::BinOp(op @ (Opcode::GT | Opcode::LT | Opcode::EQ), x, k) if k.is_const() => {
                    let k = k.as_const().unwrap();
                    let (op, pol) = (*op, *pol);
                    (
                        &**x,
                        Box::new(move |r: &mut Range| {
                            match (op, pol) {
                                (Opcode::GT, true) => match k.checked_add(U256::from(1)) {
                                    Some(k1) => r.at_least(k1),
                                    None => return false,
                                },
                                (Opcode::GT, false) => r.at_most(k),
                                (Opcode::LT, true) => match k.checked_sub(U256::from(1)) {
                                    Some(k1) => r.at_most(k1),
                                    None => return false,
                                },
                                (Opcode::LT, false) => r.at_least(k),
                                (_, true) => {
                                    r.at_least(k);
                                    r.at_most(k);
                                }
                                (_, false) => {
                                    r.excluded.insert(k);
                                }
                            }
                            true
                        }),
                    )
                }
                _ => {
                    let pol = *pol;
                    (
                        cond,
                        Box::new(move |r: &mut Range| {
                            if pol {
                                r.excluded.insert(U256::ZERO);
                            } else {
                                r.at_most(U256::ZERO);
                            }
                            true
                        }),
                    )
                }
            };
            all_env &= matches!(atom, SymExpr::Env(t) if t.arg().is_none());
            let range = ranges.entry(atom).or_default();
            if !apply(range) || range.empty() {
                return Feasibility::Infeasible;
            }
        }
        if all_env {
            Feasibility::Feasible
        } else {
            Feasibility::Unknown
        }
    }
}

/// Runs an external SMT-LIB2 solver once per query.
pub struct SmtlibCommand {
    program: String,
    args: Vec<String>,
}

impl SmtlibCommand {
    pub fn parse(command: &str) -> Result<Self, String> {
        let mut parts = command.split_whitespace().map(String::from);
        let program = parts.next().ok_or("empty solver command")?;
        Ok(SmtlibCommand { program, args: parts.collect() })
    }
}

impl FeasibilityChecker for SmtlibCommand {
    fn name(&self) -> &'static str {
        "smtlib-command"
    }

    fn check(&self, conds: &[(SymExpr, bool)]) -> Feasibility {
        let query = to_smtlib(conds);
        let child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn();
        let Ok(mut child) = child else {
            return Feasibility::Unknown;
        };
        if let Some(mut stdin) = child.stdin.take() {
            if stdin.write_all(query.as_bytes()).is_err() {
                return Feasibility::Unknown;
            }
        }
        let Ok(out) = child.wait_with_output() else {
            return Feasibility::Unknown;
        };
        match String::from_utf8_lossy(&out.stdout).lines().next().map(str::trim) {
            Some("sat") => Feasibility::Feasible,
            Some("unsat") => Feasibility::Infeasible,
            _ => Feasibility::Unknown,
        }
    }
}

struct SmtWriter {
    atoms: BTreeMap<SymExpr, usize>,
}

fn bv(v: U256) -> String {
    format!("(_ bv{v} 256)")
}

const BV0: &str = "(_ bv0 256)";
const BV1: &str = "(_ bv1 256)";

impl SmtWriter {
    fn atom(&mut self, e: &SymExpr) -> String {
        let n = self.atoms.len();
        let id = *self.atoms.entry(e.clone()).or_insert(n);
        format!("a{id}")
    }

    fn term(&mut self, e: &SymExpr) -> String {
        let bool_bv = |p: String| format!("(ite {p} {BV1} {BV0})");
        let guarded = |f: &str, a: String, b: String| format!("(ite (= {b} {BV0}) {BV0} ({f} {a} {b}))");
        match e {
            SymExpr::Const(v) => bv(*v),
            SymExpr::BinOp(op, a, b) => {
                let (x, y) = (self.term(a), self.term(b));
                match *op {
                    Opcode::ADD => format!("(bvadd {x} {y})"),
                    Opcode::MUL => format!("(bvmul {x} {y})"),
                    Opcode::SUB => format!("(bvsub {x} {y})"),
                    Opcode::DIV => guarded("bvudiv", x, y),
                    Opcode::MOD => guarded("bvurem", x, y),
                    Opcode::SDIV => guarded("bvsdiv", x, y),
                    Opcode::SMOD => guarded("bvsrem", x, y),
                    Opcode::AND => format!("(bvand {x} {y})"),
                    Opcode::OR => format!("(bvor {x} {y})"),
                    Opcode::XOR => format!("(bvxor {x} {y})"),
                    Opcode::LT => bool_bv(format!("(bvult {x} {y})")),
                    Opcode::GT => bool_bv(format!("(bvugt {x} {y})")),
                    Opcode::SLT => bool_bv(format!("(bvslt {x} {y})")),
                    Opcode::SGT => bool_bv(format!("(bvsgt {x} {y})")),
                    Opcode::EQ => bool_bv(format!("(= {x} {y})")),
                    Opcode::SHL => format!("(bvshl {y} {x})"),
                    Opcode::SHR => format!("(bvlshr {y} {x})"),
                    Opcode::SAR => format!("(bvashr {y} {x})"),
                    _ => self.atom(e),
                }
            }
            SymExpr::UnOp(Opcode::ISZERO, a) => {
                let x = self.term(a);
                bool_bv(format!("(= {x} {BV0})"))
            }
            SymExpr::UnOp(Opcode::NOT, a) => format!("(bvnot {})", self.term(a)),
            SymExpr::Ite(c, t, f) => {
                let (c, t, f) = (self.term(c), self.term(t), self.term(f));
                format!("(ite (= {c} {BV0}) {f} {t})")
            }
            _ => self.atom(e),
        }
    }
}

/// SMT-LIB2 script asserting every condition with its polarity. Values the
/// encoding does not interpret (environment, storage, hashes) become free
/// 256-bit constants.
pub fn to_smtlib(conds: &[(SymExpr, bool)]) -> String {
    let mut w = SmtWriter { atoms: BTreeMap::new() };
    let asserts: Vec<String> = conds
        .iter()
        .map(|(c, p)| {
            let t = w.term(c);
            if *p {
                format!("(assert (not (= {t} {BV0})))")
            } else {
                format!("(assert (= {t} {BV0}))")
            }
        })
        .collect();
    let mut out = String::from("(set-logic QF_BV)\n");
    let mut atoms: Vec<(&SymExpr, &usize)> = w.atoms.iter().collect();
    atoms.sort_by_key(|(_, id)| **id);
    for (e, id) in atoms {
        let _ = writeln!(out, "; a{id} = {e}");
        let _ = writeln!(out, "(declare-const a{id} (_ BitVec 256))");
    }
    for a in asserts {
        out.push_str(&a);
        out.push('\n');
    }
    out.push_str("(check-sat)\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: u64) -> SymExpr {
        SymExpr::constant(v)
    }
    fn gt(a: SymExpr, b: SymExpr) -> SymExpr {
        SymExpr::bin(Opcode::GT, a, b)
    }
    fn lt(a: SymExpr, b: SymExpr) -> SymExpr {
        SymExpr::bin(Opcode::LT, a, b)
    }

    #[test]
    fn constant_conditions() {
        let b = BuiltinChecker;
        assert_eq!(b.check(&[(gt(c(1), c(0)), true)]), Feasibility::Feasible);
        assert_eq!(b.check(&[(gt(c(1), c(0)), false)]), Feasibility::Infeasible);
    }

    #[test]
    fn syntactic_contradiction() {
        let x = gt(SymExpr::callvalue(), c(1000));
        assert_eq!(BuiltinChecker.check(&[(x.clone(), true), (x, false)]), Feasibility::Infeasible);
    }

    #[test]
    fn interval_contradiction() {
        let conds = [(gt(SymExpr::callvalue(), c(1000)), true), (lt(SymExpr::callvalue(), c(500)), true)];
        assert_eq!(BuiltinChecker.check(&conds), Feasibility::Infeasible);
        let ok = [(gt(SymExpr::callvalue(), c(1000)), true), (lt(SymExpr::callvalue(), c(5000)), true)];
        assert_eq!(BuiltinChecker.check(&ok), Feasibility::Feasible);
    }

    #[test]
    fn equality_and_exclusions() {
        let x = SymExpr::env(super::super::expr::EnvTag::CallDataSize);
        let eq = |k| SymExpr::bin(Opcode::EQ, x.clone(), c(k));
        assert_eq!(BuiltinChecker.check(&[(eq(4), true), (eq(5), true)]), Feasibility::Infeasible);
        let conds = [(lt(x.clone(), c(2)), true), (eq(0), false), (eq(1), false)];
        assert_eq!(BuiltinChecker.check(&conds), Feasibility::Infeasible);
        assert_eq!(BuiltinChecker.check(&[(x.clone(), false), (x, true)]), Feasibility::Infeasible);
    }

    #[test]
    fn iszero_is_stripped() {
        let x = gt(SymExpr::callvalue(), c(1));
        let (cond, pol) = canonical_condition(SymExpr::un(Opcode::ISZERO, x.clone()), true);
        assert_eq!((cond, pol), (x, false));
    }

    #[test]
    fn unknown_when_atoms_are_compound() {
        let s = SymExpr::sload(c(1), 0);
        assert_eq!(BuiltinChecker.check(&[(gt(s, c(0)), true)]), Feasibility::Unknown);
    }

    #[test]
    fn smtlib_rendering() {
        let q = to_smtlib(&[(gt(SymExpr::callvalue(), c(1000)), true)]);
        assert!(q.contains("(declare-const a0 (_ BitVec 256))"));
        assert!(q.contains("(assert (not (= (ite (bvugt a0 (_ bv1000 256)) (_ bv1 256) (_ bv0 256)) (_ bv0 256))))"));
        assert!(q.ends_with("(check-sat)\n"));
    }

    #[test]
    fn registry_names() {
        let r = feasibility_registry();
        assert_eq!(r.names(), vec!["builtin", "smtlib-command", "trust"]);
        assert_eq!(r.create_default().name(), "builtin");
        assert!(r.create("smtlib-command", &Default::default()).is_err());
    }
}
