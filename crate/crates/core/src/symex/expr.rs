//! Symbolic values with canonicalizing constructors.
//!
//! Every constructor normalizes: constant subtrees fold, constants sit on the
//! right of commutative operators, `c < x` is rewritten as `x > c`, trivial
//! identities disappear and a 160-bit mask over an address source is dropped.
//! Building an expression only through these constructors keeps it normalized,
//! so structural equality is the equality used downstream.

use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};
use sha3::{Digest, Keccak256};

use crate::opcode::Opcode;
use crate::word::{eval_pure, ADDRESS_MASK, U256};

/// Environment inputs. `Balance` and `CallData` carry their argument.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvTag {
    Caller,
    CallValue,
    Address,
    Balance(Arc<SymExpr>),
    Timestamp,
    Number,
    Gas,
    CallData(Arc<SymExpr>),
    CallDataSize,
}

/// Argument-free view of an [`EnvTag`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EnvKind {
    Caller,
    CallValue,
    Address,
    Balance,
    Timestamp,
    Number,
    Gas,
    CallData,
    CallDataSize,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Caller => "CALLER",
            EnvKind::CallValue => "CALLVALUE",
            EnvKind::Address => "ADDRESS",
            EnvKind::Balance => "BALANCE",
            EnvKind::Timestamp => "TIMESTAMP",
            EnvKind::Number => "NUMBER",
            EnvKind::Gas => "GAS",
            EnvKind::CallData => "CALLDATA",
            EnvKind::CallDataSize => "CALLDATASIZE",
        }
    }
}

impl EnvTag {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvTag::Caller => EnvKind::Caller,
            EnvTag::CallValue => EnvKind::CallValue,
            EnvTag::Address => EnvKind::Address,
            EnvTag::Balance(_) => EnvKind::Balance,
            EnvTag::Timestamp => EnvKind::Timestamp,
            EnvTag::Number => EnvKind::Number,
            EnvTag::Gas => EnvKind::Gas,
            EnvTag::CallData(_) => EnvKind::CallData,
            EnvTag::CallDataSize => EnvKind::CallDataSize,
        }
    }

    pub fn arg(&self) -> Option<&SymExpr> {
        match self {
            EnvTag::Balance(a) | EnvTag::CallData(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymExpr {
    Const(U256),
    Env(EnvTag),
    /// Operands in EVM pop order: `BinOp(SUB, a, b)` is `a - b`.
    BinOp(Opcode, Arc<SymExpr>, Arc<SymExpr>),
    UnOp(Opcode, Arc<SymExpr>),
    /// ADDMOD and MULMOD.
    TriOp(Opcode, Arc<SymExpr>, Arc<SymExpr>, Arc<SymExpr>),
    /// Keccak-256 over `len` bytes formed by concatenating the 32-byte `inputs`.
    Hash {
        inputs: Vec<SymExpr>,
        len: usize,
    },
    /// Storage content of `slot` before the path's `generation`-th store.
    SLoad {
        slot: Arc<SymExpr>,
        generation: usize,
    },
    Ite(Arc<SymExpr>, Arc<SymExpr>, Arc<SymExpr>),
    /// Opaque value the machine could not model.
    Fresh(usize),
}

fn is_commutative(op: Opcode) -> bool {
    matches!(op, Opcode::ADD | Opcode::MUL | Opcode::AND | Opcode::OR | Opcode::XOR | Opcode::EQ)
}

impl SymExpr {
    pub const ZERO: SymExpr = SymExpr::Const(U256::ZERO);

    pub fn constant(v: u64) -> SymExpr {
        SymExpr::Const(U256::from(v))
    }

    pub fn env(tag: EnvTag) -> SymExpr {
        SymExpr::Env(tag)
    }

    pub fn caller() -> SymExpr {
        SymExpr::Env(EnvTag::Caller)
    }

    pub fn callvalue() -> SymExpr {
        SymExpr::Env(EnvTag::CallValue)
    }

    pub fn bin(op: Opcode, a: SymExpr, b: SymExpr) -> SymExpr {
        if let (SymExpr::Const(x), SymExpr::Const(y)) = (&a, &b) {
            if let Some(v) = eval_pure(op, &[*x, *y]) {
                return SymExpr::Const(v);
            }
        }
        let (a, b) = if is_commutative(op) && a.is_const() && !b.is_const() { (b, a) } else { (a, b) };
        // Slot arithmetic reads as `keccak(..) + offset`.
        let is_hash = |e: &SymExpr| matches!(e, SymExpr::Hash { .. });
        let (a, b) = if op == Opcode::ADD && is_hash(&b) && !is_hash(&a) && !a.is_const() { (b, a) } else { (a, b) };
        let (op, a, b) = match op {
            Opcode::LT if a.is_const() => (Opcode::GT, b, a),
            Opcode::GT if a.is_const() => (Opcode::LT, b, a),
            _ => (op, a, b),
        };
        let zero = U256::ZERO;
        let one = U256::from(1);
        match (op, &a, b.as_const()) {
            (Opcode::ADD | Opcode::SUB | Opcode::OR | Opcode::XOR, _, Some(c)) if c == zero => return a,
            (Opcode::MUL | Opcode::DIV, _, Some(c)) if c == one => return a,
            (Opcode::MUL | Opcode::AND, _, Some(c)) if c == zero => return SymExpr::ZERO,
            (Opcode::AND, _, Some(c)) if c == U256::MAX => return a,
            (Opcode::AND, SymExpr::Env(EnvTag::Caller | EnvTag::Address), Some(c)) if c == ADDRESS_MASK => return a,
            (Opcode::AND, SymExpr::BinOp(Opcode::AND, _, inner), Some(c)) if inner.as_const() == Some(c) => return a,
            (Opcode::ADD, SymExpr::BinOp(Opcode::ADD, x, c1), Some(c2)) if c1.is_const() => {
                let sum = c1.as_const().unwrap().wrapping_add(c2);
                return SymExpr::bin(Opcode::ADD, (**x).clone(), SymExpr::Const(sum));
            }
            _ => {}
        }
        // Shift amounts are the first operand.
        if matches!(op, Opcode::SHL | Opcode::SHR | Opcode::SAR) && a.as_const() == Some(zero) {
            return b;
        }
        SymExpr::BinOp(op, Arc::new(a), Arc::new(b))
    }

    pub fn un(op: Opcode, a: SymExpr) -> SymExpr {
        if let SymExpr::Const(x) = a {
            if let Some(v) = eval_pure(op, &[x]) {
                return SymExpr::Const(v);
            }
        }
        if let SymExpr::UnOp(Opcode::NOT, inner) = &a {
            if op == Opcode::NOT {
                return (**inner).clone();
            }
        }
        SymExpr::UnOp(op, Arc::new(a))
    }

    pub fn tri(op: Opcode, a: SymExpr, b: SymExpr, c: SymExpr) -> SymExpr {
        if let (Some(x), Some(y), Some(z)) = (a.as_const(), b.as_const(), c.as_const()) {
            if let Some(v) = eval_pure(op, &[x, y, z]) {
                return SymExpr::Const(v);
            }
        }
        SymExpr::TriOp(op, Arc::new(a), Arc::new(b), Arc::new(c))
    }

    pub fn hash(inputs: Vec<SymExpr>, len: usize) -> SymExpr {
        SymExpr::Hash { inputs, len }
    }

    pub fn sload(slot: SymExpr, generation: usize) -> SymExpr {
        SymExpr::SLoad { slot: Arc::new(slot), generation }
    }

    pub fn ite(c: SymExpr, t: SymExpr, e: SymExpr) -> SymExpr {
        match c.as_const() {
            Some(v) if v.is_zero() => e,
            Some(_) => t,
            None if t == e => t,
            None => SymExpr::Ite(Arc::new(c), Arc::new(t), Arc::new(e)),
        }
    }

    /// Opcode application in pop order, for any pure opcode.
    pub fn apply(op: Opcode, args: Vec<SymExpr>) -> SymExpr {
        let mut it = args.into_iter();
        match op.info().stack_pops {
            1 => SymExpr::un(op, it.next().unwrap()),
            2 => {
                let a = it.next().unwrap();
                SymExpr::bin(op, a, it.next().unwrap())
            }
            _ => {
                let a = it.next().unwrap();
                let b = it.next().unwrap();
                SymExpr::tri(op, a, b, it.next().unwrap())
            }
        }
    }

    /// Rebuilds the tree through the canonicalizing constructors.
    pub fn normalize(&self) -> SymExpr {
        match self {
            SymExpr::Const(_) | SymExpr::Fresh(_) => self.clone(),
            SymExpr::Env(tag) => SymExpr::Env(match tag {
                EnvTag::Balance(a) => EnvTag::Balance(Arc::new(a.normalize())),
                EnvTag::CallData(a) => EnvTag::CallData(Arc::new(a.normalize())),
                t => t.clone(),
            }),
            SymExpr::BinOp(op, a, b) => SymExpr::bin(*op, a.normalize(), b.normalize()),
            SymExpr::UnOp(op, a) => SymExpr::un(*op, a.normalize()),
            SymExpr::TriOp(op, a, b, c) => SymExpr::tri(*op, a.normalize(), b.normalize(), c.normalize()),
            SymExpr::Hash { inputs, len } => SymExpr::hash(inputs.iter().map(SymExpr::normalize).collect(), *len),
            SymExpr::SLoad { slot, generation } => SymExpr::sload(slot.normalize(), *generation),
            SymExpr::Ite(c, t, e) => SymExpr::ite(c.normalize(), t.normalize(), e.normalize()),
        }
    }

    pub fn as_const(&self) -> Option<U256> {
        match self {
            SymExpr::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, SymExpr::Const(_))
    }

    pub fn children(&self) -> Vec<&SymExpr> {
        match self {
            SymExpr::Const(_) | SymExpr::Fresh(_) => Vec::new(),
            SymExpr::Env(tag) => tag.arg().into_iter().collect(),
            SymExpr::BinOp(_, a, b) => vec![a, b],
            SymExpr::UnOp(_, a) => vec![a],
            SymExpr::TriOp(_, a, b, c) | SymExpr::Ite(a, b, c) => vec![a, b, c],
            SymExpr::Hash { inputs, .. } => inputs.iter().collect(),
            SymExpr::SLoad { slot, .. } => vec![slot],
        }
    }

    /// True if `pred` holds for this node or any descendant.
    pub fn any(&self, pred: &dyn Fn(&SymExpr) -> bool) -> bool {
        pred(self) || self.children().into_iter().any(|c| c.any(pred))
    }

    pub fn contains_env(&self, kind: EnvKind) -> bool {
        self.any(&|e| matches!(e, SymExpr::Env(t) if t.kind() == kind))
    }

    /// Slot expressions of every SLoad in the tree, outermost first.
    pub fn loaded_slots(&self) -> Vec<&SymExpr> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a SymExpr, out: &mut Vec<&'a SymExpr>) {
            if let SymExpr::SLoad { slot, .. } = e {
                out.push(slot);
            }
            for c in e.children() {
                walk(c, out);
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().into_iter().map(SymExpr::node_count).sum::<usize>()
    }

    /// Concrete value under `ctx`, or `None` if some input is unknown.
    pub fn eval(&self, ctx: &dyn EvalContext) -> Option<U256> {
        Some(match self {
            SymExpr::Const(v) => *v,
            SymExpr::Env(tag) => {
                let arg = match tag.arg() {
                    Some(a) => Some(a.eval(ctx)?),
                    None => None,
                };
                ctx.env(tag.kind(), arg)?
            }
            SymExpr::BinOp(op, a, b) => eval_pure(*op, &[a.eval(ctx)?, b.eval(ctx)?])?,
            SymExpr::UnOp(op, a) => eval_pure(*op, &[a.eval(ctx)?])?,
            SymExpr::TriOp(op, a, b, c) => eval_pure(*op, &[a.eval(ctx)?, b.eval(ctx)?, c.eval(ctx)?])?,
            SymExpr::Hash { inputs, len } => {
                let mut bytes = Vec::with_capacity(inputs.len() * 32);
                for i in inputs {
                    bytes.extend_from_slice(&i.eval(ctx)?.to_be_bytes::<32>());
                }
                bytes.resize(*len, 0);
                keccak_word(&bytes)
            }
            SymExpr::SLoad { slot, generation } => ctx.sload(slot.eval(ctx)?, *generation)?,
            SymExpr::Ite(c, t, e) => {
                if c.eval(ctx)?.is_zero() {
                    e.eval(ctx)?
                } else {
                    t.eval(ctx)?
                }
            }
            SymExpr::Fresh(id) => ctx.fresh(*id)?,
        })
    }

    pub fn pretty(&self) -> String {
        self.to_string()
    }
}

pub fn keccak_word(bytes: &[u8]) -> U256 {
    U256::from_be_bytes::<32>(Keccak256::digest(bytes).into())
}

/// Concrete inputs for [`SymExpr::eval`].
pub trait EvalContext {
    /// `arg` is the evaluated BALANCE address or CALLDATA offset.
    fn env(&self, kind: EnvKind, arg: Option<U256>) -> Option<U256>;
    /// Storage content of `slot` after the first `generation` stores of the path.
    fn sload(&self, slot: U256, generation: usize) -> Option<U256>;
    fn fresh(&self, _id: usize) -> Option<U256> {
        None
    }
}

fn infix(op: Opcode) -> Option<(&'static str, u8)> {
    Some(match op {
        Opcode::MUL => ("*", 8),
        Opcode::DIV => ("/", 8),
        Opcode::MOD => ("%", 8),
        Opcode::ADD => ("+", 7),
        Opcode::SUB => ("-", 7),
        Opcode::SHL => ("<<", 6),
        Opcode::SHR => (">>", 6),
        Opcode::LT => ("<", 5),
        Opcode::GT => (">", 5),
        Opcode::EQ => ("==", 4),
        Opcode::AND => ("&", 3),
        Opcode::XOR => ("^", 2),
        Opcode::OR => ("|", 1),
        _ => return None,
    })
}

const ATOM: u8 = 10;

fn precedence(e: &SymExpr) -> u8 {
    match e {
        SymExpr::BinOp(op, ..) => infix(*op).map_or(ATOM, |(_, p)| p),
        SymExpr::UnOp(Opcode::NOT, _) => 9,
        SymExpr::Ite(..) => 0,
        _ => ATOM,
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, v: &U256) -> fmt::Result {
    if *v < U256::from(65536) {
        write!(f, "{v}")
    } else {
        write!(f, "{v:#x}")
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &SymExpr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymExpr::Const(v) => write_const(f, v),
            SymExpr::Env(tag) => match tag {
                EnvTag::Balance(a) => write!(f, "BALANCE({a})"),
                EnvTag::CallData(a) => write!(f, "CALLDATA[{a}]"),
                t => f.write_str(t.kind().name()),
            },
            SymExpr::BinOp(op, a, b) => match infix(*op) {
                Some((sym, p)) => {
                    // Shifts take the amount first but read as `value << amount`.
                    let (l, r) = if matches!(*op, Opcode::SHL | Opcode::SHR) { (b, a) } else { (a, b) };
                    write_child(f, l, p)?;
                    write!(f, " {sym} ")?;
                    write_child(f, r, p + 1)
                }
                None => write!(f, "{}({a}, {b})", op.mnemonic()),
            },
            SymExpr::UnOp(Opcode::NOT, a) => {
                f.write_str("~")?;
                write_child(f, a, 9)
            }
            SymExpr::UnOp(op, a) => write!(f, "{}({a})", op.mnemonic()),
            SymExpr::TriOp(op, a, b, c) => write!(f, "{}({a}, {b}, {c})", op.mnemonic()),
            SymExpr::Hash { inputs, len } => {
                f.write_str("keccak(")?;
                for (i, x) in inputs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{x}")?;
                }
                if *len != inputs.len() * 32 {
                    write!(f, "; {len} bytes")?;
                }
                f.write_str(")")
            }
            SymExpr::SLoad { slot, .. } => write!(f, "SLOAD({slot})"),
            SymExpr::Ite(c, t, e) => write!(f, "{c} ? {t} : {e}"),
            SymExpr::Fresh(id) => write!(f, "?{id}"),
        }
    }
}

impl Serialize for SymExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}
