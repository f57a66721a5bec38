//! Memory and storage models of the symbolic machine.

use crate::opcode::Opcode;
use crate::word::{small, U256};

use super::expr::SymExpr;

/// Largest constant memory offset read byte-precisely.
const MAX_CONST_OFFSET: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemWrite {
    pub offset: SymExpr,
    pub value: SymExpr,
    /// 32 for MSTORE, 1 for MSTORE8.
    pub width: usize,
}

/// Ordered write log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Memory {
    pub writes: Vec<MemWrite>,
}

/// A byte run of one write that lands in the word being read.
struct Piece {
    write: usize,
    /// Big-endian byte index inside the written value.
    src: usize,
    /// Byte index inside the read word.
    dst: usize,
    len: usize,
}

impl Memory {
    pub fn store(&mut self, offset: SymExpr, value: SymExpr, width: usize) {
        self.writes.push(MemWrite { offset, value, width });
    }

    /// The 32-byte word at `offset`, or `None` when overlapping writes cannot be
    /// resolved (a symbolic offset in the way).
    pub fn load(&self, offset: &SymExpr) -> Option<SymExpr> {
        match offset.as_const().and_then(small).filter(|o| *o <= MAX_CONST_OFFSET) {
            Some(o) => self.load_const(o),
            None => {
                let last = self.writes.last()?;
                (last.width == 32 && last.offset == *offset).then(|| last.value.clone())
            }
        }
    }

    fn load_const(&self, o: usize) -> Option<SymExpr> {
        // owner[p] = (write index, source byte) for read byte p
        let mut owner: [Option<(usize, usize)>; 32] = [None; 32];
        let mut open = 32;
        for (wi, w) in self.writes.iter().enumerate().rev() {
            if open == 0 {
                break;
            }
            let wo = w.offset.as_const().and_then(small).filter(|x| *x <= MAX_CONST_OFFSET)?;
            for (p, slot) in owner.iter_mut().enumerate() {
                let addr = o + p;
                if slot.is_none() && addr >= wo && addr < wo + w.width {
                    let src = if w.width == 1 { 31 } else { addr - wo };
                    *slot = Some((wi, src));
                    open -= 1;
                }
            }
        }
        if let Some((wi, 0)) = owner[0] {
            let w = &self.writes[wi];
            if w.width == 32 && owner.iter().enumerate().all(|(p, s)| *s == Some((wi, p))) {
                return Some(w.value.clone());
            }
        }
        let mut pieces: Vec<Piece> = Vec::new();
        for (p, slot) in owner.iter().enumerate() {
            let Some((wi, src)) = *slot else { continue };
            match pieces.last_mut() {
                Some(last) if last.write == wi && last.dst + last.len == p && last.src + last.len == src => {
                    last.len += 1
                }
                _ => pieces.push(Piece { write: wi, src, dst: p, len: 1 }),
            }
        }
        let mut acc = SymExpr::ZERO;
        for pc in pieces {
            let v = self.writes[pc.write].value.clone();
            let shl = |amount: usize, e: SymExpr| SymExpr::bin(Opcode::SHL, SymExpr::constant(amount as u64 * 8), e);
            let shr = |amount: usize, e: SymExpr| SymExpr::bin(Opcode::SHR, SymExpr::constant(amount as u64 * 8), e);
            let aligned = shr(32 - pc.len, shl(pc.src, v));
            acc = SymExpr::bin(Opcode::OR, acc, shl(32 - pc.dst - pc.len, aligned));
        }
        Some(acc)
    }
}

/// Ordered store log. The generation is the number of stores so far.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Storage {
    pub stores: Vec<(SymExpr, SymExpr)>,
}

/// `(hash, constant offset)` for `Hash`, `Hash + Const` and `Hash + index` (the
/// offset is `None` for a symbolic index that does not itself contain a hash).
fn hash_parts(e: &SymExpr) -> Option<(&SymExpr, Option<U256>)> {
    let has_hash = |x: &SymExpr| x.any(&|n| matches!(n, SymExpr::Hash { .. }));
    match e {
        SymExpr::Hash { .. } => Some((e, Some(U256::ZERO))),
        SymExpr::BinOp(Opcode::ADD, h, k) if matches!(**h, SymExpr::Hash { .. }) && !has_hash(k) => {
            Some((h, k.as_const()))
        }
        _ => None,
    }
}

fn hashes_differ(a: &SymExpr, b: &SymExpr) -> bool {
    match (a, b) {
        (SymExpr::Hash { inputs: x, len: lx }, SymExpr::Hash { inputs: y, len: ly }) => {
            lx != ly
                || x.len() != y.len()
                || x.iter().zip(y).any(|(p, q)| matches!((p, q), (SymExpr::Const(u), SymExpr::Const(v)) if u != v))
        }
        _ => false,
    }
}

/// True only when `a` and `b` can never be the same slot, treating keccak as
/// collision-free, its outputs as far apart and far from small constants.
pub fn slots_distinct(a: &SymExpr, b: &SymExpr) -> bool {
    let small_const = |e: &SymExpr| e.as_const().is_some_and(|v| v < U256::from(u64::MAX));
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        return x != y;
    }
    match (hash_parts(a), hash_parts(b)) {
        (Some((ha, ka)), Some((hb, kb))) if ha == hb => matches!((ka, kb), (Some(x), Some(y)) if x != y),
        (Some((ha, _)), Some((hb, _))) => hashes_differ(ha, hb),
        (Some(_), None) => small_const(b),
        (None, Some(_)) => small_const(a),
        (None, None) => false,
    }
}

impl Storage {
    pub fn generation(&self) -> usize {
        self.stores.len()
    }

    pub fn store(&mut self, slot: SymExpr, value: SymExpr) {
        self.stores.push((slot, value));
    }

    /// Content of `slot`: a stored value when the latest possibly-aliasing store
    /// is to the same slot expression, otherwise an `SLoad` pinned to the
    /// generation just after that store.
    pub fn load(&self, slot: &SymExpr) -> SymExpr {
        for (i, (s, v)) in self.stores.iter().enumerate().rev() {
            if s == slot {
                return v.clone();
            }
            if !slots_distinct(s, slot) {
                return SymExpr::sload(slot.clone(), i + 1);
            }
        }
        SymExpr::sload(slot.clone(), 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: u64) -> SymExpr {
        SymExpr::constant(v)
    }

    #[test]
    fn exact_word_read() {
        let mut m = Memory::default();
        m.store(c(0), SymExpr::caller(), 32);
        assert_eq!(m.load(&c(0)), Some(SymExpr::caller()));
        assert_eq!(m.load(&c(64)), Some(SymExpr::ZERO));
    }

    #[test]
    fn overlapping_constant_writes_assemble() {
        let mut m = Memory::default();
        m.store(c(0), c(0x1122), 32);
        m.store(c(31), c(0xff), 1);
        assert_eq!(m.load(&c(0)), Some(c(0x11ff)));
        // shifted window: bytes 1..33 of memory
        assert_eq!(m.load(&c(1)), Some(SymExpr::Const(U256::from(0x11ff) << 8)));
    }

    #[test]
    fn symbolic_offset_only_exact() {
        let mut m = Memory::default();
        let off = SymExpr::callvalue();
        m.store(off.clone(), c(5), 32);
        assert_eq!(m.load(&off), Some(c(5)));
        assert_eq!(m.load(&c(0)), None);
    }

    #[test]
    fn storage_forwarding_and_aliasing() {
        let mut s = Storage::default();
        let arr = SymExpr::hash(vec![c(1)], 32);
        s.store(c(0), c(7));
        s.store(SymExpr::bin(Opcode::ADD, arr.clone(), SymExpr::sload(c(1), 1)), SymExpr::caller());
        assert_eq!(s.load(&c(0)), c(7));
        // Const slot vs hash-shaped slot: distinct, so forwarding reaches the first store.
        assert_eq!(s.load(&c(3)), SymExpr::sload(c(3), 0));
        // arr + 0 may alias arr + SLOAD(1): pinned after the second store.
        assert_eq!(s.load(&arr), SymExpr::sload(arr.clone(), 2));
    }

    #[test]
    fn distinctness_rules() {
        let h1 = SymExpr::hash(vec![c(1)], 32);
        let h2 = SymExpr::hash(vec![c(2)], 32);
        let m2 = SymExpr::hash(vec![SymExpr::caller(), c(2)], 64);
        let m3 = SymExpr::hash(vec![SymExpr::caller(), c(3)], 64);
        assert!(slots_distinct(&h1, &h2));
        assert!(slots_distinct(&m2, &m3));
        assert!(slots_distinct(&h1, &SymExpr::bin(Opcode::ADD, h1.clone(), c(1))));
        assert!(!slots_distinct(&h1, &SymExpr::bin(Opcode::ADD, h1.clone(), SymExpr::callvalue())));
        assert!(!slots_distinct(&c(1), &SymExpr::callvalue()));
        let k1 = SymExpr::hash(vec![SymExpr::caller(), c(2)], 64);
        let k2 = SymExpr::hash(vec![SymExpr::callvalue(), c(2)], 64);
        assert!(!slots_distinct(&k1, &k2));
    }
}
