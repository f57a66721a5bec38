//! Reference concrete interpreter for the EVM opcode subset analyzed by
//! `ponzilens-core`.
//!
//! This crate deliberately shares no code with the symbolic machine. It decodes
//! raw bytes itself and implements every opcode directly over 256-bit words, so
//! that agreement between the two is meaningful evidence. Gas is not metered:
//! `GAS` reads a constant from the environment, and balances never change
//! during execution (value transfers are recorded, not applied).

use std::collections::{BTreeMap, BTreeSet};

use ruint::Uint;
use sha3::{Digest, Keccak256};

pub type Word = Uint<256, 4>;

const STACK_LIMIT: usize = 1024;
const MEMORY_LIMIT: usize = 1 << 20;

/// Transaction and chain context visible to the contract.
#[derive(Debug, Clone)]
pub struct Env {
    pub caller: Word,
    pub callvalue: Word,
    pub address: Word,
    pub timestamp: Word,
    pub number: Word,
    pub gas: Word,
    pub calldata: Vec<u8>,
    pub balances: BTreeMap<Word, Word>,
}

impl Default for Env {
    fn default() -> Self {
        Env {
            caller: Word::from(0xc0ffee_u64),
            callvalue: Word::ZERO,
            address: Word::from(0xc0de_u64),
            timestamp: Word::from(1_700_000_000_u64),
            number: Word::from(18_000_000_u64),
            gas: Word::from(1_000_000_u64),
            calldata: Vec::new(),
            balances: BTreeMap::new(),
        }
    }
}

impl Env {
    pub fn balance_of(&self, addr: Word) -> Word {
        self.balances.get(&addr).copied().unwrap_or(Word::ZERO)
    }

    pub fn calldata_word(&self, offset: Word) -> Word {
        let mut buf = [0u8; 32];
        if let Ok(start) = usize::try_from(offset) {
            for (i, b) in buf.iter_mut().enumerate() {
                if let Some(v) = start.checked_add(i).and_then(|p| self.calldata.get(p)) {
                    *b = *v;
                }
            }
        }
        Word::from_be_bytes(buf)
    }
}

/// Observable side effects, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Store { pc: usize, slot: Word, value: Word },
    CallOut { pc: usize, gas: Word, to: Word, value: Word },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Halt {
    Stop,
    Return,
    Revert,
    SelfDestruct,
    Invalid(u8),
    Unsupported(u8),
    StackUnderflow(usize),
    StackOverflow(usize),
    BadJump(Word),
    MemoryLimit(usize),
    StepLimit,
}

impl Halt {
    pub fn is_error(&self) -> bool {
        !matches!(self, Halt::Stop | Halt::Return | Halt::Revert | Halt::SelfDestruct)
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub halt: Halt,
    pub events: Vec<Event>,
    /// Offset of every executed instruction, in order.
    pub trace: Vec<usize>,
    pub storage: BTreeMap<Word, Word>,
    /// Final stack, bottom first.
    pub stack: Vec<Word>,
}

/// Offsets that hold a JUMPDEST opcode (not inside push data).
pub fn jumpdests(code: &[u8]) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < code.len() {
        let b = code[i];
        if b == 0x5b {
            out.insert(i);
        }
        i += if (0x60..=0x7f).contains(&b) { (b - 0x5f) as usize + 1 } else { 1 };
    }
    out
}

struct Machine<'a> {
    code: &'a [u8],
    env: &'a Env,
    dests: BTreeSet<usize>,
    stack: Vec<Word>,
    memory: Vec<u8>,
    storage: BTreeMap<Word, Word>,
    events: Vec<Event>,
    trace: Vec<usize>,
}

fn is_negative(x: Word) -> bool {
    x.bit(255)
}

fn abs(x: Word) -> Word {
    if is_negative(x) {
        x.wrapping_neg()
    } else {
        x
    }
}

fn sdiv(a: Word, b: Word) -> Word {
    if b.is_zero() {
        return Word::ZERO;
    }
    let q = abs(a).wrapping_div(abs(b));
    if is_negative(a) != is_negative(b) {
        q.wrapping_neg()
    } else {
        q
    }
}

fn smod(a: Word, b: Word) -> Word {
    if b.is_zero() {
        return Word::ZERO;
    }
    let r = abs(a).checked_rem(abs(b)).unwrap_or(Word::ZERO);
    if is_negative(a) {
        r.wrapping_neg()
    } else {
        r
    }
}

fn slt(a: Word, b: Word) -> bool {
    match (is_negative(a), is_negative(b)) {
        (true, false) => true,
        (false, true) => false,
        _ => a < b,
    }
}

fn flag(b: bool) -> Word {
    if b {
        Word::from(1u8)
    } else {
        Word::ZERO
    }
}

fn shift_amount(s: Word) -> Option<usize> {
    usize::try_from(s).ok().filter(|&s| s < 256)
}

impl Machine<'_> {
    fn pop(&mut self, pc: usize) -> Result<Word, Halt> {
        self.stack.pop().ok_or(Halt::StackUnderflow(pc))
    }

    fn push(&mut self, pc: usize, w: Word) -> Result<(), Halt> {
        if self.stack.len() >= STACK_LIMIT {
            return Err(Halt::StackOverflow(pc));
        }
        self.stack.push(w);
        Ok(())
    }

    fn mem_range(&mut self, pc: usize, offset: Word, len: usize) -> Result<usize, Halt> {
        if len == 0 {
            return Ok(0);
        }
        let start = usize::try_from(offset).map_err(|_| Halt::MemoryLimit(pc))?;
        let end = start.checked_add(len).ok_or(Halt::MemoryLimit(pc))?;
        if end > MEMORY_LIMIT {
            return Err(Halt::MemoryLimit(pc));
        }
        if self.memory.len() < end {
            self.memory.resize(end, 0);
        }
        Ok(start)
    }

    fn run(&mut self, step_limit: usize) -> Halt {
        let mut pc = 0usize;
        for _ in 0..step_limit {
            if pc >= self.code.len() {
                return Halt::Stop;
            }
            self.trace.push(pc);
            match self.exec(pc) {
                Ok(next) => pc = next,
                Err(h) => return h,
            }
        }
        Halt::StepLimit
    }

    /// Executes the instruction at `pc`. Returns the next pc, or the halt reason.
    fn exec(&mut self, pc: usize) -> Result<usize, Halt> {
        let op = self.code[pc];
        let mut next = pc + 1;
        macro_rules! bin {
            ($f:expr) => {{
                let a = self.pop(pc)?;
                let b = self.pop(pc)?;
                let f: fn(Word, Word) -> Word = $f;
                self.push(pc, f(a, b))?;
            }};
        }
        match op {
            0x00 => return Err(Halt::Stop),
            0x01 => bin!(|a, b| a.wrapping_add(b)),
            0x02 => bin!(|a, b| a.wrapping_mul(b)),
            0x03 => bin!(|a, b| a.wrapping_sub(b)),
            0x04 => bin!(|a, b| if b.is_zero() { Word::ZERO } else { a.wrapping_div(b) }),
            0x05 => bin!(sdiv),
            0x06 => bin!(|a, b| a.checked_rem(b).unwrap_or(Word::ZERO)),
            0x07 => bin!(smod),
            0x08 | 0x09 => {
                let a = self.pop(pc)?;
                let b = self.pop(pc)?;
                let n = self.pop(pc)?;
                let r = if op == 0x08 { a.add_mod(b, n) } else { a.mul_mod(b, n) };
                self.push(pc, r)?;
            }
            0x0a => bin!(|a, b| a.wrapping_pow(b)),
            0x0b => bin!(|b, x| {
                match usize::try_from(b) {
                    Ok(b) if b < 31 => {
                        let bit = b * 8 + 7;
                        let mask = (Word::from(1u8) << (bit + 1)) - Word::from(1u8);
                        if x.bit(bit) {
                            x | !mask
                        } else {
                            x & mask
                        }
                    }
                    _ => x,
                }
            }),
            0x10 => bin!(|a, b| flag(a < b)),
            0x11 => bin!(|a, b| flag(a > b)),
            0x12 => bin!(|a, b| flag(slt(a, b))),
            0x13 => bin!(|a, b| flag(slt(b, a))),
            0x14 => bin!(|a, b| flag(a == b)),
            0x15 => {
                let a = self.pop(pc)?;
                self.push(pc, flag(a.is_zero()))?;
            }
            0x16 => bin!(|a, b| a & b),
            0x17 => bin!(|a, b| a | b),
            0x18 => bin!(|a, b| a ^ b),
            0x19 => {
                let a = self.pop(pc)?;
                self.push(pc, !a)?;
            }
            0x1a => bin!(|i, x| match usize::try_from(i) {
                Ok(i) if i < 32 => Word::from(x.to_be_bytes::<32>()[i]),
                _ => Word::ZERO,
            }),
            0x1b => bin!(|s, v| shift_amount(s).map_or(Word::ZERO, |s| v << s)),
            0x1c => bin!(|s, v| shift_amount(s).map_or(Word::ZERO, |s| v >> s)),
            0x1d => bin!(|s, v| match shift_amount(s) {
                Some(s) => v.arithmetic_shr(s),
                None if is_negative(v) => Word::MAX,
                None => Word::ZERO,
            }),
            0x20 => {
                let off = self.pop(pc)?;
                let len = self.pop(pc)?;
                let len = usize::try_from(len).map_err(|_| Halt::MemoryLimit(pc))?;
                let start = self.mem_range(pc, off, len)?;
                let digest = Keccak256::digest(&self.memory[start..start + len]);
                self.push(pc, Word::from_be_slice(&digest))?;
            }
            0x30 => self.push(pc, self.env.address)?,
            0x31 => {
                let a = self.pop(pc)?;
                self.push(pc, self.env.balance_of(a))?;
            }
            0x33 => self.push(pc, self.env.caller)?,
            0x34 => self.push(pc, self.env.callvalue)?,
            0x35 => {
                let off = self.pop(pc)?;
                self.push(pc, self.env.calldata_word(off))?;
            }
            0x36 => self.push(pc, Word::from(self.env.calldata.len()))?,
            0x42 => self.push(pc, self.env.timestamp)?,
            0x43 => self.push(pc, self.env.number)?,
            0x50 => {
                self.pop(pc)?;
            }
            0x51 => {
                let off = self.pop(pc)?;
                let start = self.mem_range(pc, off, 32)?;
                let w = Word::from_be_slice(&self.memory[start..start + 32]);
                self.push(pc, w)?;
            }
            0x52 => {
                let off = self.pop(pc)?;
                let v = self.pop(pc)?;
                let start = self.mem_range(pc, off, 32)?;
                self.memory[start..start + 32].copy_from_slice(&v.to_be_bytes::<32>());
            }
            0x53 => {
                let off = self.pop(pc)?;
                let v = self.pop(pc)?;
                let start = self.mem_range(pc, off, 1)?;
                self.memory[start] = v.to_be_bytes::<32>()[31];
            }
            0x54 => {
                let slot = self.pop(pc)?;
                let v = self.storage.get(&slot).copied().unwrap_or(Word::ZERO);
                self.push(pc, v)?;
            }
            0x55 => {
                let slot = self.pop(pc)?;
                let value = self.pop(pc)?;
                self.storage.insert(slot, value);
                self.events.push(Event::Store { pc, slot, value });
            }
            0x56 => {
                let dest = self.pop(pc)?;
                next = self.jump_target(dest)?;
            }
            0x57 => {
                let dest = self.pop(pc)?;
                let cond = self.pop(pc)?;
                if !cond.is_zero() {
                    next = self.jump_target(dest)?;
                }
            }
            0x58 => self.push(pc, Word::from(pc))?,
            0x5a => self.push(pc, self.env.gas)?,
            0x5b => {}
            0x5f => self.push(pc, Word::ZERO)?,
            0x60..=0x7f => {
                let n = (op - 0x5f) as usize;
                let mut buf = [0u8; 32];
                for i in 0..n {
                    buf[32 - n + i] = self.code.get(pc + 1 + i).copied().unwrap_or(0);
                }
                self.push(pc, Word::from_be_bytes(buf))?;
                next = pc + 1 + n;
            }
            0x80..=0x8f => {
                let depth = (op - 0x7f) as usize;
                if self.stack.len() < depth {
                    return Err(Halt::StackUnderflow(pc));
                }
                let v = self.stack[self.stack.len() - depth];
                self.push(pc, v)?;
            }
            0x90..=0x9f => {
                let depth = (op - 0x8f) as usize;
                let len = self.stack.len();
                if len < depth + 1 {
                    return Err(Halt::StackUnderflow(pc));
                }
                self.stack.swap(len - 1, len - 1 - depth);
            }
            0xf1 | 0xf2 | 0xf4 | 0xfa => {
                let gas = self.pop(pc)?;
                let to = self.pop(pc)?;
                let value = if op == 0xf1 || op == 0xf2 { self.pop(pc)? } else { Word::ZERO };
                for _ in 0..4 {
                    self.pop(pc)?;
                }
                self.events.push(Event::CallOut { pc, gas, to, value });
                self.push(pc, Word::from(1u8))?;
            }
            0xf3 => {
                self.pop(pc)?;
                self.pop(pc)?;
                return Err(Halt::Return);
            }
            0xfd => {
                self.pop(pc)?;
                self.pop(pc)?;
                return Err(Halt::Revert);
            }
            0xfe => return Err(Halt::Invalid(op)),
            0xff => {
                self.pop(pc)?;
                return Err(Halt::SelfDestruct);
            }
            _ if is_defined(op) => return Err(Halt::Unsupported(op)),
            _ => return Err(Halt::Invalid(op)),
        }
        Ok(next)
    }

    fn jump_target(&self, dest: Word) -> Result<usize, Halt> {
        match usize::try_from(dest) {
            Ok(d) if self.dests.contains(&d) => Ok(d),
            _ => Err(Halt::BadJump(dest)),
        }
    }
}

/// Whether `op` is an assigned opcode in the current EVM instruction set.
fn is_defined(op: u8) -> bool {
    matches!(op,
        0x00..=0x0b | 0x10..=0x1d | 0x20 | 0x30..=0x4a | 0x50..=0x5f
        | 0x60..=0xa4 | 0xf0..=0xf5 | 0xfa | 0xfd..=0xff)
}

/// Runs `code` from offset 0 and reports every observable effect.
pub fn execute(code: &[u8], env: &Env, storage: BTreeMap<Word, Word>, step_limit: usize) -> Outcome {
    let mut m = Machine {
        code,
        env,
        dests: jumpdests(code),
        stack: Vec::new(),
        memory: Vec::new(),
        storage,
        events: Vec::new(),
        trace: Vec::new(),
    };
    let halt = m.run(step_limit);
    Outcome { halt, events: m.events, trace: m.trace, storage: m.storage, stack: m.stack }
}
