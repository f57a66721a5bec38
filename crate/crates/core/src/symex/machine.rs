use serde::Serialize;
use thiserror::Error;

use crate::bytecode::Instruction;
use crate::cfg::{BlockId, BlockPath, Cfg, Edge, EdgeKind, TerminatorKind};
use crate::diagnostics::{Diagnostic, Stage};
use crate::opcode::Opcode;
use crate::word::small;

use super::expr::{EnvKind, EnvTag, SymExpr};
use super::feasibility::{canonical_condition, Feasibility, FeasibilityChecker};
use super::state::{Memory, Storage};

pub const STACK_LIMIT: usize = 1024;
/// Longest SHA3 input hashed symbolically.
const MAX_HASH_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LoopContext {
    pub loop_id: usize,
    /// 1 or 2.
    pub round: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawEventKind {
    Store { slot: SymExpr, value: SymExpr },
    Load { slot: SymExpr, value: SymExpr },
    CallOut { gas: SymExpr, to: SymExpr, value: SymExpr },
    Branch { cond: SymExpr, taken: bool },
    EnvRead { tag: EnvKind, expr: SymExpr },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RawEvent {
    #[serde(flatten)]
    pub kind: RawEventKind,
    pub pc: usize,
    pub block: BlockId,
    /// Index into the path's block sequence.
    pub position: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loop_context: Option<LoopContext>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum StepError {
    #[error("stack underflow at pc {pc} ({opcode})")]
    StackUnderflow { pc: usize, opcode: String },
    #[error("stack overflow at pc {pc}")]
    StackOverflow { pc: usize },
    #[error("unsupported opcode {opcode} at pc {pc}")]
    UnsupportedOpcode { pc: usize, opcode: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltKind {
    Stop,
    Return,
    Revert,
    Invalid,
    SelfDestruct,
}

impl HaltKind {
    /// REVERT and INVALID undo the transaction.
    pub fn reverts(self) -> bool {
        matches!(self, HaltKind::Revert | HaltKind::Invalid)
    }
}

/// What the instruction just executed asks the path driver to do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Control {
    Continue,
    Jump(SymExpr),
    JumpI { dest: SymExpr, cond: SymExpr },
    Halt(HaltKind),
}

/// Where events are currently being recorded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventSite {
    pub block: BlockId,
    pub position: usize,
    pub loop_context: Option<LoopContext>,
}

#[derive(Debug, Clone, Default)]
pub struct MachineState {
    /// Bottom first.
    pub stack: Vec<SymExpr>,
    pub memory: Memory,
    pub storage: Storage,
    pub path_condition: Vec<(SymExpr, bool)>,
    pub pc: usize,
    pub events: Vec<RawEvent>,
    pub site: EventSite,
    pub diagnostics: Vec<Diagnostic>,
    next_fresh: usize,
}

impl MachineState {
    pub fn new() -> Self {
        MachineState::default()
    }

    fn push(&mut self, e: SymExpr) -> Result<(), StepError> {
        if self.stack.len() >= STACK_LIMIT {
            return Err(StepError::StackOverflow { pc: self.pc });
        }
        self.stack.push(e);
        Ok(())
    }

    fn pop(&mut self) -> SymExpr {
        self.stack.pop().expect("depth checked before dispatch")
    }

    fn emit(&mut self, kind: RawEventKind) {
        let EventSite { block, position, loop_context } = self.site;
        self.events.push(RawEvent { kind, pc: self.pc, block, position, loop_context });
    }

    fn fresh(&mut self, code: &str, message: &str) -> SymExpr {
        let id = self.next_fresh;
        self.next_fresh += 1;
        self.diagnostics.push(Diagnostic::new(Stage::Symex, code, message).at_pc(self.pc).in_block(self.site.block));
        SymExpr::Fresh(id)
    }

    fn env_read(&mut self, tag: EnvTag) -> Result<(), StepError> {
        let kind = tag.kind();
        let e = SymExpr::env(tag);
        if kind != EnvKind::Gas {
            self.emit(RawEventKind::EnvRead { tag: kind, expr: e.clone() });
        }
        self.push(e)
    }

    fn sha3(&mut self, offset: SymExpr, len: SymExpr) -> SymExpr {
        let (Some(off), Some(n)) = (offset.as_const().and_then(small), len.as_const().and_then(small)) else {
            return self.fresh("symbolic-hash-range", "SHA3 over a symbolic memory range");
        };
        if n > MAX_HASH_LEN {
            return self.fresh("hash-too-long", "SHA3 input longer than the modeled limit");
        }
        let mut inputs = Vec::new();
        for i in 0..n.div_ceil(32) {
            match self.memory.load(&SymExpr::constant((off + 32 * i) as u64)) {
                Some(w) => inputs.push(w),
                None => return self.fresh("unresolved-memory", "SHA3 input overlaps a symbolic write"),
            }
        }
        SymExpr::hash(inputs, n)
    }

    /// Executes one instruction.
    pub fn step(&mut self, ins: &Instruction) -> Result<Control, StepError> {
        self.pc = ins.offset;
        let op = ins.opcode;
        if !op.is_defined() {
            return Ok(Control::Halt(HaltKind::Invalid));
        }
        if !op.is_supported() {
            return Err(StepError::UnsupportedOpcode { pc: ins.offset, opcode: op.to_string() });
        }
        let info = op.info();
        if self.stack.len() < info.stack_pops as usize {
            return Err(StepError::StackUnderflow { pc: ins.offset, opcode: op.to_string() });
        }
        match op {
            _ if op.is_push() => self.push(SymExpr::Const(ins.operand.unwrap_or_default()))?,
            Opcode::PUSH0 => self.push(SymExpr::ZERO)?,
            Opcode::PC => self.push(SymExpr::constant(ins.offset as u64))?,
            Opcode::POP => {
                self.pop();
            }
            Opcode(0x80..=0x8f) => {
                let v = self.stack[self.stack.len() - info.stack_pops as usize].clone();
                self.push(v)?;
            }
            Opcode(0x90..=0x9f) => {
                let n = self.stack.len();
                self.stack.swap(n - 1, n - info.stack_pops as usize);
            }
            Opcode::JUMPDEST => {}
            Opcode::JUMP => return Ok(Control::Jump(self.pop())),
            Opcode::JUMPI => {
                let dest = self.pop();
                let cond = self.pop();
                return Ok(Control::JumpI { dest, cond });
            }
            Opcode::STOP => return Ok(Control::Halt(HaltKind::Stop)),
            Opcode::INVALID => return Ok(Control::Halt(HaltKind::Invalid)),
            Opcode::RETURN | Opcode::REVERT => {
                self.pop();
                self.pop();
                let k = if op == Opcode::RETURN { HaltKind::Return } else { HaltKind::Revert };
                return Ok(Control::Halt(k));
            }
            Opcode::SELFDESTRUCT => {
                self.pop();
                return Ok(Control::Halt(HaltKind::SelfDestruct));
            }
            Opcode::ADDRESS => self.env_read(EnvTag::Address)?,
            Opcode::CALLER => self.env_read(EnvTag::Caller)?,
            Opcode::CALLVALUE => self.env_read(EnvTag::CallValue)?,
            Opcode::TIMESTAMP => self.env_read(EnvTag::Timestamp)?,
            Opcode::NUMBER => self.env_read(EnvTag::Number)?,
            Opcode::GAS => self.env_read(EnvTag::Gas)?,
            Opcode::CALLDATASIZE => self.env_read(EnvTag::CallDataSize)?,
            Opcode::BALANCE => {
                let a = self.pop();
                self.env_read(EnvTag::Balance(a.into()))?;
            }
            Opcode::CALLDATALOAD => {
                let o = self.pop();
                self.env_read(EnvTag::CallData(o.into()))?;
            }
            Opcode::SHA3 => {
                let off = self.pop();
                let len = self.pop();
                let h = self.sha3(off, len);
                self.push(h)?;
            }
            Opcode::MLOAD => {
                let off = self.pop();
                let v = match self.memory.load(&off) {
                    Some(v) => v,
                    None => self.fresh("unresolved-memory", "memory read does not match a prior write"),
                };
                self.push(v)?;
            }
            Opcode::MSTORE | Opcode::MSTORE8 => {
                let off = self.pop();
                let v = self.pop();
                self.memory.store(off, v, if op == Opcode::MSTORE { 32 } else { 1 });
            }
            Opcode::SLOAD => {
                let slot = self.pop();
                let value = self.storage.load(&slot);
                self.emit(RawEventKind::Load { slot, value: value.clone() });
                self.push(value)?;
            }
            Opcode::SSTORE => {
                let slot = self.pop();
                let value = self.pop();
                self.emit(RawEventKind::Store { slot: slot.clone(), value: value.clone() });
                self.storage.store(slot, value);
            }
            Opcode::CALL | Opcode::CALLCODE | Opcode::DELEGATECALL | Opcode::STATICCALL => {
                let gas = self.pop();
                let to = self.pop();
                let value = if matches!(op, Opcode::CALL | Opcode::CALLCODE) { self.pop() } else { SymExpr::ZERO };
                for _ in 0..4 {
                    self.pop();
                }
                self.emit(RawEventKind::CallOut { gas, to, value });
                self.push(SymExpr::constant(1u64))?;
            }
            _ => {
                let args: Vec<SymExpr> = (0..info.stack_pops).map(|_| self.pop()).collect();
                self.push(SymExpr::apply(op, args))?;
            }
        }
        Ok(Control::Continue)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Halted {
        halt: HaltKind,
    },
    /// A branch or jump contradicted the path at this block position.
    Infeasible {
        position: usize,
    },
    Aborted {
        error: StepError,
    },
    /// The path stops at a block whose jump the CFG could not resolve.
    Incomplete {
        block: BlockId,
    },
}

#[derive(Debug, Clone)]
pub struct PathRun {
    pub path: BlockPath,
    pub status: RunStatus,
    pub feasibility: Feasibility,
    pub state: MachineState,
    /// Constant jump targets missing from the CFG.
    pub discovered_edges: Vec<Edge>,
}

impl PathRun {
    /// Ran to a halt and was not refuted.
    pub fn feasible(&self) -> bool {
        matches!(self.status, RunStatus::Halted { .. }) && self.feasibility.admits()
    }

    pub fn events(&self) -> &[RawEvent] {
        &self.state.events
    }

    pub fn halt(&self) -> Option<HaltKind> {
        match self.status {
            RunStatus::Halted { halt } => Some(halt),
            _ => None,
        }
    }
}

enum BlockExit {
    Next,
    Done(RunStatus),
}

fn jump_block(cfg: &Cfg, instrs: &[Instruction], dest: &SymExpr) -> Option<Option<BlockId>> {
    let d = dest.as_const()?;
    let id = small(d).and_then(|o| cfg.block_at_offset(o));
    Some(id.filter(|&b| {
        let r = &cfg.blocks[b].instrs;
        r.start < r.end && instrs[r.start].is_jumpdest()
    }))
}

/// Executes `path` block by block from an empty state.
pub fn run_path(path: &BlockPath, instrs: &[Instruction], cfg: &Cfg, checker: &dyn FeasibilityChecker) -> PathRun {
    let mut st = MachineState::new();
    let mut discovered = Vec::new();
    let mut feasibility = Feasibility::Feasible;
    let mut status = None;
    'blocks: for (pos, &bid) in path.blocks.iter().enumerate() {
        let block = &cfg.blocks[bid];
        let next = path.blocks.get(pos + 1).copied();
        st.site = EventSite {
            block: bid,
            position: pos,
            loop_context: path.round_at(pos).map(|(loop_id, round)| LoopContext { loop_id, round }),
        };
        let mut exit = BlockExit::Next;
        for ins in &instrs[block.instrs.clone()] {
            let control = match st.step(ins) {
                Ok(c) => c,
                Err(error) => {
                    st.diagnostics.push(
                        Diagnostic::new(Stage::Symex, "path-aborted", error.to_string())
                            .at_pc(ins.offset)
                            .in_block(bid),
                    );
                    status = Some(RunStatus::Aborted { error });
                    break 'blocks;
                }
            };
            match control {
                Control::Continue => {}
                Control::Halt(halt) => {
                    exit = BlockExit::Done(RunStatus::Halted { halt });
                }
                Control::Jump(dest) => {
                    let target = jump_block(cfg, instrs, &dest);
                    if let Some(Some(t)) = target {
                        if !cfg.has_edge(bid, t) {
                            discovered.push(Edge { from: bid, to: t, kind: EdgeKind::JumpTaken });
                        }
                    }
                    exit = match (target, next) {
                        (Some(None), _) => {
                            st.diagnostics.push(
                                Diagnostic::new(Stage::Symex, "invalid-jump-target", format!("jump to {dest}"))
                                    .at_pc(ins.offset)
                                    .in_block(bid),
                            );
                            BlockExit::Done(RunStatus::Halted { halt: HaltKind::Invalid })
                        }
                        (Some(Some(t)), Some(n)) if t != n => BlockExit::Done(RunStatus::Infeasible { position: pos }),
                        (_, Some(_)) => BlockExit::Next,
                        (_, None) => BlockExit::Done(RunStatus::Incomplete { block: bid }),
                    };
                }
                Control::JumpI { dest, cond } => {
                    let fall = cfg.fallthrough_of(bid);
                    let target = jump_block(cfg, instrs, &dest);
                    if let Some(Some(t)) = target {
                        if !cfg.has_edge(bid, t) {
                            discovered.push(Edge { from: bid, to: t, kind: EdgeKind::BranchTrue });
                        }
                    }
                    let Some(n) = next else {
                        exit = BlockExit::Done(RunStatus::Incomplete { block: bid });
                        continue;
                    };
                    let taken = match target {
                        Some(Some(t)) if t == n => true,
                        Some(_) if Some(n) == fall => false,
                        Some(_) => {
                            exit = BlockExit::Done(RunStatus::Infeasible { position: pos });
                            continue;
                        }
                        None => Some(n) != fall,
                    };
                    st.emit(RawEventKind::Branch { cond: cond.clone(), taken });
                    let both_arms_same = matches!(target, Some(Some(t)) if Some(t) == fall);
                    if !both_arms_same {
                        st.path_condition.push(canonical_condition(cond, taken));
                        feasibility = checker.check(&st.path_condition);
                        if !feasibility.admits() {
                            exit = BlockExit::Done(RunStatus::Infeasible { position: pos });
                        }
                    }
                }
            }
        }
        match exit {
            BlockExit::Done(s) => {
                status = Some(s);
                break;
            }
            BlockExit::Next => {
                if next.is_none() {
                    // Code ran off the end or the block lost its successors.
                    let s = match block.terminator {
                        TerminatorKind::Stop => RunStatus::Halted { halt: HaltKind::Stop },
                        _ => RunStatus::Incomplete { block: bid },
                    };
                    status = Some(s);
                }
            }
        }
    }
    let status = status.unwrap_or(RunStatus::Incomplete { block: path.blocks.last().copied().unwrap_or(0) });
    if let RunStatus::Incomplete { block } = status {
        st.diagnostics.push(
            Diagnostic::new(Stage::Symex, "incomplete-path", "path ends at a jump whose target is unknown")
                .in_block(block),
        );
    }
    discovered.sort();
    discovered.dedup();
    PathRun { path: path.clone(), status, feasibility, state: st, discovered_edges: discovered }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::{disassemble, parse_hex};
    use crate::cfg::{enumerate_paths, resolve_cfg, split_blocks, PathLimits};
    use crate::symex::feasibility::BuiltinChecker;

    fn state_after(hex: &str) -> Result<MachineState, StepError> {
        let instrs = disassemble(&parse_hex(hex).unwrap().bytes);
        let mut st = MachineState::new();
        for i in &instrs {
            st.step(i)?;
        }
        Ok(st)
    }

    fn runs(hex: &str) -> Vec<PathRun> {
        let instrs = disassemble(&parse_hex(hex).unwrap().bytes);
        let cfg = resolve_cfg(split_blocks(&instrs), &instrs).unwrap();
        let paths = enumerate_paths(&cfg, PathLimits::default());
        paths.paths.iter().map(|p| run_path(p, &instrs, &cfg, &BuiltinChecker)).collect()
    }

    #[test]
    fn add_builds_symbolic_sum() {
        // PUSH1 1; CALLVALUE; ADD
        let st = state_after("600134 01").unwrap();
        assert_eq!(st.stack, vec![SymExpr::bin(Opcode::ADD, SymExpr::callvalue(), SymExpr::constant(1u64))]);
        assert_eq!(st.stack[0].pretty(), "CALLVALUE + 1");
    }

    #[test]
    fn add_constants_folds() {
        let st = state_after("6002600301").unwrap();
        assert_eq!(st.stack, vec![SymExpr::constant(5u64)]);
    }

    #[test]
    fn pop_on_empty_underflows() {
        assert!(matches!(state_after("50"), Err(StepError::StackUnderflow { pc: 0, .. })));
    }

    #[test]
    fn unsupported_opcode_aborts() {
        assert!(matches!(state_after("32"), Err(StepError::UnsupportedOpcode { .. })));
    }

    #[test]
    fn straight_line_store() {
        let r = runs("600160020160005500");
        assert_eq!(r.len(), 1);
        assert!(r[0].feasible());
        let stores: Vec<_> = r[0].events().iter().filter(|e| matches!(e.kind, RawEventKind::Store { .. })).collect();
        assert_eq!(stores.len(), 1);
        assert_eq!(stores[0].kind, RawEventKind::Store { slot: SymExpr::ZERO, value: SymExpr::constant(3u64) });
    }

    #[test]
    fn payback_call_records_callout_without_gas_read() {
        let r = runs("6000600060006000343 35a f1 00".replace(' ', "").as_str());
        let kinds: Vec<String> = r[0]
            .events()
            .iter()
            .map(|e| match &e.kind {
                RawEventKind::EnvRead { expr, .. } => format!("read {expr}"),
                RawEventKind::CallOut { to, value, .. } => format!("call {to} {value}"),
                k => format!("{k:?}"),
            })
            .collect();
        assert_eq!(kinds, vec!["read CALLVALUE", "read CALLER", "call CALLER CALLVALUE"]);
    }

    #[test]
    fn contradictory_branches_are_infeasible() {
        // if (CALLVALUE > 5) { if (CALLVALUE > 5) {} else { STOP } } ...
        let code = crate::asm::assemble(
            "PUSH 5
             CALLVALUE
             GT
             PUSH @a
             JUMPI
             STOP
             a: JUMPDEST
             PUSH 5
             CALLVALUE
             GT
             PUSH @b
             JUMPI
             PUSH 1
             PUSH 0
             SSTORE
             STOP
             b: JUMPDEST
             STOP",
        )
        .unwrap();
        let r = runs(&crate::bytecode::to_hex(&code));
        assert_eq!(r.len(), 3);
        let infeasible: Vec<_> = r.iter().filter(|r| !r.feasible()).collect();
        assert_eq!(infeasible.len(), 1);
        // the refuted path is the one that would store
        assert!(matches!(infeasible[0].status, RunStatus::Infeasible { .. }));
        let feasible_conds: Vec<_> = r.iter().filter(|r| r.feasible()).map(|r| r.state.path_condition.len()).collect();
        assert_eq!(feasible_conds, vec![1, 2]);
    }

    #[test]
    fn events_increase_pc_within_block() {
        let r = runs("6000600060006000343 35a f1 00".replace(' ', "").as_str());
        for w in r[0].events().windows(2) {
            if w[0].block == w[1].block {
                assert!(w[0].pc < w[1].pc);
            }
        }
    }
}
