//! Jump-target resolution by abstract stack execution.
//!
//! Each block is executed over an abstract stack of known constants and unknown
//! values, once per distinct entry stack (context). Contexts make internal
//! function returns resolvable: the return address is a constant pushed by the
//! caller. After a few contexts a block's entry stacks are widened: slots that
//! differ between contexts of the same depth become unknown, which keeps loop
//! counters from spawning a context per iteration. The number of contexts per
//! block is capped.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use crate::bytecode::Instruction;
use crate::diagnostics::{Diagnostic, Stage};
use crate::opcode::Opcode;
use crate::word::{eval_pure, small, U256};

use super::{BasicBlock, Cfg, CfgError, Edge, EdgeKind, LoopInfo, TerminatorKind};

const WIDEN_AFTER: usize = 4;
const MAX_CONTEXTS_PER_BLOCK: usize = 64;
const MAX_ABSTRACT_DEPTH: usize = 1024;

type AbsStack = Vec<Option<U256>>;

enum Exit {
    Jump(Option<U256>),
    JumpI(Option<U256>),
    Fall,
    Halt,
    Underflow(usize),
}

fn run_block(block: &BasicBlock, instrs: &[Instruction], mut stack: AbsStack) -> (Exit, AbsStack) {
    for ins in &instrs[block.instrs.clone()] {
        let op = ins.opcode;
        let info = op.info();
        let pops = info.stack_pops as usize;
        if stack.len() < pops {
            return (Exit::Underflow(ins.offset), stack);
        }
        match op {
            _ if op.is_push() => stack.push(ins.operand),
            Opcode::PUSH0 => stack.push(Some(U256::ZERO)),
            Opcode::PC => stack.push(Some(U256::from(ins.offset))),
            Opcode::POP => {
                stack.pop();
            }
            Opcode(0x80..=0x8f) => {
                let v = stack[stack.len() - pops];
                stack.push(v);
            }
            Opcode(0x90..=0x9f) => {
                let n = stack.len();
                stack.swap(n - 1, n - pops);
            }
            Opcode::JUMP => {
                let dest = stack.pop().flatten();
                return (Exit::Jump(dest), stack);
            }
            Opcode::JUMPI => {
                let dest = stack.pop().flatten();
                stack.pop();
                return (Exit::JumpI(dest), stack);
            }
            _ if op.is_terminator() => return (Exit::Halt, stack),
            _ => {
                let args: Vec<Option<U256>> = (0..pops).map(|_| stack.pop().flatten()).collect();
                let folded = if args.iter().all(Option::is_some) {
                    let vals: Vec<U256> = args.iter().map(|a| a.unwrap()).collect();
                    eval_pure(op, &vals)
                } else {
                    None
                };
                for _ in 0..info.stack_pushes {
                    stack.push(folded);
                }
            }
        }
    }
    match block.terminator {
        TerminatorKind::Fallthrough => (Exit::Fall, stack),
        _ => (Exit::Halt, stack),
    }
}

fn jump_target(cfg_blocks: &[BasicBlock], instrs: &[Instruction], dest: U256) -> Option<usize> {
    let off = small(dest)?;
    let id = cfg_blocks.binary_search_by_key(&off, |b| b.start_offset).ok()?;
    instrs[cfg_blocks[id].instrs.start].is_jumpdest().then_some(id)
}

/// Recovers edges from the entry block by abstract execution. Unresolvable dynamic
/// jumps are recorded as `unresolved-jump` diagnostics and left without an edge.
pub fn resolve_cfg(blocks: Vec<BasicBlock>, instrs: &[Instruction]) -> Result<Cfg, CfgError> {
    if blocks.is_empty() {
        return Err(CfgError::NoEntryBlock);
    }
    let mut edges: BTreeSet<Edge> = BTreeSet::new();
    let mut diags: BTreeSet<Diagnostic> = BTreeSet::new();
    let mut seen: HashSet<(usize, AbsStack)> = HashSet::new();
    let mut contexts: HashMap<usize, Vec<AbsStack>> = HashMap::new();
    let mut work: VecDeque<(usize, AbsStack)> = VecDeque::new();
    work.push_back((0, Vec::new()));

    let mut enqueue = |work: &mut VecDeque<(usize, AbsStack)>,
                       diags: &mut BTreeSet<Diagnostic>,
                       block: usize,
                       mut stack: AbsStack| {
        if stack.len() > MAX_ABSTRACT_DEPTH {
            diags.insert(
                Diagnostic::new(Stage::Cfg, "abstract-stack-overflow", "abstract stack exceeded 1024 entries")
                    .in_block(block),
            );
            return;
        }
        if seen.contains(&(block, stack.clone())) {
            return;
        }
        let known = contexts.entry(block).or_default();
        if known.len() >= WIDEN_AFTER {
            let depth = stack.len();
            for prev in known.iter().filter(|p| p.len() == depth) {
                for (slot, old) in stack.iter_mut().zip(prev) {
                    if *slot != *old {
                        *slot = None;
                    }
                }
            }
            if seen.contains(&(block, stack.clone())) {
                return;
            }
        }
        if known.len() >= MAX_CONTEXTS_PER_BLOCK {
            diags.insert(
                Diagnostic::new(
                    Stage::Cfg,
                    "context-limit",
                    format!("block entered with more than {MAX_CONTEXTS_PER_BLOCK} distinct abstract stacks"),
                )
                .in_block(block),
            );
            return;
        }
        known.push(stack.clone());
        seen.insert((block, stack.clone()));
        work.push_back((block, stack));
    };

    while let Some((id, stack)) = work.pop_front() {
        let block = &blocks[id];
        let next = blocks.get(id + 1).filter(|b| b.start_offset == block.end_offset).map(|b| b.id);
        let (exit, stack) = run_block(block, instrs, stack);
        let mut take = |dest: Option<U256>, kind: EdgeKind, work: &mut VecDeque<_>, diags: &mut BTreeSet<_>| match dest
        {
            Some(d) => match jump_target(&blocks, instrs, d) {
                Some(to) => {
                    edges.insert(Edge { from: id, to, kind });
                    enqueue(work, diags, to, stack.clone());
                }
                None => {
                    diags.insert(
                        Diagnostic::new(Stage::Cfg, "invalid-jump-target", format!("jump to non-JUMPDEST offset {d}"))
                            .in_block(id)
                            .at_pc(instrs[block.instrs.end - 1].offset),
                    );
                }
            },
            None => {
                diags.insert(
                    Diagnostic::new(Stage::Cfg, "unresolved-jump", "jump target is not a constant on this stack")
                        .in_block(id)
                        .at_pc(instrs[block.instrs.end - 1].offset),
                );
            }
        };
        match exit {
            Exit::Jump(dest) => take(dest, EdgeKind::JumpTaken, &mut work, &mut diags),
            Exit::JumpI(dest) => {
                take(dest, EdgeKind::BranchTrue, &mut work, &mut diags);
                if let Some(n) = next {
                    edges.insert(Edge { from: id, to: n, kind: EdgeKind::BranchFalse });
                    enqueue(&mut work, &mut diags, n, stack.clone());
                }
            }
            Exit::Fall => {
                if let Some(n) = next {
                    edges.insert(Edge { from: id, to: n, kind: EdgeKind::FallThrough });
                    enqueue(&mut work, &mut diags, n, stack);
                }
            }
            Exit::Halt => {}
            Exit::Underflow(pc) => {
                diags.insert(
                    Diagnostic::new(Stage::Cfg, "stack-underflow", "block underflows the stack in this context")
                        .in_block(id)
                        .at_pc(pc),
                );
            }
        }
    }

    let mut cfg = Cfg {
        blocks,
        edges: edges.into_iter().collect(),
        entry: 0,
        loops: LoopInfo::default(),
        diagnostics: diags.into_iter().collect(),
    };
    cfg.finish();
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::bytecode::disassemble;
    use crate::cfg::split_blocks;

    fn cfg_of(code: &[u8]) -> Cfg {
        let instrs = disassemble(code);
        resolve_cfg(split_blocks(&instrs), &instrs).unwrap()
    }

    #[test]
    fn straight_line_has_no_edges() {
        let cfg = cfg_of(&[0x60, 1, 0x60, 2, 0x01, 0x60, 0, 0x55, 0x00]);
        assert_eq!(cfg.blocks.len(), 1);
        assert!(cfg.edges.is_empty());
    }

    #[test]
    fn push_jump_resolves() {
        let cfg = cfg_of(&[0x60, 3, 0x56, 0x5b, 0x00]);
        assert_eq!(cfg.edges, vec![Edge { from: 0, to: 1, kind: EdgeKind::JumpTaken }]);
        assert!(cfg.diagnostics.is_empty());
    }

    #[test]
    fn empty_program_has_no_entry() {
        assert_eq!(resolve_cfg(Vec::new(), &[]).unwrap_err(), CfgError::NoEntryBlock);
    }

    #[test]
    fn return_address_through_swap() {
        // Call a subroutine twice with different return addresses.
        let code = assemble(
            "PUSH @ret1
             PUSH @sub
             JUMP
             ret1: JUMPDEST
             PUSH @ret2
             PUSH @sub
             JUMP
             ret2: JUMPDEST
             STOP
             sub: JUMPDEST
             JUMP",
        )
        .unwrap();
        let cfg = cfg_of(&code);
        let sub = cfg.block_at_offset(17).unwrap();
        let targets: Vec<usize> = cfg.successors(sub).map(|e| e.to).collect();
        assert_eq!(targets.len(), 2);
        assert!(cfg.diagnostics.is_empty(), "{:?}", cfg.diagnostics);
    }

    #[test]
    fn stack_loop_counter_is_widened() {
        // for (i = 0; i < CALLDATA[0]; i++) {}
        let code = assemble(
            "PUSH 0
             head: JUMPDEST
             PUSH 0
             CALLDATALOAD
             DUP2
             LT
             ISZERO
             PUSH @done
             JUMPI
             PUSH 1
             ADD
             PUSH @head
             JUMP
             done: JUMPDEST
             STOP",
        )
        .unwrap();
        let cfg = cfg_of(&code);
        assert!(cfg.diagnostics.is_empty(), "{:?}", cfg.diagnostics);
        assert_eq!(cfg.loops.loops.len(), 1);
    }

    #[test]
    fn folded_arithmetic_target() {
        // PUSH1 2; PUSH1 4; ADD; JUMP; 0x5b @6
        let cfg = cfg_of(&[0x60, 2, 0x60, 4, 0x01, 0x56, 0x5b, 0x00]);
        assert_eq!(cfg.edges.len(), 1);
    }

    #[test]
    fn calldata_target_is_unresolved() {
        let cfg = cfg_of(&[0x60, 0, 0x35, 0x56, 0x5b, 0x00]);
        assert!(cfg.edges.is_empty());
        assert_eq!(cfg.diagnostics[0].code, "unresolved-jump");
    }

    #[test]
    fn jumpi_has_one_true_and_one_false() {
        let code = assemble("PUSH 0\nCALLDATALOAD\nPUSH @t\nJUMPI\nSTOP\nt: JUMPDEST\nSTOP").unwrap();
        let cfg = cfg_of(&code);
        let kinds: Vec<EdgeKind> = cfg.successors(0).map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EdgeKind::BranchFalse, EdgeKind::BranchTrue]);
    }
}
