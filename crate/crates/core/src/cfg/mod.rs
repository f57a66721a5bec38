//! Basic blocks, control-flow recovery, loop detection and bounded path enumeration.

mod dot;
mod loops;
mod paths;
mod resolve;

use std::ops::Range;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytecode::Instruction;
use crate::diagnostics::Diagnostic;
use crate::opcode::Opcode;

pub use dot::to_dot;
pub use loops::{find_loops, Loop, LoopInfo};
pub use paths::{enumerate_paths, BlockPath, LoopSpan, PathEnumeration, PathLimits, ROUNDS_PER_BACK_EDGE};
pub use resolve::resolve_cfg;

pub type BlockId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum TerminatorKind {
    Jump,
    JumpI,
    Stop,
    Return,
    Revert,
    SelfDestruct,
    Invalid,
    /// Runs into the JUMPDEST that starts the next block.
    Fallthrough,
}

impl TerminatorKind {
    pub fn halts(self) -> bool {
        !matches!(self, TerminatorKind::Jump | TerminatorKind::JumpI | TerminatorKind::Fallthrough)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub start_offset: usize,
    /// One past the last byte of the block.
    pub end_offset: usize,
    /// Index range into the instruction list.
    pub instrs: Range<usize>,
    pub terminator: TerminatorKind,
}

fn terminator_of(ins: &Instruction) -> Option<TerminatorKind> {
    Some(match ins.opcode {
        Opcode::JUMP => TerminatorKind::Jump,
        Opcode::JUMPI => TerminatorKind::JumpI,
        Opcode::STOP => TerminatorKind::Stop,
        Opcode::RETURN => TerminatorKind::Return,
        Opcode::REVERT => TerminatorKind::Revert,
        Opcode::SELFDESTRUCT => TerminatorKind::SelfDestruct,
        op if op.is_terminator() => TerminatorKind::Invalid,
        _ => return None,
    })
}

/// Partitions the instruction list into basic blocks. A block starts at offset 0,
/// at every JUMPDEST and after every terminator. Running off the end of the code
/// is an implicit STOP.
pub fn split_blocks(instrs: &[Instruction]) -> Vec<BasicBlock> {
    let mut blocks = Vec::new();
    let mut start = 0;
    for i in 0..instrs.len() {
        let ins = &instrs[i];
        let term = terminator_of(ins);
        let next_is_dest = instrs.get(i + 1).is_some_and(Instruction::is_jumpdest);
        let last = i + 1 == instrs.len();
        if term.is_some() || next_is_dest || last {
            let terminator = match term {
                Some(t) => t,
                None if next_is_dest => TerminatorKind::Fallthrough,
                None => TerminatorKind::Stop,
            };
            blocks.push(BasicBlock {
                id: blocks.len(),
                start_offset: instrs[start].offset,
                end_offset: ins.end(),
                instrs: start..i + 1,
                terminator,
            });
            start = i + 1;
        }
    }
    blocks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    JumpTaken,
    FallThrough,
    BranchTrue,
    BranchFalse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
pub struct Edge {
    pub from: BlockId,
    pub to: BlockId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CfgError {
    #[error("program has no instructions, so there is no entry block")]
    NoEntryBlock,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
    /// Sorted and deduplicated.
    pub edges: Vec<Edge>,
    pub entry: BlockId,
    pub loops: LoopInfo,
    pub diagnostics: Vec<Diagnostic>,
}

impl Cfg {
    /// Builds a graph from explicit edges (blocks carry no instructions). Used for
    /// synthetic graphs in tests and tooling.
    pub fn from_edges(block_count: usize, edges: &[(BlockId, BlockId)]) -> Cfg {
        let blocks = (0..block_count)
            .map(|id| BasicBlock {
                id,
                start_offset: id,
                end_offset: id + 1,
                instrs: 0..0,
                terminator: TerminatorKind::Jump,
            })
            .collect();
        let mut cfg = Cfg { blocks, edges: Vec::new(), entry: 0, loops: LoopInfo::default(), diagnostics: Vec::new() };
        for &(from, to) in edges {
            cfg.edges.push(Edge { from, to, kind: EdgeKind::JumpTaken });
        }
        cfg.finish();
        cfg
    }

    pub(crate) fn finish(&mut self) {
        self.edges.sort();
        self.edges.dedup();
        let (loops, diags) = find_loops(self);
        self.loops = loops;
        self.diagnostics.retain(|d| d.code != "irreducible-loop");
        self.diagnostics.extend(diags);
    }

    pub fn successors(&self, block: BlockId) -> impl Iterator<Item = &Edge> + '_ {
        let lo = self.edges.partition_point(|e| e.from < block);
        self.edges[lo..].iter().take_while(move |e| e.from == block)
    }

    pub fn has_edge(&self, from: BlockId, to: BlockId) -> bool {
        self.successors(from).any(|e| e.to == to)
    }

    pub fn edge(&self, from: BlockId, to: BlockId) -> Option<&Edge> {
        self.successors(from).find(|e| e.to == to)
    }

    pub fn block_at_offset(&self, offset: usize) -> Option<BlockId> {
        self.blocks.binary_search_by_key(&offset, |b| b.start_offset).ok()
    }

    /// Block containing the instruction at `offset`.
    pub fn block_containing(&self, offset: usize) -> Option<BlockId> {
        let idx = self.blocks.partition_point(|b| b.start_offset <= offset);
        idx.checked_sub(1).filter(|&i| offset < self.blocks[i].end_offset)
    }

    /// The block control falls into when `block` does not jump.
    pub fn fallthrough_of(&self, block: BlockId) -> Option<BlockId> {
        let b = self.blocks.get(block)?;
        self.block_at_offset(b.end_offset)
    }

    /// Adds edges found while executing paths. Returns how many were new.
    pub fn merge_edges(&mut self, edges: impl IntoIterator<Item = Edge>) -> usize {
        let before = self.edges.len();
        self.edges.extend(edges);
        self.edges.sort();
        self.edges.dedup();
        let added = self.edges.len() - before;
        if added > 0 {
            self.finish();
        }
        added
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::{disassemble, parse_hex};

    fn blocks_of(hex: &str) -> Vec<BasicBlock> {
        split_blocks(&disassemble(&parse_hex(hex).unwrap().bytes))
    }

    #[test]
    fn straight_line_is_one_block() {
        let blocks = blocks_of("600160020160005500");
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].terminator, TerminatorKind::Stop);
        assert_eq!(blocks[0].instrs, 0..6);
        assert_eq!(blocks[0].end_offset, 9);
    }

    #[test]
    fn empty_has_no_blocks() {
        assert!(blocks_of("").is_empty());
    }

    #[test]
    fn jumpdest_starts_block_and_fallthrough() {
        // PUSH1 1; JUMPDEST; STOP
        let blocks = blocks_of("60015b00");
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].terminator, TerminatorKind::Fallthrough);
        assert_eq!(blocks[1].start_offset, 2);
    }

    #[test]
    fn no_jumpdest_inside_block() {
        let blocks = blocks_of("6003565b005b5b600057fe");
        let instrs = disassemble(&parse_hex("6003565b005b5b600057fe").unwrap().bytes);
        for b in &blocks {
            for i in b.instrs.clone().skip(1) {
                assert!(!instrs[i].is_jumpdest());
            }
            for ins in &instrs[b.instrs.start..b.instrs.end - 1] {
                assert!(!ins.opcode.is_terminator());
            }
        }
        assert_eq!(blocks.len(), 5);
    }

    #[test]
    fn implicit_stop_at_end_of_code() {
        let blocks = blocks_of("6001");
        assert_eq!(blocks[0].terminator, TerminatorKind::Stop);
    }
}
