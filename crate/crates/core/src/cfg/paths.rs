//! Depth-first path enumeration with two-round loop bounding.
//!
//! Every back edge is traversed exactly zero or exactly two times on an emitted
//! path, so each loop that is entered for real yields a pair of comparable rounds.
//! A path that has taken a back edge once may not leave that loop's body until it
//! takes it a second time.

use std::ops::Range;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{Diagnostic, Stage};

use super::{BlockId, Cfg};

/// Back-edge traversals on every loop-carrying path. Not configurable.
pub const ROUNDS_PER_BACK_EDGE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub struct PathLimits {
    pub max_paths: usize,
    pub max_blocks_per_path: usize,
}

impl Default for PathLimits {
    fn default() -> Self {
        PathLimits { max_paths: 4096, max_blocks_per_path: 512 }
    }
}

impl PathLimits {
    pub fn rounds_per_back_edge(&self) -> usize {
        ROUNDS_PER_BACK_EDGE
    }

    pub fn is_valid(&self) -> bool {
        self.max_paths > 0 && self.max_blocks_per_path > 0
    }
}

/// The two rounds of one loop on a path, as index ranges into `BlockPath::blocks`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoopSpan {
    pub loop_id: usize,
    pub first_round: Range<usize>,
    pub second_round: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockPath {
    pub blocks: Vec<BlockId>,
    pub loop_spans: Vec<LoopSpan>,
}

impl BlockPath {
    /// Innermost loop round covering position `i`, as (loop id, round 1 or 2).
    pub fn round_at(&self, i: usize) -> Option<(usize, u8)> {
        self.loop_spans
            .iter()
            .filter_map(|s| {
                if s.first_round.contains(&i) {
                    Some((s.first_round.len(), s.loop_id, 1u8))
                } else if s.second_round.contains(&i) {
                    Some((s.second_round.len(), s.loop_id, 2u8))
                } else {
                    None
                }
            })
            .min()
            .map(|(_, id, round)| (id, round))
    }

    /// How often the edge `from -> to` is traversed.
    pub fn edge_count(&self, from: BlockId, to: BlockId) -> usize {
        self.blocks.windows(2).filter(|w| w[0] == from && w[1] == to).count()
    }
}

#[derive(Debug, Clone, Default)]
pub struct PathEnumeration {
    /// Sorted by block sequence.
    pub paths: Vec<BlockPath>,
    pub truncated: bool,
    pub diagnostics: Vec<Diagnostic>,
}

struct Walker<'a> {
    cfg: &'a Cfg,
    limits: PathLimits,
    path: Vec<BlockId>,
    counts: Vec<usize>,
    out: Vec<BlockPath>,
    hit_path_limit: bool,
    hit_length_limit: bool,
}

impl Walker<'_> {
    fn visit(&mut self, b: BlockId) {
        if self.out.len() >= self.limits.max_paths {
            self.hit_path_limit = true;
            return;
        }
        self.path.push(b);
        let succs: Vec<_> = self.cfg.successors(b).copied().collect();
        if succs.is_empty() {
            if self.counts.iter().all(|&c| c == 0 || c == ROUNDS_PER_BACK_EDGE) {
                let path = BlockPath { blocks: self.path.clone(), loop_spans: self.spans() };
                self.out.push(path);
            }
        } else if self.path.len() >= self.limits.max_blocks_per_path {
            self.hit_length_limit = true;
        } else {
            let mut last_to = None;
            for e in succs {
                // JUMPI whose both arms land on the same block: one walk suffices.
                if last_to == Some(e.to) {
                    continue;
                }
                last_to = Some(e.to);
                match self.cfg.loops.loop_of_edge(&e) {
                    Some(l) => {
                        if self.counts[l] >= ROUNDS_PER_BACK_EDGE {
                            continue;
                        }
                        self.counts[l] += 1;
                        self.visit(e.to);
                        self.counts[l] -= 1;
                    }
                    None => {
                        let leaves_open_loop =
                            self.cfg.loops.loops.iter().any(|lp| self.counts[lp.id] == 1 && !lp.body.contains(&e.to));
                        if !leaves_open_loop {
                            self.visit(e.to);
                        }
                    }
                }
            }
        }
        self.path.pop();
    }

    fn spans(&self) -> Vec<LoopSpan> {
        let mut spans = Vec::new();
        for lp in &self.cfg.loops.loops {
            if self.counts[lp.id] != ROUNDS_PER_BACK_EDGE {
                continue;
            }
            let (tail, head) = (lp.back_edge.from, lp.back_edge.to);
            let takes: Vec<usize> = self
                .path
                .windows(2)
                .enumerate()
                .filter(|(_, w)| w[0] == tail && w[1] == head)
                .map(|(i, _)| i)
                .collect();
            let (t1, t2) = (takes[0], takes[1]);
            let s1 = self.path[..=t1].iter().rposition(|&x| x == head).unwrap_or(t1);
            spans.push(LoopSpan { loop_id: lp.id, first_round: s1..t1 + 1, second_round: t1 + 1..t2 + 1 });
        }
        spans
    }
}

/// Enumerates entry-to-exit block paths. Blocks with no outgoing edge (halts and
/// unresolved jumps) end a path.
pub fn enumerate_paths(cfg: &Cfg, limits: PathLimits) -> PathEnumeration {
    if cfg.blocks.is_empty() {
        return PathEnumeration::default();
    }
    let mut w = Walker {
        cfg,
        limits,
        path: Vec::new(),
        counts: vec![0; cfg.loops.loops.len()],
        out: Vec::new(),
        hit_path_limit: false,
        hit_length_limit: false,
    };
    w.visit(cfg.entry);
    let mut diagnostics = Vec::new();
    if w.hit_path_limit {
        diagnostics.push(Diagnostic::new(
            Stage::Paths,
            "path-limit",
            format!("stopped after {} paths (max_paths)", limits.max_paths),
        ));
    }
    if w.hit_length_limit {
        diagnostics.push(Diagnostic::new(
            Stage::Paths,
            "path-length-limit",
            format!("paths longer than {} blocks were cut (max_blocks_per_path)", limits.max_blocks_per_path),
        ));
    }
    let truncated = w.hit_path_limit || w.hit_length_limit;
    let mut paths = w.out;
    paths.sort_by(|a, b| a.blocks.cmp(&b.blocks));
    PathEnumeration { paths, truncated, diagnostics }
}
