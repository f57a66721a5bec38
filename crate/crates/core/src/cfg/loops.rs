use std::collections::BTreeSet;

use crate::diagnostics::{Diagnostic, Stage};

use super::{BlockId, Cfg, Edge};

/// One loop, identified by its back edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub id: usize,
    pub back_edge: Edge,
    pub header: BlockId,
    /// Natural-loop body, header included.
    pub body: BTreeSet<BlockId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoopInfo {
    pub loops: Vec<Loop>,
}

impl LoopInfo {
    pub fn back_edges(&self) -> impl Iterator<Item = &Edge> + '_ {
        self.loops.iter().map(|l| &l.back_edge)
    }

    pub fn loop_of_edge(&self, e: &Edge) -> Option<usize> {
        self.loops.iter().position(|l| l.back_edge == *e)
    }

    /// Loop ids whose body contains `block`.
    pub fn containing(&self, block: BlockId) -> impl Iterator<Item = &Loop> + '_ {
        self.loops.iter().filter(move |l| l.body.contains(&block))
    }
}

/// Dominator sets over the reachable blocks, iterative set formulation.
fn dominators(cfg: &Cfg, reachable: &BTreeSet<BlockId>) -> Vec<Option<BTreeSet<BlockId>>> {
    let n = cfg.blocks.len();
    let mut preds: Vec<Vec<BlockId>> = vec![Vec::new(); n];
    for e in &cfg.edges {
        preds[e.to].push(e.from);
    }
    let all: BTreeSet<BlockId> = reachable.clone();
    let mut dom: Vec<Option<BTreeSet<BlockId>>> = vec![None; n];
    for &b in reachable {
        dom[b] = Some(if b == cfg.entry { BTreeSet::from([b]) } else { all.clone() });
    }
    let mut changed = true;
    while changed {
        changed = false;
        for &b in reachable {
            if b == cfg.entry {
                continue;
            }
            let mut acc: Option<BTreeSet<BlockId>> = None;
            for p in &preds[b] {
                if let Some(d) = &dom[*p] {
                    acc = Some(match acc {
                        None => d.clone(),
                        Some(a) => a.intersection(d).copied().collect(),
                    });
                }
            }
            let mut next = acc.unwrap_or_default();
            next.insert(b);
            if dom[b].as_ref() != Some(&next) {
                dom[b] = Some(next);
                changed = true;
            }
        }
    }
    dom
}

/// Depth-first back-edge detection from the entry; one loop per back edge with
/// its natural body. Back edges whose header does not dominate the tail belong
/// to irreducible regions and are reported.
pub fn find_loops(cfg: &Cfg) -> (LoopInfo, Vec<Diagnostic>) {
    let n = cfg.blocks.len();
    if n == 0 {
        return (LoopInfo::default(), Vec::new());
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color = vec![0u8; n];
    let mut back: BTreeSet<Edge> = BTreeSet::new();
    let mut stack: Vec<(BlockId, usize)> = vec![(cfg.entry, 0)];
    color[cfg.entry] = 1;
    let mut reachable = BTreeSet::from([cfg.entry]);
    while let Some(&mut (b, ref mut i)) = stack.last_mut() {
        let edges: Vec<&Edge> = cfg.successors(b).collect();
        if *i < edges.len() {
            let e = *edges[*i];
            *i += 1;
            match color[e.to] {
                0 => {
                    color[e.to] = 1;
                    reachable.insert(e.to);
                    stack.push((e.to, 0));
                }
                1 => {
                    back.insert(e);
                }
                _ => {}
            }
        } else {
            color[b] = 2;
            stack.pop();
        }
    }

    let mut preds: Vec<Vec<BlockId>> = vec![Vec::new(); n];
    for e in &cfg.edges {
        preds[e.to].push(e.from);
    }
    let dom = dominators(cfg, &reachable);
    let mut diags = Vec::new();
    let loops = back
        .into_iter()
        .enumerate()
        .map(|(id, e)| {
            let header = e.to;
            let mut body = BTreeSet::from([header]);
            let mut work = vec![e.from];
            while let Some(b) = work.pop() {
                if body.insert(b) {
                    work.extend(preds[b].iter().copied().filter(|p| reachable.contains(p)));
                }
            }
            let dominated = dom[e.from].as_ref().is_some_and(|d| d.contains(&header));
            if !dominated {
                diags.push(
                    Diagnostic::new(
                        Stage::Cfg,
                        "irreducible-loop",
                        format!("back edge {}->{} enters a loop with more than one entry", e.from, e.to),
                    )
                    .in_block(header),
                );
            }
            Loop { id, back_edge: e, header, body }
        })
        .collect();
    (LoopInfo { loops }, diags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acyclic_has_no_back_edges() {
        let cfg = Cfg::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert!(cfg.loops.loops.is_empty());
    }

    #[test]
    fn single_loop() {
        let cfg = Cfg::from_edges(4, &[(0, 1), (1, 2), (2, 1), (1, 3)]);
        assert_eq!(cfg.loops.loops.len(), 1);
        let l = &cfg.loops.loops[0];
        assert_eq!(l.header, 1);
        assert_eq!(l.body, BTreeSet::from([1, 2]));
    }

    #[test]
    fn nested_loops() {
        // 0 -> 1 (outer header) -> 2 (inner header) -> 3 -> 2 ; 2 -> 4 -> 1 ; 1 -> 5
        let cfg = Cfg::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 2), (2, 4), (4, 1), (1, 5)]);
        assert_eq!(cfg.loops.loops.len(), 2);
        let inner = cfg.loops.loops.iter().find(|l| l.header == 2).unwrap();
        let outer = cfg.loops.loops.iter().find(|l| l.header == 1).unwrap();
        assert!(inner.body.is_subset(&outer.body));
        assert!(inner.body.len() < outer.body.len());
        assert!(cfg.diagnostics.is_empty());
    }

    #[test]
    fn irreducible_is_diagnosed() {
        // Two entries into the cycle {1, 2}.
        let cfg = Cfg::from_edges(3, &[(0, 1), (0, 2), (1, 2), (2, 1)]);
        assert_eq!(cfg.loops.loops.len(), 1);
        assert_eq!(cfg.diagnostics.len(), 1);
        assert_eq!(cfg.diagnostics[0].code, "irreducible-loop");
    }

    #[test]
    fn removing_back_edges_leaves_dag() {
        let cfg = Cfg::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 2), (2, 4), (4, 1), (1, 5)]);
        let back: BTreeSet<Edge> = cfg.loops.back_edges().copied().collect();
        let forward: Vec<(usize, usize)> =
            cfg.edges.iter().filter(|e| !back.contains(e)).map(|e| (e.from, e.to)).collect();
        // Kahn's algorithm consumes every node iff acyclic.
        let mut indeg = [0; 6];
        for &(_, t) in &forward {
            indeg[t] += 1;
        }
        let mut ready: Vec<usize> = (0..6).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = ready.pop() {
            seen += 1;
            for &(f, t) in &forward {
                if f == v {
                    indeg[t] -= 1;
                    if indeg[t] == 0 {
                        ready.push(t);
                    }
                }
            }
        }
        assert_eq!(seen, 6);
    }
}
