use std::fmt::Write;

use super::{Cfg, EdgeKind};

/// Graphviz rendering: one node per block labelled with its offset range,
/// back edges dashed.
pub fn to_dot(cfg: &Cfg) -> String {
    let mut s = String::from("digraph cfg {\n  node [shape=box, fontname=monospace];\n");
    for b in &cfg.blocks {
        let _ = writeln!(
            s,
            "  b{} [label=\"#{} [0x{:x}, 0x{:x}) {:?}\"];",
            b.id, b.id, b.start_offset, b.end_offset, b.terminator
        );
    }
    for e in &cfg.edges {
        let label = match e.kind {
            EdgeKind::JumpTaken => "jump",
            EdgeKind::FallThrough => "fall",
            EdgeKind::BranchTrue => "true",
            EdgeKind::BranchFalse => "false",
        };
        let style = if cfg.loops.loop_of_edge(e).is_some() { ", style=dashed" } else { "" };
        let _ = writeln!(s, "  b{} -> b{} [label=\"{}\"{}];", e.from, e.to, label, style);
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_nodes_and_back_edges() {
        let cfg = Cfg::from_edges(3, &[(0, 1), (1, 1), (1, 2)]);
        let dot = to_dot(&cfg);
        assert!(dot.starts_with("digraph cfg {"));
        assert_eq!(dot.matches(" -> ").count(), 3);
        assert!(dot.contains("b1 -> b1 [label=\"jump\", style=dashed]"));
    }
}
