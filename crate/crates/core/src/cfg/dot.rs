use std::fmt::Write;

use super::{Cfg, Terminator};

/// Renders the CFG as a Graphviz digraph. Nodes are emitted in id order.
pub fn emit_dot(cfg: &Cfg) -> String {
    let mut out = String::from("digraph cfg {\n  node [shape=box, fontname=\"monospace\"];\n");
    for block in cfg.blocks.values() {
        let mut label = format!("{}\\l", block.id);
        for ins in &block.instrs {
            let _ = write!(label, "{ins}\\l");
        }
        let style = if block.live { "" } else { ", style=dashed" };
        let _ = writeln!(out, "  \"{}\" [label=\"{}\"{}];", block.id, label, style);
    }
    for block in cfg.blocks.values() {
        let edges: Vec<_> = match &block.terminator {
            Terminator::Jump(t) => vec![(t, "jump")],
            Terminator::JumpI { taken, fallthrough } => vec![(taken, "true"), (fallthrough, "false")],
            Terminator::FallThrough(t) => vec![(t, "fall")],
            Terminator::Halt => vec![],
        };
        for (to, kind) in edges {
            let _ = writeln!(out, "  \"{}\" -> \"{}\" [label=\"{}\"];", block.id, to, kind);
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{disassemble, parse_hex};
    use crate::cfg::{resolve_cfg, split_blocks};

    fn dot(hex: &str) -> String {
        emit_dot(&resolve_cfg(&split_blocks(
            &disassemble(&parse_hex(hex).unwrap()).unwrap(),
        )))
    }

    #[test]
    fn single_node() {
        let d = dot("00");
        assert_eq!(d.matches("[label=").count(), 1);
        assert!(!d.contains("->"));
        assert!(d.contains("0: STOP\\l"));
    }

    #[test]
    fn jump_edge() {
        let d = dot("6003565b00");
        assert_eq!(d.matches("->").count(), 1);
        assert!(d.contains("\"0\" -> \"3\" [label=\"jump\"];"));
    }

    #[test]
    fn branch_edges() {
        let d = dot("6001600657005b00");
        assert!(d.contains("\"0\" -> \"6\" [label=\"true\"];"));
        assert!(d.contains("\"0\" -> \"5\" [label=\"false\"];"));
    }
}
