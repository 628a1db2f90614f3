use std::collections::BTreeMap;
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::rbr::{Program, RuleName};

/// Loops of the rule call graph, each as its sorted member rule names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoopReport {
    pub loops: Vec<Vec<RuleName>>,
}

impl LoopReport {
    pub fn count(&self) -> usize {
        self.loops.len()
    }
}

impl fmt::Display for LoopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "loops: {}", self.loops.len())?;
        for (i, members) in self.loops.iter().enumerate() {
            let names: Vec<String> = members.iter().map(|n| n.to_string()).collect();
            writeln!(f, "loop {}: {}", i + 1, names.join(", "))?;
        }
        Ok(())
    }
}

/// Call graph over rule names; both rules of a guard pair share one node.
pub fn call_graph(program: &Program) -> (DiGraph<RuleName, ()>, BTreeMap<RuleName, NodeIndex>) {
    let mut g = DiGraph::new();
    let mut nodes = BTreeMap::new();
    let mut node = |g: &mut DiGraph<RuleName, ()>, n: RuleName| *nodes.entry(n).or_insert_with(|| g.add_node(n));
    for r in &program.rules {
        let from = node(&mut g, r.name);
        if let Some(c) = r.call {
            let to = node(&mut g, c.target);
            g.update_edge(from, to, ());
        }
    }
    (g, nodes)
}

/// Non-trivial strongly connected components of the call graph, sorted by
/// their smallest member. Nested loops share a component.
pub fn detect_loops(program: &Program) -> LoopReport {
    let (g, _) = call_graph(program);
    let mut loops: Vec<Vec<RuleName>> = tarjan_scc(&g)
        .into_iter()
        .filter(|scc| scc.len() > 1 || g.contains_edge(scc[0], scc[0]))
        .map(|scc| {
            let mut names: Vec<RuleName> = scc.iter().map(|i| g[*i]).collect();
            names.sort();
            names
        })
        .collect();
    loops.sort();
    LoopReport { loops }
}
