use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::graph::{is_dest_tag, is_source_tag, FlowsheetGraph, UnitCategory};

/// A broken graph invariant, naming the offending element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", content = "element")]
pub enum Violation {
    EmptyGraph,
    DuplicateId(String),
    MalformedId(String),
    DanglingEdge(usize),
    RawHasInlet(String),
    ProdHasOutlet(String),
    NotOnRawToProdPath(String),
    HeatGroupOnNonHex(String),
    DuplicateEdge { src: String, dst: String },
    MisplacedTag { src: String, dst: String, tag: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGraph => write!(f, "graph has no nodes"),
            Violation::DuplicateId(id) => write!(f, "duplicate node id {id}"),
            Violation::MalformedId(id) => write!(f, "node id {id} is not category-ordinal"),
            Violation::DanglingEdge(i) => write!(f, "edge {i} references a missing node"),
            Violation::RawHasInlet(id) => write!(f, "raw node {id} has an inlet"),
            Violation::ProdHasOutlet(id) => write!(f, "product node {id} has an outlet"),
            Violation::NotOnRawToProdPath(id) => {
                write!(f, "node {id} is not on a path from a raw material to a product")
            }
            Violation::HeatGroupOnNonHex(id) => {
                write!(f, "node {id} carries a heat group but is not a heat exchanger")
            }
            Violation::DuplicateEdge { src, dst } => {
                write!(f, "parallel streams {src}->{dst} with identical tags")
            }
            Violation::MisplacedTag { src, dst, tag } => {
                write!(f, "tag {tag} on stream {src}->{dst} is on the wrong side")
            }
        }
    }
}

/// Checks every graph invariant; an empty result means the graph is a
/// complete, well-formed flowsheet.
pub fn validate(g: &FlowsheetGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    if g.nodes.is_empty() {
        out.push(Violation::EmptyGraph);
        return out;
    }
    let n = g.nodes.len();
    let mut ids = HashSet::new();
    for node in &g.nodes {
        if !ids.insert(node.id.as_str()) {
            out.push(Violation::DuplicateId(node.id.clone()));
        }
        if node.ordinal().is_none() {
            out.push(Violation::MalformedId(node.id.clone()));
        }
        if node.heat_group.is_some() && node.category != UnitCategory::Hex {
            out.push(Violation::HeatGroupOnNonHex(node.id.clone()));
        }
    }
    let mut dangling = false;
    for (i, e) in g.edges.iter().enumerate() {
        if e.src >= n || e.dst >= n {
            out.push(Violation::DanglingEdge(i));
            dangling = true;
        }
    }
    if dangling {
        return out;
    }

    let mut seen_edges = HashSet::new();
    for e in &g.edges {
        let (src, dst) = (&g.nodes[e.src].id, &g.nodes[e.dst].id);
        if !seen_edges.insert((e.src, e.dst, &e.src_tags, &e.dst_tags)) {
            out.push(Violation::DuplicateEdge { src: src.clone(), dst: dst.clone() });
        }
        let wrong_src = e.src_tags.iter().filter(|t| !is_source_tag(t));
        let wrong_dst = e.dst_tags.iter().filter(|t| !is_dest_tag(t));
        for tag in wrong_src.chain(wrong_dst) {
            out.push(Violation::MisplacedTag { src: src.clone(), dst: dst.clone(), tag: tag.clone() });
        }
    }

    for (i, node) in g.nodes.iter().enumerate() {
        if node.category == UnitCategory::Raw && g.in_degree(i) > 0 {
            out.push(Violation::RawHasInlet(node.id.clone()));
        }
        if node.category == UnitCategory::Prod && g.out_degree(i) > 0 {
            out.push(Violation::ProdHasOutlet(node.id.clone()));
        }
    }

    let from_raw = reach(g, |c| c == &UnitCategory::Raw, true);
    let to_prod = reach(g, |c| c == &UnitCategory::Prod, false);
    for (i, node) in g.nodes.iter().enumerate() {
        if !(from_raw[i] && to_prod[i]) {
            out.push(Violation::NotOnRawToProdPath(node.id.clone()));
        }
    }
    out
}

/// Marks nodes reachable from (forward) or reaching (backward) a seed set.
fn reach(g: &FlowsheetGraph, seed: impl Fn(&UnitCategory) -> bool, forward: bool) -> Vec<bool> {
    let n = g.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for e in &g.edges {
        if forward {
            adj[e.src].push(e.dst);
        } else {
            adj[e.dst].push(e.src);
        }
    }
    let mut mark = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| seed(&g.nodes[i].category)).collect();
    for &s in &stack {
        mark[s] = true;
    }
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !mark[v] {
                mark[v] = true;
                stack.push(v);
            }
        }
    }
    mark
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfiles::{fixtures, parse, Mode, StreamEdge};

    #[test]
    fn reference_graph_is_valid() {
        assert_eq!(validate(&fixtures::two_train_graph()), vec![]);
        let parsed = parse(fixtures::TWO_TRAIN_SFILES, Mode::Strict).unwrap();
        assert_eq!(validate(&parsed), vec![]);
    }

    #[test]
    fn raw_with_inlet() {
        let mut g = parse("(raw)(prod)", Mode::Strict).unwrap();
        let extra = g.add_unit(UnitCategory::Raw);
        g.connect(extra, 0);
        let v = validate(&g);
        assert!(v.contains(&Violation::RawHasInlet("raw-0".into())), "{v:?}");
    }

    #[test]
    fn unreachable_node() {
        let mut g = parse("(raw)(prod)", Mode::Strict).unwrap();
        g.add_unit(UnitCategory::Hex);
        assert_eq!(validate(&g), vec![Violation::NotOnRawToProdPath("hex-0".into())]);
    }

    #[test]
    fn dead_end_and_empty() {
        assert_eq!(validate(&FlowsheetGraph::new()), vec![Violation::EmptyGraph]);
        let g = parse("(raw)(hex)(r)", Mode::Strict).unwrap();
        assert_eq!(validate(&g).len(), 3);
    }

    #[test]
    fn misplaced_tags_and_duplicates() {
        let mut g = parse("(raw)(prod)", Mode::Strict).unwrap();
        g.edges[0].src_tags.insert("tin".into());
        g.add_edge(StreamEdge::new(0, 1).with_src_tag("tin"));
        let v = validate(&g);
        assert!(v.iter().any(|x| matches!(x, Violation::MisplacedTag { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::DuplicateEdge { .. })));
    }

    #[test]
    fn heat_group_on_wrong_category() {
        let mut g = parse("(raw)(v)(prod)", Mode::Strict).unwrap();
        g.nodes[1].heat_group = Some(1);
        assert_eq!(validate(&g), vec![Violation::HeatGroupOnNonHex("v-0".into())]);
    }
}
