use std::collections::BTreeMap;

use super::graph::{FlowsheetGraph, StreamEdge, UnitCategory};
use super::validate::{validate, Violation};
use super::SfilesError;

/// Canonical SFILES 2.0 string of a complete flowsheet.
///
/// Traversal starts at the lowest-ordinal raw material of each mass train.
/// At a branching unit the branches are written in ascending order of
/// (node count, token string) and the largest one is left unbracketed.
/// Streams that reach an already written unit become recycle pairs numbered
/// in order of first appearance; upstream feeds that join later become
/// `<&|...&|` blocks.
pub fn serialize(g: &FlowsheetGraph) -> Result<String, SfilesError> {
    let violations = validate(g);
    if !violations.is_empty() {
        return Err(SfilesError::InvalidGraph(violations));
    }
    emit(g)
}

/// Serializes any graph without requiring it to be a complete flowsheet,
/// e.g. a partially drawn one that is about to be autocompleted.
pub fn serialize_partial(g: &FlowsheetGraph) -> Result<String, SfilesError> {
    let n = g.nodes.len();
    if n == 0 {
        return Err(SfilesError::InvalidGraph(vec![Violation::EmptyGraph]));
    }
    if let Some(i) = g.edges.iter().position(|e| e.src >= n || e.dst >= n) {
        return Err(SfilesError::InvalidGraph(vec![Violation::DanglingEdge(i)]));
    }
    emit(g)
}

/// One written unit with everything attached to it.
struct Seg {
    node: usize,
    /// Incoming side branches: the written chain and the edge closing it.
    converges: Vec<(Seg, usize)>,
    /// Bracketed outlet branches.
    branches: Vec<(usize, Seg)>,
    /// Unbracketed continuation.
    main: Option<(usize, Box<Seg>)>,
    size: usize,
    shape: String,
}

enum Forced<'a> {
    None,
    /// Continue along these edges; the final edge closes a converging block.
    Path(&'a [usize]),
}

struct Emitter<'g> {
    g: &'g FlowsheetGraph,
    visited: Vec<bool>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    closures: Vec<usize>,
}

fn tag_text(e: &StreamEdge) -> String {
    e.tags_in_order().map(|t| format!("{{{t}}}")).collect()
}

fn unit_text(g: &FlowsheetGraph, node: usize) -> String {
    format!("({})", g.nodes[node].category.name())
}

impl<'g> Emitter<'g> {
    fn new(g: &'g FlowsheetGraph) -> Self {
        let n = g.nodes.len();
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for (i, e) in g.edges.iter().enumerate() {
            out_adj[e.src].push(i);
            in_adj[e.dst].push(i);
        }
        let node_key = |i: usize| (g.nodes[i].category.name(), g.nodes[i].ordinal(), i);
        for list in &mut out_adj {
            list.sort_by_key(|&e| {
                let edge = &g.edges[e];
                (node_key(edge.dst), edge.src_tags.clone(), edge.dst_tags.clone(), e)
            });
        }
        for list in &mut in_adj {
            list.sort_by_key(|&e| {
                let edge = &g.edges[e];
                let src = &g.nodes[edge.src];
                (src.category != UnitCategory::Raw, node_key(edge.src), edge.src_tags.clone(), edge.dst_tags.clone(), e)
            });
        }
        Self { g, visited: vec![false; n], out_adj, in_adj, closures: Vec::new() }
    }

    fn visit(&mut self, u: usize, forced: Forced<'_>) -> Seg {
        self.visited[u] = true;
        let g = self.g;
        let mut main: Option<(usize, Box<Seg>)> = None;
        let mut reserved: Option<usize> = None;
        match forced {
            Forced::Path([last]) => reserved = Some(*last),
            Forced::Path([first, rest @ ..]) => {
                let child = self.visit(g.edges[*first].dst, Forced::Path(rest));
                main = Some((*first, Box::new(child)));
                reserved = Some(*first);
            }
            Forced::Path([]) | Forced::None => {}
        }
        let forced_path = reserved.is_some();

        let mut children: Vec<(usize, Seg)> = Vec::new();
        for e in self.out_adj[u].clone() {
            if Some(e) == reserved {
                continue;
            }
            let v = g.edges[e].dst;
            if self.visited[v] {
                self.closures.push(e);
            } else {
                let child = self.visit(v, Forced::None);
                children.push((e, child));
            }
        }

        let mut converges = Vec::new();
        for e in self.in_adj[u].clone() {
            let p = g.edges[e].src;
            if self.visited[p] {
                continue;
            }
            let path = self.walk_back(p, e);
            let start = g.edges[path[0]].src;
            let chain = self.visit(start, Forced::Path(&path));
            converges.push((chain, e));
        }

        children.sort_by(|a, b| {
            let ka = (a.1.size, branch_shape(g, a.0, &a.1));
            let kb = (b.1.size, branch_shape(g, b.0, &b.1));
            ka.cmp(&kb)
        });
        if !forced_path {
            main = children.pop().map(|(e, s)| (e, Box::new(s)));
        }

        let size = 1
            + converges.iter().map(|(s, _)| s.size).sum::<usize>()
            + children.iter().map(|(_, s)| s.size).sum::<usize>()
            + main.as_ref().map_or(0, |(_, s)| s.size);
        let mut seg = Seg { node: u, converges, branches: children, main, size, shape: String::new() };
        seg.shape = shape(g, &seg);
        seg
    }

    /// Edges of an upstream chain ending with `closing` (which enters an
    /// already written unit), starting at a unit with no unwritten inlet.
    fn walk_back(&self, from: usize, closing: usize) -> Vec<usize> {
        let mut chain_nodes = vec![from];
        let mut edges = vec![closing];
        let mut cur = from;
        loop {
            let next = self.in_adj[cur].iter().copied().find(|&e| {
                let src = self.g.edges[e].src;
                !self.visited[src] && !chain_nodes.contains(&src)
            });
            match next {
                Some(e) => {
                    cur = self.g.edges[e].src;
                    chain_nodes.push(cur);
                    edges.push(e);
                }
                None => break,
            }
        }
        edges.reverse();
        edges
    }
}

fn branch_shape(g: &FlowsheetGraph, edge: usize, seg: &Seg) -> String {
    format!("{}{}", tag_text(&g.edges[edge]), seg.shape)
}

/// Token string of a segment without recycle markers; used only for ordering.
fn shape(g: &FlowsheetGraph, seg: &Seg) -> String {
    let mut s = unit_text(g, seg.node);
    if g.nodes[seg.node].heat_group.is_some() {
        s.push_str("{h}");
    }
    for (i, (chain, e)) in seg.converges.iter().enumerate() {
        s.push_str(if i == 0 { "<&|" } else { "&" });
        s.push_str(&chain.shape);
        s.push_str(&tag_text(&g.edges[*e]));
        if i + 1 == seg.converges.len() {
            s.push_str("&|");
        }
    }
    for (e, child) in &seg.branches {
        s.push('[');
        s.push_str(&branch_shape(g, *e, child));
        s.push(']');
    }
    if let Some((e, child)) = &seg.main {
        s.push_str(&branch_shape(g, *e, child));
    }
    s
}

struct Writer<'g> {
    g: &'g FlowsheetGraph,
    anchors: BTreeMap<usize, Vec<usize>>,
    refs: BTreeMap<usize, Vec<usize>>,
    numbers: BTreeMap<usize, u32>,
    heat_groups: BTreeMap<u32, u32>,
    out: String,
}

impl Writer<'_> {
    fn number(&mut self, edge: usize) -> Result<u32, SfilesError> {
        let next = self.numbers.len() as u32 + 1;
        let n = *self.numbers.entry(edge).or_insert(next);
        if n > 99 {
            return Err(SfilesError::TooManyRecycles(n as usize));
        }
        Ok(n)
    }

    fn write(&mut self, seg: &Seg) -> Result<(), SfilesError> {
        let g = self.g;
        let node = &g.nodes[seg.node];
        self.out.push_str(&unit_text(g, seg.node));
        if let Some(group) = node.heat_group {
            let next = self.heat_groups.len() as u32 + 1;
            let k = *self.heat_groups.entry(group).or_insert(next);
            self.out.push_str(&format!("{{{k}}}"));
        }
        // Anchors come before references: a digit right after `<N` would be
        // read as part of the reference.
        for e in self.anchors.get(&seg.node).cloned().unwrap_or_default() {
            let n = self.number(e)?;
            self.out.push_str(&tag_text(&g.edges[e]));
            if n < 10 {
                self.out.push_str(&n.to_string());
            } else {
                self.out.push_str(&format!("%{n}"));
            }
        }
        for e in self.refs.get(&seg.node).cloned().unwrap_or_default() {
            let n = self.number(e)?;
            if n < 10 {
                self.out.push_str(&format!("<{n}"));
            } else {
                self.out.push_str(&format!("<%{n}"));
            }
        }
        for (i, (chain, e)) in seg.converges.iter().enumerate() {
            self.out.push_str(if i == 0 { "<&|" } else { "&" });
            self.write(chain)?;
            self.out.push_str(&tag_text(&g.edges[*e]));
            if i + 1 == seg.converges.len() {
                self.out.push_str("&|");
            }
        }
        for (e, child) in &seg.branches {
            self.out.push('[');
            self.out.push_str(&tag_text(&g.edges[*e]));
            self.write(child)?;
            self.out.push(']');
        }
        if let Some((e, child)) = &seg.main {
            self.out.push_str(&tag_text(&g.edges[*e]));
            self.write(child)?;
        }
        Ok(())
    }
}

fn emit(g: &FlowsheetGraph) -> Result<String, SfilesError> {
    let mut em = Emitter::new(g);
    let mut trains = Vec::new();
    for component in g.mass_trains() {
        let start = pick_start(g, &component);
        trains.push((train_key(g, start), start));
    }
    trains.sort();
    let mut roots = Vec::new();
    for (_, start) in trains {
        roots.push(em.visit(start, Forced::None));
    }

    let mut writer = Writer {
        g,
        anchors: BTreeMap::new(),
        refs: BTreeMap::new(),
        numbers: BTreeMap::new(),
        heat_groups: BTreeMap::new(),
        out: String::new(),
    };
    for &e in &em.closures {
        writer.anchors.entry(g.edges[e].src).or_default().push(e);
        writer.refs.entry(g.edges[e].dst).or_default().push(e);
    }
    for (i, root) in roots.iter().enumerate() {
        if i > 0 {
            writer.out.push_str("n|");
        }
        writer.write(root)?;
    }
    Ok(writer.out)
}

fn train_key(g: &FlowsheetGraph, start: usize) -> (bool, String, Option<usize>, usize) {
    let node = &g.nodes[start];
    (node.category != UnitCategory::Raw, node.category.name().to_string(), node.ordinal(), start)
}

fn pick_start(g: &FlowsheetGraph, component: &[usize]) -> usize {
    let raw = component
        .iter()
        .copied()
        .filter(|&i| g.nodes[i].category == UnitCategory::Raw)
        .min_by_key(|&i| (g.nodes[i].ordinal(), i));
    if let Some(r) = raw {
        return r;
    }
    component
        .iter()
        .copied()
        .min_by_key(|&i| (g.in_degree(i) > 0, g.nodes[i].category.name().to_string(), g.nodes[i].ordinal(), i))
        .expect("components are non-empty")
}
