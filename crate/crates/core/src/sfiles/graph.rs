use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Unit-operation categories known to the strict notation.
///
/// `Other` only arises from lenient parsing of external corpora.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnitCategory {
    Raw,
    Prod,
    Hex,
    Reactor,
    Mixer,
    Splitter,
    Valve,
    Pump,
    Compressor,
    Distillation,
    Rectification,
    Absorption,
    Extraction,
    Flash,
    Filter,
    Centrifuge,
    Dryer,
    Cyclone,
    Other(String),
}

impl UnitCategory {
    pub const KNOWN: [UnitCategory; 18] = [
        UnitCategory::Raw,
        UnitCategory::Prod,
        UnitCategory::Hex,
        UnitCategory::Reactor,
        UnitCategory::Mixer,
        UnitCategory::Splitter,
        UnitCategory::Valve,
        UnitCategory::Pump,
        UnitCategory::Compressor,
        UnitCategory::Distillation,
        UnitCategory::Rectification,
        UnitCategory::Absorption,
        UnitCategory::Extraction,
        UnitCategory::Flash,
        UnitCategory::Filter,
        UnitCategory::Centrifuge,
        UnitCategory::Dryer,
        UnitCategory::Cyclone,
    ];

    pub fn name(&self) -> &str {
        match self {
            UnitCategory::Raw => "raw",
            UnitCategory::Prod => "prod",
            UnitCategory::Hex => "hex",
            UnitCategory::Reactor => "r",
            UnitCategory::Mixer => "mix",
            UnitCategory::Splitter => "splt",
            UnitCategory::Valve => "v",
            UnitCategory::Pump => "pp",
            UnitCategory::Compressor => "comp",
            UnitCategory::Distillation => "dist",
            UnitCategory::Rectification => "rect",
            UnitCategory::Absorption => "abs",
            UnitCategory::Extraction => "ext",
            UnitCategory::Flash => "flash",
            UnitCategory::Filter => "filt",
            UnitCategory::Centrifuge => "centr",
            UnitCategory::Dryer => "dry",
            UnitCategory::Cyclone => "cycl",
            UnitCategory::Other(name) => name,
        }
    }

    /// Looks up a strict-mode category by its notation name.
    pub fn from_known(name: &str) -> Option<Self> {
        Self::KNOWN.iter().find(|c| c.name() == name).cloned()
    }

    /// Strict lookup, falling back to `Other` for unknown names.
    pub fn from_name_lenient(name: &str) -> Self {
        Self::from_known(name).unwrap_or_else(|| UnitCategory::Other(name.to_string()))
    }
}

impl fmt::Display for UnitCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stream tags that describe the outlet side of an edge.
pub const SOURCE_TAGS: [&str; 3] = ["tout", "bout", "out"];
/// Stream tags that describe the inlet side of an edge.
pub const DEST_TAGS: [&str; 3] = ["tin", "bin", "in"];

pub fn is_source_tag(tag: &str) -> bool {
    SOURCE_TAGS.contains(&tag)
}

pub fn is_dest_tag(tag: &str) -> bool {
    DEST_TAGS.contains(&tag)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitNode {
    pub id: String,
    pub category: UnitCategory,
    /// Heat-integration group; only meaningful on heat exchangers.
    pub heat_group: Option<u32>,
}

impl UnitNode {
    /// Ordinal suffix of the id, if the id has the `category-ordinal` form.
    pub fn ordinal(&self) -> Option<usize> {
        let (prefix, ordinal) = self.id.rsplit_once('-')?;
        if prefix != self.category.name() || ordinal.is_empty() {
            return None;
        }
        if ordinal.len() > 1 && ordinal.starts_with('0') {
            return None;
        }
        ordinal.parse().ok()
    }
}

/// Directed stream between two nodes, referenced by index into
/// [`FlowsheetGraph::nodes`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamEdge {
    pub src: usize,
    pub dst: usize,
    pub src_tags: BTreeSet<String>,
    pub dst_tags: BTreeSet<String>,
}

impl StreamEdge {
    pub fn new(src: usize, dst: usize) -> Self {
        Self { src, dst, src_tags: BTreeSet::new(), dst_tags: BTreeSet::new() }
    }

    pub fn with_src_tag(mut self, tag: &str) -> Self {
        self.src_tags.insert(tag.to_string());
        self
    }

    pub fn with_dst_tag(mut self, tag: &str) -> Self {
        self.dst_tags.insert(tag.to_string());
        self
    }

    /// Tags in notation order: outlet-side first, then inlet-side.
    pub fn tags_in_order(&self) -> impl Iterator<Item = &String> {
        self.src_tags.iter().chain(self.dst_tags.iter())
    }
}

/// Directed heterogeneous flowsheet graph.
///
/// Nodes get ids of the form `category-ordinal` when created through
/// [`FlowsheetGraph::add_unit`]; ordinals count up per category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowsheetGraph {
    pub nodes: Vec<UnitNode>,
    pub edges: Vec<StreamEdge>,
    next_ordinal: BTreeMap<String, usize>,
}

impl FlowsheetGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from explicit parts. Ordinal counters continue past the
    /// largest ordinal already present.
    pub fn from_parts(nodes: Vec<UnitNode>, edges: Vec<StreamEdge>) -> Self {
        let mut next_ordinal = BTreeMap::new();
        for node in &nodes {
            if let Some(ord) = node.ordinal() {
                let slot = next_ordinal.entry(node.category.name().to_string()).or_insert(0);
                *slot = (*slot).max(ord + 1);
            }
        }
        Self { nodes, edges, next_ordinal }
    }

    pub fn add_unit(&mut self, category: UnitCategory) -> usize {
        let slot = self.next_ordinal.entry(category.name().to_string()).or_insert(0);
        let id = format!("{}-{}", category.name(), *slot);
        *slot += 1;
        self.nodes.push(UnitNode { id, category, heat_group: None });
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, edge: StreamEdge) -> usize {
        self.edges.push(edge);
        self.edges.len() - 1
    }

    pub fn connect(&mut self, src: usize, dst: usize) -> usize {
        self.add_edge(StreamEdge::new(src, dst))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.dst == node).count()
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.src == node).count()
    }

    /// Edge indices leaving `node`.
    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().enumerate().filter(move |(_, e)| e.src == node).map(|(i, _)| i)
    }

    /// Edge indices entering `node`.
    pub fn in_edges(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().enumerate().filter(move |(_, e)| e.dst == node).map(|(i, _)| i)
    }

    pub fn count_category(&self, category: &UnitCategory) -> usize {
        self.nodes.iter().filter(|n| &n.category == category).count()
    }

    /// Weakly connected components (mass trains), each a sorted list of
    /// node indices, ordered by their smallest node index.
    pub fn mass_trains(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            if e.src >= n || e.dst >= n {
                continue;
            }
            let a = root(&mut parent, e.src);
            let b = root(&mut parent, e.dst);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = root(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups.into_values().collect()
    }

    /// Whether the directed graph has a cycle.
    pub fn has_cycle(&self) -> bool {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            indeg[e.dst] += 1;
        }
        let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(u) = stack.pop() {
            seen += 1;
            for e in self.edges.iter().filter(|e| e.src == u) {
                indeg[e.dst] -= 1;
                if indeg[e.dst] == 0 {
                    stack.push(e.dst);
                }
            }
        }
        seen != n
    }
}
