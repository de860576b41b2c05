use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::graph::{FlowsheetGraph, StreamEdge, UnitCategory, UnitNode};
use super::SfilesError;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    category: String,
    #[serde(default)]
    heat_group: Option<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    src: String,
    dst: String,
    #[serde(default)]
    src_tags: BTreeSet<String>,
    #[serde(default)]
    dst_tags: BTreeSet<String>,
}

fn to_doc(g: &FlowsheetGraph) -> GraphDoc {
    GraphDoc {
        nodes: g
            .nodes
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                category: n.category.name().to_string(),
                heat_group: n.heat_group,
            })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|e| EdgeDoc {
                src: g.nodes[e.src].id.clone(),
                dst: g.nodes[e.dst].id.clone(),
                src_tags: e.src_tags.clone(),
                dst_tags: e.dst_tags.clone(),
            })
            .collect(),
    }
}

pub fn to_json_value(g: &FlowsheetGraph) -> serde_json::Value {
    serde_json::to_value(to_doc(g)).expect("graph document serializes")
}

pub fn to_json(g: &FlowsheetGraph) -> Vec<u8> {
    serde_json::to_vec(&to_doc(g)).expect("graph document serializes")
}

pub fn from_json(bytes: &[u8]) -> Result<FlowsheetGraph, SfilesError> {
    let doc: GraphDoc =
        serde_json::from_slice(bytes).map_err(|e| SfilesError::SchemaViolation(e.to_string()))?;
    from_doc(doc)
}

/// Graph from an already-decoded JSON value.
pub fn from_json_value(value: serde_json::Value) -> Result<FlowsheetGraph, SfilesError> {
    let doc: GraphDoc =
        serde_json::from_value(value).map_err(|e| SfilesError::SchemaViolation(e.to_string()))?;
    from_doc(doc)
}

fn from_doc(doc: GraphDoc) -> Result<FlowsheetGraph, SfilesError> {
    if doc.nodes.is_empty() {
        return Err(SfilesError::SchemaViolation("node list is empty".into()));
    }
    let mut index = HashMap::new();
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for (i, n) in doc.nodes.into_iter().enumerate() {
        if index.insert(n.id.clone(), i).is_some() {
            return Err(SfilesError::SchemaViolation(format!("duplicate node id {:?}", n.id)));
        }
        nodes.push(UnitNode {
            id: n.id,
            category: UnitCategory::from_name_lenient(&n.category),
            heat_group: n.heat_group,
        });
    }
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| SfilesError::SchemaViolation(format!("edge references unknown node {id:?}")))
    };
    let mut edges = Vec::with_capacity(doc.edges.len());
    for e in doc.edges {
        edges.push(StreamEdge {
            src: lookup(&e.src)?,
            dst: lookup(&e.dst)?,
            src_tags: e.src_tags,
            dst_tags: e.dst_tags,
        });
    }
    Ok(FlowsheetGraph::from_parts(nodes, edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfiles::fixtures;

    #[test]
    fn round_trip_is_lossless() {
        let g = fixtures::two_train_graph();
        let back = from_json(&to_json(&g)).unwrap();
        assert_eq!(back.nodes, g.nodes);
        assert_eq!(back.edges, g.edges);
    }

    #[test]
    fn empty_node_list_rejected() {
        let err = from_json(br#"{"nodes":[],"edges":[]}"#).unwrap_err();
        assert!(matches!(err, SfilesError::SchemaViolation(_)));
    }

    #[test]
    fn unknown_field_rejected() {
        let doc = br#"{"nodes":[{"id":"raw-0","category":"raw","heat_group":null,"color":"red"}],"edges":[]}"#;
        assert!(matches!(from_json(doc), Err(SfilesError::SchemaViolation(_))));
        let doc = br#"{"nodes":[{"id":"raw-0","category":"raw"}],"edges":[],"name":"x"}"#;
        assert!(matches!(from_json(doc), Err(SfilesError::SchemaViolation(_))));
    }

    #[test]
    fn field_order_is_irrelevant() {
        let doc = br#"{"edges":[{"dst_tags":[],"dst":"prod-0","src_tags":["tout"],"src":"raw-0"}],
                       "nodes":[{"heat_group":null,"category":"raw","id":"raw-0"},{"category":"prod","id":"prod-0","heat_group":null}]}"#;
        let g = from_json(doc).unwrap();
        assert_eq!(g.edges[0].src_tags.len(), 1);
    }

    #[test]
    fn dangling_reference_rejected() {
        let doc = br#"{"nodes":[{"id":"raw-0","category":"raw","heat_group":null}],"edges":[{"src":"raw-0","dst":"x","src_tags":[],"dst_tags":[]}]}"#;
        assert!(matches!(from_json(doc), Err(SfilesError::SchemaViolation(_))));
    }
}
