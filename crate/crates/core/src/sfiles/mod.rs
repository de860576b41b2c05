//! Flowsheet graphs and their SFILES 2.0 string form.
//!
//! Notation summary, as implemented here:
//!
//! * `(name)` is a unit operation; two consecutive units are connected.
//! * `[`...`]` holds a side branch; the last branch of a node is unbracketed.
//! * `<&|`...`&|` holds a branch that flows into the preceding unit; `&`
//!   separates several such branches in one block.
//! * a digit `#` after a unit starts a recycle stream which ends at the unit
//!   carrying `<#`. Numbers above 9 use `%NN` / `<%NN`.
//! * `{tout}` / `{bout}` / `{out}` and `{tin}` / `{bin}` / `{in}` tag the
//!   adjacent stream; `{N}` with a number marks a heat-integration group on
//!   the preceding heat exchanger.
//! * `n|` starts a new mass train.

mod graph;
mod iso;
mod json;
mod parse;
mod serialize;
mod validate;

pub use graph::{
    is_dest_tag, is_source_tag, FlowsheetGraph, StreamEdge, UnitCategory, UnitNode, DEST_TAGS,
    SOURCE_TAGS,
};
pub use iso::isomorphic;
pub use json::{from_json, from_json_value, to_json, to_json_value};
pub use parse::{parse, parse_with_warnings};
pub use serialize::{serialize, serialize_partial};
pub use validate::{validate, Violation};

pub use crate::tokenizer::Mode;

use serde::Serialize;
use thiserror::Error;

use crate::tokenizer::TokenizeError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SfilesError {
    #[error("empty SFILES string")]
    EmptyInput,
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("unbalanced brackets at byte {position}")]
    UnbalancedBrackets { position: usize },
    #[error("recycle {number} at byte {position} has no matching counterpart")]
    UnresolvedRecycle { number: u32, position: usize },
    #[error("unknown unit category {name:?} at byte {position}")]
    UnknownCategory { name: String, position: usize },
    #[error("unknown stream tag {tag:?} at byte {position}")]
    UnknownTag { tag: String, position: usize },
    #[error("misplaced tag at byte {position}")]
    InvalidTagPlacement { position: usize },
    #[error("unsupported token {token:?} at byte {position}")]
    UnsupportedToken { token: String, position: usize },
    #[error("invalid graph: {}", summarize(.0))]
    InvalidGraph(Vec<Violation>),
    #[error("too many recycle streams ({0}); at most 99 can be written")]
    TooManyRecycles(usize),
    #[error("graph JSON schema violation: {0}")]
    SchemaViolation(String),
}

fn summarize(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl SfilesError {
    /// Byte offset in the input string, for errors that have one.
    pub fn position(&self) -> Option<usize> {
        match self {
            SfilesError::Tokenize(e) => Some(e.position()),
            SfilesError::UnbalancedBrackets { position }
            | SfilesError::UnresolvedRecycle { position, .. }
            | SfilesError::UnknownCategory { position, .. }
            | SfilesError::UnknownTag { position, .. }
            | SfilesError::InvalidTagPlacement { position }
            | SfilesError::UnsupportedToken { position, .. } => Some(*position),
            _ => None,
        }
    }

    pub fn is_lexical(&self) -> bool {
        matches!(self, SfilesError::Tokenize(_))
    }
}

/// Something lenient parsing dropped or ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseWarning {
    pub position: usize,
    pub message: String,
}

/// Hand-built reference graphs.
pub mod fixtures {
    use super::{FlowsheetGraph, StreamEdge, UnitCategory};

    /// Two mass trains joined by heat integration, with a recycle from the
    /// splitter below the column back to the mixer.
    pub const TWO_TRAIN_SFILES: &str = "(raw)(hex){1}(r)<&|(raw)(pp)&|(mix)<1(v)(dist)[{tout}(prod)]{bout}(splt)1(prod)n|(raw)(hex){1}(prod)";

    /// The graph encoded by [`TWO_TRAIN_SFILES`], built node by node.
    pub fn two_train_graph() -> FlowsheetGraph {
        use UnitCategory::*;
        let mut g = FlowsheetGraph::new();
        let raw0 = g.add_unit(Raw);
        let raw1 = g.add_unit(Raw);
        let raw2 = g.add_unit(Raw);
        let hex0 = g.add_unit(Hex);
        let hex1 = g.add_unit(Hex);
        let pp = g.add_unit(Pump);
        let r = g.add_unit(Reactor);
        let mix = g.add_unit(Mixer);
        let v = g.add_unit(Valve);
        let dist = g.add_unit(Distillation);
        let splt = g.add_unit(Splitter);
        let prod0 = g.add_unit(Prod);
        let prod1 = g.add_unit(Prod);
        let prod2 = g.add_unit(Prod);
        g.nodes[hex0].heat_group = Some(7);
        g.nodes[hex1].heat_group = Some(7);
        for (a, b) in [(raw0, hex0), (hex0, r), (raw1, pp), (pp, r), (r, mix), (mix, v), (v, dist)] {
            g.connect(a, b);
        }
        g.add_edge(StreamEdge::new(dist, prod0).with_src_tag("tout"));
        g.add_edge(StreamEdge::new(dist, splt).with_src_tag("bout"));
        g.connect(splt, mix);
        g.connect(splt, prod1);
        g.connect(raw2, hex1);
        g.connect(hex1, prod2);
        g
    }
}
