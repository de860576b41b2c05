use std::collections::BTreeMap;

use super::graph::{is_dest_tag, is_source_tag, FlowsheetGraph, StreamEdge, UnitCategory};
use super::{ParseWarning, SfilesError};
use crate::tokenizer::{tokenize_with_mode, Mode, Token, TokenKind};

/// Parses a complete SFILES 2.0 string into a graph.
pub fn parse(s: &str, mode: Mode) -> Result<FlowsheetGraph, SfilesError> {
    parse_with_warnings(s, mode).map(|(g, _)| g)
}

/// Like [`parse`], also returning what lenient mode dropped.
pub fn parse_with_warnings(
    s: &str,
    mode: Mode,
) -> Result<(FlowsheetGraph, Vec<ParseWarning>), SfilesError> {
    if s.is_empty() {
        return Err(SfilesError::EmptyInput);
    }
    let scanned = tokenize_with_mode(s, mode)?;
    let mut warnings: Vec<ParseWarning> = scanned
        .skipped
        .iter()
        .map(|k| ParseWarning {
            position: k.position,
            message: format!("dropped stray character {:?}", k.character),
        })
        .collect();
    let tokens = merge_long_refs(scanned.tokens);
    let mut parser = Parser::new(mode);
    for tok in &tokens {
        parser.step(tok, &mut warnings)?;
    }
    let graph = parser.finish()?;
    Ok((graph, warnings))
}

/// `<%1` followed by a digit is the two-digit reference `<%10` split by the
/// lexer; rejoin them so the parser sees one reference.
fn merge_long_refs(tokens: Vec<Token>) -> Vec<Token> {
    let mut out: Vec<Token> = Vec::with_capacity(tokens.len());
    let mut iter = tokens.into_iter().peekable();
    while let Some(tok) = iter.next() {
        if tok.kind == TokenKind::RecycleRef && tok.text.starts_with("<%") {
            if let Some(next) = iter.peek() {
                if next.kind == TokenKind::Digit && next.offset == tok.offset + tok.text.len() {
                    let digit = iter.next().expect("peeked");
                    out.push(Token {
                        text: format!("{}{}", tok.text, digit.text),
                        kind: TokenKind::RecycleRef,
                        offset: tok.offset,
                    });
                    continue;
                }
            }
        }
        out.push(tok);
    }
    out
}

enum Frame {
    Branch { origin: usize },
    Converge { target: usize },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum RecycleEnd {
    /// `#`: the stream leaves this node.
    Anchor,
    /// `<#`: the stream enters this node.
    Ref,
}

struct OpenRecycle {
    node: usize,
    end: RecycleEnd,
    tags: Vec<String>,
}

struct Parser {
    mode: Mode,
    graph: FlowsheetGraph,
    prev: Option<usize>,
    pending: Vec<(String, usize)>,
    stack: Vec<(Frame, usize)>,
    open: BTreeMap<u32, (OpenRecycle, usize)>,
}

impl Parser {
    fn new(mode: Mode) -> Self {
        Self {
            mode,
            graph: FlowsheetGraph::new(),
            prev: None,
            pending: Vec::new(),
            stack: Vec::new(),
            open: BTreeMap::new(),
        }
    }

    fn require_prev(&self, position: usize) -> Result<usize, SfilesError> {
        self.prev.ok_or(SfilesError::InvalidTagPlacement { position })
    }

    fn require_no_pending(&self) -> Result<(), SfilesError> {
        match self.pending.first() {
            Some((_, position)) => Err(SfilesError::InvalidTagPlacement { position: *position }),
            None => Ok(()),
        }
    }

    fn take_tags(&mut self) -> Vec<String> {
        self.pending.drain(..).map(|(t, _)| t).collect()
    }

    fn edge_with_tags(&mut self, src: usize, dst: usize, tags: &[String]) {
        let mut edge = StreamEdge::new(src, dst);
        for tag in tags {
            if is_dest_tag(tag) {
                edge.dst_tags.insert(tag.clone());
            } else {
                edge.src_tags.insert(tag.clone());
            }
        }
        self.graph.add_edge(edge);
    }

    fn step(&mut self, tok: &Token, warnings: &mut Vec<ParseWarning>) -> Result<(), SfilesError> {
        let position = tok.offset;
        match tok.kind {
            TokenKind::Unit => {
                let name = tok.inner();
                let category = match self.mode {
                    Mode::Strict => UnitCategory::from_known(name).ok_or_else(|| {
                        SfilesError::UnknownCategory { name: name.to_string(), position }
                    })?,
                    Mode::Lenient => UnitCategory::from_name_lenient(name),
                };
                let node = self.graph.add_unit(category);
                match self.prev {
                    Some(prev) => {
                        let tags = self.take_tags();
                        self.edge_with_tags(prev, node, &tags);
                    }
                    None => self.require_no_pending()?,
                }
                self.prev = Some(node);
            }
            TokenKind::Tag => {
                let inner = tok.inner();
                let prev = self.require_prev(position)?;
                if !inner.is_empty() && inner.bytes().all(|b| b.is_ascii_digit()) {
                    let group: u32 =
                        inner.parse().map_err(|_| SfilesError::InvalidTagPlacement { position })?;
                    let node = &mut self.graph.nodes[prev];
                    if !self.pending.is_empty()
                        || node.category != UnitCategory::Hex
                        || node.heat_group.is_some()
                    {
                        return Err(SfilesError::InvalidTagPlacement { position });
                    }
                    node.heat_group = Some(group);
                } else {
                    if self.mode == Mode::Strict && !is_source_tag(inner) && !is_dest_tag(inner) {
                        return Err(SfilesError::UnknownTag { tag: inner.to_string(), position });
                    }
                    self.pending.push((inner.to_string(), position));
                }
            }
            TokenKind::BranchOpen => {
                let origin = self.prev.ok_or(SfilesError::UnbalancedBrackets { position })?;
                self.require_no_pending()?;
                self.stack.push((Frame::Branch { origin }, position));
            }
            TokenKind::BranchClose => {
                self.require_no_pending()?;
                match self.stack.pop() {
                    Some((Frame::Branch { origin }, _)) => self.prev = Some(origin),
                    _ => return Err(SfilesError::UnbalancedBrackets { position }),
                }
            }
            TokenKind::ConvergeOpen => {
                let target = self.prev.ok_or(SfilesError::UnbalancedBrackets { position })?;
                self.require_no_pending()?;
                self.stack.push((Frame::Converge { target }, position));
                self.prev = None;
            }
            TokenKind::Ampersand | TokenKind::ConvergeClose => {
                let target = match self.stack.last() {
                    Some((Frame::Converge { target }, _)) => *target,
                    _ => return Err(SfilesError::UnbalancedBrackets { position }),
                };
                let last = self.prev.ok_or(SfilesError::UnbalancedBrackets { position })?;
                let tags = self.take_tags();
                self.edge_with_tags(last, target, &tags);
                if tok.kind == TokenKind::ConvergeClose {
                    self.stack.pop();
                    self.prev = Some(target);
                } else {
                    self.prev = None;
                }
            }
            TokenKind::NewTrain => {
                if let Some((_, open_at)) = self.stack.last() {
                    return Err(SfilesError::UnbalancedBrackets { position: *open_at });
                }
                self.require_no_pending()?;
                if self.prev.is_none() {
                    return Err(SfilesError::UnsupportedToken { token: tok.text.clone(), position });
                }
                self.prev = None;
            }
            TokenKind::RecycleRef | TokenKind::RecycleAnchor | TokenKind::Digit => {
                let node = self.require_prev(position)?;
                let number = recycle_number(tok).ok_or_else(|| SfilesError::UnsupportedToken {
                    token: tok.text.clone(),
                    position,
                })?;
                let end = if tok.kind == TokenKind::RecycleRef {
                    RecycleEnd::Ref
                } else {
                    RecycleEnd::Anchor
                };
                let tags = self.take_tags();
                self.recycle(number, node, end, tags, position)?;
            }
            TokenKind::Pipe | TokenKind::Slash => {
                if self.mode == Mode::Strict {
                    return Err(SfilesError::UnsupportedToken { token: tok.text.clone(), position });
                }
                warnings.push(ParseWarning {
                    position,
                    message: format!("ignored unsupported token {:?}", tok.text),
                });
            }
        }
        Ok(())
    }

    fn recycle(
        &mut self,
        number: u32,
        node: usize,
        end: RecycleEnd,
        mut tags: Vec<String>,
        position: usize,
    ) -> Result<(), SfilesError> {
        match self.open.remove(&number) {
            Some((open, _)) if open.end != end => {
                tags.extend(open.tags);
                let (src, dst) = match end {
                    RecycleEnd::Anchor => (node, open.node),
                    RecycleEnd::Ref => (open.node, node),
                };
                self.edge_with_tags(src, dst, &tags);
                Ok(())
            }
            Some(_) => Err(SfilesError::UnresolvedRecycle { number, position }),
            None => {
                self.open.insert(number, (OpenRecycle { node, end, tags }, position));
                Ok(())
            }
        }
    }

    fn finish(self) -> Result<FlowsheetGraph, SfilesError> {
        if let Some((_, position)) = self.stack.last() {
            return Err(SfilesError::UnbalancedBrackets { position: *position });
        }
        if let Some((&number, (_, position))) = self.open.iter().next() {
            return Err(SfilesError::UnresolvedRecycle { number, position: *position });
        }
        if let Some((_, position)) = self.pending.first() {
            return Err(SfilesError::InvalidTagPlacement { position: *position });
        }
        if self.graph.nodes.is_empty() {
            return Err(SfilesError::EmptyInput);
        }
        Ok(self.graph)
    }
}

fn recycle_number(tok: &Token) -> Option<u32> {
    let digits = match tok.kind {
        TokenKind::Digit => tok.text.as_str(),
        TokenKind::RecycleAnchor => {
            let rest = tok.text.strip_prefix('%')?;
            rest.strip_prefix('(').and_then(|r| r.strip_suffix(')')).unwrap_or(rest)
        }
        TokenKind::RecycleRef => {
            let rest = tok.text.strip_prefix('<')?;
            rest.strip_prefix('%').unwrap_or(rest)
        }
        _ => return None,
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfiles::fixtures;

    fn strict(s: &str) -> FlowsheetGraph {
        parse(s, Mode::Strict).unwrap_or_else(|e| panic!("{s}: {e}"))
    }

    fn edge(g: &FlowsheetGraph, src: &str, dst: &str) -> Option<StreamEdge> {
        let (a, b) = (g.find(src)?, g.find(dst)?);
        g.edges.iter().find(|e| e.src == a && e.dst == b).cloned()
    }

    #[test]
    fn minimal_sequence() {
        let g = strict("(raw)(prod)");
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert!(edge(&g, "raw-0", "prod-0").is_some());
    }

    #[test]
    fn two_train_example_matches_graph() {
        let g = strict(fixtures::TWO_TRAIN_SFILES);
        assert_eq!(g.node_count(), 14);
        assert_eq!(g.edge_count(), 13);
        assert_eq!(g.mass_trains().len(), 2);
        assert!(edge(&g, "splt-0", "mix-0").is_some());
        assert!(edge(&g, "pp-0", "r-0").is_some());
        assert!(edge(&g, "r-0", "mix-0").is_some());
        let top = edge(&g, "dist-0", "prod-0").unwrap();
        assert!(top.src_tags.contains("tout"));
        let bottom = edge(&g, "dist-0", "splt-0").unwrap();
        assert!(bottom.src_tags.contains("bout"));
        let hex0 = &g.nodes[g.find("hex-0").unwrap()];
        let hex1 = &g.nodes[g.find("hex-1").unwrap()];
        assert_eq!(hex0.heat_group, Some(1));
        assert_eq!(hex1.heat_group, Some(1));
        assert!(crate::sfiles::isomorphic(&g, &fixtures::two_train_graph()));
    }

    #[test]
    fn absorber_listing_has_four_streams() {
        let s = "(raw)(mix)<1(r){bin}(abs)<&|(raw){tin}&|[{tout}(prod)]{bout}(dist)[{tout}(prod)]{bout}(dist){tout}1{bout}(prod)";
        let g = strict(s);
        let abs = g.find("abs-0").unwrap();
        assert_eq!(g.in_degree(abs), 2);
        assert_eq!(g.out_degree(abs), 2);
        let recycle = edge(&g, "dist-1", "mix-0").unwrap();
        assert!(recycle.src_tags.contains("tout"));
        let feed = edge(&g, "raw-1", "abs-0").unwrap();
        assert!(feed.dst_tags.contains("tin"));
        assert!(edge(&g, "r-0", "abs-0").unwrap().dst_tags.contains("bin"));
    }

    #[test]
    fn presentation_characters() {
        let pasted = "(raw)(mix)<1(r){bin}(abs)@<&|(raw)={tin}=&|[={tout}=(prod)]={bout}=(dist)[{tout}(prod)]{bout}(dist){tout}=1={bout}(prod)@";
        assert!(matches!(parse(pasted, Mode::Strict), Err(SfilesError::Tokenize(_))));
        let (g, warnings) = parse_with_warnings(pasted, Mode::Lenient).unwrap();
        assert_eq!(g.node_count(), 10);
        assert_eq!(warnings.len(), 10);
    }

    #[test]
    fn error_cases() {
        assert!(matches!(parse("", Mode::Strict), Err(SfilesError::EmptyInput)));
        assert!(matches!(parse("(raw)[(prod)", Mode::Strict), Err(SfilesError::UnbalancedBrackets { .. })));
        assert!(matches!(parse("(raw)](prod)", Mode::Strict), Err(SfilesError::UnbalancedBrackets { .. })));
        assert!(matches!(parse("(raw)<&|(raw)", Mode::Strict), Err(SfilesError::UnbalancedBrackets { .. })));
        assert!(matches!(parse("(raw)(mix)<1(prod)", Mode::Strict), Err(SfilesError::UnresolvedRecycle { number: 1, .. })));
        assert!(matches!(parse("(raw)1(mix)1(prod)", Mode::Strict), Err(SfilesError::UnresolvedRecycle { number: 1, .. })));
        assert!(matches!(parse("(raw)(foo)(prod)", Mode::Strict), Err(SfilesError::UnknownCategory { .. })));
        assert!(parse("(raw)(foo)(prod)", Mode::Lenient).is_ok());
        assert!(matches!(parse("{tout}(raw)(prod)", Mode::Strict), Err(SfilesError::InvalidTagPlacement { .. })));
        assert!(matches!(parse("(raw)(prod){tout}", Mode::Strict), Err(SfilesError::InvalidTagPlacement { .. })));
        assert!(matches!(parse("(raw){1}(prod)", Mode::Strict), Err(SfilesError::InvalidTagPlacement { .. })));
        assert!(matches!(parse("(raw)(hex){up}(prod)", Mode::Strict), Err(SfilesError::UnknownTag { .. })));
        assert!(matches!(parse("(raw)@(prod)", Mode::Strict), Err(SfilesError::Tokenize(_))));
    }

    #[test]
    fn anchor_before_reference_also_resolves() {
        let g = strict("(raw)(dist)[{tout}1(prod)]{bout}(mix)<1(prod)");
        let tagged: Vec<_> = g
            .edges
            .iter()
            .filter(|e| g.nodes[e.src].id == "dist-0" && g.nodes[e.dst].id == "mix-0")
            .map(|e| e.src_tags.iter().cloned().collect::<Vec<_>>())
            .collect();
        assert_eq!(tagged, vec![vec!["bout".to_string()], vec!["tout".to_string()]]);
    }

    #[test]
    fn two_digit_recycles() {
        let g = strict("(raw)(mix)<%12(r)(splt)%12(prod)");
        assert!(edge(&g, "splt-0", "mix-0").is_some());
    }

    #[test]
    fn ampersand_separates_incoming_branches() {
        let g = strict("(raw)(mix)<&|(raw)&(raw)&|(prod)");
        let mix = g.find("mix-0").unwrap();
        assert_eq!(g.in_degree(mix), 3);
    }
}
