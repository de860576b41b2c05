//! Prefix in, ranked flowsheet completions out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoding::{decode, DecodeConfig, DecodeError};
use crate::sfiles::{self, parse, serialize_partial, to_json_value, validate, SfilesError, Violation};
use crate::tokenizer::{detokenize, tokenize_with_mode, Mode, Skipped, TokenizeError, BOS_ID, EOS_ID};
use crate::transformer::Checkpoint;

#[derive(Debug, Error)]
pub enum InterfaceError {
    #[error("no model loaded")]
    NoModelLoaded,
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("invalid graph: {0}")]
    Graph(SfilesError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionRequest {
    /// Partial SFILES string; empty starts from scratch.
    pub sfiles_prefix: String,
    /// A (partial) graph to serialize and use as the prefix instead.
    pub graph: Option<serde_json::Value>,
    #[serde(flatten)]
    pub decode: DecodeConfig,
    pub return_graphs: bool,
    /// Lenient mode drops characters that are not part of any token.
    pub mode: Mode,
}

impl Default for CompletionRequest {
    fn default() -> Self {
        Self { sfiles_prefix: String::new(), graph: None, decode: DecodeConfig::default(), return_graphs: false, mode: Mode::Strict }
    }
}

impl CompletionRequest {
    pub fn new(prefix: &str, decode: DecodeConfig) -> Self {
        Self { sfiles_prefix: prefix.to_string(), decode, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionItem {
    pub sfiles: String,
    pub log_prob: f64,
    /// The string parses as SFILES.
    pub valid: bool,
    /// Graph rule violations of a parsed string (unreachable units etc.).
    pub violations: Vec<Violation>,
    /// EOS was produced rather than the token budget running out.
    pub finished: bool,
    pub graph: Option<serde_json::Value>,
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionResponse {
    /// The prefix as tokenized (lenient mode may have dropped characters).
    pub prefix: String,
    pub skipped: Vec<Skipped>,
    pub completions: Vec<CompletionItem>,
}

/// Normalised prefix text and what lenient scanning dropped.
pub fn prepare_prefix(req: &CompletionRequest) -> Result<(String, Vec<Skipped>), InterfaceError> {
    if let Some(value) = &req.graph {
        let g = sfiles::from_json_value(value.clone()).map_err(InterfaceError::Graph)?;
        let s = serialize_partial(&g).map_err(InterfaceError::Graph)?;
        return Ok((s, Vec::new()));
    }
    let scanned = tokenize_with_mode(&req.sfiles_prefix, req.mode)?;
    Ok((detokenize(&scanned.tokens), scanned.skipped))
}

/// Scores a completed string: parse, then graph rules.
pub fn assess(sfiles: &str, with_graph: bool) -> (bool, Vec<Violation>, Option<serde_json::Value>, Option<String>) {
    match parse(sfiles, Mode::Strict) {
        Ok(g) => {
            let graph = with_graph.then(|| to_json_value(&g));
            (true, validate(&g), graph, None)
        }
        Err(e) => (false, Vec::new(), None, Some(e.to_string())),
    }
}

/// Tokenize the prefix, decode a continuation with the model, detokenize
/// and try to parse every candidate. Invalid candidates are returned too.
pub fn complete(ckpt: &Checkpoint, req: &CompletionRequest) -> Result<CompletionResponse, InterfaceError> {
    req.decode.validate()?;
    let (prefix, skipped) = prepare_prefix(req)?;
    let mut context = ckpt.vocab.encode(&prefix, true, false)?;
    if context.is_empty() {
        context.push(BOS_ID);
    }
    let outs = decode(&ckpt.params, &context, &req.decode)?;
    let completions = outs
        .into_iter()
        .map(|c| {
            let generated: Vec<u32> = c.ids[context.len()..].iter().copied().take_while(|&t| t != EOS_ID).collect();
            let sfiles = format!("{prefix}{}", ckpt.vocab.decode(&generated));
            let (valid, violations, graph, parse_error) = assess(&sfiles, req.return_graphs);
            CompletionItem { sfiles, log_prob: c.log_prob, valid, violations, finished: c.finished, graph, parse_error }
        })
        .collect();
    Ok(CompletionResponse { prefix, skipped, completions })
}
