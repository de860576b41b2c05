//! Flowsheet autocompletion: SFILES 2.0 codec, tokenizer, synthetic
//! flowsheet generator, a small decoder-only transformer trained from
//! scratch, decoding strategies, evaluation and an HTTP service.

pub mod decoding;
pub mod evaluation;
pub mod interface;
pub mod service;
pub mod sfiles;
pub mod syngen;
pub mod tokenizer;
pub mod transformer;
