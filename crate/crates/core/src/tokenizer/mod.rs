//! Lexical analysis of SFILES 2.0 strings.
//!
//! The scanner reproduces left-to-right matching of the pattern
//!
//! ```text
//! (\(.*?\)|\{.*?\}|\%\([0-9]{3}\)|\%[0-9]{2}|\]|\[|\<.?[0-9]|\<\&\||(?<!\<)\&\||n\||(?<!\&)(?<!n)\||\&(?!\|)|\/[0-9]|[0-9])
//! ```
//!
//! including its look-around constraints. Alternatives are tried in order at
//! each position and characters matched by no alternative are stray.

mod vocab;

pub use vocab::{TokenSequence, Vocabulary, BOS_ID, EOS_ID, PAD_ID, SPECIAL_TOKENS, UNK_ID, UNK_TEXT};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Unit,
    Tag,
    RecycleRef,
    RecycleAnchor,
    BranchOpen,
    BranchClose,
    ConvergeOpen,
    ConvergeClose,
    NewTrain,
    Pipe,
    Ampersand,
    Slash,
    Digit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    /// Byte offset of the token in the scanned string.
    pub offset: usize,
}

impl Token {
    /// Text between the delimiters of a unit `(...)` or tag `{...}` token.
    pub fn inner(&self) -> &str {
        match self.kind {
            TokenKind::Unit | TokenKind::Tag => &self.text[1..self.text.len() - 1],
            _ => &self.text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("stray character {character:?} at byte {position}")]
    StrayCharacter { position: usize, character: char },
    #[error("whitespace at byte {position}")]
    Whitespace { position: usize },
}

impl TokenizeError {
    pub fn position(&self) -> usize {
        match self {
            TokenizeError::StrayCharacter { position, .. } | TokenizeError::Whitespace { position } => {
                *position
            }
        }
    }
}

/// A character dropped by lenient scanning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub position: usize,
    pub character: char,
}

#[derive(Debug, Clone, Default)]
pub struct Tokenized {
    pub tokens: Vec<Token>,
    pub skipped: Vec<Skipped>,
}

/// Strict tokenization: every character must belong to a token.
pub fn tokenize(s: &str) -> Result<Vec<Token>, TokenizeError> {
    tokenize_with_mode(s, Mode::Strict).map(|t| t.tokens)
}

pub fn tokenize_with_mode(s: &str, mode: Mode) -> Result<Tokenized, TokenizeError> {
    let chars: Vec<(usize, char)> = s.char_indices().collect();
    let mut out = Tokenized::default();
    let mut i = 0;
    while i < chars.len() {
        match match_at(&chars, i) {
            Some((len, kind)) => {
                let start = chars[i].0;
                let end = chars.get(i + len).map_or(s.len(), |c| c.0);
                out.tokens.push(Token { text: s[start..end].to_string(), kind, offset: start });
                i += len;
            }
            None => {
                let (position, character) = chars[i];
                if mode == Mode::Strict {
                    if character.is_whitespace() {
                        return Err(TokenizeError::Whitespace { position });
                    }
                    return Err(TokenizeError::StrayCharacter { position, character });
                }
                out.skipped.push(Skipped { position, character });
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Concatenates token texts.
pub fn detokenize<'a, I>(tokens: I) -> String
where
    I: IntoIterator<Item = &'a Token>,
{
    tokens.into_iter().map(|t| t.text.as_str()).collect()
}

/// Token texts only.
pub fn token_texts(s: &str) -> Result<Vec<String>, TokenizeError> {
    Ok(tokenize(s)?.into_iter().map(|t| t.text).collect())
}

fn is_digit(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_ascii_digit())
}

/// Tries each alternative at char index `i`; returns the match length in chars.
fn match_at(chars: &[(usize, char)], i: usize) -> Option<(usize, TokenKind)> {
    let at = |k: usize| chars.get(k).map(|c| c.1);
    let prev = if i == 0 { None } else { at(i - 1) };
    let c = at(i)?;
    match c {
        '(' | '{' => {
            let close = if c == '(' { ')' } else { '}' };
            let kind = if c == '(' { TokenKind::Unit } else { TokenKind::Tag };
            // `.` does not cross line breaks
            let mut j = i + 1;
            while let Some(d) = at(j) {
                if d == close {
                    return Some((j - i + 1, kind));
                }
                if d == '\n' {
                    break;
                }
                j += 1;
            }
            None
        }
        '%' => {
            if at(i + 1) == Some('(')
                && is_digit(at(i + 2))
                && is_digit(at(i + 3))
                && is_digit(at(i + 4))
                && at(i + 5) == Some(')')
            {
                Some((6, TokenKind::RecycleAnchor))
            } else if is_digit(at(i + 1)) && is_digit(at(i + 2)) {
                Some((3, TokenKind::RecycleAnchor))
            } else {
                None
            }
        }
        ']' => Some((1, TokenKind::BranchClose)),
        '[' => Some((1, TokenKind::BranchOpen)),
        '<' => {
            // `.?` is greedy, so the three-character form wins when possible.
            if at(i + 1).is_some_and(|d| d != '\n') && is_digit(at(i + 2)) {
                Some((3, TokenKind::RecycleRef))
            } else if is_digit(at(i + 1)) {
                Some((2, TokenKind::RecycleRef))
            } else if at(i + 1) == Some('&') && at(i + 2) == Some('|') {
                Some((3, TokenKind::ConvergeOpen))
            } else {
                None
            }
        }
        '&' => {
            if at(i + 1) == Some('|') {
                if prev != Some('<') {
                    Some((2, TokenKind::ConvergeClose))
                } else {
                    None
                }
            } else {
                Some((1, TokenKind::Ampersand))
            }
        }
        'n' if at(i + 1) == Some('|') => Some((2, TokenKind::NewTrain)),
        '|' if prev != Some('&') && prev != Some('n') => Some((1, TokenKind::Pipe)),
        '/' if is_digit(at(i + 1)) => Some((2, TokenKind::Slash)),
        d if d.is_ascii_digit() => Some((1, TokenKind::Digit)),
        _ => None,
    }
}
