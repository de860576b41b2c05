use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, TokenizeError};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const UNK_TEXT: &str = "<unk>";
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", UNK_TEXT];

/// Integer ids of one encoded string.
pub type TokenSequence = Vec<u32>;

/// Bijective token/id map. Ids 0-3 are the special tokens; corpus tokens
/// follow in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    tokens: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("vocabulary file must start with the special tokens {SPECIAL_TOKENS:?}")]
    MissingSpecials,
    #[error("duplicate token {0:?} in vocabulary file")]
    Duplicate(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Result<Self, VocabError> {
        if corpus.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        let mut distinct = BTreeSet::new();
        for s in corpus {
            for tok in tokenize(s.as_ref())? {
                distinct.insert(tok.text);
            }
        }
        Ok(Self::from_corpus_tokens(distinct))
    }

    fn from_corpus_tokens(tokens: BTreeSet<String>) -> Self {
        let id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(tokens).collect();
        Self::from_ordered(id_to_token)
    }

    fn from_ordered(id_to_token: Vec<String>) -> Self {
        let token_to_id =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { id_to_token, token_to_id }
    }

    /// Rebuilds a vocabulary from tokens listed in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b)
        {
            return Err(VocabError::MissingSpecials);
        }
        let mut seen = BTreeSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        Ok(Self::from_ordered(tokens))
    }

    /// Appends tokens of `corpus` that are not yet present, keeping existing
    /// ids stable. Returns the number of new entries.
    pub fn extend<S: AsRef<str>>(&mut self, corpus: &[S]) -> Result<usize, VocabError> {
        let mut fresh = BTreeSet::new();
        for s in corpus {
            for tok in tokenize(s.as_ref())? {
                if !self.token_to_id.contains_key(&tok.text) {
                    fresh.insert(tok.text);
                }
            }
        }
        let added = fresh.len();
        for t in fresh {
            self.token_to_id.insert(t.clone(), self.id_to_token.len() as u32);
            self.id_to_token.push(t);
        }
        Ok(added)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, s: &str, add_bos: bool, add_eos: bool) -> Result<TokenSequence, TokenizeError> {
        let toks = tokenize(s)?;
        let mut ids = Vec::with_capacity(toks.len() + 2);
        if add_bos {
            ids.push(BOS_ID);
        }
        ids.extend(toks.iter().map(|t| self.id(&t.text).unwrap_or(UNK_ID)));
        if add_eos {
            ids.push(EOS_ID);
        }
        Ok(ids)
    }

    /// Concatenates token texts, dropping PAD/BOS/EOS. UNK and ids outside the
    /// vocabulary render as `<unk>`.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                PAD_ID | BOS_ID | EOS_ID => {}
                _ => out.push_str(self.token(id).filter(|_| id != UNK_ID).unwrap_or(UNK_TEXT)),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabFile { tokens: self.id_to_token.clone() })
            .expect("string list serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let file: VocabFile = serde_json::from_str(text)?;
        Self::from_tokens(file.tokens)
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_corpus_has_six_entries() {
        let v = Vocabulary::build(&["(raw)(prod)"]).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.tokens()[..4], SPECIAL_TOKENS);
        // sorted after the specials
        assert_eq!(v.id("(prod)"), Some(4));
        assert_eq!(v.id("(raw)"), Some(5));
    }

    #[test]
    fn duplicates_do_not_change_vocabulary() {
        let one = Vocabulary::build(&["(raw)(hex)(prod)"]).unwrap();
        let two = Vocabulary::build(&["(raw)(hex)(prod)", "(raw)(hex)(prod)"]).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(Vocabulary::build(&empty), Err(VocabError::EmptyCorpus)));
    }

    #[test]
    fn encode_with_specials() {
        let v = Vocabulary::build(&["(raw)(prod)"]).unwrap();
        let ids = v.encode("(raw)(prod)", true, true).unwrap();
        assert_eq!(ids, vec![BOS_ID, v.id("(raw)").unwrap(), v.id("(prod)").unwrap(), EOS_ID]);
        assert_eq!(v.decode(&ids), "(raw)(prod)");
    }

    #[test]
    fn unseen_token_maps_to_unk() {
        let v = Vocabulary::build(&["(raw)(prod)"]).unwrap();
        let ids = v.encode("(raw)(xyz)", false, false).unwrap();
        assert_eq!(ids[1], UNK_ID);
        assert_eq!(v.decode(&ids), "(raw)<unk>");
    }

    #[test]
    fn json_round_trip_and_schema() {
        let v = Vocabulary::build(&["(raw)(hex){1}(prod)"]).unwrap();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(v, back);
        assert!(Vocabulary::from_json(r#"{"tokens":["(raw)"]}"#).is_err());
        assert!(Vocabulary::from_json(r#"{"tokens":["<pad>","<bos>","<eos>","<unk>"],"x":1}"#).is_err());
    }

    #[test]
    fn extension_keeps_existing_ids() {
        let mut v = Vocabulary::build(&["(raw)(prod)"]).unwrap();
        let before = v.clone();
        let added = v.extend(&["(raw)(dry)(prod)"]).unwrap();
        assert_eq!(added, 1);
        assert_eq!(v.id("(raw)"), before.id("(raw)"));
        assert_eq!(v.id("(dry)"), Some(6));
    }
}
