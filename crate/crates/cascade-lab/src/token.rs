//! Token sequences, labels, and the vocabulary that maps ids to surface text.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bounded sequence of vocabulary token ids.
///
/// Holds the input `x`, adversarial suffixes, and generated outputs. Token
/// validity against a vocabulary is checked at encode/build time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<u32>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<u32>) -> Self {
        TokenSeq { tokens }
    }

    pub fn empty() -> Self {
        TokenSeq { tokens: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Concatenation `self ∥ other`: both operands' tokens, in order.
    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        let mut tokens = Vec::with_capacity(self.len() + other.len());
        tokens.extend_from_slice(&self.tokens);
        tokens.extend_from_slice(&other.tokens);
        TokenSeq { tokens }
    }

    /// True if `prefix` is a token-for-token prefix of `self`.
    pub fn starts_with(&self, prefix: &TokenSeq) -> bool {
        self.tokens.len() >= prefix.tokens.len()
            && self.tokens[..prefix.tokens.len()] == prefix.tokens[..]
    }

    /// Stable 64-bit FNV-1a hash over the token ids. Used as a table key;
    /// independent of the process hasher so planted fixtures serialize.
    pub fn stable_hash(&self) -> u64 {
        fnv1a(&self.tokens)
    }

    /// Stable hash over the first `n` tokens only.
    pub fn stable_hash_prefix(&self, n: usize) -> u64 {
        let n = n.min(self.tokens.len());
        fnv1a(&self.tokens[..n])
    }
}

fn fnv1a(tokens: &[u32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &t in tokens {
        for b in t.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Ground-truth or predicted label: a class id or a free-form answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Label {
    Class(u32),
    Answer(String),
}

impl Label {
    /// Label equality: exact for classes, normalized exact-match for answers.
    pub fn matches(&self, other: &Label) -> bool {
        match (self, other) {
            (Label::Class(a), Label::Class(b)) => a == b,
            (Label::Answer(a), Label::Answer(b)) => {
                crate::metrics::exact_match(a, b)
            }
            _ => false,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Class(c) => write!(f, "class:{c}"),
            Label::Answer(a) => write!(f, "answer:{a}"),
        }
    }
}

/// Bijection between token ids and surface strings, with reserved unknown
/// and padding ids. Out-of-vocabulary surfaces map to the unknown id rather
/// than erroring: defenses trim text and re-encode, and trimming must never
/// crash encoding.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    index: HashMap<String, u32>,
    unknown: u32,
    padding: u32,
}

pub const UNKNOWN_SURFACE: &str = "<unk>";
pub const PADDING_SURFACE: &str = "<pad>";

impl Vocabulary {
    /// Build from surface strings. `<unk>` and `<pad>` are prepended unless
    /// already present. Duplicate surfaces are a configuration error.
    pub fn new<I, S>(surfaces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = Vec::new();
        let mut seen: HashMap<String, ()> = HashMap::new();
        for special in [UNKNOWN_SURFACE, PADDING_SURFACE] {
            all.push(special.to_string());
            seen.insert(special.to_string(), ());
        }
        for s in surfaces {
            let s = s.into();
            if seen.insert(s.clone(), ()).is_some() {
                if s == UNKNOWN_SURFACE || s == PADDING_SURFACE {
                    continue;
                }
                return Err(Error::config(format!("duplicate surface {s:?}")));
            }
            all.push(s);
        }
        let index = all
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            surfaces: all,
            index,
            unknown: 0,
            padding: 1,
        })
    }

    /// Plain-text vocabulary file: one surface per line, line number = id.
    pub fn from_lines(text: &str) -> Result<Self> {
        Vocabulary::new(text.lines().map(|l| l.to_string()))
    }

    /// Synthetic vocabulary `w0..w{n-1}` plus the reserved specials.
    pub fn synthetic(n: usize) -> Self {
        Vocabulary::new((0..n).map(|i| format!("w{i}"))).expect("generated surfaces are unique")
    }

    pub fn size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn unknown_id(&self) -> u32 {
        self.unknown
    }

    pub fn padding_id(&self) -> u32 {
        self.padding
    }

    pub fn id_of(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn surface_of(&self, id: u32) -> Option<&str> {
        self.surfaces.get(id as usize).map(|s| s.as_str())
    }

    /// Whitespace-split surfaces mapped to ids; unknown surfaces map to the
    /// unknown id.
    pub fn encode(&self, text: &str) -> TokenSeq {
        let tokens = text
            .split_whitespace()
            .map(|w| self.id_of(w).unwrap_or(self.unknown))
            .collect();
        TokenSeq { tokens }
    }

    /// Surfaces joined by single spaces. Ids past the vocabulary render as
    /// the unknown surface.
    pub fn decode(&self, seq: &TokenSeq) -> String {
        seq.tokens
            .iter()
            .map(|&t| self.surface_of(t).unwrap_or(UNKNOWN_SURFACE))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Validate that every id in `seq` is in range.
    pub fn check(&self, seq: &TokenSeq) -> Result<()> {
        for &t in &seq.tokens {
            if t as usize >= self.size() {
                return Err(Error::config(format!(
                    "token id {t} out of range for vocabulary of size {}",
                    self.size()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_empty_is_empty() {
        let v = Vocabulary::synthetic(4);
        assert!(v.encode("").is_empty());
    }

    #[test]
    fn encode_repeated_token_identity() {
        let v = Vocabulary::new(["gold", "rises"]).unwrap();
        let gold = v.id_of("gold").unwrap();
        let rises = v.id_of("rises").unwrap();
        assert_eq!(v.encode("gold rises gold").tokens, vec![gold, rises, gold]);
    }

    #[test]
    fn unknown_surface_maps_to_unknown_id() {
        let v = Vocabulary::new(["gold"]).unwrap();
        let seq = v.encode("gold xyzzy");
        assert_eq!(seq.tokens[1], v.unknown_id());
    }

    #[test]
    fn decode_roundtrip_in_vocab() {
        let v = Vocabulary::new(["a", "b", "c"]).unwrap();
        let seq = v.encode("a  c   b");
        assert_eq!(v.decode(&seq), "a c b");
    }

    #[test]
    fn concat_preserves_both_operands() {
        let a = TokenSeq::new(vec![1, 2]);
        let b = TokenSeq::new(vec![3]);
        let c = a.concat(&b);
        assert_eq!(c.tokens, vec![1, 2, 3]);
        assert!(c.starts_with(&a));
    }

    #[test]
    fn duplicate_surface_rejected() {
        assert!(Vocabulary::new(["a", "a"]).is_err());
    }
}
