//! Closed vocabulary with reserved sentence and unknown markers.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Token id within a [`Vocabulary`].
pub type TokenId = u32;

/// Bidirectional token/id map.
///
/// Ids 0, 1 and 2 are always `<unk>`, `<s>` and `</s>`; ordinary words follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub const UNK_ID: TokenId = 0;
    pub const BOS_ID: TokenId = 1;
    pub const EOS_ID: TokenId = 2;

    /// Builds a vocabulary from ordinary words in the given order. Reserved
    /// markers are placed first; repeated or reserved entries in `words` are
    /// skipped.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for marker in [UNK, BOS, EOS] {
            vocab.push(marker.to_string());
        }
        for word in words {
            let word = word.as_ref();
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::arg(format!("invalid vocabulary token {word:?}")));
            }
            if !vocab.index.contains_key(word) {
                vocab.push(word.to_string());
            }
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String) {
        let id = self.tokens.len() as TokenId;
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
    }

    /// Number of tokens including the three markers.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Maps a token to its id, sending out-of-vocabulary tokens to `<unk>`.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids of every token that can be predicted, i.e. all but `<s>`.
    pub fn predictable_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len() as TokenId).filter(|&id| id != Self::BOS_ID)
    }

    /// Maps one whitespace-tokenized sentence to ids.
    pub fn encode_sentence(&self, line: &str) -> Vec<TokenId> {
        line.split_whitespace().map(|t| self.id_or_unk(t)).collect()
    }

    /// One token per line, in id order.
    pub fn write<W: std::io::Write>(&self, mut sink: W) -> Result<()> {
        for token in &self.tokens {
            writeln!(sink, "{token}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self> {
        let mut words = Vec::new();
        for (lineno, line) in source.lines().enumerate() {
            let line = line?;
            let token = line.trim();
            if token.is_empty() {
                continue;
            }
            if token.contains(char::is_whitespace) {
                return Err(Error::parse(lineno + 1, "token contains whitespace"));
            }
            words.push(token.to_string());
        }
        Vocabulary::from_words(words)
    }
}

/// Builds the vocabulary of all tokens seen at least `min_count` times.
///
/// Words are ordered by descending frequency, ties broken lexicographically.
pub fn build_vocab<R: BufRead>(corpus: R, min_count: u64) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::arg("min_count must be at least 1"));
    }
    let mut freq: HashMap<String, u64> = HashMap::new();
    let mut seen_any = false;
    for line in corpus.lines() {
        let line = line?;
        for token in line.split_whitespace() {
            seen_any = true;
            if matches!(token, UNK | BOS | EOS) {
                continue;
            }
            *freq.entry(token.to_string()).or_insert(0) += 1;
        }
    }
    if !seen_any {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(String, u64)> = freq.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_words(kept.into_iter().map(|(w, _)| w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_boundary() {
        let v = build_vocab("a a a b".as_bytes(), 3).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.id("a").is_some());
        assert!(v.id("b").is_none());

        let v = build_vocab("a a a b".as_bytes(), 1).unwrap();
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_vocab("".as_bytes(), 1),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            build_vocab("  \n\n".as_bytes(), 1),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            build_vocab("a".as_bytes(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn ordering_is_frequency_then_lexicographic() {
        let v = build_vocab("c b b a a\nd c".as_bytes(), 1).unwrap();
        let words: Vec<&str> = v.tokens()[3..].iter().map(String::as_str).collect();
        assert_eq!(words, ["a", "b", "c", "d"]);
        let v = build_vocab("z z z y y x".as_bytes(), 1).unwrap();
        let words: Vec<&str> = v.tokens()[3..].iter().map(String::as_str).collect();
        assert_eq!(words, ["z", "y", "x"]);
    }

    #[test]
    fn markers_reserved_and_bijective() {
        let v = build_vocab("<s> a </s> <unk> b".as_bytes(), 1).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id(BOS), Some(Vocabulary::BOS_ID));
        for (id, tok) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(tok), Some(id as TokenId));
        }
        assert_eq!(v.id_or_unk("zzz"), Vocabulary::UNK_ID);
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocab("x y y z z z".as_bytes(), 1).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(Vocabulary::read(buf.as_slice()).unwrap(), v);
    }
}
