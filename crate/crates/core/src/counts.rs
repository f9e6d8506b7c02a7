//! Per-domain n-gram count tables.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// Pads a sentence with `order - 1` start markers and one end marker.
pub fn pad_sentence(sentence: &[TokenId], order: usize) -> Vec<TokenId> {
    let mut padded = Vec::with_capacity(sentence.len() + order);
    padded.extend(std::iter::repeat_n(
        Vocabulary::BOS_ID,
        order.saturating_sub(1),
    ));
    padded.extend_from_slice(sentence);
    padded.push(Vocabulary::EOS_ID);
    padded
}

/// Raw n-gram counts of one domain corpus, for orders `1..=order`.
///
/// Counts are taken over padded sentences, so every stored k-gram has its
/// (k-1)-prefix stored too. N-grams made only of start markers are kept as
/// histories, but a start marker is never a predicted word: it contributes
/// neither to `total_words` nor to any history count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramCountTable {
    order: usize,
    counts: Vec<HashMap<Vec<TokenId>, u64>>,
    history_counts: Vec<HashMap<Vec<TokenId>, u64>>,
    total_words: u64,
    domain: String,
}

impl NgramCountTable {
    pub fn new(order: usize, domain: impl Into<String>) -> Result<Self> {
        if order < 1 {
            return Err(Error::arg("order must be at least 1"));
        }
        Ok(NgramCountTable {
            order,
            counts: vec![HashMap::new(); order],
            history_counts: vec![HashMap::new(); order - 1],
            total_words: 0,
            domain: domain.into(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// N_i: predicted tokens, i.e. words plus one end marker per sentence.
    pub fn total_words(&self) -> u64 {
        self.total_words
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn set_domain(&mut self, domain: impl Into<String>) {
        self.domain = domain.into();
    }

    pub fn is_empty(&self) -> bool {
        self.counts[0].is_empty()
    }

    /// Adds one unpadded sentence.
    pub fn add_sentence(&mut self, sentence: &[TokenId]) {
        let padded = pad_sentence(sentence, self.order);
        for end in 0..padded.len() {
            for k in 1..=self.order.min(end + 1) {
                let gram = &padded[end + 1 - k..=end];
                self.add_count(gram, 1);
            }
        }
    }

    fn add_count(&mut self, gram: &[TokenId], n: u64) {
        let k = gram.len();
        *self.counts[k - 1].entry(gram.to_vec()).or_insert(0) += n;
        let last = gram[k - 1];
        if last == Vocabulary::BOS_ID {
            return;
        }
        if k == 1 {
            self.total_words += n;
        } else {
            *self.history_counts[k - 2]
                .entry(gram[..k - 1].to_vec())
                .or_insert(0) += n;
        }
    }

    /// Count of an n-gram of length `1..=order`; zero when absent.
    pub fn count(&self, gram: &[TokenId]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        self.counts[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }

    /// c(h) = sum over predicted words w of count(h, w); the empty history
    /// yields N_i.
    pub fn history_count(&self, history: &[TokenId]) -> Result<u64> {
        if history.len() + 1 > self.order {
            return Err(Error::arg(format!(
                "history of length {} exceeds order {}",
                history.len(),
                self.order
            )));
        }
        if history.is_empty() {
            return Ok(self.total_words);
        }
        Ok(self.history_counts[history.len() - 1]
            .get(history)
            .copied()
            .unwrap_or(0))
    }

    /// All stored k-grams with their counts, in arbitrary order.
    pub fn ngrams(&self, k: usize) -> impl Iterator<Item = (&[TokenId], u64)> {
        self.counts[k - 1].iter().map(|(g, &c)| (g.as_slice(), c))
    }

    pub fn num_ngrams(&self, k: usize) -> usize {
        self.counts[k - 1].len()
    }

    /// Adds another table's counts into this one.
    pub fn merge(&mut self, other: &NgramCountTable) -> Result<()> {
        if other.order != self.order {
            return Err(Error::arg("cannot merge count tables of different order"));
        }
        for k in 1..=self.order {
            for (gram, &c) in &other.counts[k - 1] {
                self.add_count(gram, c);
            }
        }
        Ok(())
    }

    /// Sorted (k, ids, count) records, ordered by k then token ids.
    fn sorted_records(&self) -> Vec<(&[TokenId], u64)> {
        let mut out = Vec::new();
        for table in &self.counts {
            let mut grams: Vec<(&[TokenId], u64)> =
                table.iter().map(|(g, &c)| (g.as_slice(), c)).collect();
            grams.sort_unstable();
            out.extend(grams);
        }
        out
    }

    /// Writes `k<TAB>tok tok…<TAB>count` records after `#` header lines.
    pub fn write<W: Write>(&self, vocab: &Vocabulary, mut sink: W) -> Result<()> {
        writeln!(sink, "# domain\t{}", self.domain)?;
        writeln!(sink, "# order\t{}", self.order)?;
        for (gram, count) in self.sorted_records() {
            let tokens: Vec<&str> = gram.iter().map(|&id| vocab.token(id)).collect();
            writeln!(sink, "{}\t{}\t{}", gram.len(), tokens.join(" "), count)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(vocab: &Vocabulary, source: R) -> Result<Self> {
        let mut domain = String::new();
        let mut order = None;
        let mut records = Vec::new();
        for (idx, line) in source.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.trim_start().splitn(2, '\t');
                match (parts.next(), parts.next()) {
                    (Some("domain"), Some(v)) => domain = v.to_string(),
                    (Some("order"), Some(v)) => {
                        order = Some(
                            v.trim()
                                .parse::<usize>()
                                .map_err(|_| Error::parse(lineno, "bad order"))?,
                        )
                    }
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(lineno, "expected 3 tab-separated fields"));
            }
            let k: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(lineno, "bad n-gram order"))?;
            let gram: Vec<TokenId> = fields[1]
                .split(' ')
                .map(|t| {
                    vocab.id(t).ok_or_else(|| {
                        Error::parse(lineno, format!("token {t:?} not in vocabulary"))
                    })
                })
                .collect::<Result<_>>()?;
            if gram.len() != k {
                return Err(Error::parse(lineno, "token count does not match k"));
            }
            let count: u64 = fields[2]
                .parse()
                .map_err(|_| Error::parse(lineno, "bad count"))?;
            records.push((lineno, gram, count));
        }
        let order = match order {
            Some(o) => o,
            None => records.iter().map(|r| r.1.len()).max().unwrap_or(1),
        };
        let mut table = NgramCountTable::new(order, domain)?;
        for (lineno, gram, count) in records {
            if gram.is_empty() || gram.len() > order {
                return Err(Error::parse(lineno, "n-gram order out of range"));
            }
            table.add_count(&gram, count);
        }
        Ok(table)
    }
}

/// Counts n-grams of a line-oriented corpus; OOV tokens become `<unk>`.
pub fn count_ngrams<R: BufRead>(
    corpus: R,
    vocab: &Vocabulary,
    order: usize,
    domain: &str,
) -> Result<NgramCountTable> {
    let mut table = NgramCountTable::new(order, domain)?;
    for line in corpus.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        table.add_sentence(&vocab.encode_sentence(&line));
    }
    Ok(table)
}

/// Counts pre-encoded sentences in parallel shards, merging the partial tables.
pub fn count_sentences(
    sentences: &[Vec<TokenId>],
    order: usize,
    domain: &str,
) -> Result<NgramCountTable> {
    let empty = NgramCountTable::new(order, domain)?;
    sentences
        .par_chunks(4096)
        .map(|chunk| {
            let mut t = empty.clone();
            for s in chunk {
                t.add_sentence(s);
            }
            Ok(t)
        })
        .try_reduce(
            || empty.clone(),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )
}
