use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// log10 value used for probabilities that must be finite but are never
/// meaningfully used: the start-marker unigram and degenerate backoffs.
pub const LOG10_FLOOR: f64 = -99.0;

/// Explicit leftover mass below this is treated as zero when computing
/// backoff weights.
pub const LEFTOVER_EPS: f64 = 1e-12;

/// A stored history and its explicit successors with their log10 probabilities.
pub(crate) type SuccessorGroup = (Vec<TokenId>, Vec<(TokenId, f64)>);

/// One stored n-gram: log10 probability and optional log10 backoff weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramEntry {
    pub log_prob: f64,
    pub backoff: Option<f64>,
}

impl NgramEntry {
    pub fn new(log_prob: f64) -> Self {
        NgramEntry {
            log_prob,
            backoff: None,
        }
    }
}

/// Result of a backoff-weight recomputation pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackoffStats {
    pub histories: usize,
    /// Histories whose explicit mass left nothing to back off to.
    pub degenerate: usize,
}

/// An ARPA-style backoff n-gram model.
#[derive(Debug, Clone)]
pub struct BackoffLm {
    vocab: Arc<Vocabulary>,
    order: usize,
    tables: Vec<HashMap<Vec<TokenId>, NgramEntry>>,
    metadata: Vec<(String, String)>,
}

impl PartialEq for BackoffLm {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.tables == other.tables
            && self.vocab == other.vocab
            && self.metadata == other.metadata
    }
}

impl BackoffLm {
    pub fn new(vocab: Arc<Vocabulary>, order: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::arg("order must be at least 1"));
        }
        Ok(BackoffLm {
            vocab,
            order,
            tables: vec![HashMap::new(); order],
            metadata: Vec::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn metadata(&self) -> &[(String, String)] {
        &self.metadata
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Sets or replaces a metadata entry.
    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.metadata.push((key, value)),
        }
    }

    pub fn clear_metadata(&mut self) {
        self.metadata.clear();
    }

    pub fn insert(&mut self, gram: Vec<TokenId>, entry: NgramEntry) {
        assert!(!gram.is_empty() && gram.len() <= self.order);
        self.tables[gram.len() - 1].insert(gram, entry);
    }

    pub fn remove(&mut self, gram: &[TokenId]) -> Option<NgramEntry> {
        self.tables[gram.len() - 1].remove(gram)
    }

    pub fn get(&self, gram: &[TokenId]) -> Option<&NgramEntry> {
        if gram.is_empty() || gram.len() > self.order {
            return None;
        }
        self.tables[gram.len() - 1].get(gram)
    }

    pub fn contains(&self, gram: &[TokenId]) -> bool {
        self.get(gram).is_some()
    }

    pub fn num_ngrams(&self, k: usize) -> usize {
        self.tables[k - 1].len()
    }

    pub fn total_ngrams(&self) -> usize {
        self.tables.iter().map(HashMap::len).sum()
    }

    /// Stored k-grams in arbitrary order.
    pub fn ngrams(&self, k: usize) -> impl Iterator<Item = (&[TokenId], &NgramEntry)> {
        self.tables[k - 1].iter().map(|(g, e)| (g.as_slice(), e))
    }

    /// Stored k-grams sorted lexicographically by token ids.
    pub fn sorted_ngrams(&self, k: usize) -> Vec<(&[TokenId], &NgramEntry)> {
        let mut v: Vec<_> = self.ngrams(k).collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// log10 p(w | h) under the backoff rule. Only the most recent
    /// `order - 1` tokens of `history` are used.
    pub fn log10_prob(&self, word: TokenId, history: &[TokenId]) -> f64 {
        let keep = history.len().min(self.order - 1);
        let mut buf = Vec::with_capacity(keep + 1);
        buf.extend_from_slice(&history[history.len() - keep..]);
        buf.push(word);
        let last = buf.len() - 1;
        let mut backoff = 0.0;
        for start in 0..=last {
            let gram = &buf[start..];
            if let Some(e) = self.tables[gram.len() - 1].get(gram) {
                return backoff + e.log_prob;
            }
            if start < last {
                let ctx = &buf[start..last];
                if let Some(bo) = self.tables[ctx.len() - 1].get(ctx).and_then(|e| e.backoff) {
                    backoff += bo;
                }
            }
        }
        // Word missing from the unigram table; only possible for foreign files.
        backoff + LOG10_FLOOR
    }

    /// Natural-log probability.
    pub fn ln_prob(&self, word: TokenId, history: &[TokenId]) -> f64 {
        self.log10_prob(word, history) * std::f64::consts::LN_10
    }

    /// log10 probability of the token sequence `history` itself, chaining
    /// backoff queries from its first token. Start markers are conditioning
    /// context only and contribute no factor.
    pub fn sequence_log10_prob(&self, history: &[TokenId]) -> Result<f64> {
        if history.len() + 1 > self.order {
            return Err(Error::arg(format!(
                "history of length {} exceeds order {}",
                history.len(),
                self.order
            )));
        }
        Ok(history
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != Vocabulary::BOS_ID)
            .map(|(t, &w)| self.log10_prob(w, &history[..t]))
            .sum())
    }

    /// Explicitly stored successors of every stored history of length k,
    /// grouped and sorted by history.
    pub(crate) fn successor_groups(&self, k: usize) -> Vec<SuccessorGroup> {
        let mut grams: Vec<(&[TokenId], f64)> = self.tables[k]
            .iter()
            .map(|(g, e)| (g.as_slice(), e.log_prob))
            .collect();
        grams.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let mut groups: Vec<SuccessorGroup> = Vec::new();
        for (gram, lp) in grams {
            let (hist, w) = gram.split_at(k);
            match groups.last_mut() {
                Some((h, succ)) if h.as_slice() == hist => succ.push((w[0], lp)),
                _ => groups.push((hist.to_vec(), vec![(w[0], lp)])),
            }
        }
        groups
    }

    /// Recomputes every backoff weight, lowest order first, so that each
    /// stored history's distribution sums to one. Histories without stored
    /// successors lose their backoff weight.
    pub fn recompute_backoffs(&mut self) -> BackoffStats {
        let mut stats = BackoffStats::default();
        for k in 1..self.order {
            let groups = self.successor_groups(k);
            let weights: Vec<(Vec<TokenId>, f64, bool)> = groups
                .into_par_iter()
                .map(|(hist, succ)| {
                    let (bo, degenerate) = self.backoff_for(&hist, &succ);
                    (hist, bo, degenerate)
                })
                .collect();
            for entry in self.tables[k - 1].values_mut() {
                entry.backoff = None;
            }
            for (hist, bo, degenerate) in weights {
                stats.histories += 1;
                stats.degenerate += degenerate as usize;
                if let Some(e) = self.tables[k - 1].get_mut(&hist) {
                    e.backoff = Some(bo);
                }
            }
        }
        if stats.degenerate > 0 {
            log::debug!("{} histories with no leftover mass", stats.degenerate);
        }
        stats
    }

    /// Backoff weight for `hist` given its explicit successors, using the
    /// lower-order distribution of this model.
    fn backoff_for(&self, hist: &[TokenId], succ: &[(TokenId, f64)]) -> (f64, bool) {
        let lower = &hist[1..];
        let mut explicit = 0.0;
        let mut explicit_lower = 0.0;
        for &(w, lp) in succ {
            if w == Vocabulary::BOS_ID {
                continue;
            }
            explicit += 10f64.powf(lp);
            explicit_lower += 10f64.powf(self.log10_prob(w, lower));
        }
        backoff_weight(1.0 - explicit, 1.0 - explicit_lower)
    }

    /// Checks that every stored k-gram's (k-1)-prefix is stored and that all
    /// values are finite.
    pub fn check_invariants(&self) -> Result<()> {
        for k in 1..=self.order {
            for (gram, e) in self.ngrams(k) {
                if !e.log_prob.is_finite() || e.log_prob > 1e-9 {
                    return Err(Error::arg(format!(
                        "invalid log-probability {}",
                        e.log_prob
                    )));
                }
                if let Some(bo) = e.backoff {
                    if !bo.is_finite() {
                        return Err(Error::arg("non-finite backoff weight"));
                    }
                }
                if k > 1 && !self.tables[k - 2].contains_key(&gram[..k - 1]) {
                    return Err(Error::arg(format!("n-gram {gram:?} has no stored prefix")));
                }
            }
        }
        Ok(())
    }

    /// Sum over predictable words of p(w | history), in linear space.
    pub fn distribution_mass(&self, history: &[TokenId]) -> f64 {
        self.vocab
            .predictable_ids()
            .map(|w| 10f64.powf(self.log10_prob(w, history)))
            .sum()
    }
}

/// log10 backoff weight from leftover explicit mass and the lower-order mass
/// of the same unseen words. Returns the floor and `true` when no mass is
/// left over.
pub fn backoff_weight(numerator: f64, denominator: f64) -> (f64, bool) {
    let floor = 10f64.powf(LOG10_FLOOR);
    if numerator < LEFTOVER_EPS {
        return (LOG10_FLOOR, true);
    }
    let denominator = denominator.max(floor);
    ((numerator / denominator).log10(), false)
}
