#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use mixlm_core::counts::{count_sentences, NgramCountTable};
use mixlm_core::interp::{Component, ComponentSet};
use mixlm_core::lm::{estimate_good_turing, BackoffLm, GoodTuringConfig};
use mixlm_core::vocab::{TokenId, Vocabulary};

pub fn train(
    vocab: &Arc<Vocabulary>,
    sentences: &[Vec<TokenId>],
    order: usize,
    name: &str,
) -> (BackoffLm, NgramCountTable) {
    let table = count_sentences(sentences, order, name).unwrap();
    let lm = estimate_good_turing(
        &table,
        vocab.clone(),
        &GoodTuringConfig::unthresholded(order),
    )
    .unwrap();
    (lm, table)
}

pub fn components(
    vocab: &Arc<Vocabulary>,
    corpora: &[Vec<Vec<TokenId>>],
    order: usize,
) -> ComponentSet {
    let comps = corpora
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let name = format!("dom{i}");
            let (lm, table) = train(vocab, c, order, &name);
            Component::new(name, lm, Some(table))
        })
        .collect();
    ComponentSet::new(comps).unwrap()
}

pub fn encode(vocab: &Vocabulary, text: &str) -> Vec<Vec<TokenId>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| vocab.encode_sentence(l))
        .collect()
}

/// Every history of length `1..order` occurring as a prefix of a stored
/// n-gram, plus the empty history.
pub fn stored_histories(lm: &BackoffLm) -> Vec<Vec<TokenId>> {
    let mut out = vec![Vec::new()];
    for k in 1..lm.order() {
        let mut hs: Vec<Vec<TokenId>> = lm.ngrams(k).map(|(g, _)| g.to_vec()).collect();
        hs.sort();
        out.extend(hs);
    }
    out
}

/// Independent backoff scorer over string-keyed tables parsed from ARPA text.
pub struct NaiveArpa {
    pub order: usize,
    pub entries: HashMap<String, (f64, f64)>,
}

impl NaiveArpa {
    pub fn parse(text: &str) -> Self {
        let mut entries = HashMap::new();
        let mut order = 0;
        let mut section = 0;
        for line in text.lines() {
            if line.starts_with("ngram ") {
                order += 1;
                continue;
            }
            if let Some(k) = line
                .strip_prefix('\\')
                .and_then(|s| s.strip_suffix("-grams:"))
            {
                section = k.parse().unwrap();
                continue;
            }
            if section == 0 || line.is_empty() || line.starts_with('\\') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let lp: f64 = f[0].parse().unwrap();
            let bo: f64 = f.get(2).map(|b| b.parse().unwrap()).unwrap_or(0.0);
            entries.insert(f[1].to_string(), (lp, bo));
        }
        NaiveArpa { order, entries }
    }

    /// log10 p(w | h) by the textbook recursion.
    pub fn log10_prob(&self, w: &str, h: &[&str]) -> f64 {
        let h = &h[h.len().saturating_sub(self.order - 1)..];
        let key = h
            .iter()
            .chain(std::iter::once(&w))
            .copied()
            .collect::<Vec<_>>()
            .join(" ");
        if let Some(&(lp, _)) = self.entries.get(&key) {
            return lp;
        }
        if h.is_empty() {
            panic!("word {w} missing from unigrams");
        }
        let bo = self.entries.get(&h.join(" ")).map(|e| e.1).unwrap_or(0.0);
        bo + self.log10_prob(w, &h[1..])
    }

    /// Perplexity of whitespace text, padding each sentence like the toolkit.
    pub fn perplexity(&self, text: &[Vec<String>]) -> f64 {
        let mut ll = 0.0;
        let mut n = 0usize;
        for sentence in text {
            let mut hist: Vec<&str> = vec!["<s>"; self.order - 1];
            let words = sentence
                .iter()
                .map(String::as_str)
                .chain(std::iter::once("</s>"));
            for w in words {
                ll += self.log10_prob(w, &hist) * std::f64::consts::LN_10;
                n += 1;
                hist.push(w);
            }
        }
        (-ll / n as f64).exp()
    }
}

/// Asserts Σ_w p(w|h) = 1 ± 1e-6 for the empty history and every stored one.
pub fn assert_normalized(lm: &BackoffLm) {
    for h in stored_histories(lm) {
        let mass = lm.distribution_mass(&h);
        assert!((mass - 1.0).abs() < 1e-6, "history {h:?}: mass {mass}");
    }
}

pub fn tokens(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}
