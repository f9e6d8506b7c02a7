//! Synthetic multi-domain corpora and sampling from models, for experiments
//! where the generating distribution must be known.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lm::BackoffLm;
use crate::vocab::{TokenId, Vocabulary};

/// A first-order Markov source over a vocabulary.
#[derive(Debug, Clone)]
pub struct MarkovSource {
    /// Successor ids and their sampler, indexed by the previous token id.
    transitions: Vec<Option<(Vec<TokenId>, WeightedIndex<f64>)>>,
    max_len: usize,
}

impl MarkovSource {
    pub fn sample_sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut prev = Vocabulary::BOS_ID;
        while out.len() < self.max_len {
            let Some((succ, dist)) = &self.transitions[prev as usize] else {
                break;
            };
            let next = succ[dist.sample(rng)];
            if next == Vocabulary::EOS_ID {
                break;
            }
            out.push(next);
            prev = next;
        }
        out
    }

    /// Sentences until at least `words` tokens (end markers included) are drawn.
    pub fn sample_corpus<R: Rng + ?Sized>(&self, rng: &mut R, words: usize) -> Vec<Vec<TokenId>> {
        let mut total = 0;
        let mut out = Vec::new();
        while total < words {
            let s = self.sample_sentence(rng);
            total += s.len() + 1;
            out.push(s);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub domains: usize,
    pub shared_words: usize,
    pub words_per_domain: usize,
    /// Number of distinct successors of each state.
    pub successors: usize,
    /// Probability that a successor slot is a shared word.
    pub shared_fraction: f64,
    pub mean_sentence_len: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            domains: 5,
            shared_words: 200,
            words_per_domain: 300,
            successors: 12,
            shared_fraction: 0.5,
            mean_sentence_len: 12.0,
        }
    }
}

/// Several domains over one vocabulary. Shared words occur everywhere with
/// domain-specific continuations; each domain also has words of its own.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub vocab: Arc<Vocabulary>,
    pub domains: Vec<MarkovSource>,
}

impl Scenario {
    pub fn generate<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Self> {
        if cfg.domains == 0 || cfg.successors == 0 || cfg.mean_sentence_len <= 1.0 {
            return Err(Error::arg("degenerate scenario configuration"));
        }
        let mut words: Vec<String> = (0..cfg.shared_words).map(|j| format!("s{j}")).collect();
        for d in 0..cfg.domains {
            words.extend((0..cfg.words_per_domain).map(|j| format!("d{d}w{j}")));
        }
        let vocab = Arc::new(Vocabulary::from_words(&words)?);
        let shared: Vec<TokenId> = (0..cfg.shared_words)
            .map(|j| vocab.id(&format!("s{j}")).unwrap())
            .collect();
        let stop = 1.0 / cfg.mean_sentence_len;
        let mut domains = Vec::with_capacity(cfg.domains);
        for d in 0..cfg.domains {
            let own: Vec<TokenId> = (0..cfg.words_per_domain)
                .map(|j| vocab.id(&format!("d{d}w{j}")).unwrap())
                .collect();
            let mut transitions = vec![None; vocab.len()];
            let states = std::iter::once(Vocabulary::BOS_ID)
                .chain(shared.iter().copied())
                .chain(own.iter().copied());
            for state in states {
                let mut succ = Vec::with_capacity(cfg.successors + 1);
                while succ.len() < cfg.successors {
                    let pool = if own.is_empty() || rng.random::<f64>() < cfg.shared_fraction {
                        &shared
                    } else {
                        &own
                    };
                    if let Some(&w) = pool.choose(rng) {
                        if !succ.contains(&w) {
                            succ.push(w);
                        }
                    }
                    if shared.len() + own.len() <= succ.len() {
                        break;
                    }
                }
                // Zipf weights over the successors, then the stop probability.
                let zipf: Vec<f64> = (0..succ.len()).map(|r| 1.0 / (r + 1) as f64).collect();
                let z: f64 = zipf.iter().sum();
                let mut weights: Vec<f64> = zipf.iter().map(|x| x / z * (1.0 - stop)).collect();
                if state != Vocabulary::BOS_ID {
                    succ.push(Vocabulary::EOS_ID);
                    weights.push(stop);
                }
                let dist = WeightedIndex::new(&weights).map_err(|e| Error::arg(e.to_string()))?;
                transitions[state as usize] = Some((succ, dist));
            }
            domains.push(MarkovSource {
                transitions,
                max_len: (cfg.mean_sentence_len * 10.0) as usize,
            });
        }
        Ok(Scenario { vocab, domains })
    }

    /// Sentences drawn from a mixture of domains: each sentence picks its
    /// domain by `weights`.
    pub fn sample_mixture<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        weights: &[f64],
        words: usize,
    ) -> Result<Vec<Vec<TokenId>>> {
        let pick = WeightedIndex::new(weights).map_err(|e| Error::arg(e.to_string()))?;
        let mut total = 0;
        let mut out = Vec::new();
        while total < words {
            let s = self.domains[pick.sample(rng)].sample_sentence(rng);
            total += s.len() + 1;
            out.push(s);
        }
        Ok(out)
    }
}

/// Draws sentences from the linear mixture of `lms` with weights `lambda`:
/// each token picks a component, then a word from its conditional.
pub fn sample_linear_mixture<R: Rng + ?Sized>(
    rng: &mut R,
    lms: &[&BackoffLm],
    lambda: &[f64],
    sentences: usize,
    max_len: usize,
) -> Result<Vec<Vec<TokenId>>> {
    let first = lms.first().ok_or_else(|| Error::arg("no models"))?;
    if lms.len() != lambda.len() {
        return Err(Error::arg("one weight per model required"));
    }
    let order = first.order();
    let vocab = first.vocab().clone();
    let ids: Vec<TokenId> = vocab.predictable_ids().collect();
    let pick = WeightedIndex::new(lambda).map_err(|e| Error::arg(e.to_string()))?;
    let mut out = Vec::with_capacity(sentences);
    for _ in 0..sentences {
        let mut history = vec![Vocabulary::BOS_ID; order - 1];
        let mut sentence = Vec::new();
        loop {
            let lm = lms[pick.sample(rng)];
            let ctx = &history[history.len() + 1 - order..];
            let probs: Vec<f64> = ids
                .iter()
                .map(|&w| 10f64.powf(lm.log10_prob(w, ctx)))
                .collect();
            let dist = WeightedIndex::new(&probs).map_err(|e| Error::arg(e.to_string()))?;
            let w = ids[dist.sample(rng)];
            if w == Vocabulary::EOS_ID || sentence.len() >= max_len {
                break;
            }
            sentence.push(w);
            history.push(w);
        }
        out.push(sentence);
    }
    Ok(out)
}
