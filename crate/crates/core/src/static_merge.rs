//! Static approximation of a dynamic mixture as a single backoff model.
//!
//! The merged model stores the union of the components' n-grams. Each stored
//! n-gram gets the dynamically interpolated probability of its own context,
//! and backoff weights are then recomputed so every history normalizes.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluate::{for_each_event, perplexity_encoded, EncodedText, EvalReport};
use crate::interp::{
    history_posterior, mixture_prob, ComponentSet, DynamicInterpolation, Strategy, WeightVector,
};
use crate::lm::{BackoffLm, NgramEntry, LOG10_FLOOR};
use crate::vocab::{TokenId, Vocabulary};

/// Per-order sets of n-grams, sorted.
pub type NgramUnion = Vec<BTreeSet<Vec<TokenId>>>;

/// Set union of the stored n-grams of every model, per order.
pub fn union_ngrams_of(models: &[&BackoffLm]) -> Result<NgramUnion> {
    let first = models
        .first()
        .ok_or_else(|| Error::arg("no models to merge"))?;
    let order = first.order();
    if models.iter().any(|m| m.order() != order) {
        return Err(Error::arg("models have different orders"));
    }
    let mut union = vec![BTreeSet::new(); order];
    for m in models {
        for (k, set) in union.iter_mut().enumerate() {
            set.extend(m.ngrams(k + 1).map(|(g, _)| g.to_vec()));
        }
    }
    Ok(union)
}

pub fn union_ngrams(comps: &ComponentSet) -> Result<NgramUnion> {
    let models: Vec<&BackoffLm> = comps.components().iter().map(|c| &c.lm).collect();
    union_ngrams_of(&models)
}

/// A merged model and where it came from.
#[derive(Debug, Clone)]
pub struct MergedLm {
    pub lm: BackoffLm,
    pub strategy: Strategy,
    pub lambda: WeightVector,
    pub components: Vec<String>,
    /// Histories whose explicit mass left nothing for backoff.
    pub degenerate_backoffs: usize,
}

/// Builds the statically interpolated model.
pub fn merge_static(
    strategy: Strategy,
    lambda: &WeightVector,
    comps: &ComponentSet,
) -> Result<MergedLm> {
    if lambda.len() != comps.len() {
        return Err(Error::arg("one weight per component required"));
    }
    let union = union_ngrams(comps)?;
    let order = comps.order();
    let mut lm = BackoffLm::new(comps.vocab().clone(), order)?;

    for (k, set) in union.iter().enumerate() {
        let mut groups: Vec<(&[TokenId], Vec<TokenId>)> = Vec::new();
        for gram in set {
            let (hist, w) = gram.split_at(k);
            match groups.last_mut() {
                Some((h, words)) if *h == hist => words.push(w[0]),
                _ => groups.push((hist, vec![w[0]])),
            }
        }
        let entries: Vec<Vec<(Vec<TokenId>, f64)>> = groups
            .par_iter()
            .map(|(hist, words)| {
                let weights = history_posterior(strategy, lambda, comps, hist)?;
                Ok(words
                    .iter()
                    .map(|&w| {
                        let mut gram = hist.to_vec();
                        gram.push(w);
                        let lp = if w == Vocabulary::BOS_ID {
                            LOG10_FLOOR
                        } else {
                            mixture_prob(weights.as_slice(), comps, w, hist).log10()
                        };
                        (gram, lp)
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for (gram, lp) in entries.into_iter().flatten() {
            lm.insert(gram, NgramEntry::new(lp));
        }
    }

    let stats = lm.recompute_backoffs();
    if stats.degenerate > 0 {
        log::warn!("{} merged histories have no backoff mass", stats.degenerate);
    }
    let names: Vec<String> = comps.names().iter().map(|s| s.to_string()).collect();
    lm.set_meta("merge_strategy", strategy.to_string());
    lm.set_meta("components", names.join(","));
    lm.set_meta(
        "lambda",
        lambda
            .as_slice()
            .iter()
            .map(|l| format!("{l:.12}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    Ok(MergedLm {
        lm,
        strategy,
        lambda: lambda.clone(),
        components: names,
        degenerate_backoffs: stats.degenerate,
    })
}

/// Dynamic versus static perplexity on one text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub dynamic: EvalReport,
    pub r#static: EvalReport,
    /// Events whose full-order n-gram is not stored in the merged model, so
    /// the static model answers them by backing off.
    pub uncovered_events: u64,
}

impl GapReport {
    /// Dynamic minus static perplexity.
    pub fn ppl_gap(&self) -> f64 {
        self.dynamic.ppl - self.r#static.ppl
    }
}

impl fmt::Display for GapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dynamic_ppl\t{:.1}", self.dynamic.ppl)?;
        writeln!(f, "static_ppl\t{:.1}", self.r#static.ppl)?;
        writeln!(f, "dynamic_nll\t{:.9}", self.dynamic.nll)?;
        writeln!(f, "static_nll\t{:.9}", self.r#static.nll)?;
        writeln!(f, "events\t{}", self.dynamic.events)?;
        writeln!(f, "uncovered_events\t{}", self.uncovered_events)
    }
}

/// Gap report against an already merged model.
pub fn gap_with_merged(
    strategy: Strategy,
    lambda: &WeightVector,
    comps: &ComponentSet,
    merged: &BackoffLm,
    text: &EncodedText,
) -> Result<GapReport> {
    let dynamic_model = DynamicInterpolation {
        strategy,
        lambda,
        comps,
    };
    let dynamic = perplexity_encoded(&dynamic_model, text)?;
    let r#static = perplexity_encoded(merged, text)?;
    let order = merged.order();
    let mut uncovered = 0;
    for s in &text.sentences {
        for_each_event(s, order, |w, h| {
            let mut gram = h.to_vec();
            gram.push(w);
            if !merged.contains(&gram) {
                uncovered += 1;
            }
            Ok(())
        })?;
    }
    Ok(GapReport {
        dynamic,
        r#static,
        uncovered_events: uncovered,
    })
}

/// Merges, then compares dynamic and static perplexity on `text`.
pub fn dynamic_static_gap(
    strategy: Strategy,
    lambda: &WeightVector,
    comps: &ComponentSet,
    text: &EncodedText,
) -> Result<GapReport> {
    let merged = merge_static(strategy, lambda, comps)?;
    gap_with_merged(strategy, lambda, comps, &merged.lm, text)
}
