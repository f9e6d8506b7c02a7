//! Relative-entropy pruning of backoff models.
//!
//! Each n-gram of order two or more is scored by the weighted KL divergence
//! between its history's distribution before and after removing it, with the
//! history's backoff weight renormalized and the history weighted by the
//! model's own probability of it. Scores are computed once on the unpruned
//! model; everything scoring below the threshold is removed in one pass.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lm::{BackoffLm, LEFTOVER_EPS};
use crate::vocab::{TokenId, Vocabulary};

/// Scores with magnitude below this are treated as exactly zero.
pub const NOISE_GUARD: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneReport {
    pub before: Vec<usize>,
    pub after: Vec<usize>,
    /// N-grams whose own score fell below the threshold.
    pub below_threshold: usize,
    /// N-grams removed only because their history was removed, or because
    /// they were start-marker contexts left with nothing extending them.
    pub cascaded: usize,
}

impl fmt::Display for PruneReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (b, a)) in self.before.iter().zip(&self.after).enumerate() {
            writeln!(f, "order{}\t{}\t{}", k + 1, b, a)?;
        }
        writeln!(f, "below_threshold\t{}", self.below_threshold)?;
        writeln!(f, "cascaded\t{}", self.cascaded)
    }
}

/// Weighted relative-entropy increase, in nats, of removing each prunable
/// n-gram. Sorted by n-gram.
pub fn pruning_scores(lm: &BackoffLm) -> Result<Vec<(Vec<TokenId>, f64)>> {
    let mut out = Vec::new();
    for k in 1..lm.order() {
        let groups = lm.successor_groups(k);
        let scored: Vec<Vec<(Vec<TokenId>, f64)>> = groups
            .par_iter()
            .map(|(hist, succ)| score_history(lm, hist, succ))
            .collect::<Result<_>>()?;
        out.extend(scored.into_iter().flatten());
    }
    Ok(out)
}

fn score_history(
    lm: &BackoffLm,
    hist: &[TokenId],
    succ: &[(TokenId, f64)],
) -> Result<Vec<(Vec<TokenId>, f64)>> {
    let lower = &hist[1..];
    let history_prob = 10f64.powf(lm.sequence_log10_prob(hist)?);
    let mut explicit = 0.0;
    let mut explicit_lower = 0.0;
    let mut rows = Vec::with_capacity(succ.len());
    for &(w, lp) in succ {
        if w == Vocabulary::BOS_ID {
            continue;
        }
        let p = 10f64.powf(lp);
        let q = 10f64.powf(lm.log10_prob(w, lower));
        explicit += p;
        explicit_lower += q;
        rows.push((w, p, q));
    }
    let numerator = 1.0 - explicit;
    let denominator = 1.0 - explicit_lower;
    Ok(rows
        .into_iter()
        .map(|(w, p, q)| {
            let new_num = numerator + p;
            let new_den = denominator + q;
            let new_bow = new_num / new_den;
            let mut kl = p * (p.ln() - (new_bow * q).ln());
            if numerator >= LEFTOVER_EPS && denominator > 0.0 {
                let bow = numerator / denominator;
                kl += numerator * (bow.ln() - new_bow.ln());
            }
            let mut score = history_prob * kl;
            if score.abs() < NOISE_GUARD {
                score = 0.0;
            }
            let mut gram = hist.to_vec();
            gram.push(w);
            (gram, score)
        })
        .collect())
}

/// Removes every n-gram of order two or more whose score is below
/// `threshold`, plus any n-gram whose history went with it, then
/// renormalizes. Unigrams are never removed.
pub fn entropy_prune(lm: &BackoffLm, threshold: f64) -> Result<(BackoffLm, PruneReport)> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::arg("prune threshold must be nonnegative"));
    }
    let before: Vec<usize> = (1..=lm.order()).map(|k| lm.num_ngrams(k)).collect();
    let doomed: HashSet<Vec<TokenId>> = pruning_scores(lm)?
        .into_iter()
        .filter(|(_, s)| *s < threshold)
        .map(|(g, _)| g)
        .collect();
    let below_threshold = doomed.len();

    let mut pruned = lm.clone();
    let mut cascaded = 0;
    for k in 2..=lm.order() {
        let mut grams: Vec<Vec<TokenId>> = pruned.ngrams(k).map(|(g, _)| g.to_vec()).collect();
        grams.sort_unstable();
        for gram in grams {
            if doomed.contains(&gram) {
                pruned.remove(&gram);
            } else if !pruned.contains(&gram[..k - 1]) {
                pruned.remove(&gram);
                cascaded += 1;
            }
        }
    }
    // Entries predicting <s> carry no mass and exist only as contexts.
    for k in (2..lm.order()).rev() {
        let mut contexts: Vec<Vec<TokenId>> = pruned
            .ngrams(k)
            .filter(|(g, _)| g[k - 1] == Vocabulary::BOS_ID)
            .map(|(g, _)| g.to_vec())
            .collect();
        contexts.sort_unstable();
        for gram in contexts {
            if !pruned.ngrams(k + 1).any(|(g, _)| g[..k] == gram[..]) {
                pruned.remove(&gram);
                cascaded += 1;
            }
        }
    }
    pruned.recompute_backoffs();
    pruned.set_meta("pruned_threshold", format!("{threshold:e}"));
    let after = (1..=lm.order()).map(|k| pruned.num_ngrams(k)).collect();
    Ok((
        pruned,
        PruneReport {
            before,
            after,
            below_threshold,
            cascaded,
        },
    ))
}
