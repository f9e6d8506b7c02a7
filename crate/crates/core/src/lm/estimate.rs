//! Katz backoff estimation with Good-Turing discounting.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::counts::NgramCountTable;
use crate::error::{Error, Result};
use crate::lm::model::{BackoffLm, NgramEntry, LEFTOVER_EPS, LOG10_FLOOR};
use crate::vocab::{TokenId, Vocabulary};

/// Counts above this are treated as reliable and left undiscounted.
pub const DEFAULT_DISCOUNT_CUTOFF: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct GoodTuringConfig {
    /// Minimum retained count per order; `thresholds[0]` must be 1.
    pub thresholds: Vec<u64>,
    pub discount_cutoff: u64,
}

impl GoodTuringConfig {
    /// No count thresholds at any order.
    pub fn unthresholded(order: usize) -> Self {
        GoodTuringConfig {
            thresholds: vec![1; order],
            discount_cutoff: DEFAULT_DISCOUNT_CUTOFF,
        }
    }

    pub fn with_thresholds(thresholds: Vec<u64>) -> Self {
        GoodTuringConfig {
            thresholds,
            discount_cutoff: DEFAULT_DISCOUNT_CUTOFF,
        }
    }
}

/// Good-Turing adjusted count r* = (r+1) n_{r+1} / n_r, or `None` when the
/// count-of-counts needed are missing.
pub fn good_turing_count(r: u64, n_r: u64, n_r_plus_1: u64) -> Option<f64> {
    if n_r == 0 || n_r_plus_1 == 0 {
        return None;
    }
    Some((r + 1) as f64 * n_r_plus_1 as f64 / n_r as f64)
}

/// Katz discount ratios d_r for r = 0..=cutoff (index 0 unused, always 1).
///
/// `count_of_counts[r]` is n_r. Ratios that cannot be computed or fall
/// outside (0, 1] are replaced by 1, i.e. that count is left undiscounted.
pub fn katz_discounts(count_of_counts: &[u64], cutoff: u64) -> Vec<f64> {
    let n = |r: u64| count_of_counts.get(r as usize).copied().unwrap_or(0);
    let k = cutoff;
    let common = if n(1) > 0 {
        (k + 1) as f64 * n(k + 1) as f64 / n(1) as f64
    } else {
        f64::NAN
    };
    let mut d = vec![1.0; cutoff as usize + 1];
    for r in 1..=cutoff {
        let Some(r_star) = good_turing_count(r, n(r), n(r + 1)) else {
            continue;
        };
        let plain = r_star / r as f64;
        let ratio = if common.is_finite() && common < 1.0 {
            (plain - common) / (1.0 - common)
        } else {
            plain
        };
        if ratio > 0.0 && ratio <= 1.0 {
            d[r as usize] = ratio;
        }
    }
    d
}

fn discounted(count: u64, discounts: &[f64]) -> f64 {
    match discounts.get(count as usize) {
        Some(&d) => d * count as f64,
        None => count as f64,
    }
}

/// Explicit probabilities for one history: discounted relative frequencies
/// plus the leftover mass. When every predictable word is explicit the
/// distribution is renormalized; when nothing would be left for unseen words
/// one pseudo-event of mass 1/(c+1) is reserved for them.
fn explicit_distribution(
    counts: &[(TokenId, u64)],
    history_total: u64,
    discounts: &[f64],
    covers_vocab: bool,
) -> (Vec<(TokenId, f64)>, f64) {
    let total = history_total as f64;
    let mut probs: Vec<(TokenId, f64)> = counts
        .iter()
        .map(|&(w, c)| (w, discounted(c, discounts) / total))
        .collect();
    let mass: f64 = probs.iter().map(|p| p.1).sum();
    if covers_vocab {
        for p in &mut probs {
            p.1 /= mass;
        }
        return (probs, 0.0);
    }
    let leftover = 1.0 - mass;
    if leftover < LEFTOVER_EPS {
        let scale = total / (total + 1.0);
        for p in &mut probs {
            p.1 = p.1 / mass * scale;
        }
        return (probs, 1.0 / (total + 1.0));
    }
    (probs, leftover)
}

fn count_of_counts(counts: impl Iterator<Item = u64>, cutoff: u64) -> Vec<u64> {
    let mut coc = vec![0u64; cutoff as usize + 2];
    for c in counts {
        if let Some(slot) = coc.get_mut(c as usize) {
            *slot += 1;
        }
    }
    coc
}

/// Estimates a Katz backoff model from raw counts.
pub fn estimate_good_turing(
    table: &NgramCountTable,
    vocab: Arc<Vocabulary>,
    config: &GoodTuringConfig,
) -> Result<BackoffLm> {
    let order = table.order();
    if table.is_empty() || table.total_words() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if config.thresholds.len() != order {
        return Err(Error::arg(format!(
            "expected {order} thresholds, got {}",
            config.thresholds.len()
        )));
    }
    if config.thresholds[0] != 1 {
        return Err(Error::arg("unigram threshold must be 1"));
    }
    if config.thresholds.contains(&0) {
        return Err(Error::arg("thresholds must be positive"));
    }
    let cutoff = config.discount_cutoff;
    let bos = Vocabulary::BOS_ID;
    let predictable = vocab.len() - 1;

    let mut lm = BackoffLm::new(vocab.clone(), order)?;

    // Unigrams: every predictable word gets an entry.
    let unigram_counts: Vec<(TokenId, u64)> = vocab
        .predictable_ids()
        .map(|w| (w, table.count(&[w])))
        .collect();
    for (gram, _) in table.ngrams(1) {
        if gram[0] as usize >= vocab.len() {
            return Err(Error::arg("count table uses ids outside the vocabulary"));
        }
    }
    let discounts = katz_discounts(
        &count_of_counts(unigram_counts.iter().map(|u| u.1), cutoff),
        cutoff,
    );
    let seen: Vec<(TokenId, u64)> = unigram_counts.iter().copied().filter(|u| u.1 > 0).collect();
    let unseen: Vec<TokenId> = unigram_counts
        .iter()
        .filter(|u| u.1 == 0)
        .map(|u| u.0)
        .collect();
    let (probs, leftover) =
        explicit_distribution(&seen, table.total_words(), &discounts, unseen.is_empty());
    for (w, p) in probs {
        lm.insert(vec![w], NgramEntry::new(p.log10()));
    }
    if !unseen.is_empty() {
        let share = (leftover / unseen.len() as f64).log10();
        for w in unseen {
            lm.insert(vec![w], NgramEntry::new(share));
        }
    }
    lm.insert(vec![bos], NgramEntry::new(LOG10_FLOOR));

    for k in 2..=order {
        let threshold = config.thresholds[k - 1];
        let mut groups: BTreeMap<&[TokenId], Vec<(TokenId, u64)>> = BTreeMap::new();
        let mut start_runs = Vec::new();
        for (gram, c) in table.ngrams(k) {
            let (hist, w) = gram.split_at(k - 1);
            if w[0] == bos {
                start_runs.push(gram.to_vec());
            } else {
                groups.entry(hist).or_default().push((w[0], c));
            }
        }
        for gram in start_runs {
            if lm.contains(&gram[..k - 1]) {
                lm.insert(gram, NgramEntry::new(LOG10_FLOOR));
            }
        }
        let discounts = katz_discounts(
            &count_of_counts(groups.values().flatten().map(|s| s.1), cutoff),
            cutoff,
        );
        for (hist, mut succ) in groups {
            if !lm.contains(hist) {
                continue;
            }
            succ.retain(|s| s.1 >= threshold);
            if succ.is_empty() {
                continue;
            }
            succ.sort_unstable();
            let total = table.history_count(hist)?;
            let (probs, _) =
                explicit_distribution(&succ, total, &discounts, succ.len() == predictable);
            for (w, p) in probs {
                let mut gram = hist.to_vec();
                gram.push(w);
                lm.insert(gram, NgramEntry::new(p.log10()));
            }
        }
    }

    lm.recompute_backoffs();
    lm.set_meta("domain", table.domain());
    lm.set_meta("total_words", table.total_words().to_string());
    lm.set_meta(
        "thresholds",
        config
            .thresholds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    lm.set_meta("smoothing", format!("katz-good-turing cutoff={cutoff}"));
    Ok(lm)
}
