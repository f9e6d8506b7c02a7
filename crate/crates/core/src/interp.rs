//! History-dependent interpolation of component models.
//!
//! All three strategies weight component i at history h by
//! `lambda_i * s_i(h)`, normalized over components, where the history
//! statistic `s_i(h)` is 1 (linear), `c_i(h) / N_i` (count merging) or the
//! component's own probability of the word sequence h (Bayesian).

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use crate::counts::NgramCountTable;
use crate::error::{Error, Result};
use crate::lm::BackoffLm;
use crate::vocab::{TokenId, Vocabulary};

/// Component priors: nonnegative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Accepts weights that already sum to one within 1e-9, renormalizing
    /// away the residual.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("weights sum to {sum}, not 1")));
        }
        Self::normalized(weights)
    }

    /// Scales nonnegative weights to sum to one.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::arg("empty weight vector"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::arg("weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::arg("weights sum to zero"));
        }
        for w in &mut weights {
            *w /= sum;
        }
        Ok(WeightVector(weights))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::normalized(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// What count merging does when every active component has c_i(h) = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CmFallback {
    /// Use the priors unchanged.
    #[default]
    Prior,
    /// Drop the oldest history token until some count is nonzero.
    ShortenHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Linear,
    CountMerging(CmFallback),
    Bayesian,
}

impl Strategy {
    pub const COUNT_MERGING: Strategy = Strategy::CountMerging(CmFallback::Prior);

    pub fn needs_counts(&self) -> bool {
        matches!(self, Strategy::CountMerging(_))
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "li" => Ok(Strategy::Linear),
            "cm" => Ok(Strategy::COUNT_MERGING),
            "cm-shorten" => Ok(Strategy::CountMerging(CmFallback::ShortenHistory)),
            "bi" => Ok(Strategy::Bayesian),
            _ => Err(Error::arg(format!("unknown strategy {s:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Linear => "li",
            Strategy::CountMerging(CmFallback::Prior) => "cm",
            Strategy::CountMerging(CmFallback::ShortenHistory) => "cm-shorten",
            Strategy::Bayesian => "bi",
        })
    }
}

/// One domain: its model, optional raw counts, and corpus size N_i.
#[derive(Debug, Clone)]
pub struct Component {
    pub name: String,
    pub lm: BackoffLm,
    pub counts: Option<NgramCountTable>,
    pub total_words: u64,
}

impl Component {
    /// N_i comes from the counts when given, otherwise from the model's
    /// `total_words` metadata, otherwise 0.
    pub fn new(name: impl Into<String>, lm: BackoffLm, counts: Option<NgramCountTable>) -> Self {
        let total_words = match &counts {
            Some(c) => c.total_words(),
            None => lm
                .meta("total_words")
                .and_then(|v| v.parse().ok())
                .unwrap_or(0),
        };
        Component {
            name: name.into(),
            lm,
            counts,
            total_words,
        }
    }
}

/// Components sharing one vocabulary and order.
#[derive(Debug, Clone)]
pub struct ComponentSet {
    components: Vec<Component>,
    vocab: Arc<Vocabulary>,
    order: usize,
}

impl ComponentSet {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::arg("empty component set"))?;
        let vocab = first.lm.vocab().clone();
        let order = first.lm.order();
        for c in &components {
            if c.lm.order() != order {
                return Err(Error::arg("components have different orders"));
            }
            if c.lm.vocab() != &vocab {
                return Err(Error::arg(format!(
                    "component {} uses a different vocabulary",
                    c.name
                )));
            }
            if let Some(t) = &c.counts {
                if t.order() != order {
                    return Err(Error::arg(format!(
                        "counts of component {} have order {}, model has {order}",
                        c.name,
                        t.order()
                    )));
                }
            }
        }
        Ok(ComponentSet {
            components,
            vocab,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn get(&self, i: usize) -> &Component {
        &self.components[i]
    }

    pub fn names(&self) -> Vec<&str> {
        self.components.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn total_words(&self) -> Vec<u64> {
        self.components.iter().map(|c| c.total_words).collect()
    }

    /// Keeps the most recent `order - 1` tokens.
    pub fn truncate<'h>(&self, history: &'h [TokenId]) -> &'h [TokenId] {
        &history[history.len().saturating_sub(self.order - 1)..]
    }

    /// ln(c_i(h) / N_i) per component; `-inf` for unseen histories.
    pub fn log_count_ratios(&self, history: &[TokenId]) -> Result<Vec<f64>> {
        self.components
            .iter()
            .map(|c| {
                let table = c.counts.as_ref().ok_or_else(|| {
                    Error::arg(format!(
                        "count merging needs counts for component {}",
                        c.name
                    ))
                })?;
                if table.total_words() == 0 {
                    return Err(Error::arg(format!("component {} has N = 0", c.name)));
                }
                let count = table.history_count(history)?;
                Ok(if count == 0 {
                    f64::NEG_INFINITY
                } else {
                    (count as f64 / table.total_words() as f64).ln()
                })
            })
            .collect()
    }

    /// ln p_i(h) per component.
    pub fn log_sequence_probs(&self, history: &[TokenId]) -> Result<Vec<f64>> {
        self.components
            .iter()
            .map(|c| Ok(c.lm.sequence_log10_prob(history)? * std::f64::consts::LN_10))
            .collect()
    }
}

fn check_lambda(lambda: &WeightVector, comps: &ComponentSet) -> Result<()> {
    if comps.is_empty() {
        return Err(Error::arg("empty component set"));
    }
    if lambda.len() != comps.len() {
        return Err(Error::arg(format!(
            "{} weights for {} components",
            lambda.len(),
            comps.len()
        )));
    }
    Ok(())
}

/// Normalizes `lambda_i * exp(log_stat_i)` in log space. Components with
/// zero prior are excluded; `None` when every active statistic is zero.
pub fn combine_log_stats(lambda: &[f64], log_stats: &[f64]) -> Option<Vec<f64>> {
    let logs: Vec<f64> = lambda
        .iter()
        .zip(log_stats)
        .map(|(&l, &s)| {
            if l > 0.0 {
                l.ln() + s
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return None;
    }
    let mut w: Vec<f64> = logs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    Some(w)
}

/// Posterior component weights p(i | h) under `strategy`.
pub fn history_posterior(
    strategy: Strategy,
    lambda: &WeightVector,
    comps: &ComponentSet,
    history: &[TokenId],
) -> Result<WeightVector> {
    check_lambda(lambda, comps)?;
    let history = comps.truncate(history);
    let weights = match strategy {
        Strategy::Linear => return Ok(lambda.clone()),
        Strategy::Bayesian => {
            combine_log_stats(lambda.as_slice(), &comps.log_sequence_probs(history)?)
        }
        Strategy::CountMerging(fallback) => {
            let mut h = history;
            loop {
                let stats = comps.log_count_ratios(h)?;
                if let Some(w) = combine_log_stats(lambda.as_slice(), &stats) {
                    break Some(w);
                }
                match fallback {
                    CmFallback::ShortenHistory if !h.is_empty() => h = &h[1..],
                    _ => break None,
                }
            }
        }
    };
    match weights {
        Some(w) => Ok(WeightVector(w)),
        None => Ok(lambda.clone()),
    }
}

/// Sum over components of `weights_i * p_i(w | h)`, skipping zero weights.
pub fn mixture_prob(
    weights: &[f64],
    comps: &ComponentSet,
    word: TokenId,
    history: &[TokenId],
) -> f64 {
    weights
        .iter()
        .zip(comps.components())
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, c)| w * 10f64.powf(c.lm.log10_prob(word, history)))
        .sum()
}

/// Dynamically interpolated probability p(w | h).
pub fn interp_prob(
    strategy: Strategy,
    lambda: &WeightVector,
    comps: &ComponentSet,
    word: TokenId,
    history: &[TokenId],
) -> Result<f64> {
    let history = comps.truncate(history);
    let weights = history_posterior(strategy, lambda, comps, history)?;
    Ok(mixture_prob(weights.as_slice(), comps, word, history))
}

/// λ_i = β_i N_i / Σ_j β_j N_j.
pub fn beta_to_lambda(beta: &[f64], total_words: &[u64]) -> Result<WeightVector> {
    if beta.len() != total_words.len() || beta.is_empty() {
        return Err(Error::arg(
            "beta and N must be nonempty and of equal length",
        ));
    }
    if beta.iter().any(|&b| !(b.is_finite() && b > 0.0)) {
        return Err(Error::arg("beta must be positive"));
    }
    if total_words.contains(&0) {
        return Err(Error::arg("N must be positive"));
    }
    WeightVector::normalized(
        beta.iter()
            .zip(total_words)
            .map(|(&b, &n)| b * n as f64)
            .collect(),
    )
}

/// β_i = λ_i K / N_i.
pub fn lambda_to_beta(lambda: &WeightVector, total_words: &[u64], k: f64) -> Result<Vec<f64>> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::arg("K must be positive"));
    }
    if lambda.len() != total_words.len() {
        return Err(Error::arg("lambda and N must have equal length"));
    }
    if total_words.contains(&0) {
        return Err(Error::arg("N must be positive"));
    }
    Ok(lambda
        .as_slice()
        .iter()
        .zip(total_words)
        .map(|(&l, &n)| l * k / n as f64)
        .collect())
}

/// Expected history count N_i p_i(h): the total corpus size times a smoothed
/// estimate of p(h, i).
pub fn expected_count(comps: &ComponentSet, i: usize, history: &[TokenId]) -> Result<f64> {
    let c = comps
        .components()
        .get(i)
        .ok_or_else(|| Error::arg(format!("component index {i} out of range")))?;
    let history = comps.truncate(history);
    let total: f64 = comps.total_words().iter().map(|&n| n as f64).sum();
    let prior = c.total_words as f64 / total;
    Ok(total * prior * 10f64.powf(c.lm.sequence_log10_prob(history)?))
}

/// A dynamically interpolated model, usable as a scorer.
#[derive(Debug, Clone, Copy)]
pub struct DynamicInterpolation<'a> {
    pub strategy: Strategy,
    pub lambda: &'a WeightVector,
    pub comps: &'a ComponentSet,
}

impl DynamicInterpolation<'_> {
    pub fn prob(&self, word: TokenId, history: &[TokenId]) -> Result<f64> {
        interp_prob(self.strategy, self.lambda, self.comps, word, history)
    }
}

/// Writes `name<TAB>lambda` lines with 12 fractional digits.
pub fn write_weights<W: Write>(names: &[&str], lambda: &WeightVector, mut sink: W) -> Result<()> {
    if names.len() != lambda.len() {
        return Err(Error::arg("one name per weight required"));
    }
    for (name, w) in names.iter().zip(lambda.as_slice()) {
        writeln!(sink, "{name}\t{w:.12}")?;
    }
    Ok(())
}

/// Reads a weights file, checking simplex membership within 1e-9 and
/// renormalizing.
pub fn read_weights<R: BufRead>(source: R) -> Result<(Vec<String>, WeightVector)> {
    let mut names = Vec::new();
    let mut weights = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(i + 1, "expected name<TAB>weight"))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::parse(i + 1, "non-numeric weight"))?;
        if value.is_nan() || value < 0.0 {
            return Err(Error::parse(i + 1, "negative weight"));
        }
        names.push(name.to_string());
        weights.push(value);
    }
    let lambda = WeightVector::new(weights)?;
    Ok((names, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_lambda_examples() {
        let l = beta_to_lambda(&[2.0, 1.0], &[100, 300]).unwrap();
        assert!((l[0] - 0.4).abs() < 1e-15 && (l[1] - 0.6).abs() < 1e-15);
        let b = lambda_to_beta(&l, &[100, 300], 1.0).unwrap();
        assert!((b[0] - 0.004).abs() < 1e-15 && (b[1] - 0.002).abs() < 1e-15);
        let u = beta_to_lambda(&[3.0, 3.0, 3.0], &[7, 7, 7]).unwrap();
        for &x in u.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let b2 = lambda_to_beta(&l, &[100, 300], 5.0).unwrap();
        assert!((b2[0] / b[0] - 5.0).abs() < 1e-12 && (b2[1] / b[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn beta_lambda_errors() {
        assert!(beta_to_lambda(&[0.0, 1.0], &[1, 1]).is_err());
        assert!(beta_to_lambda(&[1.0, 1.0], &[0, 1]).is_err());
        let l = WeightVector::uniform(2).unwrap();
        assert!(lambda_to_beta(&l, &[1, 1], 0.0).is_err());
        assert!(lambda_to_beta(&l, &[1, 1], -1.0).is_err());
    }

    #[test]
    fn combine_examples() {
        // Count merging: lambda (0.5, 0.5), N = (100, 300), c = (10, 10).
        let stats = [(10.0f64 / 100.0).ln(), (10.0f64 / 300.0).ln()];
        let w = combine_log_stats(&[0.5, 0.5], &stats).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        // Bayesian: p_1(h) = 0.01, p_2(h) = 0.001.
        let stats = [0.01f64.ln(), 0.001f64.ln()];
        let w = combine_log_stats(&[0.5, 0.5], &stats).unwrap();
        assert!((w[0] - 10.0 / 11.0).abs() < 1e-15 && (w[1] - 1.0 / 11.0).abs() < 1e-15);
        // Mixed-in component with zero prior and zero statistic.
        let w = combine_log_stats(&[0.0, 1.0], &[f64::NEG_INFINITY, -3.0]).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);
        assert!(combine_log_stats(&[0.5, 0.5], &[f64::NEG_INFINITY; 2]).is_none());
        // Tiny statistics do not underflow.
        let w = combine_log_stats(&[0.5, 0.5], &[-2000.0, -2001.0]).unwrap();
        assert!((w[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.5, 1.5]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
        let w = WeightVector::new(vec![0.7, 0.3]).unwrap();
        assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_file_round_trip() {
        let w = WeightVector::new(vec![0.25, 0.75]).unwrap();
        let mut buf = Vec::new();
        write_weights(&["news", "chat"], &w, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "news\t0.250000000000\nchat\t0.750000000000\n"
        );
        let (names, back) = read_weights(buf.as_slice()).unwrap();
        assert_eq!(names, ["news", "chat"]);
        assert_eq!(back, w);
        assert!(read_weights("a\t0.5\nb\t0.6\n".as_bytes()).is_err());
        assert!(read_weights("a 0.5\n".as_bytes()).is_err());
    }

    #[test]
    fn strategy_names() {
        for s in ["li", "cm", "cm-shorten", "bi"] {
            assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
        }
        assert!("xx".parse::<Strategy>().is_err());
    }
}
