//! Perplexity of component, dynamic and merged models.

use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::counts::pad_sentence;
use crate::error::{Error, Result};
use crate::interp::DynamicInterpolation;
use crate::lm::{BackoffLm, LOG10_FLOOR};
use crate::vocab::{TokenId, Vocabulary};

/// Anything that assigns p(w | h) over a closed vocabulary.
pub trait Scorer: Sync {
    fn vocab(&self) -> &Vocabulary;
    fn order(&self) -> usize;
    /// Linear-space probability.
    fn prob(&self, word: TokenId, history: &[TokenId]) -> Result<f64>;
}

impl Scorer for BackoffLm {
    fn vocab(&self) -> &Vocabulary {
        BackoffLm::vocab(self)
    }
    fn order(&self) -> usize {
        BackoffLm::order(self)
    }
    fn prob(&self, word: TokenId, history: &[TokenId]) -> Result<f64> {
        Ok(10f64.powf(self.log10_prob(word, history)))
    }
}

impl Scorer for DynamicInterpolation<'_> {
    fn vocab(&self) -> &Vocabulary {
        self.comps.vocab()
    }
    fn order(&self) -> usize {
        self.comps.order()
    }
    fn prob(&self, word: TokenId, history: &[TokenId]) -> Result<f64> {
        DynamicInterpolation::prob(self, word, history)
    }
}

/// Calls `f(word, history)` for every predicted token of a sentence: each
/// word and the final end marker, each with its full padded history.
pub fn for_each_event<F>(sentence: &[TokenId], order: usize, mut f: F) -> Result<()>
where
    F: FnMut(TokenId, &[TokenId]) -> Result<()>,
{
    let padded = pad_sentence(sentence, order);
    let start = order - 1;
    for t in start..padded.len() {
        let lo = t.saturating_sub(order - 1);
        f(padded[t], &padded[lo..t])?;
    }
    Ok(())
}

/// Text encoded against a vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncodedText {
    pub sentences: Vec<Vec<TokenId>>,
    pub oov_tokens: u64,
}

impl EncodedText {
    pub fn read<R: BufRead>(source: R, vocab: &Vocabulary) -> Result<Self> {
        let mut text = EncodedText::default();
        for line in source.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut ids = Vec::new();
            for token in line.split_whitespace() {
                match vocab.id(token) {
                    Some(id) => ids.push(id),
                    None => {
                        text.oov_tokens += 1;
                        ids.push(Vocabulary::UNK_ID);
                    }
                }
            }
            text.sentences.push(ids);
        }
        Ok(text)
    }

    pub fn from_sentences(sentences: Vec<Vec<TokenId>>) -> Self {
        EncodedText {
            sentences,
            oov_tokens: 0,
        }
    }

    /// Number of predicted tokens.
    pub fn num_events(&self) -> usize {
        self.sentences.iter().map(|s| s.len() + 1).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean negative log-likelihood in nats per event.
    pub nll: f64,
    pub ppl: f64,
    pub events: u64,
    pub sentences: u64,
    pub oov_tokens: u64,
    /// Events whose probability was zero or not finite; scored at the floor.
    pub zero_prob_events: u64,
}

impl EvalReport {
    /// `metric<TAB>value` lines.
    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        write!(sink, "{self}")?;
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ppl\t{:.1}", self.ppl)?;
        writeln!(f, "nll\t{:.9}", self.nll)?;
        writeln!(f, "events\t{}", self.events)?;
        writeln!(f, "sentences\t{}", self.sentences)?;
        writeln!(f, "oov_tokens\t{}", self.oov_tokens)?;
        writeln!(f, "zero_prob_events\t{}", self.zero_prob_events)
    }
}

/// Scores pre-encoded text.
pub fn perplexity_encoded<S: Scorer + ?Sized>(
    scorer: &S,
    text: &EncodedText,
) -> Result<EvalReport> {
    let order = scorer.order();
    let floor = LOG10_FLOOR * std::f64::consts::LN_10;
    let per_sentence: Vec<(f64, u64, u64)> = text
        .sentences
        .par_iter()
        .map(|s| {
            let mut ll = 0.0;
            let mut events = 0;
            let mut zero = 0;
            for_each_event(s, order, |w, h| {
                let p = scorer.prob(w, h)?;
                events += 1;
                if p > 0.0 && p.is_finite() {
                    ll += p.ln();
                } else {
                    zero += 1;
                    ll += floor;
                }
                Ok(())
            })?;
            Ok((ll, events, zero))
        })
        .collect::<Result<_>>()?;
    let mut ll = 0.0;
    let mut events = 0;
    let mut zero = 0;
    for (l, e, z) in per_sentence {
        ll += l;
        events += e;
        zero += z;
    }
    if events == 0 {
        return Err(Error::EmptyText);
    }
    if zero > 0 {
        log::warn!("{zero} events had zero probability");
    }
    let nll = -ll / events as f64;
    Ok(EvalReport {
        nll,
        ppl: nll.exp(),
        events,
        sentences: text.sentences.len() as u64,
        oov_tokens: text.oov_tokens,
        zero_prob_events: zero,
    })
}

/// Scores line-oriented text; out-of-vocabulary tokens are scored as `<unk>`.
pub fn perplexity<S: Scorer + ?Sized, R: BufRead>(scorer: &S, text: R) -> Result<EvalReport> {
    let encoded = EncodedText::read(text, scorer.vocab())?;
    perplexity_encoded(scorer, &encoded)
}
