//! Fitting component priors by minimizing validation perplexity of the
//! dynamically interpolated model.
//!
//! Priors are parameterized as `lambda = softmax(theta)` with `theta[0]`
//! pinned at zero, so the optimizer works on an unconstrained vector.

mod lbfgs;

pub use lbfgs::{minimize, LbfgsOptions, LbfgsOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluate::{for_each_event, EncodedText};
use crate::interp::{CmFallback, ComponentSet, Strategy, WeightVector};

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub restarts: usize,
    pub tol: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 4,
            tol: 1e-7,
            max_iterations: 500,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Uniform,
    Weights(WeightVector),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub nll: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub lambda: WeightVector,
    /// Nats per predicted token.
    pub validation_nll: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
    /// Per-iteration trace of the winning restart.
    pub trace: Vec<IterationRecord>,
}

impl FitResult {
    pub fn validation_ppl(&self) -> f64 {
        self.validation_nll.exp()
    }

    /// `iter<TAB>nll<TAB>gradnorm` lines.
    pub fn write_trace<W: std::io::Write>(&self, mut sink: W) -> Result<()> {
        for r in &self.trace {
            writeln!(sink, "{}\t{:.12}\t{:.6e}", r.iteration, r.nll, r.grad_norm)?;
        }
        Ok(())
    }
}

/// Per-event component log-probabilities and history statistics, computed
/// once so the objective can be re-evaluated cheaply for any priors.
#[derive(Debug, Clone)]
pub struct ValidationEvents {
    components: usize,
    /// ln p_i(w | h), `components` entries per event.
    log_probs: Vec<f64>,
    /// Per event, one or more levels of ln s_i(h), `components` entries each.
    /// Levels are tried in order; the first with a finite active statistic
    /// wins, and if none does the priors are used unchanged.
    stats: Vec<Vec<f64>>,
}

impl ValidationEvents {
    pub fn build(strategy: Strategy, comps: &ComponentSet, text: &EncodedText) -> Result<Self> {
        let n = comps.len();
        let order = comps.order();
        let per_sentence: Vec<(Vec<f64>, Vec<Vec<f64>>)> = text
            .sentences
            .par_iter()
            .map(|s| {
                let mut lps = Vec::new();
                let mut stats = Vec::new();
                for_each_event(s, order, |w, h| {
                    for c in comps.components() {
                        lps.push(c.lm.ln_prob(w, h));
                    }
                    stats.push(match strategy {
                        Strategy::Linear => Vec::new(),
                        Strategy::Bayesian => comps.log_sequence_probs(h)?,
                        Strategy::CountMerging(CmFallback::Prior) => comps.log_count_ratios(h)?,
                        Strategy::CountMerging(CmFallback::ShortenHistory) => {
                            let mut levels = Vec::with_capacity(n * (h.len() + 1));
                            for start in 0..=h.len() {
                                levels.extend(comps.log_count_ratios(&h[start..])?);
                            }
                            levels
                        }
                    });
                    Ok(())
                })?;
                Ok((lps, stats))
            })
            .collect::<Result<_>>()?;
        let mut log_probs = Vec::new();
        let mut stats = Vec::new();
        for (l, s) in per_sentence {
            log_probs.extend(l);
            stats.extend(s);
        }
        if stats.is_empty() {
            return Err(Error::EmptyValidation);
        }
        Ok(ValidationEvents {
            components: n,
            log_probs,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    /// Mean negative log-likelihood and its gradient with respect to the
    /// softmax logits of `lambda` (all components, including the pinned one).
    pub fn nll_and_gradient(&self, lambda: &[f64]) -> (f64, Vec<f64>) {
        let n = self.components;
        let log_lambda: Vec<f64> = lambda
            .iter()
            .map(|&l| if l > 0.0 { l.ln() } else { f64::NEG_INFINITY })
            .collect();
        const CHUNK: usize = 2048;
        let partials: Vec<(f64, Vec<f64>)> = self
            .stats
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut ll = 0.0;
                let mut grad = vec![0.0; n];
                for (j, levels) in chunk.iter().enumerate() {
                    let e = c * CHUNK + j;
                    let lps = &self.log_probs[e * n..(e + 1) * n];
                    let stat = levels
                        .chunks(n)
                        .find(|s| s.iter().zip(&log_lambda).any(|(x, l)| (x + l).is_finite()));
                    let mut a = log_lambda.clone();
                    if let Some(s) = stat {
                        for (ai, si) in a.iter_mut().zip(s) {
                            *ai += si;
                        }
                    }
                    let b: Vec<f64> = a.iter().zip(lps).map(|(x, y)| x + y).collect();
                    let lse_a = log_sum_exp(&a);
                    let lse_b = log_sum_exp(&b);
                    ll += lse_b - lse_a;
                    for i in 0..n {
                        let q = (a[i] - lse_a).exp();
                        let r = (b[i] - lse_b).exp();
                        grad[i] += r - q;
                    }
                }
                (ll, grad)
            })
            .collect();
        // Ordered reduction keeps results bit-reproducible.
        let mut ll = 0.0;
        let mut grad = vec![0.0; n];
        for (l, g) in partials {
            ll += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let m = self.len() as f64;
        (-ll / m, grad.iter().map(|g| -g / m).collect())
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Validation NLL (nats per event) and gradient with respect to the softmax
/// logits of `lambda`.
pub fn nll_and_gradient(
    strategy: Strategy,
    lambda: &WeightVector,
    comps: &ComponentSet,
    validation: &EncodedText,
) -> Result<(f64, Vec<f64>)> {
    if lambda.len() != comps.len() {
        return Err(Error::arg("one weight per component required"));
    }
    let events = ValidationEvents::build(strategy, comps, validation)?;
    Ok(events.nll_and_gradient(lambda.as_slice()))
}

fn softmax_pinned(free: &[f64]) -> Vec<f64> {
    let mut logits = Vec::with_capacity(free.len() + 1);
    logits.push(0.0);
    logits.extend_from_slice(free);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    w
}

fn free_logits(lambda: &[f64]) -> Vec<f64> {
    let floor = 1e-12;
    let base = lambda[0].max(floor).ln();
    lambda[1..]
        .iter()
        .map(|l| l.max(floor).ln() - base)
        .collect()
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    draws.into_iter().map(|d: f64| d / sum).collect()
}

/// Fits priors from `init` and `restarts - 1` seeded random starting points,
/// returning the best fit.
pub fn fit_weights(
    strategy: Strategy,
    comps: &ComponentSet,
    validation: &EncodedText,
    init: &Init,
    opts: &FitOptions,
) -> Result<FitResult> {
    if opts.restarts < 1 {
        return Err(Error::arg("restarts must be at least 1"));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::arg("tol must be positive"));
    }
    let n = comps.len();
    let events = ValidationEvents::build(strategy, comps, validation)?;
    let start = match init {
        Init::Uniform => vec![1.0 / n as f64; n],
        Init::Weights(w) => {
            if w.len() != n {
                return Err(Error::arg("one initial weight per component required"));
            }
            w.as_slice().to_vec()
        }
    };
    if n == 1 {
        let (nll, _) = events.nll_and_gradient(&[1.0]);
        return Ok(FitResult {
            lambda: WeightVector::uniform(1)?,
            validation_nll: nll,
            iterations: 0,
            restarts_used: 1,
            converged: true,
            trace: vec![IterationRecord {
                iteration: 0,
                nll,
                grad_norm: 0.0,
            }],
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![start];
    for _ in 1..opts.restarts {
        starts.push(random_simplex(&mut rng, n));
    }
    let lbfgs = LbfgsOptions {
        memory: 10,
        max_iterations: opts.max_iterations,
        tol: opts.tol,
    };
    let mut best: Option<FitResult> = None;
    for start in &starts {
        let outcome = minimize(
            |free| {
                let lambda = softmax_pinned(free);
                let (nll, grad) = events.nll_and_gradient(&lambda);
                (nll, grad[1..].to_vec())
            },
            free_logits(start),
            &lbfgs,
        );
        log::debug!(
            "restart finished: nll {:.6} after {} iterations",
            outcome.value,
            outcome.iterations
        );
        let candidate = FitResult {
            lambda: WeightVector::normalized(softmax_pinned(&outcome.x))?,
            validation_nll: outcome.value,
            iterations: outcome.iterations,
            restarts_used: starts.len(),
            converged: outcome.converged,
            trace: outcome
                .trace
                .iter()
                .map(|&(iteration, nll, grad_norm)| IterationRecord {
                    iteration,
                    nll,
                    grad_norm,
                })
                .collect(),
        };
        if best
            .as_ref()
            .is_none_or(|b| candidate.validation_nll < b.validation_nll)
        {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one restart"))
}
