mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use mixlm_core::evaluate::{for_each_event, EncodedText};
use mixlm_core::interp::{interp_prob, ComponentSet, Strategy, WeightVector};
use mixlm_core::lm::write_arpa;
use mixlm_core::static_merge::*;
use mixlm_core::synth::{Scenario, ScenarioConfig};
use mixlm_core::vocab::{TokenId, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STRATEGIES: [Strategy; 3] = [
    Strategy::Linear,
    Strategy::COUNT_MERGING,
    Strategy::Bayesian,
];

fn random_set(rng: &mut ChaCha8Rng, n: usize, order: usize) -> (ComponentSet, Scenario) {
    let cfg = ScenarioConfig {
        domains: n,
        shared_words: 15,
        words_per_domain: 10,
        successors: 4,
        ..Default::default()
    };
    let sc = Scenario::generate(&cfg, rng).unwrap();
    let corpora: Vec<_> = sc
        .domains
        .iter()
        .map(|d| {
            let words = rng.random_range(200..1500);
            d.sample_corpus(rng, words)
        })
        .collect();
    (common::components(&sc.vocab, &corpora, order), sc)
}

fn gram_set(comps: &ComponentSet, k: usize) -> BTreeSet<Vec<TokenId>> {
    let mut set = BTreeSet::new();
    for c in comps.components() {
        for (g, _) in c.lm.ngrams(k) {
            set.insert(g.to_vec());
        }
    }
    set
}

#[test]
fn union_matches_naive_set_union() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let (comps, _) = random_set(&mut rng, 3, 3);
        let union = union_ngrams(&comps).unwrap();
        for k in 1..=3 {
            assert_eq!(union[k - 1], gram_set(&comps, k));
        }
        let single = ComponentSet::new(vec![comps.get(1).clone()]).unwrap();
        let union = union_ngrams(&single).unwrap();
        for k in 1..=3 {
            let own: BTreeSet<_> = comps.get(1).lm.ngrams(k).map(|(g, _)| g.to_vec()).collect();
            assert_eq!(union[k - 1], own);
        }
    }
}

#[test]
fn disjoint_bigrams_add_up() {
    let vocab = Arc::new(Vocabulary::from_words(["a", "b", "c", "d"]).unwrap());
    let (a, _) = common::train(&vocab, &common::encode(&vocab, "a b\na b a\n"), 2, "a");
    let (b, _) = common::train(&vocab, &common::encode(&vocab, "c d\nd c c\n"), 2, "b");
    let union = union_ngrams_of(&[&a, &b]).unwrap();
    // Unigrams are the full vocabulary in both, so only bigrams are disjoint
    // apart from the shared <s> and </s> contexts.
    let shared: BTreeSet<_> = a
        .ngrams(2)
        .map(|(g, _)| g.to_vec())
        .filter(|g| b.contains(g))
        .collect();
    assert!(shared.is_empty());
    assert_eq!(union[1].len(), a.num_ngrams(2) + b.num_ngrams(2));
    assert_eq!(union[0].len(), vocab.len());
}

#[test]
fn mismatched_orders_are_rejected() {
    let vocab = Arc::new(Vocabulary::from_words(["a", "b"]).unwrap());
    let s = common::encode(&vocab, "a b\n");
    let (a, _) = common::train(&vocab, &s, 2, "a");
    let (b, _) = common::train(&vocab, &s, 3, "b");
    assert!(union_ngrams_of(&[&a, &b]).is_err());
    assert!(union_ngrams_of(&[]).is_err());
}

#[test]
fn stored_entries_equal_dynamic_interpolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..3 {
        let (comps, _) = random_set(&mut rng, 3, 3);
        let lambda = WeightVector::normalized(vec![0.2, 0.5, 0.3]).unwrap();
        for strategy in STRATEGIES {
            let merged = merge_static(strategy, &lambda, &comps).unwrap();
            for k in 1..=3 {
                for (g, e) in merged.lm.ngrams(k) {
                    let (h, w) = g.split_at(k - 1);
                    if w[0] == Vocabulary::BOS_ID {
                        continue;
                    }
                    let p = interp_prob(strategy, &lambda, &comps, w[0], h).unwrap();
                    assert!((10f64.powf(e.log_prob) - p).abs() < 1e-10);
                }
            }
            common::assert_normalized(&merged.lm);
            merged.lm.check_invariants().unwrap();
        }
    }
}

#[test]
fn single_component_merge_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (comps, _) = random_set(&mut rng, 1, 3);
    let lambda = WeightVector::uniform(1).unwrap();
    for strategy in STRATEGIES {
        let merged = merge_static(strategy, &lambda, &comps).unwrap();
        let original = &comps.get(0).lm;
        for k in 1..=3 {
            assert_eq!(merged.lm.num_ngrams(k), original.num_ngrams(k));
            for (g, e) in original.ngrams(k) {
                let m = merged.lm.get(g).unwrap();
                assert!(
                    (m.log_prob - e.log_prob).abs() < 1e-6 || g.last() == Some(&Vocabulary::BOS_ID)
                );
                let (a, b) = (m.backoff.unwrap_or(0.0), e.backoff.unwrap_or(0.0));
                assert!((a - b).abs() < 1e-6, "{g:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn linear_merge_of_tiny_models_matches_hand_mixture() {
    let vocab = Arc::new(Vocabulary::from_words(["a", "b", "c"]).unwrap());
    let (a, _) = common::train(&vocab, &common::encode(&vocab, "a b\na b c\nb a\n"), 2, "a");
    let (b, _) = common::train(&vocab, &common::encode(&vocab, "c c b\nc a\n"), 2, "b");
    let comps = ComponentSet::new(vec![
        mixlm_core::interp::Component::new("a", a.clone(), None),
        mixlm_core::interp::Component::new("b", b.clone(), None),
    ])
    .unwrap();
    let naive = |lm: &mixlm_core::lm::BackoffLm| {
        let mut buf = Vec::new();
        write_arpa(lm, &mut buf).unwrap();
        common::NaiveArpa::parse(&String::from_utf8(buf).unwrap())
    };
    let (na, nb) = (naive(&a), naive(&b));
    let merged =
        merge_static(Strategy::Linear, &WeightVector::uniform(2).unwrap(), &comps).unwrap();
    let nm = naive(&merged.lm);
    for (key, &(lp, _)) in &nm.entries {
        let words: Vec<&str> = key.split(' ').collect();
        let (h, w) = words.split_at(words.len() - 1);
        if w[0] == "<s>" {
            continue;
        }
        let hand =
            0.5 * 10f64.powf(na.log10_prob(w[0], h)) + 0.5 * 10f64.powf(nb.log10_prob(w[0], h));
        assert!((10f64.powf(lp) - hand).abs() < 1e-6, "{key}");
    }
    // Exhaustive normalization through the independent scorer.
    for h in ["<s>", "a", "b", "c"] {
        let mass: f64 = ["a", "b", "c", "</s>", "<unk>"]
            .iter()
            .map(|w| 10f64.powf(nm.log10_prob(w, &[h])))
            .sum();
        assert!((mass - 1.0).abs() < 1e-5, "{h}: {mass}");
    }
}

#[test]
fn merge_is_independent_of_component_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (comps, _) = random_set(&mut rng, 3, 2);
    let lambda = WeightVector::new(vec![0.5, 0.3, 0.2]).unwrap();
    let perm = [1, 2, 0];
    let permuted = ComponentSet::new(perm.iter().map(|&i| comps.get(i).clone()).collect()).unwrap();
    let plambda = WeightVector::new(perm.iter().map(|&i| lambda[i]).collect()).unwrap();
    for strategy in STRATEGIES {
        let a = merge_static(strategy, &lambda, &comps).unwrap().lm;
        let b = merge_static(strategy, &plambda, &permuted).unwrap().lm;
        for k in 1..=2 {
            assert_eq!(a.num_ngrams(k), b.num_ngrams(k));
            for (g, e) in a.ngrams(k) {
                let f = b.get(g).unwrap();
                assert!((e.log_prob - f.log_prob).abs() < 1e-12);
                assert!((e.backoff.unwrap_or(0.0) - f.backoff.unwrap_or(0.0)).abs() < 1e-9);
            }
        }
        // Same inputs, same bytes.
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_arpa(&a, &mut x).unwrap();
        write_arpa(&merge_static(strategy, &lambda, &comps).unwrap().lm, &mut y).unwrap();
        assert_eq!(x, y);
    }
}

/// Sentences whose every event has its full-order n-gram stored in `lm`.
fn covered_sentences(
    lm: &mixlm_core::lm::BackoffLm,
    candidates: &[Vec<TokenId>],
) -> Vec<Vec<TokenId>> {
    candidates
        .iter()
        .filter(|s| {
            let mut ok = true;
            for_each_event(s, lm.order(), |w, h| {
                let mut g = h.to_vec();
                g.push(w);
                ok &= lm.contains(&g);
                Ok(())
            })
            .unwrap();
            ok
        })
        .cloned()
        .collect()
}

#[test]
fn fully_covered_text_has_no_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (comps, sc) = random_set(&mut rng, 3, 2);
    let lambda = WeightVector::new(vec![0.5, 0.3, 0.2]).unwrap();
    let candidates = sc.sample_mixture(&mut rng, &[0.3, 0.3, 0.4], 3000).unwrap();
    for strategy in STRATEGIES {
        let merged = merge_static(strategy, &lambda, &comps).unwrap();
        let covered = covered_sentences(&merged.lm, &candidates);
        assert!(covered.len() > 20);
        let text = EncodedText::from_sentences(covered);
        let gap = gap_with_merged(strategy, &lambda, &comps, &merged.lm, &text).unwrap();
        assert_eq!(gap.uncovered_events, 0);
        assert!((gap.dynamic.ppl - gap.r#static.ppl).abs() < 1e-6);
    }
}

#[test]
fn gap_report_smoke() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (comps, sc) = random_set(&mut rng, 2, 3);
    let text = EncodedText::from_sentences(sc.sample_mixture(&mut rng, &[0.5, 0.5], 500).unwrap());
    let gap = dynamic_static_gap(
        Strategy::Linear,
        &WeightVector::uniform(2).unwrap(),
        &comps,
        &text,
    )
    .unwrap();
    assert!(gap.dynamic.ppl.is_finite() && gap.r#static.ppl.is_finite());
    assert!(gap.to_string().contains("uncovered_events\t"));
}
