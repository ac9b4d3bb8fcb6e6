use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use urnng::crf::{inside, log_q};
use urnng::eval::{
    distributional_metrics, evaluate, iw_log_marginal, label_recall, ppl_by_length, prefer_grammatical, unlabeled_f1,
    BracketSet, EvalOptions,
};
use urnng::oracle::{enumerate_joint, exact_bound, exact_marginal};
use urnng::treebank::{LabeledTree, Punctuation, Span};
use urnng::{Model, Sentence, TrainConfig, Vocabulary};

fn model(seed: u64, init_range: f64) -> Model {
    let cfg = TrainConfig {
        word_dim: 8,
        q_hidden: 8,
        mlp_hidden: 8,
        max_len: 8,
        init_range,
        ..TrainConfig::default()
    };
    Model::new(&cfg, 12, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn tree(s: &str) -> LabeledTree {
    LabeledTree::parse(s).unwrap()
}

fn mask(t: &LabeledTree) -> Vec<bool> {
    let p = Punctuation::default();
    t.words().iter().map(|w| p.contains(w)).collect()
}

#[test]
fn importance_estimates_rise_with_more_samples() {
    let m = model(1, 0.8);
    let tokens = [4, 7, 2, 9, 5, 3];
    let exact = exact_marginal(&m, &tokens).unwrap();
    let mean = |k: usize| (0..200).map(|s| iw_log_marginal(&m, &tokens, k, 2.0, s).unwrap()).sum::<f64>() / 200.0;
    let (k1, k4, k32) = (mean(1), mean(4), mean(32));
    assert!(k1 < k4 && k4 < k32, "{k1} {k4} {k32}");
    assert!(k32 < exact + 1e-3, "{k32} vs {exact}");
}

#[test]
fn posterior_statistics_agree_with_enumeration() {
    let m = model(2, 1.0);
    let tokens = vec![3, 8, 5, 10, 6];
    let k = 4000;
    let sentence = Sentence::from_ids(tokens.clone()).unwrap();
    let d = distributional_metrics(&m, &[sentence], k, 9).unwrap();
    let exact = exact_bound(&m, &tokens).unwrap();

    // Standard errors from the exact per-tree variances.
    let scores = m.span_scores(&tokens).unwrap();
    let log_z = inside(&scores).log_z();
    let joint = enumerate_joint(&m, &tokens).unwrap();
    let (mut kl_var, mut prior_var) = (0.0, 0.0);
    for (t, _, act) in &joint {
        let lq = log_q(t, &scores, log_z).unwrap();
        kl_var += lq.exp() * (lq - act - exact.prior_kl).powi(2);
        prior_var += act.exp() * (-act - exact.prior_entropy).powi(2);
    }
    let se = |v: f64| (v / k as f64).sqrt();
    assert!((d.kl - exact.prior_kl).abs() < 3.0 * se(kl_var), "{} vs {}", d.kl, exact.prior_kl);
    assert!(
        (d.prior_entropy - exact.prior_entropy).abs() < 3.0 * se(prior_var),
        "{} vs {}",
        d.prior_entropy,
        exact.prior_entropy
    );
    assert!((d.posterior_entropy - exact.posterior_entropy).abs() < 1e-10);
    assert!((d.uniform_entropy - 14f64.ln()).abs() < 1e-12);
}

#[test]
fn common_random_numbers_make_self_comparisons_exact() {
    let m = model(3, 0.5);
    let p = prefer_grammatical(&m, &[3, 4, 5], &[3, 4, 5], 20, 2.0, 1).unwrap();
    assert!(p.first);
    assert_eq!(p.margin, 0.0);
}

#[test]
fn length_buckets_are_half_open() {
    let lengths = [1, 9, 10, 19, 20, 55];
    let lm = [-1.0, -9.0, -10.0, -19.0, -20.0, -55.0];
    let b = ppl_by_length(&lengths, &lm, &[1, 10, 20]).unwrap();
    assert_eq!(b.iter().map(|x| x.sentences).collect::<Vec<_>>(), [2, 2, 2]);
    assert_eq!(b[1].max_len, Some(19));
    assert_eq!(b[2].max_len, None);
    for bucket in &b {
        assert!((bucket.perplexity.unwrap() - 1f64.exp()).abs() < 1e-12);
    }
    let empty = ppl_by_length(&lengths, &lm, &[1, 60]).unwrap();
    assert_eq!(empty[1].perplexity, None);
    assert!(ppl_by_length(&lengths, &lm, &[10, 5]).is_err());
}

#[test]
fn bracket_sets_renumber_around_punctuation() {
    // "a , b c ." with spans over the original positions.
    let punct = [false, true, false, false, true];
    let s = BracketSet::new([(1, 3), (3, 4), (1, 5), (2, 2), (1, 4)], &punct).unwrap();
    let expected: BTreeSet<Span> = [(1, 2), (2, 3)].into_iter().collect();
    assert_eq!(s.spans, expected);
}

#[test]
fn sentences_without_gold_brackets_are_skipped() {
    let short = tree("(S (NN a) (VB b))");
    let long = tree("(S (NP a b) (VP c d))");
    let pred: Vec<BTreeSet<Span>> = vec![[(1, 2)].into_iter().collect(), long.spans()];
    let gold = vec![short.spans(), long.spans()];
    let masks = vec![mask(&short), mask(&long)];
    let r = unlabeled_f1(&pred, &gold, &masks).unwrap();
    assert_eq!((r.matched, r.gold), (2, 2));
    assert!((r.f1 - 100.0).abs() < 1e-12);
}

#[test]
fn label_recall_reports_absent_labels_as_none() {
    let g = tree("(S (NP a b) (VP c (PP d (NP e f))))");
    let pred: Vec<BTreeSet<Span>> = vec![[(1, 2), (5, 6)].into_iter().collect()];
    let r = label_recall(&pred, std::slice::from_ref(&g), &[mask(&g)], &["NP", "VP", "PP", "SBAR"]).unwrap();
    assert_eq!(r["NP"], Some(1.0));
    assert_eq!(r["VP"], Some(0.0));
    assert_eq!(r["PP"], Some(0.0));
    assert_eq!(r["SBAR"], None);
}

#[test]
fn evaluation_report_is_complete_and_deterministic() {
    let words = [["a", "b", "c", "d"], ["c", "a", "d", "b"]];
    let vocab = Vocabulary::from_tokens(["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]).unwrap();
    let punct = Punctuation::default();
    let sentences: Vec<Sentence> = words.iter().map(|w| Sentence::new(w, &vocab, &punct).unwrap()).collect();
    let gold = vec![tree("(S (NP a b) (VP c d))"), tree("(S (NP c a) (VP d b))")];
    let m = model(4, 0.3);
    let opts = EvalOptions {
        samples: 50,
        dist_samples: 10,
        ..EvalOptions::default()
    };
    let a = evaluate(&m, &sentences, Some(&gold), &opts).unwrap();
    let b = evaluate(&m, &sentences, Some(&gold), &opts).unwrap();
    assert_eq!(a.to_key_values(), b.to_key_values());
    assert_eq!(a.binary_upper_bound, Some(100.0));
    assert_eq!(a.parses.len(), 2);
    assert!(a.f1.is_some() && a.distributional.is_some());
    assert_eq!(a.to_tsv().lines().count(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let other = EvalOptions {
        seed: rng.gen(),
        ..opts
    };
    let c = evaluate(&m, &sentences, None, &other).unwrap();
    assert!(c.f1.is_none() && c.label_recall.is_empty());
}
