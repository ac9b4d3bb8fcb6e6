use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use urnng::crf::{inside, sample_tree, tree_entropy, viterbi, SpanScores};
use urnng::treebank::{actions_to_tree, log_count_trees, tree_to_actions, LabeledTree};
use urnng::TreeRepr;

fn scores(len: usize, seed: u64, range: f64) -> SpanScores {
    SpanScores::random(len, range, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn random_tree(len: usize, seed: u64) -> TreeRepr {
    let s = SpanScores::zeros(len);
    sample_tree(&inside(&s), &s, &mut ChaCha8Rng::seed_from_u64(seed)).0
}

/// Random n-ary labeled trees over the words `w1 w2 ...`.
fn nary(len: usize) -> impl Strategy<Value = LabeledTree> {
    prop::collection::vec(1usize..4, len).prop_map(move |groups| {
        let mut words: Vec<LabeledTree> = (1..=len)
            .map(|i| LabeledTree::Node {
                label: "T".into(),
                children: vec![LabeledTree::Leaf(format!("w{i}"))],
            })
            .collect();
        let mut g = groups.into_iter().cycle();
        while words.len() > 1 {
            let mut next = Vec::new();
            let mut rest = words.into_iter().peekable();
            while rest.peek().is_some() {
                let take = g.next().unwrap_or(2).max(2);
                let children: Vec<LabeledTree> = rest.by_ref().take(take).collect();
                next.push(if children.len() == 1 {
                    children.into_iter().next().unwrap()
                } else {
                    LabeledTree::Node {
                        label: "X".into(),
                        children,
                    }
                });
            }
            words = next;
        }
        words.pop().unwrap()
    })
}

proptest! {
    #[test]
    fn actions_and_spans_round_trip(len in 1usize..30, seed in any::<u64>()) {
        let t = random_tree(len, seed);
        let actions = tree_to_actions(len, t.spans()).unwrap();
        prop_assert_eq!(&actions[..], t.actions());
        let (n, spans) = actions_to_tree(&actions).unwrap();
        prop_assert_eq!(n, len);
        prop_assert_eq!(&spans, t.spans());
        prop_assert_eq!(spans.len(), 2 * len - 1);
        prop_assert_eq!(TreeRepr::from_actions(actions).unwrap(), t);
    }

    #[test]
    fn bracketed_output_parses_back(len in 1usize..20, seed in any::<u64>()) {
        let t = random_tree(len, seed);
        let words: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
        let parsed = LabeledTree::parse(&t.to_bracketed(&words)).unwrap();
        prop_assert_eq!(parsed.words(), words.iter().map(String::as_str).collect::<Vec<_>>());
        prop_assert_eq!(&parsed.binarize_right(), &t);
    }

    #[test]
    fn binarization_keeps_every_constituent(tree in (2usize..16).prop_flat_map(nary)) {
        let b = tree.binarize_right();
        prop_assert_eq!(b.len(), tree.len());
        prop_assert_eq!(b.spans().len(), 2 * tree.len() - 1);
        for span in tree.spans() {
            prop_assert!(b.contains(span), "{:?} lost", span);
        }
        prop_assert_eq!(LabeledTree::parse(&tree.to_string()).unwrap(), tree);
    }

    #[test]
    fn chart_quantities_are_bounded(len in 1usize..25, seed in any::<u64>(), range in 0.0f64..6.0) {
        let s = scores(len, seed, range);
        let chart = inside(&s);
        let (best, best_score) = viterbi(&s);
        prop_assert!((s.tree_score(&best).unwrap() - best_score).abs() < 1e-9);
        prop_assert!(chart.log_z() >= best_score - 1e-9);
        prop_assert!(chart.log_z() <= best_score + log_count_trees(len) + 1e-9);
        let h = tree_entropy(&chart);
        prop_assert!(h >= -1e-9 && h <= log_count_trees(len) + 1e-9, "{}", h);
    }

    #[test]
    fn sampled_trees_are_valid_and_scored(len in 1usize..25, seed in any::<u64>()) {
        let s = scores(len, seed, 2.0);
        let chart = inside(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..5 {
            let (t, lq) = sample_tree(&chart, &s, &mut rng);
            prop_assert_eq!(t.len(), len);
            prop_assert!((lq - (s.tree_score(&t).unwrap() - chart.log_z())).abs() < 1e-9);
            prop_assert!(lq <= 1e-12);
        }
    }

    #[test]
    fn temperature_divides_scores(len in 1usize..12, seed in any::<u64>(), temp in 0.1f64..5.0) {
        let s = scores(len, seed, 3.0);
        let f = s.flatten(temp).unwrap();
        for (a, b) in s.values().iter().zip(f.values()) {
            prop_assert!((a / temp - b).abs() < 1e-12);
        }
    }
}

#[test]
fn uniform_scores_leave_the_entropy_at_its_maximum() {
    for len in 1..40 {
        let h = tree_entropy(&inside(&SpanScores::zeros(len)));
        assert!((h - log_count_trees(len)).abs() < 1e-9 * len as f64, "T={len}");
    }
}
