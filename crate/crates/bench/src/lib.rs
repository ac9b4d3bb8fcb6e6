//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use urnng::crf::SpanScores;
use urnng::synth::{synth_corpus, Grammar};
use urnng::treebank::{LabeledTree, Punctuation};
use urnng::{Dataset, Mode, Sentence, TrainConfig, Vocabulary};

/// Span scores in `[-2, 2]` for a sentence of `len` words.
pub fn random_scores(len: usize, seed: u64) -> SpanScores {
    SpanScores::random(len, 2.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A small training setup over the bundled grammar.
pub struct Fixture {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub train: Dataset,
    pub valid: Dataset,
}

pub fn training_fixture(mode: Mode, sentences: usize) -> Fixture {
    let grammar = Grammar::default_grammar();
    let trees = synth_corpus(&grammar, sentences + 20, 5, 10, 11).expect("grammar covers 5..=10 words");
    let words: Vec<Vec<&str>> = trees.iter().map(LabeledTree::words).collect();
    let vocab = Vocabulary::build(&words, 1);
    let punct = Punctuation::default();
    let data = |trees: &[LabeledTree]| {
        let s = trees
            .iter()
            .map(|t| Sentence::new(&t.words(), &vocab, &punct))
            .collect::<urnng::Result<Vec<_>>>()
            .expect("words are in the vocabulary");
        Dataset::with_trees(s, trees.iter().map(LabeledTree::binarize_right).collect()).expect("aligned")
    };
    let (train, valid) = (data(&trees[..sentences]), data(&trees[sentences..]));
    let config = TrainConfig {
        mode,
        epochs: 1000,
        samples: 8,
        batch_size: 16,
        word_dim: 32,
        q_hidden: 32,
        mlp_hidden: 32,
        max_len: 10,
        ..TrainConfig::default()
    };
    Fixture {
        config,
        vocab,
        train,
        valid,
    }
}
