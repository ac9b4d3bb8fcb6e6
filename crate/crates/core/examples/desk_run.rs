//! Trains on a synthetic corpus from the bundled grammar and reports parsing
//! accuracy against the gold trees.
//!
//! ```text
//! cargo run --release -p urnng --example desk_run -- [mode] [epochs] [sentences] [key=value...]
//! ```
//!
//! Settings are the library defaults with 64-unit networks; trailing
//! `key=value` pairs override them, e.g. `phi_lr=1e-3`.

use std::collections::BTreeSet;
use std::time::Instant;

use urnng::eval::unlabeled_f1;
use urnng::synth::{synth_corpus, Grammar};
use urnng::treebank::{LabeledTree, Punctuation, Sentence, Span, Vocabulary};
use urnng::train::{random_trees, train};
use urnng::{Dataset, Mode, TrainConfig, TreeRepr};

fn main() -> urnng::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mode: Mode = args.get(1).map_or(Ok(Mode::Urnng), |m| m.parse())?;
    let epochs: usize = args.get(2).and_then(|e| e.parse().ok()).unwrap_or(5);
    if epochs == 0 {
        return Ok(());
    }
    let n_train: usize = args.get(3).and_then(|e| e.parse().ok()).unwrap_or(5000);

    let grammar = Grammar::default_grammar();
    let train_trees = synth_corpus(&grammar, n_train, 3, 12, 1)?;
    let valid_trees = synth_corpus(&grammar, 500, 3, 12, 2)?;
    let words: Vec<Vec<&str>> = train_trees.iter().map(LabeledTree::words).collect();
    let vocab = Vocabulary::build(&words, 1);
    let punct = Punctuation::default();
    let to_data = |trees: &[LabeledTree]| -> urnng::Result<Dataset> {
        let sentences = trees
            .iter()
            .map(|t| Sentence::new(&t.words(), &vocab, &punct))
            .collect::<urnng::Result<Vec<_>>>()?;
        Dataset::with_trees(sentences, trees.iter().map(LabeledTree::binarize_right).collect())
    };
    let (train_set, valid) = (to_data(&train_trees)?, to_data(&valid_trees)?);
    println!("vocab={} train={} valid={}", vocab.len(), train_set.len(), valid.len());

    let config = TrainConfig {
        mode,
        epochs,
        samples: 8,
        word_dim: 64,
        q_hidden: 64,
        mlp_hidden: 64,
        max_len: 12,
        ..TrainConfig::default()
    };
    let mut toml_text = config.to_toml();
    for kv in args.iter().skip(4) {
        let key = kv.split('=').next().unwrap_or("").trim();
        toml_text = toml_text
            .lines()
            .filter(|l| l.split('=').next().map(str::trim) != Some(key))
            .map(|l| format!("{l}\n"))
            .collect();
        toml_text.push_str(kv);
        toml_text.push('\n');
    }
    let config = TrainConfig::from_toml(&toml_text)?;
    let start = Instant::now();
    let state = train(config, vocab, &train_set, &valid, |r| {
        println!("{} seconds={:.0}", r.to_line(), start.elapsed().as_secs_f64())
    })?;
    let model = state.best_model();
    let pred: Vec<BTreeSet<Span>> = valid
        .sentences
        .iter()
        .map(|s| Ok(model.parse(s.tokens())?.spans().clone()))
        .collect::<urnng::Result<_>>()?;
    let gold: Vec<BTreeSet<Span>> = valid_trees.iter().map(LabeledTree::spans).collect();
    let masks: Vec<Vec<bool>> = valid.sentences.iter().map(|s| s.punct_mask().to_vec()).collect();
    println!("viterbi_f1={:.2}", unlabeled_f1(&pred, &gold, &masks)?.f1);
    let baseline = |f: &dyn Fn(usize) -> TreeRepr| -> urnng::Result<f64> {
        let p: Vec<BTreeSet<Span>> = valid.sentences.iter().map(|s| f(s.len()).spans().clone()).collect();
        Ok(unlabeled_f1(&p, &gold, &masks)?.f1)
    };
    println!(
        "left_f1={:.2} right_f1={:.2}",
        baseline(&|n| TreeRepr::left_branching(n).unwrap())?,
        baseline(&|n| TreeRepr::right_branching(n).unwrap())?
    );
    let random: Vec<f64> = (0..5u64)
        .map(|seed| {
            let trees = random_trees(&valid.sentences, seed);
            let p: Vec<BTreeSet<Span>> = trees.iter().map(|t| t.spans().clone()).collect();
            Ok(unlabeled_f1(&p, &gold, &masks)?.f1)
        })
        .collect::<urnng::Result<_>>()?;
    println!("random_f1={:.2}", random.iter().sum::<f64>() / 5.0);
    Ok(())
}
