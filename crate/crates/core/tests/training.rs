use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use urnng::checkpoint;
use urnng::synth::{synth_corpus, Grammar};
use urnng::train::random_trees;
use urnng::treebank::{LabeledTree, Punctuation};
use urnng::{Action, Dataset, Error, Mode, Model, Sentence, TrainConfig, TrainState, Trainer, TreeRepr, Vocabulary};

struct Corpus {
    vocab: Vocabulary,
    train: Dataset,
    valid: Dataset,
}

fn corpus(n: usize, min_len: usize, max_len: usize, seed: u64) -> Corpus {
    let trees = synth_corpus(&Grammar::default_grammar(), n + 8, min_len, max_len, seed).unwrap();
    let words: Vec<Vec<&str>> = trees.iter().map(LabeledTree::words).collect();
    let vocab = Vocabulary::build(&words, 1);
    let punct = Punctuation::default();
    let data = |trees: &[LabeledTree]| {
        let s = trees
            .iter()
            .map(|t| Sentence::new(&t.words(), &vocab, &punct))
            .collect::<urnng::Result<Vec<_>>>()
            .unwrap();
        Dataset::with_trees(s, trees.iter().map(LabeledTree::binarize_right).collect()).unwrap()
    };
    let (train, valid) = (data(&trees[..n]), data(&trees[n..]));
    Corpus { vocab, train, valid }
}

fn tiny(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        epochs: 3,
        samples: 3,
        batch_size: 8,
        word_dim: 8,
        q_hidden: 6,
        mlp_hidden: 6,
        max_len: 10,
        phi_lr: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn resumed_runs_match_uninterrupted_ones() {
    let c = corpus(40, 3, 8, 1);
    for mode in [Mode::Urnng, Mode::Supervised, Mode::Lm, Mode::TrivialRandom] {
        let state = TrainState::new(tiny(mode), c.vocab.clone()).unwrap();
        let mut straight = Trainer::new(state.clone(), &c.train, &c.valid).unwrap();
        let split = straight.batches_per_epoch() + 2;
        straight.run_batches(split).unwrap();
        let tail = straight.run_batches(10).unwrap();
        let end = checkpoint::to_bytes(straight.state());

        let mut first = Trainer::new(state, &c.train, &c.valid).unwrap();
        first.run_batches(split).unwrap();
        let saved = checkpoint::to_bytes(first.state());
        let restored = checkpoint::from_bytes(&saved).unwrap();
        let mut second = Trainer::new(restored, &c.train, &c.valid).unwrap();
        assert_eq!(second.run_batches(10).unwrap(), tail, "{mode}");
        assert!(checkpoint::to_bytes(second.state()) == end, "{mode}: states differ after resuming");
    }
}

#[test]
fn checkpoints_survive_the_file_system() {
    let c = corpus(16, 3, 6, 2);
    let mut trainer = Trainer::new(TrainState::new(tiny(Mode::Urnng), c.vocab.clone()).unwrap(), &c.train, &c.valid).unwrap();
    trainer.run_batches(3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    checkpoint::save(trainer.state(), &path).unwrap();
    checkpoint::save(trainer.state(), &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(checkpoint::to_bytes(&back), checkpoint::to_bytes(trainer.state()));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1, "no temporary files left behind");
}

#[test]
fn supervised_training_memorizes_ten_sentences() {
    let c = corpus(10, 6, 6, 3);
    let config = TrainConfig {
        epochs: 300,
        batch_size: 10,
        q_hidden: 16,
        mlp_hidden: 16,
        phi_lr: 1e-2,
        dropout: 0.0,
        q_dropout: 0.0,
        ..tiny(Mode::Supervised)
    };
    let state = TrainState::new(config, c.vocab.clone()).unwrap();
    let mut trainer = Trainer::new(state, &c.train, &c.train).unwrap();
    assert_eq!(trainer.batches_per_epoch(), 1);
    let records = trainer.run_batches(50).unwrap();
    assert_eq!(records.len(), 50);
    assert!(records[49].train_loss < records[0].train_loss * 0.8, "{} -> {}", records[0].train_loss, records[49].train_loss);
    trainer.run(|_| {}).unwrap();
    let model = &trainer.state().model;
    let gold = c.train.trees.as_ref().unwrap();
    for (s, t) in c.train.sentences.iter().zip(gold) {
        assert_eq!(&model.parse(s.tokens()).unwrap(), t);
    }
}

#[test]
fn trivial_trees_have_the_documented_shapes() {
    use Action::{Reduce as R, Shift as S};
    assert_eq!(TreeRepr::right_branching(4).unwrap().actions(), [S, S, S, S, R, R, R]);
    assert_eq!(TreeRepr::left_branching(4).unwrap().actions(), [S, S, R, S, R, S, R]);
    let sentences: Vec<Sentence> = (0..1000).map(|_| Sentence::from_ids(vec![2; 5]).unwrap()).collect();
    let shapes: std::collections::HashSet<TreeRepr> = random_trees(&sentences, 0).into_iter().collect();
    assert_eq!(shapes.len(), 14);
}

#[test]
fn untrained_language_model_is_near_uniform() {
    let vocab = Vocabulary::from_tokens((0..30).map(|i| format!("w{i}"))).unwrap();
    let config = TrainConfig {
        init_range: 1e-4,
        ..tiny(Mode::Lm)
    };
    let model = Model::new(&config, vocab.len(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let tokens = [3, 9, 4, 20, 2];
    let per_token = -model.lm_log_likelihood(&tokens).unwrap() / (tokens.len() + 1) as f64;
    assert!((per_token - (vocab.len() as f64).ln()).abs() < 1e-3, "{per_token}");
}

#[test]
fn language_model_loss_falls() {
    let c = corpus(64, 3, 8, 4);
    let config = TrainConfig {
        epochs: 3,
        word_dim: 16,
        ..tiny(Mode::Lm)
    };
    let mut trainer = Trainer::new(TrainState::new(config, c.vocab.clone()).unwrap(), &c.train, &c.valid).unwrap();
    let mut records = Vec::new();
    trainer.run(|r| records.push(r.clone())).unwrap();
    assert!(records[2].train_loss < records[0].train_loss);
    assert!(records[2].val_per_token > records[0].val_per_token);
}

#[test]
fn finetuning_keeps_shapes_and_lowers_the_learning_rate() {
    let c = corpus(24, 3, 6, 5);
    let mut sup = Trainer::new(TrainState::new(tiny(Mode::Supervised), c.vocab.clone()).unwrap(), &c.train, &c.valid).unwrap();
    sup.run(|_| {}).unwrap();
    let sup = sup.into_state();
    let config = TrainConfig {
        epochs: 1,
        ..tiny(Mode::Finetune)
    };
    let state = TrainState::from_model(config.clone(), sup.vocab.clone(), sup.best_model());
    assert_eq!(state.theta_lr, config.finetune_lr);
    let mut ft = Trainer::new(state, &c.train, &c.valid).unwrap();
    ft.run(|_| {}).unwrap();
    assert!(ft.state().model.params.same_layout(&sup.model.params));
    assert_eq!(ft.state().history[0].mode, Mode::Finetune);
}

#[test]
fn annealing_reaches_one_after_the_anneal_span() {
    let c = corpus(32, 3, 6, 6);
    let config = TrainConfig {
        anneal_epochs: 2,
        ..tiny(Mode::Urnng)
    };
    let mut trainer = Trainer::new(TrainState::new(config, c.vocab.clone()).unwrap(), &c.train, &c.valid).unwrap();
    let mut alphas = Vec::new();
    trainer.run(|r| alphas.push(r.alpha)).unwrap();
    assert!(alphas[0] > 0.0 && alphas[0] < 1.0, "{alphas:?}");
    assert_eq!(alphas[1], 1.0);
    assert_eq!(alphas[2], 1.0);
}

#[test]
fn non_finite_parameters_report_the_sentence() {
    let c = corpus(16, 3, 6, 7);
    let mut state = TrainState::new(tiny(Mode::Urnng), c.vocab.clone()).unwrap();
    let id = state.model.params.id("word.b").expect("output bias exists");
    state.model.params.get_mut(id).data_mut().fill(f64::NAN);
    let mut trainer = Trainer::new(state, &c.train, &c.valid).unwrap();
    match trainer.step_batch() {
        Err(Error::Divergence { sentence, .. }) => assert!(sentence < c.train.len()),
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn invalid_setups_are_rejected() {
    let c = corpus(8, 3, 6, 8);
    let one_sample = TrainConfig {
        samples: 1,
        ..tiny(Mode::Urnng)
    };
    assert!(TrainState::new(one_sample, c.vocab.clone()).is_err());
    let empty = Dataset::new(Vec::new());
    let state = TrainState::new(tiny(Mode::Urnng), c.vocab.clone()).unwrap();
    assert!(Trainer::new(state.clone(), &empty, &c.valid).is_err());
    let no_trees = Dataset::new(c.train.sentences.clone());
    let sup = TrainState::new(tiny(Mode::Supervised), c.vocab.clone()).unwrap();
    assert!(Trainer::new(sup, &no_trees, &c.valid).is_err());
}
