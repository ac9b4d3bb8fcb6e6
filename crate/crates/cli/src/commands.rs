use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use urnng::checkpoint::{self, write_atomic};
use urnng::crf::{inside, sample_tree};
use urnng::eval::{evaluate as run_eval, EvalOptions};
use urnng::synth::{synth_corpus, write_corpus, Grammar};
use urnng::train::derive_seed;
use urnng::treebank::{read_token_lines, read_trees, LabeledTree, Punctuation, Sentence, Vocabulary};
use urnng::{Dataset, Error, Mode, Model, TrainConfig, TrainState, Trainer};

use crate::{
    display, EvaluateArgs, Failure, GenerateArgs, ParseArgs, SampleArgs, SynthArgs, TrainArgs, VerifyArgs,
};

type Result<T> = std::result::Result<T, Failure>;

/// Sentences of a file that holds either plain token lines or bracketed trees.
struct Corpus {
    words: Vec<Vec<String>>,
    trees: Option<Vec<LabeledTree>>,
}

fn read_any(path: &Path) -> urnng::Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", display(path))))?;
    let bracketed = text.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.trim_start().starts_with('('));
    if bracketed {
        let trees = read_trees(path)?;
        Ok(Corpus {
            words: trees.iter().map(|t| t.words().into_iter().map(str::to_string).collect()).collect(),
            trees: Some(trees),
        })
    } else {
        Ok(Corpus {
            words: read_token_lines(path)?,
            trees: None,
        })
    }
}

impl Corpus {
    fn sentences(&self, vocab: &Vocabulary) -> urnng::Result<Vec<Sentence>> {
        let punct = Punctuation::default();
        self.words.iter().map(|w| Sentence::new(w, vocab, &punct)).collect()
    }

    fn dataset(&self, vocab: &Vocabulary) -> urnng::Result<Dataset> {
        let sentences = self.sentences(vocab)?;
        match &self.trees {
            Some(t) => Dataset::with_trees(sentences, t.iter().map(LabeledTree::binarize_right).collect()),
            None => Ok(Dataset::new(sentences)),
        }
    }
}

fn load_model(path: &Path) -> urnng::Result<(TrainState, Model)> {
    let state = checkpoint::load(path)?;
    let model = state.best_model();
    Ok((state, model))
}

fn write_or_print(out: Option<&Path>, text: &str) -> urnng::Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            out!("{text}");
            Ok(())
        }
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let train_corpus = read_any(&a.corpus)?;
    let valid_corpus = read_any(&a.valid)?;
    let state = if let Some(path) = &a.resume {
        let mut state = checkpoint::load(path)?;
        if let Some(e) = a.epochs {
            state.config.epochs = e;
        }
        state
    } else {
        let mut config = match &a.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(m) = &a.mode {
            config.mode = m.parse()?;
        }
        if let Some(s) = a.seed {
            config.seed = s;
        }
        if let Some(e) = a.epochs {
            config.epochs = e;
        }
        match &a.init {
            Some(path) => {
                let (init, model) = load_model(path)?;
                if model.is_lm() != (config.mode == Mode::Lm) {
                    return Err(Error::Config(format!(
                        "{} holds a model that {} mode cannot continue",
                        display(path),
                        config.mode
                    ))
                    .into());
                }
                let c = &init.config;
                config.word_dim = c.word_dim;
                config.q_hidden = c.q_hidden;
                config.mlp_hidden = c.mlp_hidden;
                config.max_len = c.max_len;
                config.validate()?;
                let model = Model::from_params(model.params, &config)?;
                TrainState::from_model(config, init.vocab, model)
            }
            None => {
                config.validate()?;
                let vocab = Vocabulary::build(&train_corpus.words, config.min_count);
                TrainState::new(config, vocab)?
            }
        }
    };
    let train_set = train_corpus.dataset(&state.vocab)?;
    let valid_set = valid_corpus.dataset(&state.vocab)?;
    outln!(
        "mode={} vocab={} train={} valid={} params={}",
        state.config.mode,
        state.vocab.len(),
        train_set.len(),
        valid_set.len(),
        state.model.params.numel()
    );
    let mut trainer = Trainer::new(state, &train_set, &valid_set)?;
    while !trainer.state().is_finished() {
        if let Some(rec) = trainer.step_batch()? {
            outln!("{}", rec.to_line());
            checkpoint::save(trainer.state(), &a.out)?;
        }
    }
    let state = trainer.into_state();
    checkpoint::save(&state, &a.out)?;
    if let Some(best) = state.best_val {
        outln!("best_val_per_token={best:.6} checkpoint={}", display(&a.out));
    }
    Ok(())
}

pub fn parse(a: ParseArgs) -> Result<()> {
    let (state, model) = load_model(&a.checkpoint)?;
    let corpus = read_any(&a.corpus)?;
    let mut out = String::new();
    for (s, words) in corpus.sentences(&state.vocab)?.iter().zip(&corpus.words) {
        let tree = model.parse(s.tokens())?;
        let _ = writeln!(out, "{}", tree.to_bracketed(words));
    }
    write_or_print(a.out.as_deref(), &out)?;
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (state, model) = load_model(&a.checkpoint)?;
    let corpus = read_any(&a.corpus)?;
    let sentences = corpus.sentences(&state.vocab)?;
    let gold = match &a.gold {
        Some(p) => Some(read_trees(p)?),
        None => corpus.trees.clone(),
    };
    if let Some(gold) = &gold {
        if gold.len() != corpus.words.len() {
            return Err(Error::Data(format!("{} gold trees for {} sentences", gold.len(), corpus.words.len())).into());
        }
        for (i, (g, w)) in gold.iter().zip(&corpus.words).enumerate() {
            if g.words() != *w {
                return Err(Error::Data(format!("gold tree {} does not match sentence {}", i + 1, i + 1)).into());
            }
        }
    }
    let opts = EvalOptions {
        samples: a.samples,
        temperature: a.temperature,
        seed: a.seed,
        ..EvalOptions::default()
    };
    let report = run_eval(&model, &sentences, gold.as_deref(), &opts)?;
    let kv = report.to_key_values();
    out!("{kv}");
    if let Some(p) = &a.report {
        write_atomic(p, kv.as_bytes())?;
    }
    if let Some(p) = &a.tsv {
        write_atomic(p, report.to_tsv().as_bytes())?;
    }
    Ok(())
}

pub fn sample(a: SampleArgs) -> Result<()> {
    let (state, model) = load_model(&a.checkpoint)?;
    let corpus = read_any(&a.corpus)?;
    for (i, (s, words)) in corpus.sentences(&state.vocab)?.iter().zip(&corpus.words).enumerate() {
        let scores = model.span_scores(s.tokens())?.flatten(a.temperature)?;
        let chart = inside(&scores);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[a.seed, i as u64]));
        for _ in 0..a.samples {
            let (tree, lq) = sample_tree(&chart, &scores, &mut rng);
            outln!("{i}\t{lq:.4}\t{}", tree.to_bracketed(words));
        }
    }
    Ok(())
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let (state, model) = load_model(&a.checkpoint)?;
    let (gen, _) = model.rnng()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for _ in 0..a.n {
        let out = gen.generate(&model.params, &mut rng, a.max_len)?;
        if out.empty {
            outln!("<empty>");
            continue;
        }
        let words: Vec<&str> = out
            .words
            .iter()
            .map(|&w| state.vocab.token(w).unwrap_or("<unk>"))
            .collect();
        let tree = urnng::TreeRepr::from_actions(out.actions)?;
        let mark = if out.truncated { "\ttruncated" } else { "" };
        outln!("{}\t{}{mark}", words.join(" "), tree.to_bracketed(&words));
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let grammar = match &a.grammar {
        Some(p) => Grammar::load(p)?,
        None => Grammar::default_grammar(),
    };
    let trees = synth_corpus(&grammar, a.n, a.min_len, a.max_len, a.seed)?;
    let (tokens, brackets) = write_corpus(&trees, &a.out_prefix)?;
    outln!("wrote {} sentences to {} and {}", trees.len(), display(&tokens), display(&brackets));
    Ok(())
}

pub fn verify(a: VerifyArgs) -> Result<()> {
    let checks = urnng::verify::run(a.max_length, a.trials, a.seed)?;
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!c.passed);
        if c.detail.is_empty() {
            outln!("{status} {}", c.name);
        } else {
            outln!("{status} {} ({})", c.name, c.detail);
        }
    }
    if failed > 0 {
        return Err(Failure::Verify(failed));
    }
    Ok(())
}
