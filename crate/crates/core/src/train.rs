//! Training loops for every mode.
//!
//! Variational modes maximize, per sentence with samples `z_1..z_K ~ q`,
//!
//! ```text
//! (1/K) Σ_k [log p(x|z_k) + α log p(z_k|x_<z)]
//!   + (1/K) Σ_k (ℓ_k - r_k) log q(z_k|x)  + α H[q]
//! ```
//!
//! where `ℓ_k` is the annealed joint held constant and `r_k` is the mean of
//! the other samples' `ℓ`. Differentiating this one surrogate gives the Monte
//! Carlo gradient for the generative model and the baselined score-function
//! gradient plus the entropy gradient for the inference network.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, Group, ParamSet, Var};
use crate::config::{Mode, TrainConfig};
use crate::crf::{inside, inside_graph, sample_tree, tree_entropy, SpanScores};
use crate::error::{Error, Result};
use crate::model::{Arch, Model};
use crate::optim::{sgd_step, Adam, AdamSettings};
use crate::treebank::{Sentence, TreeRepr, Vocabulary};

/// Mixes a list of integers into one seed (splitmix64 steps).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const STREAM_SAMPLES: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_VALID: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;
const STREAM_RANDOM_TREES: u64 = 5;

/// Sentences with optional reference trees.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub sentences: Vec<Sentence>,
    pub trees: Option<Vec<TreeRepr>>,
}

impl Dataset {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Dataset { sentences, trees: None }
    }

    pub fn with_trees(sentences: Vec<Sentence>, trees: Vec<TreeRepr>) -> Result<Self> {
        if sentences.len() != trees.len() {
            return Err(Error::Data(format!(
                "{} sentences but {} trees",
                sentences.len(),
                trees.len()
            )));
        }
        for (i, (s, t)) in sentences.iter().zip(&trees).enumerate() {
            if s.len() != t.len() {
                return Err(Error::Data(format!(
                    "sentence {i} has {} words but its tree covers {}",
                    s.len(),
                    t.len()
                )));
            }
        }
        Ok(Dataset {
            sentences,
            trees: Some(trees),
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Word count, end-of-sentence excluded.
    pub fn tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

/// What the per-sentence surrogate includes.
#[derive(Clone, Copy, Debug)]
pub struct SurrogateOptions {
    /// Weight on the conditional prior and on the entropy.
    pub alpha: f64,
    /// Score-function term for the inference network.
    pub score_function: bool,
    /// Subtract the leave-one-out baseline (needs two or more samples).
    pub baseline: bool,
    pub entropy: bool,
}

/// The recorded surrogate for one sentence and the numbers behind it.
pub struct SentenceTerms {
    /// Quantity to maximize.
    pub objective: Var,
    pub terminal: Vec<f64>,
    pub action: Vec<f64>,
    /// Annealed joint used as the score-function reward.
    pub ell: Vec<f64>,
    pub log_q: Vec<f64>,
    pub entropy: f64,
}

impl SentenceTerms {
    /// Unannealed ELBO estimate: mean joint plus exact entropy.
    pub fn elbo(&self) -> f64 {
        let k = self.terminal.len() as f64;
        self.terminal.iter().zip(&self.action).map(|(t, a)| t + a).sum::<f64>() / k + self.entropy
    }

    pub fn reconstruction(&self) -> f64 {
        self.terminal.iter().sum::<f64>() / self.terminal.len() as f64
    }
}

/// Leave-one-out baselines: `r_k` is the mean of the other entries.
pub fn leave_one_out(ell: &[f64]) -> Vec<f64> {
    let k = ell.len();
    if k < 2 {
        return vec![0.0; k];
    }
    let total: f64 = ell.iter().sum();
    ell.iter().map(|l| (total - l) / (k - 1) as f64).collect()
}

/// Builds the variational surrogate for one sentence on `g`. `draw` receives
/// the span scores as recorded on `g` and returns the trees to score, which
/// should be draws from the distribution those scores define.
pub fn variational_surrogate(
    g: &mut Graph<'_>,
    model: &Model,
    tokens: &[usize],
    draw: impl FnOnce(&SpanScores) -> Vec<TreeRepr>,
    opts: SurrogateOptions,
) -> Result<SentenceTerms> {
    let (gen, inf) = model.rnng()?;
    let scores = inf.score_spans(g, gen.emb, tokens)?;
    let samples = draw(&SpanScores::new(tokens.len(), g.data(scores).to_vec())?);
    if samples.is_empty() {
        return Err(Error::Config("the surrogate needs at least one sample".into()));
    }
    let chart = inside_graph(g, scores, tokens.len())?;
    let k = samples.len() as f64;

    let mut theta_terms = Vec::with_capacity(samples.len());
    let mut log_q_vars = Vec::with_capacity(samples.len());
    let (mut terminal, mut action, mut ell, mut log_q) = (vec![], vec![], vec![], vec![]);
    for z in &samples {
        let jt = gen.joint_log_likelihood(g, tokens, z.actions())?;
        let (t, a) = (g.scalar(jt.terminal), g.scalar(jt.action));
        terminal.push(t);
        action.push(a);
        ell.push(t + opts.alpha * a);
        let weighted = g.scale(jt.action, opts.alpha)?;
        theta_terms.push(g.add(jt.terminal, weighted)?);
        let lq = chart.log_q(g, z)?;
        log_q.push(g.scalar(lq));
        log_q_vars.push(lq);
    }
    let theta = g.sum_scalars(&theta_terms)?;
    let mut objective = g.scale(theta, 1.0 / k)?;

    if opts.score_function {
        let r = if opts.baseline {
            leave_one_out(&ell)
        } else {
            vec![0.0; ell.len()]
        };
        let mut weighted = Vec::with_capacity(samples.len());
        for ((lq, l), r) in log_q_vars.iter().zip(&ell).zip(&r) {
            weighted.push(g.scale(*lq, (l - r) / k)?);
        }
        let sf = g.sum_scalars(&weighted)?;
        objective = g.add(objective, sf)?;
    }
    let h = chart.entropy(g)?;
    let entropy = g.scalar(h);
    if opts.entropy {
        let h = g.scale(h, opts.alpha)?;
        objective = g.add(objective, h)?;
    }
    Ok(SentenceTerms {
        objective,
        terminal,
        action,
        ell,
        log_q,
        entropy,
    })
}

/// Surrogate for training on a given tree: `log p(x, z) + log q(z | x)`.
pub fn supervised_objective(g: &mut Graph<'_>, model: &Model, tokens: &[usize], tree: &TreeRepr) -> Result<Var> {
    let (gen, inf) = model.rnng()?;
    let jt = gen.joint_log_likelihood(g, tokens, tree.actions())?;
    let joint = g.add(jt.terminal, jt.action)?;
    let scores = inf.score_spans(g, gen.emb, tokens)?;
    let chart = inside_graph(g, scores, tokens.len())?;
    let lq = chart.log_q(g, tree)?;
    g.add(joint, lq)
}

/// Annealing weight after `step` batches with `per_epoch` batches per epoch.
pub fn anneal_weight(step: u64, per_epoch: usize, anneal_epochs: usize) -> f64 {
    let span = (anneal_epochs * per_epoch) as f64 - 1.0;
    if span <= 0.0 {
        1.0
    } else {
        (step as f64 / span).min(1.0)
    }
}

/// Batches of sentence indices with equal lengths, shuffled per epoch.
pub fn make_batches(sentences: &[Sentence], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in sentences.iter().enumerate() {
        buckets.entry(s.len()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, STREAM_SHUFFLE, epoch as u64]));
    let mut batches = Vec::new();
    for (_, mut idx) in buckets {
        idx.shuffle(&mut rng);
        batches.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

/// Fixed uniformly random tree per sentence.
pub fn random_trees(sentences: &[Sentence], seed: u64) -> Vec<TreeRepr> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let scores = SpanScores::zeros(s.len());
            let chart = inside(&scores);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, STREAM_RANDOM_TREES, i as u64]));
            sample_tree(&chart, &scores, &mut rng).0
        })
        .collect()
}

/// One line of the per-epoch metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mode: Mode,
    pub batches: usize,
    /// Mean training loss per sentence.
    pub train_loss: f64,
    pub train_elbo: f64,
    pub train_recon: f64,
    /// Mean exact posterior entropy over training sentences.
    pub train_entropy: f64,
    /// Validation objective per token: single-sample ELBO for tree models,
    /// exact log-likelihood for the language model.
    pub val_per_token: f64,
    pub val_ppl: f64,
    /// Mean exact posterior entropy over validation sentences.
    pub val_entropy: f64,
    pub alpha: f64,
    pub theta_lr: f64,
    pub phi_trained: bool,
    pub collapse: bool,
    pub best: bool,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} mode={} batches={} train_loss={:.6} train_elbo_per_token={:.6} train_recon_per_token={:.6} \
             train_entropy={:.6} val_per_token={:.6} val_ppl={:.4} val_entropy={:.6} alpha={:.4} theta_lr={} \
             phi_trained={} collapse_warning={} best={}",
            self.epoch,
            self.mode,
            self.batches,
            self.train_loss,
            self.train_elbo,
            self.train_recon,
            self.train_entropy,
            self.val_per_token,
            self.val_ppl,
            self.val_entropy,
            self.alpha,
            self.theta_lr,
            self.phi_trained,
            self.collapse,
            self.best,
        )
    }
}

/// Running sums over the current epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochSums {
    pub sentences: u64,
    pub tokens: u64,
    pub loss: f64,
    pub elbo: f64,
    pub recon: f64,
    pub entropy: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub model: Model,
    pub adam: Adam,
    pub theta_lr: f64,
    pub decaying: bool,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed batches within the current epoch.
    pub batch_in_epoch: usize,
    /// Completed batches over the run; drives annealing and sample streams.
    pub step: u64,
    pub best_val: Option<f64>,
    pub best_params: Option<ParamSet>,
    pub sums: EpochSums,
    pub alpha: f64,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(config: TrainConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(&config, vocab.len(), &mut rng)?;
        Ok(TrainState::from_model(config, vocab, model))
    }

    /// Starts a fresh run (counters at zero) on existing parameters, e.g. a
    /// fine-tuning run from a supervised model.
    pub fn from_model(config: TrainConfig, vocab: Vocabulary, model: Model) -> Self {
        let phi = model.params.ids_in(|g| g == Group::Phi);
        let adam = Adam::new(&model.params, &phi);
        let theta_lr = if config.mode == Mode::Finetune {
            config.finetune_lr
        } else {
            config.theta_lr
        };
        TrainState {
            config,
            vocab,
            model,
            adam,
            theta_lr,
            decaying: false,
            epoch: 0,
            batch_in_epoch: 0,
            step: 0,
            best_val: None,
            best_params: None,
            sums: EpochSums::default(),
            alpha: 0.0,
            history: Vec::new(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Model with the best validation parameters (the latest if none yet).
    pub fn best_model(&self) -> Model {
        let mut m = self.model.clone();
        if let Some(p) = &self.best_params {
            m.params = p.clone();
        }
        m
    }

    fn action_lr(&self) -> f64 {
        self.theta_lr * self.config.action_lr / self.config.theta_lr
    }

    fn anneal_epochs(&self) -> usize {
        match self.config.mode {
            Mode::Urnng => self.config.anneal_epochs,
            _ => 0,
        }
    }

    fn phi_trained(&self) -> bool {
        !self.config.mode.is_variational() || self.epoch < self.config.phi_epochs
    }
}

/// Drives a [`TrainState`] over a training and a validation set.
pub struct Trainer<'a> {
    state: TrainState,
    train: &'a Dataset,
    valid: &'a Dataset,
    trees: Option<Vec<TreeRepr>>,
    per_epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(state: TrainState, train: &'a Dataset, valid: &'a Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("empty training corpus".into()));
        }
        if valid.is_empty() {
            return Err(Error::Data("empty validation corpus".into()));
        }
        let cfg = &state.config;
        let trees = match cfg.mode {
            Mode::Supervised => Some(
                train
                    .trees
                    .clone()
                    .ok_or_else(|| Error::Data("supervised training needs gold trees".into()))?,
            ),
            Mode::TrivialLeft => Some(
                train
                    .sentences
                    .iter()
                    .map(|s| TreeRepr::left_branching(s.len()))
                    .collect::<Result<_>>()?,
            ),
            Mode::TrivialRight => Some(
                train
                    .sentences
                    .iter()
                    .map(|s| TreeRepr::right_branching(s.len()))
                    .collect::<Result<_>>()?,
            ),
            Mode::TrivialRandom => Some(random_trees(&train.sentences, cfg.seed)),
            Mode::Urnng | Mode::Finetune | Mode::Lm => None,
        };
        if state.model.is_lm() != (cfg.mode == Mode::Lm) {
            return Err(Error::Config(format!("model architecture does not fit {} mode", cfg.mode)));
        }
        let too_long = train
            .sentences
            .iter()
            .chain(&valid.sentences)
            .map(Sentence::len)
            .max()
            .unwrap_or(0);
        if cfg.mode != Mode::Lm && too_long > cfg.max_len {
            return Err(Error::Data(format!(
                "sentence of length {too_long} exceeds max_len {}",
                cfg.max_len
            )));
        }
        if let Some(&w) = train
            .sentences
            .iter()
            .chain(&valid.sentences)
            .flat_map(|s| s.tokens())
            .find(|&&w| w >= state.model.vocab_size())
        {
            return Err(Error::Data(format!("token id {w} outside the model vocabulary")));
        }
        let per_epoch = make_batches(&train.sentences, cfg.batch_size, cfg.seed, 0).len();
        Ok(Trainer {
            state,
            train,
            valid,
            trees,
            per_epoch,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.per_epoch
    }

    /// Trains until the epoch budget is spent, reporting each finished epoch.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        while !self.state.is_finished() {
            if let Some(rec) = self.step_batch()? {
                on_epoch(&rec);
            }
        }
        Ok(())
    }

    /// Runs at most `n` batches; returns the epochs that finished.
    pub fn run_batches(&mut self, n: usize) -> Result<Vec<EpochRecord>> {
        let mut done = Vec::new();
        for _ in 0..n {
            if self.state.is_finished() {
                break;
            }
            if let Some(rec) = self.step_batch()? {
                done.push(rec);
            }
        }
        Ok(done)
    }

    /// One optimizer step; returns the epoch record when it closes an epoch.
    pub fn step_batch(&mut self) -> Result<Option<EpochRecord>> {
        let cfg = self.state.config.clone();
        let batches = make_batches(&self.train.sentences, cfg.batch_size, cfg.seed, self.state.epoch);
        let batch = &batches[self.state.batch_in_epoch];
        let alpha = anneal_weight(self.state.step, self.per_epoch, self.state.anneal_epochs());
        let phi_on = self.state.phi_trained();
        let b = batch.len() as f64;

        let mut grads = Gradients::zeros_like(&self.state.model.params);
        for (slot, &idx) in batch.iter().enumerate() {
            let seeds = [cfg.seed, self.state.step, slot as u64];
            let g = self
                .sentence_gradient(idx, alpha, phi_on, &seeds)
                .map_err(|e| match e {
                    e @ Error::NonFinite { .. } => Error::Divergence {
                        sentence: idx,
                        detail: e.to_string(),
                    },
                    e => e,
                })?;
            grads.accumulate(&g, 1.0 / b);
        }

        let st = &mut self.state;
        let params = &st.model.params;
        let theta = params.ids_in(|g| g == Group::Theta);
        let action = params.ids_in(|g| g == Group::ThetaAction);
        let all_theta = params.ids_in(Group::is_theta);
        let phi = params.ids_in(|g| g == Group::Phi);
        grads.clip_norm(&all_theta, cfg.theta_clip);
        let action_lr = st.action_lr();
        sgd_step(&mut st.model.params, &grads, &theta, st.theta_lr);
        sgd_step(&mut st.model.params, &grads, &action, action_lr);
        if phi_on && !phi.is_empty() {
            grads.clip_norm(&phi, cfg.phi_clip);
            let settings = AdamSettings {
                lr: cfg.phi_lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.adam_eps,
            };
            st.adam.step(&mut st.model.params, &grads, &phi, &settings);
        }
        st.alpha = alpha;
        st.step += 1;
        st.batch_in_epoch += 1;
        if st.batch_in_epoch == batches.len() {
            return self.finish_epoch().map(Some);
        }
        Ok(None)
    }

    fn sentence_gradient(&mut self, idx: usize, alpha: f64, phi_on: bool, seeds: &[u64; 3]) -> Result<Gradients> {
        let [seed, step, slot] = *seeds;
        let model = &self.state.model;
        let sentence = &self.train.sentences[idx];
        let tokens = sentence.tokens();
        let mut g = Graph::train(&model.params, derive_seed(&[seed, STREAM_DROPOUT, step, slot]));
        let sums = &mut self.state.sums;
        let objective = match (&model.arch, self.state.config.mode) {
            (Arch::Lm(lm), _) => {
                let ll = lm.log_likelihood(&mut g, tokens)?;
                sums.elbo += g.scalar(ll);
                sums.recon += g.scalar(ll);
                ll
            }
            (Arch::Rnng { .. }, Mode::Urnng | Mode::Finetune) => {
                let k = self.state.config.samples;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, STREAM_SAMPLES, step, slot]));
                let draw = |scores: &SpanScores| {
                    let chart = inside(scores);
                    (0..k).map(|_| sample_tree(&chart, scores, &mut rng).0).collect()
                };
                let opts = SurrogateOptions {
                    alpha,
                    score_function: phi_on,
                    baseline: true,
                    entropy: phi_on,
                };
                let terms = variational_surrogate(&mut g, model, tokens, draw, opts)?;
                let sums = &mut self.state.sums;
                sums.elbo += terms.elbo();
                sums.recon += terms.reconstruction();
                sums.entropy += terms.entropy;
                terms.objective
            }
            (Arch::Rnng { .. }, _) => {
                let tree = &self.trees.as_ref().expect("tree modes carry trees")[idx];
                let obj = supervised_objective(&mut g, model, tokens, tree)?;
                sums.elbo += g.scalar(obj);
                obj
            }
        };
        let value = g.scalar(objective);
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "objective" });
        }
        let sums = &mut self.state.sums;
        sums.sentences += 1;
        sums.tokens += tokens.len() as u64;
        sums.loss -= value;
        let loss = g.scale(objective, -1.0)?;
        Ok(g.backward(loss)?.param_grads())
    }

    fn finish_epoch(&mut self) -> Result<EpochRecord> {
        let (val_per_token, val_entropy) = validate(&self.state.model, self.valid, &self.trees_for_valid(), self.state.config.seed)?;
        let st = &mut self.state;
        let cfg = &st.config;
        let n = st.sums.sentences.max(1) as f64;
        let tokens = st.sums.tokens.max(1) as f64;
        let train_entropy = st.sums.entropy / n;
        let improved = st.best_val.is_none_or(|b| val_per_token > b);
        let epoch = st.epoch + 1;
        let rec = EpochRecord {
            epoch,
            mode: cfg.mode,
            batches: st.batch_in_epoch,
            train_loss: st.sums.loss / n,
            train_elbo: st.sums.elbo / tokens,
            train_recon: st.sums.recon / tokens,
            train_entropy,
            val_per_token,
            val_ppl: (-val_per_token).exp(),
            val_entropy,
            alpha: st.alpha,
            theta_lr: st.theta_lr,
            phi_trained: st.phi_trained(),
            collapse: cfg.mode.has_trees() && val_entropy < cfg.collapse_threshold,
            best: improved,
        };
        if improved {
            st.best_val = Some(val_per_token);
            st.best_params = Some(st.model.params.clone());
        } else if epoch > cfg.decay_grace {
            st.decaying = true;
        }
        if st.decaying {
            st.theta_lr /= cfg.decay_factor;
        }
        st.epoch = epoch;
        st.batch_in_epoch = 0;
        st.sums = EpochSums::default();
        st.history.push(rec.clone());
        Ok(rec)
    }

    fn trees_for_valid(&self) -> ValidTrees {
        match self.state.config.mode {
            Mode::TrivialLeft => ValidTrees::Left,
            Mode::TrivialRight => ValidTrees::Right,
            _ => ValidTrees::Posterior,
        }
    }
}

enum ValidTrees {
    Posterior,
    Left,
    Right,
}

/// Validation objective per token and mean posterior entropy.
fn validate(model: &Model, valid: &Dataset, trees: &ValidTrees, seed: u64) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut entropy = 0.0;
    for (i, s) in valid.sentences.iter().enumerate() {
        let tokens = s.tokens();
        if model.is_lm() {
            total += model.lm_log_likelihood(tokens)?;
            continue;
        }
        let scores = model.span_scores(tokens)?;
        let chart = inside(&scores);
        let h = tree_entropy(&chart);
        entropy += h;
        total += match trees {
            ValidTrees::Left => model.log_joint(tokens, &TreeRepr::left_branching(tokens.len())?)?,
            ValidTrees::Right => model.log_joint(tokens, &TreeRepr::right_branching(tokens.len())?)?,
            ValidTrees::Posterior => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, STREAM_VALID, i as u64]));
                let (z, _) = sample_tree(&chart, &scores, &mut rng);
                model.log_joint(tokens, &z)? + h
            }
        };
    }
    let tokens = valid.tokens().max(1) as f64;
    Ok((total / tokens, entropy / valid.len().max(1) as f64))
}

/// Trains a fresh model from `config` and returns the final state.
pub fn train(
    config: TrainConfig,
    vocab: Vocabulary,
    train: &Dataset,
    valid: &Dataset,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainState> {
    let state = TrainState::new(config, vocab)?;
    let mut trainer = Trainer::new(state, train, valid)?;
    trainer.run(on_epoch)?;
    Ok(trainer.into_state())
}
