//! Perplexity, bracket F1, label recall and posterior statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{log_sum_exp, Graph};
use crate::crf::{inside, sample_tree, tree_entropy, viterbi};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::train::derive_seed;
use crate::treebank::{log_count_trees, Action, LabeledTree, Sentence, Span, TreeRepr};

/// Default proposal sample count and temperature for perplexity.
pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_TEMPERATURE: f64 = 2.0;

/// Labels reported by default in label recall.
pub const DEFAULT_LABELS: [&str; 6] = ["NP", "VP", "PP", "SBAR", "ADJP", "ADVP"];

const STREAM_IW: u64 = 11;
const STREAM_DIST: u64 = 12;

/// Importance-weighted estimate of `log p(x)` with `k` trees drawn from the
/// inference network at the given temperature. Exact for a language model.
pub fn iw_log_marginal(model: &Model, tokens: &[usize], k: usize, temperature: f64, seed: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("importance sampling needs K >= 1".into()));
    }
    if model.is_lm() {
        return model.lm_log_likelihood(tokens);
    }
    let proposal = model.span_scores(tokens)?.flatten(temperature)?;
    let chart = inside(&proposal);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: HashMap<Vec<Action>, f64> = HashMap::new();
    let mut ratios = Vec::with_capacity(k);
    for _ in 0..k {
        let (z, lq) = sample_tree(&chart, &proposal, &mut rng);
        if !lq.is_finite() {
            return Err(Error::NonFinite { op: "proposal log q" });
        }
        let joint = match cache.get(z.actions()) {
            Some(&j) => j,
            None => {
                let j = model.log_joint(tokens, &z)?;
                cache.insert(z.actions().to_vec(), j);
                j
            }
        };
        ratios.push(joint - lq);
    }
    Ok(log_sum_exp(&ratios) - (k as f64).ln())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perplexity {
    pub log_marginals: Vec<f64>,
    pub lengths: Vec<usize>,
    pub perplexity: f64,
}

/// Corpus perplexity `exp(-Σ log p̂(x) / Σ T)`; end-of-sentence is scored but
/// not counted as a token.
pub fn iw_perplexity(model: &Model, sentences: &[Sentence], k: usize, temperature: f64, seed: u64) -> Result<Perplexity> {
    let log_marginals = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| iw_log_marginal(model, s.tokens(), k, temperature, derive_seed(&[seed, STREAM_IW, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let lengths: Vec<usize> = sentences.iter().map(Sentence::len).collect();
    let perplexity = perplexity_of(&log_marginals, &lengths);
    Ok(Perplexity {
        log_marginals,
        lengths,
        perplexity,
    })
}

fn perplexity_of(log_marginals: &[f64], lengths: &[usize]) -> f64 {
    let tokens: usize = lengths.iter().sum();
    (-log_marginals.iter().sum::<f64>() / tokens as f64).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthBucket {
    pub min_len: usize,
    /// Inclusive; `None` for the open last bucket.
    pub max_len: Option<usize>,
    pub sentences: usize,
    /// `None` when the bucket is empty.
    pub perplexity: Option<f64>,
}

/// Perplexity within length buckets `[edges[i], edges[i+1])`, the last one
/// open-ended. Lengths below `edges[0]` are not reported.
pub fn ppl_by_length(lengths: &[usize], log_marginals: &[f64], edges: &[usize]) -> Result<Vec<LengthBucket>> {
    if lengths.len() != log_marginals.len() {
        return Err(Error::Range("lengths and log marginals differ in count".into()));
    }
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bucket edges must be non-empty and increasing".into()));
    }
    Ok(edges
        .iter()
        .enumerate()
        .map(|(b, &lo)| {
            let hi = edges.get(b + 1).map(|e| e - 1);
            let (lm, ln): (Vec<f64>, Vec<usize>) = lengths
                .iter()
                .zip(log_marginals)
                .filter(|(&l, _)| l >= lo && hi.is_none_or(|h| l <= h))
                .map(|(&l, &m)| (m, l))
                .unzip();
            LengthBucket {
                min_len: lo,
                max_len: hi,
                sentences: lm.len(),
                perplexity: (!lm.is_empty()).then(|| perplexity_of(&lm, &ln)),
            }
        })
        .collect())
}

/// Spans that count for bracket scoring: punctuation removed and positions
/// renumbered, then single-word and whole-sentence spans dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BracketSet {
    pub len: usize,
    pub spans: BTreeSet<Span>,
}

impl BracketSet {
    pub fn new(spans: impl IntoIterator<Item = Span>, punct: &[bool]) -> Result<Self> {
        let positions = Renumbering::new(punct);
        let mut out = BTreeSet::new();
        for span in spans {
            if let Some(s) = positions.map(span)? {
                out.insert(s);
            }
        }
        Ok(BracketSet {
            len: positions.len,
            spans: out,
        })
    }
}

struct Renumbering {
    /// For each original position (1-based), the count of kept words up to it.
    upto: Vec<usize>,
    punct: Vec<bool>,
    len: usize,
}

impl Renumbering {
    fn new(punct: &[bool]) -> Self {
        let mut upto = vec![0];
        for &p in punct {
            upto.push(upto.last().unwrap() + usize::from(!p));
        }
        let len = *upto.last().unwrap();
        Renumbering {
            upto,
            punct: punct.to_vec(),
            len,
        }
    }

    /// The renumbered span if it is still evaluable.
    fn map(&self, (i, j): Span) -> Result<Option<Span>> {
        if i == 0 || i > j || j > self.punct.len() {
            return Err(Error::Range(format!(
                "span ({i}, {j}) outside a sentence of {} words",
                self.punct.len()
            )));
        }
        let first = self.upto[i - 1] + 1;
        let last = self.upto[j];
        if last < first + 1 || (first == 1 && last == self.len) {
            return Ok(None);
        }
        Ok(Some((first, last)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Report {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    /// Corpus F1 in percent.
    pub f1: f64,
    /// Sentence F1 in percent; `None` when the sentence was skipped.
    pub per_sentence: Vec<Option<f64>>,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Corpus-level unlabeled bracket F1. Sentences whose gold tree has no
/// evaluable span are skipped on both sides.
pub fn unlabeled_f1(predicted: &[BTreeSet<Span>], gold: &[BTreeSet<Span>], punct: &[Vec<bool>]) -> Result<F1Report> {
    if predicted.len() != gold.len() || gold.len() != punct.len() {
        return Err(Error::Range(format!(
            "{} predicted, {} gold and {} punctuation masks",
            predicted.len(),
            gold.len(),
            punct.len()
        )));
    }
    let (mut matched, mut n_pred, mut n_gold) = (0, 0, 0);
    let mut per_sentence = Vec::with_capacity(gold.len());
    for ((p, g), mask) in predicted.iter().zip(gold).zip(punct) {
        let p = BracketSet::new(p.iter().copied(), mask)?;
        let g = BracketSet::new(g.iter().copied(), mask)?;
        if g.spans.is_empty() {
            per_sentence.push(None);
            continue;
        }
        let m = p.spans.intersection(&g.spans).count();
        matched += m;
        n_pred += p.spans.len();
        n_gold += g.spans.len();
        let prec = if p.spans.is_empty() { 0.0 } else { m as f64 / p.spans.len() as f64 };
        per_sentence.push(Some(100.0 * harmonic(prec, m as f64 / g.spans.len() as f64)));
    }
    let precision = if n_pred == 0 { 0.0 } else { matched as f64 / n_pred as f64 };
    let recall = if n_gold == 0 { 0.0 } else { matched as f64 / n_gold as f64 };
    Ok(F1Report {
        matched,
        predicted: n_pred,
        gold: n_gold,
        precision,
        recall,
        f1: 100.0 * harmonic(precision, recall),
        per_sentence,
    })
}

/// Fraction of gold constituents of each label whose span the prediction
/// contains, under the same span conventions as [`unlabeled_f1`]. Labels with
/// no gold constituent map to `None`.
pub fn label_recall(
    predicted: &[BTreeSet<Span>],
    gold: &[LabeledTree],
    punct: &[Vec<bool>],
    labels: &[&str],
) -> Result<BTreeMap<String, Option<f64>>> {
    if predicted.len() != gold.len() || gold.len() != punct.len() {
        return Err(Error::Range("label recall inputs differ in length".into()));
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = labels.iter().map(|l| (*l, (0, 0))).collect();
    for ((p, g), mask) in predicted.iter().zip(gold).zip(punct) {
        let p = BracketSet::new(p.iter().copied(), mask)?;
        let positions = Renumbering::new(mask);
        for (label, span) in g.constituents() {
            let Some(entry) = counts.get_mut(label.as_str()) else {
                continue;
            };
            if let Some(s) = positions.map(span)? {
                entry.1 += 1;
                entry.0 += usize::from(p.spans.contains(&s));
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(l, (hit, total))| (l.to_string(), (total > 0).then(|| hit as f64 / total as f64)))
        .collect())
}

/// Sentence-averaged posterior statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Distributional {
    pub reconstruction_ppl: f64,
    /// `E_q[log q(z|x) - log p(z|x_<z)]`, averaged over sentences.
    pub kl: f64,
    pub prior_entropy: f64,
    pub posterior_entropy: f64,
    pub uniform_entropy: f64,
}

/// Monte Carlo posterior statistics with `k` samples per sentence (exact
/// posterior entropy).
pub fn distributional_metrics(model: &Model, sentences: &[Sentence], k: usize, seed: u64) -> Result<Distributional> {
    if k == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    if sentences.is_empty() {
        return Err(Error::Data("no sentences to evaluate".into()));
    }
    let (gen, _) = model.rnng()?;
    let (mut recon, mut kl, mut prior_h, mut post_h, mut uniform) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut tokens_total = 0;
    for (i, s) in sentences.iter().enumerate() {
        let tokens = s.tokens();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, STREAM_DIST, i as u64]));
        let scores = model.span_scores(tokens)?;
        let chart = inside(&scores);
        let (mut r, mut d) = (0.0, 0.0);
        for _ in 0..k {
            let (z, lq) = sample_tree(&chart, &scores, &mut rng);
            let (term, act) = model.joint_terms(tokens, &z)?;
            r += term;
            d += lq - act;
        }
        let mut lp = 0.0;
        for _ in 0..k {
            let mut g = Graph::eval(&model.params);
            lp += gen.sample_actions(&mut g, tokens, &mut rng)?.1;
        }
        recon += r / k as f64;
        kl += d / k as f64;
        prior_h -= lp / k as f64;
        post_h += tree_entropy(&chart);
        uniform += log_count_trees(tokens.len());
        tokens_total += tokens.len();
    }
    let n = sentences.len() as f64;
    Ok(Distributional {
        reconstruction_ppl: (-recon / tokens_total as f64).exp(),
        kl: kl / n,
        prior_entropy: prior_h / n,
        posterior_entropy: post_h / n,
        uniform_entropy: uniform / n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preference {
    pub first: bool,
    /// `log p̂(a) - log p̂(b)`.
    pub margin: f64,
}

/// Which of two sentences the model finds more probable. Both estimates use
/// the same sample stream.
pub fn prefer_grammatical(model: &Model, a: &[usize], b: &[usize], k: usize, temperature: f64, seed: u64) -> Result<Preference> {
    let la = iw_log_marginal(model, a, k, temperature, seed)?;
    let lb = iw_log_marginal(model, b, k, temperature, seed)?;
    Ok(Preference {
        first: la >= lb,
        margin: la - lb,
    })
}

/// Options for [`evaluate`].
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub samples: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Samples per sentence for the posterior statistics.
    pub dist_samples: usize,
    pub bucket_edges: Vec<usize>,
    pub labels: Vec<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            samples: DEFAULT_SAMPLES,
            temperature: DEFAULT_TEMPERATURE,
            seed: 3435,
            dist_samples: 100,
            bucket_edges: vec![1, 10, 20, 30, 40, 50],
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Everything the evaluate command reports.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub sentences: usize,
    pub tokens: usize,
    pub perplexity: Perplexity,
    pub buckets: Vec<LengthBucket>,
    pub distributional: Option<Distributional>,
    pub f1: Option<F1Report>,
    /// F1 of the right-binarized gold trees, the best a binary parser can do.
    pub binary_upper_bound: Option<f64>,
    pub label_recall: BTreeMap<String, Option<f64>>,
    pub parses: Vec<TreeRepr>,
}

/// Runs every metric the model supports; bracket metrics need `gold`.
pub fn evaluate(model: &Model, sentences: &[Sentence], gold: Option<&[LabeledTree]>, opts: &EvalOptions) -> Result<EvalReport> {
    if sentences.is_empty() {
        return Err(Error::Data("no sentences to evaluate".into()));
    }
    let perplexity = iw_perplexity(model, sentences, opts.samples, opts.temperature, opts.seed)?;
    let buckets = ppl_by_length(&perplexity.lengths, &perplexity.log_marginals, &opts.bucket_edges)?;
    let mut report = EvalReport {
        sentences: sentences.len(),
        tokens: sentences.iter().map(Sentence::len).sum(),
        perplexity,
        buckets,
        distributional: None,
        f1: None,
        binary_upper_bound: None,
        label_recall: BTreeMap::new(),
        parses: Vec::new(),
    };
    if model.is_lm() {
        return Ok(report);
    }
    report.distributional = Some(distributional_metrics(model, sentences, opts.dist_samples, opts.seed)?);
    report.parses = sentences
        .iter()
        .map(|s| Ok(viterbi(&model.span_scores(s.tokens())?).0))
        .collect::<Result<_>>()?;
    if let Some(gold) = gold {
        if gold.len() != sentences.len() {
            return Err(Error::Data(format!("{} gold trees for {} sentences", gold.len(), sentences.len())));
        }
        let punct: Vec<Vec<bool>> = sentences.iter().map(|s| s.punct_mask().to_vec()).collect();
        let pred: Vec<BTreeSet<Span>> = report.parses.iter().map(|t| t.spans().clone()).collect();
        let gold_spans: Vec<BTreeSet<Span>> = gold.iter().map(LabeledTree::spans).collect();
        report.f1 = Some(unlabeled_f1(&pred, &gold_spans, &punct)?);
        let binarized: Vec<BTreeSet<Span>> = gold.iter().map(|t| t.binarize_right().spans().clone()).collect();
        report.binary_upper_bound = Some(unlabeled_f1(&binarized, &gold_spans, &punct)?.f1);
        let labels: Vec<&str> = opts.labels.iter().map(String::as_str).collect();
        report.label_recall = label_recall(&pred, gold, &punct, &labels)?;
    }
    Ok(report)
}

impl EvalReport {
    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sentences={}", self.sentences);
        let _ = writeln!(out, "tokens={}", self.tokens);
        let _ = writeln!(out, "perplexity={:.4}", self.perplexity.perplexity);
        if let Some(d) = &self.distributional {
            let _ = writeln!(out, "reconstruction_ppl={:.4}", d.reconstruction_ppl);
            let _ = writeln!(out, "kl={:.4}", d.kl);
            let _ = writeln!(out, "prior_entropy={:.4}", d.prior_entropy);
            let _ = writeln!(out, "posterior_entropy={:.4}", d.posterior_entropy);
            let _ = writeln!(out, "uniform_entropy={:.4}", d.uniform_entropy);
        }
        if let Some(f) = &self.f1 {
            let _ = writeln!(out, "f1={:.2}", f.f1);
            let _ = writeln!(out, "precision={:.4}", f.precision);
            let _ = writeln!(out, "recall={:.4}", f.recall);
        }
        if let Some(b) = self.binary_upper_bound {
            let _ = writeln!(out, "binary_upper_bound_f1={b:.2}");
        }
        for (label, r) in &self.label_recall {
            match r {
                Some(r) => {
                    let _ = writeln!(out, "recall_{label}={r:.4}");
                }
                None => {
                    let _ = writeln!(out, "recall_{label}=-");
                }
            }
        }
        for b in &self.buckets {
            let range = match b.max_len {
                Some(h) => format!("{}-{h}", b.min_len),
                None => format!("{}+", b.min_len),
            };
            match b.perplexity {
                Some(p) => {
                    let _ = writeln!(out, "ppl_len_{range}={p:.4}");
                }
                None => {
                    let _ = writeln!(out, "ppl_len_{range}=-");
                }
            }
        }
        out
    }

    /// Tab-separated per-sentence rows: index, length, log marginal, F1.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("index\tlength\tlog_marginal\tf1\n");
        for (i, (&len, lm)) in self
            .perplexity
            .lengths
            .iter()
            .zip(&self.perplexity.log_marginals)
            .enumerate()
        {
            let f1 = self
                .f1
                .as_ref()
                .and_then(|f| f.per_sentence[i])
                .map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(out, "{i}\t{len}\t{lm:.6}\t{f1}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(spans: &[Span]) -> BTreeSet<Span> {
        spans.iter().copied().collect()
    }

    fn spans(t: &str) -> (BTreeSet<Span>, usize) {
        let tree = LabeledTree::parse(t).unwrap();
        (tree.spans(), tree.len())
    }

    #[test]
    fn identical_trees_score_100() {
        let (g, n) = spans("(S (NP (D a) (N b)) (VP (V c) (NP (D d) (N e))))");
        let r = unlabeled_f1(&[g.clone()], &[g], &[vec![false; n]]).unwrap();
        assert_eq!(r.f1, 100.0);
    }

    #[test]
    fn punctuation_is_renumbered_away() {
        // "a b , c ." with gold ((a b) , c) .
        let punct = vec![false, false, true, false, true];
        let gold = set(&[(1, 5), (1, 2), (1, 4)]);
        let pred = set(&[(1, 5), (1, 3), (1, 2)]);
        let r = unlabeled_f1(&[pred], &[gold], &[punct]).unwrap();
        assert_eq!(r.f1, 100.0);
        assert_eq!(r.gold, 1);
    }

    #[test]
    fn sentences_without_gold_spans_are_skipped() {
        let pred = [set(&[(1, 2)]), set(&[(1, 3), (1, 2)])];
        let gold = [set(&[(1, 2)]), set(&[(1, 3), (2, 3)])];
        let r = unlabeled_f1(&pred, &gold, &[vec![false; 2], vec![false; 3]]).unwrap();
        assert_eq!(r.per_sentence[0], None);
        assert_eq!((r.matched, r.predicted, r.gold), (0, 1, 1));
    }

    #[test]
    fn buckets_recombine() {
        let lengths = [3, 5, 12, 15];
        let lm = [-7.0, -11.0, -30.0, -41.0];
        let all = ppl_by_length(&lengths, &lm, &[1]).unwrap();
        assert!((all[0].perplexity.unwrap() - perplexity_of(&lm, &lengths)).abs() < 1e-12);
        let two = ppl_by_length(&lengths, &lm, &[1, 10, 40]).unwrap();
        assert_eq!(two[2].perplexity, None);
        let (a, b) = (two[0].perplexity.unwrap(), two[1].perplexity.unwrap());
        let joined = ((8.0 * a.ln() + 27.0 * b.ln()) / 35.0).exp();
        assert!((joined - all[0].perplexity.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn label_recall_counts() {
        let gold = LabeledTree::parse("(S (NP (D a) (N b)) (VP (V c) (NP (D d) (N e))) (ADVP (R f) (R g)))").unwrap();
        let pred = set(&[(1, 2), (1, 5)]);
        let r = label_recall(&[pred], &[gold], &[vec![false; 7]], &["NP", "VP", "QP"]).unwrap();
        assert!((r["NP"].unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(r["VP"], Some(0.0));
        assert_eq!(r["QP"], None);
    }
}
