//! Probabilistic context-free grammars and corpus sampling.
//!
//! Grammar files hold one rule per line, `LHS -> RHS... probability`, with
//! `#` comments. The first left-hand side is the start symbol; symbols that
//! never appear on a left-hand side are terminals.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::treebank::LabeledTree;

/// The grammar shipped with the crate.
pub const DEFAULT_GRAMMAR: &str = include_str!("../data/default.pcfg");

/// Derivations deeper than this are abandoned and resampled.
const MAX_DEPTH: usize = 200;
/// Attempts allowed per requested sentence before giving up.
const MAX_ATTEMPTS_PER_SENTENCE: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Symbol {
    Nonterminal(usize),
    Terminal(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub lhs: usize,
    pub rhs: Vec<Symbol>,
    pub prob: f64,
}

#[derive(Clone, Debug)]
pub struct Grammar {
    pub nonterminals: Vec<String>,
    pub rules: Vec<Rule>,
    by_lhs: Vec<Vec<usize>>,
    choosers: Vec<WeightedIndex<f64>>,
}

impl Grammar {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Parse {
                path: PathBuf::from("<grammar>"),
                line: n + 1,
                message: m.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 4 || fields[1] != "->" {
                return Err(bad("expected `LHS -> RHS... probability`"));
            }
            let prob: f64 = fields[fields.len() - 1]
                .parse()
                .map_err(|_| bad("last field must be a probability"))?;
            if !(prob > 0.0 && prob <= 1.0) {
                return Err(bad("probability must lie in (0, 1]"));
            }
            raw.push((fields[0], fields[2..fields.len() - 1].to_vec(), prob, n + 1));
        }
        if raw.is_empty() {
            return Err(Error::Config("grammar has no rules".into()));
        }
        let mut ids: HashMap<&str, usize> = HashMap::new();
        let mut nonterminals = Vec::new();
        for (lhs, ..) in &raw {
            if !ids.contains_key(lhs) {
                ids.insert(lhs, nonterminals.len());
                nonterminals.push(lhs.to_string());
            }
        }
        let mut by_lhs = vec![Vec::new(); nonterminals.len()];
        let mut rules = Vec::with_capacity(raw.len());
        for (lhs, rhs, prob, _) in &raw {
            let rhs = rhs
                .iter()
                .map(|s| match ids.get(s) {
                    Some(&i) => Symbol::Nonterminal(i),
                    None => Symbol::Terminal(s.to_string()),
                })
                .collect();
            by_lhs[ids[lhs]].push(rules.len());
            rules.push(Rule {
                lhs: ids[lhs],
                rhs,
                prob: *prob,
            });
        }
        for (a, rs) in by_lhs.iter().enumerate() {
            let total: f64 = rs.iter().map(|&r| rules[r].prob).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "rules for {} sum to {total}, not 1",
                    nonterminals[a]
                )));
            }
        }
        let choosers = by_lhs
            .iter()
            .map(|rs| WeightedIndex::new(rs.iter().map(|&r| rules[r].prob)).expect("positive weights"))
            .collect();
        let g = Grammar {
            nonterminals,
            rules,
            by_lhs,
            choosers,
        };
        let rho = g.spectral_radius();
        if rho >= 1.0 - 1e-9 {
            return Err(Error::Config(format!(
                "grammar is not proper: expected-expansion spectral radius {rho:.6} >= 1"
            )));
        }
        Ok(g)
    }

    pub fn default_grammar() -> Self {
        Grammar::parse(DEFAULT_GRAMMAR).expect("bundled grammar is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Grammar::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            e => e,
        })
    }

    pub fn rules_for(&self, lhs: usize) -> &[usize] {
        &self.by_lhs[lhs]
    }

    pub fn terminals(&self) -> BTreeSet<&str> {
        self.rules
            .iter()
            .flat_map(|r| &r.rhs)
            .filter_map(|s| match s {
                Symbol::Terminal(t) => Some(t.as_str()),
                Symbol::Nonterminal(_) => None,
            })
            .collect()
    }

    /// Spectral radius of the expected-offspring matrix, by power iteration.
    /// Generation terminates with probability one when it is below one.
    pub fn spectral_radius(&self) -> f64 {
        let n = self.nonterminals.len();
        let mut m = vec![vec![0.0; n]; n];
        for r in &self.rules {
            for s in &r.rhs {
                if let Symbol::Nonterminal(b) = s {
                    m[r.lhs][*b] += r.prob;
                }
            }
        }
        let mut x = vec![1.0; n];
        let mut log_growth = 0.0;
        const STEPS: usize = 2000;
        for _ in 0..STEPS {
            let y: Vec<f64> = (0..n).map(|a| (0..n).map(|b| m[a][b] * x[b]).sum()).collect();
            let norm = y.iter().fold(0.0f64, |acc, v| acc.max(*v));
            if norm == 0.0 {
                return 0.0;
            }
            log_growth += norm.ln();
            x = y.into_iter().map(|v| v / norm).collect();
        }
        (log_growth / STEPS as f64).exp()
    }

    /// One derivation from the start symbol, or `None` if it grew too deep.
    /// Also reports which rules it used.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, used: &mut Vec<usize>) -> Option<LabeledTree> {
        used.clear();
        self.expand(0, rng, 0, used)
    }

    fn expand<R: Rng + ?Sized>(&self, a: usize, rng: &mut R, depth: usize, used: &mut Vec<usize>) -> Option<LabeledTree> {
        if depth > MAX_DEPTH {
            return None;
        }
        let r = self.by_lhs[a][self.choosers[a].sample(rng)];
        used.push(r);
        let mut children = Vec::with_capacity(self.rules[r].rhs.len());
        for s in &self.rules[r].rhs {
            children.push(match s {
                Symbol::Terminal(t) => LabeledTree::Leaf(t.clone()),
                Symbol::Nonterminal(b) => self.expand(*b, rng, depth + 1, used)?,
            });
        }
        Some(LabeledTree::Node {
            label: self.nonterminals[a].clone(),
            children,
        })
    }
}

/// Samples `n` trees whose yields have between `min_len` and `max_len` words.
pub fn synth_corpus(grammar: &Grammar, n: usize, min_len: usize, max_len: usize, seed: u64) -> Result<Vec<LabeledTree>> {
    if min_len == 0 || min_len > max_len {
        return Err(Error::Config(format!("need 1 <= min_len <= max_len, got {min_len}..{max_len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = n.saturating_mul(MAX_ATTEMPTS_PER_SENTENCE).max(MAX_ATTEMPTS_PER_SENTENCE);
    let mut out = Vec::with_capacity(n);
    let mut used = Vec::new();
    let mut attempts = 0;
    while out.len() < n {
        if attempts == budget {
            return Err(Error::Data(format!(
                "over 99% of samples fell outside lengths {min_len}..={max_len}; the bounds do not suit the grammar"
            )));
        }
        attempts += 1;
        if let Some(t) = grammar.sample(&mut rng, &mut used) {
            if (min_len..=max_len).contains(&t.len()) {
                out.push(t);
            }
        }
    }
    Ok(out)
}

/// Writes `{prefix}.tokens` (one sentence per line) and `{prefix}.trees`
/// (one bracketed tree per line); returns both paths.
pub fn write_corpus(trees: &[LabeledTree], prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let with_ext = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    let (tokens_path, trees_path) = (with_ext(".tokens"), with_ext(".trees"));
    let mut tokens = String::new();
    let mut brackets = String::new();
    for t in trees {
        tokens.push_str(&t.words().join(" "));
        tokens.push('\n');
        brackets.push_str(&t.to_string());
        brackets.push('\n');
    }
    write_atomic(&tokens_path, tokens.as_bytes())?;
    write_atomic(&trees_path, brackets.as_bytes())?;
    Ok((tokens_path, trees_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grammar_is_proper() {
        let g = Grammar::default_grammar();
        assert!(g.spectral_radius() < 1.0);
        assert!((45..=60).contains(&g.terminals().len()));
    }

    #[test]
    fn improper_grammars_are_rejected() {
        let err = Grammar::parse("S -> S S 0.6\nS -> a 0.4").unwrap_err();
        assert!(err.to_string().contains("not proper"), "{err}");
        assert!(Grammar::parse("S -> a 0.5\nS -> b 0.4").is_err());
        assert!(Grammar::parse("S a 0.5").is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let g = Grammar::default_grammar();
        let a = synth_corpus(&g, 200, 3, 12, 7).unwrap();
        assert_eq!(a, synth_corpus(&g, 200, 3, 12, 7).unwrap());
        assert!(a.iter().all(|t| (3..=12).contains(&t.len())));
        assert!(a.iter().all(|t| LabeledTree::parse(&t.to_string()).unwrap() == *t));
    }

    #[test]
    fn impossible_bounds_fail() {
        let g = Grammar::parse("S -> a b 1.0").unwrap();
        assert!(matches!(synth_corpus(&g, 3, 5, 6, 0), Err(Error::Data(_))));
    }
}
