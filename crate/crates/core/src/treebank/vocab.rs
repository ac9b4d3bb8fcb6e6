use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK: usize = 0;
pub const EOS: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "</s>";

/// Punctuation surface forms from evalb's COLLINS parameter file.
pub const DEFAULT_PUNCTUATION: &[&str] = &[",", ".", ":", ";", "?", "!", "``", "''", "--", "...", "-LRB-", "-RRB-"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Only the reserved entries.
    pub fn reserved() -> Self {
        Vocabulary::from_tokens(Vec::<String>::new()).expect("reserved tokens are distinct")
    }

    /// Reserved entries followed by `tokens` in order.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut all = vec![UNK_TOKEN.to_string(), EOS_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocabulary { tokens: all, index })
    }

    /// Keeps tokens seen at least `min_count` times, sorted by descending
    /// frequency then lexicographically.
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>], min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for w in s {
                *counts.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_count && w != UNK_TOKEN && w != EOS_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Vocabulary::from_tokens(kept.into_iter().map(|(w, _)| w.to_string())).expect("distinct by construction")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a surface form; unknown forms (and the end-of-sentence marker,
    /// which never appears inside a sentence) map to [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&EOS) | None => UNK,
            Some(&i) => i,
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Set of surface forms treated as punctuation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Punctuation(HashSet<String>);

impl Default for Punctuation {
    fn default() -> Self {
        Punctuation::new(DEFAULT_PUNCTUATION.iter().copied())
    }
}

impl Punctuation {
    pub fn new<S: Into<String>>(forms: impl IntoIterator<Item = S>) -> Self {
        Punctuation(forms.into_iter().map(Into::into).collect())
    }

    pub fn none() -> Self {
        Punctuation(HashSet::new())
    }

    pub fn contains(&self, form: &str) -> bool {
        self.0.contains(form)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<usize>,
    punct: Vec<bool>,
    raw: Vec<String>,
}

impl Sentence {
    pub fn new<S: AsRef<str>>(words: &[S], vocab: &Vocabulary, punct: &Punctuation) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Data("empty sentence".into()));
        }
        Ok(Sentence {
            tokens: words.iter().map(|w| vocab.id(w.as_ref())).collect(),
            punct: words.iter().map(|w| punct.contains(w.as_ref())).collect(),
            raw: words.iter().map(|w| w.as_ref().to_string()).collect(),
        })
    }

    /// A sentence given directly by ids, with placeholder surface forms.
    pub fn from_ids(tokens: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("empty sentence".into()));
        }
        if tokens.contains(&EOS) {
            return Err(Error::Data("end-of-sentence id inside a sentence".into()));
        }
        let raw = tokens.iter().map(|t| format!("w{t}")).collect();
        Ok(Sentence {
            punct: vec![false; tokens.len()],
            tokens,
            raw,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn punct_mask(&self) -> &[bool] {
        &self.punct
    }

    pub fn raw(&self) -> &[String] {
        &self.raw
    }
}

/// Whitespace-tokenized lines of a file, empty lines skipped.
pub fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|t| !t.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::Data(format!("{}: no sentences", path.display())));
    }
    Ok(lines)
}

/// Reads a corpus against an existing vocabulary.
pub fn read_corpus(path: &Path, vocab: &Vocabulary, punct: &Punctuation) -> Result<Vec<Sentence>> {
    read_token_lines(path)?
        .iter()
        .map(|words| Sentence::new(words, vocab, punct))
        .collect()
}

/// Reads a training corpus and builds its vocabulary.
pub fn read_training_corpus(
    path: &Path,
    min_count: usize,
    punct: &Punctuation,
) -> Result<(Vocabulary, Vec<Sentence>)> {
    let lines = read_token_lines(path)?;
    let vocab = Vocabulary::build(&lines, min_count);
    let sentences = lines
        .iter()
        .map(|words| Sentence::new(words, &vocab, punct))
        .collect::<Result<Vec<_>>>()?;
    Ok((vocab, sentences))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_mask_and_ids() {
        let vocab = Vocabulary::from_tokens(["the", "dog", "barks", "."]).unwrap();
        let s = Sentence::new(&["the", "dog", "barks", "."], &vocab, &Punctuation::default()).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.punct_mask(), &[false, false, false, true]);
        assert_eq!(s.tokens(), &[2, 3, 4, 5]);
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let vocab = Vocabulary::from_tokens(["a"]).unwrap();
        let s = Sentence::new(&["a", "zebra", EOS_TOKEN], &vocab, &Punctuation::none()).unwrap();
        assert_eq!(s.tokens(), &[2, UNK, UNK]);
    }

    #[test]
    fn frequency_threshold() {
        let lines = vec![vec!["a", "b", "a"], vec!["c", "a", "b"]];
        let v = Vocabulary::build(&lines, 2);
        assert_eq!(v.tokens(), &[UNK_TOKEN, EOS_TOKEN, "a", "b"]);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.txt");
        std::fs::write(&p, "\n  \n").unwrap();
        assert!(matches!(read_token_lines(&p), Err(Error::Data(_))));
        assert!(matches!(read_token_lines(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
