//! Sentences, vocabularies, binary trees and treebank I/O.

mod bracketed;
mod tree;
mod vocab;

pub use bracketed::{base_label, read_bracketed, read_trees, LabeledTree};
pub use tree::{actions_to_tree, count_trees, log_count_trees, tree_to_actions, Action, Span, TreeRepr};
pub use vocab::{
    read_corpus, read_token_lines, read_training_corpus, Punctuation, Sentence, Vocabulary,
    DEFAULT_PUNCTUATION, EOS, EOS_TOKEN, UNK, UNK_TOKEN,
};
