//! The CRF inference network over binary trees: span scoring, inside,
//! sampling, entropy and Viterbi decoding.

mod chart;
mod graph_chart;
mod network;
mod scores;

pub use chart::{inside, log_q, sample_tree, split_log_weights, tree_entropy, viterbi, Chart};
pub use graph_chart::{inside_graph, GraphChart};
pub use network::InferenceNetwork;
pub use scores::{SpanIndex, SpanScores};
