//! Unsupervised recurrent neural network grammars: a generative RNNG trained
//! jointly with a CRF inference network over binary trees.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod crf;
pub mod error;
pub mod eval;
pub mod layers;
pub mod lm;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod rnng;
pub mod synth;
pub mod train;
pub mod treebank;
pub mod verify;

pub use config::{Mode, TrainConfig};
pub use error::{Error, Result};
pub use model::{Arch, Model};
pub use train::{Dataset, EpochRecord, TrainState, Trainer};
pub use treebank::{Action, Sentence, TreeRepr, Vocabulary};
