use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// `print!` that ends the process quietly when standard output is closed.
macro_rules! out {
    ($($arg:tt)*) => { $crate::emit(format_args!($($arg)*)) };
}

macro_rules! outln {
    ($($arg:tt)*) => { $crate::emit(format_args!("{}\n", format_args!($($arg)*))) };
}

mod commands;

/// Train, run and evaluate unsupervised recurrent neural network grammars.
#[derive(Parser, Debug)]
#[command(name = "urnng", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Write the Viterbi tree of every sentence.
    Parse(ParseArgs),
    /// Perplexity, posterior statistics and (with gold trees) bracket F1.
    Evaluate(EvaluateArgs),
    /// Draw trees from the inference network for each sentence.
    Sample(SampleArgs),
    /// Draw sentences and trees from the generative model.
    Generate(GenerateArgs),
    /// Sample a corpus with gold trees from a grammar.
    Synth(SynthArgs),
    /// Cross-check the chart algorithms and model against brute-force enumeration.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training sentences: one per line, or one bracketed tree per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Validation sentences, in either format.
    #[arg(long)]
    pub valid: PathBuf,
    /// Overrides the mode in the config file.
    #[arg(long)]
    pub mode: Option<String>,
    /// TOML file of training settings; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue the run stored in this checkpoint.
    #[arg(long, conflicts_with_all = ["init", "config", "mode", "seed"])]
    pub resume: Option<PathBuf>,
    /// Start from the parameters and vocabulary of this checkpoint (fine-tuning).
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output file; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Gold bracketed trees aligned with the corpus.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Importance samples per sentence.
    #[arg(long = "samples", default_value_t = urnng::eval::DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Temperature that flattens the proposal.
    #[arg(long, default_value_t = urnng::eval::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = 3435)]
    pub seed: u64,
    /// Write the key=value report here as well as to standard output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-sentence TSV output.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Trees per sentence.
    #[arg(long, default_value_t = 5)]
    pub samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 3435)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub max_len: usize,
    #[arg(long, default_value_t = 3435)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Grammar file; the bundled grammar if omitted.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    #[arg(long, default_value_t = 3435)]
    pub seed: u64,
    /// Writes PREFIX.tokens and PREFIX.trees.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 8)]
    pub max_length: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 3435)]
    pub seed: u64,
}

/// Exit statuses.
pub mod exit {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERIC: u8 = 3;
    pub const VERIFY: u8 = 4;
}

pub enum Failure {
    Lib(urnng::Error),
    Verify(usize),
}

impl From<urnng::Error> for Failure {
    fn from(e: urnng::Error) -> Self {
        Failure::Lib(e)
    }
}

pub fn emit(args: std::fmt::Arguments<'_>) {
    use std::io::Write;
    if let Err(e) = std::io::stdout().lock().write_fmt(args) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: writing to standard output: {e}");
        std::process::exit(exit::DATA.into());
    }
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Parse(a) => commands::parse(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Sample(a) => commands::sample(a),
        Command::Generate(a) => commands::generate(a),
        Command::Synth(a) => commands::synth(a),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { exit::NUMERIC } else { exit::DATA })
        }
        Err(Failure::Verify(n)) => {
            eprintln!("error: {n} verification check(s) failed");
            ExitCode::from(exit::VERIFY)
        }
    }
}
