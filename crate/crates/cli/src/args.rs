//! Command-line interface definition.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "lexnmt",
    version,
    about = "Attentional encoder-decoder translation with discrete probabilistic lexicons"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build a frequency-thresholded vocabulary from one side of a corpus.
    Vocab(VocabOpts),
    /// Learn the automatic lexicon from a parallel corpus by EM.
    LexiconTrain(LexiconTrainOpts),
    /// Build a manual lexicon from a dictionary, optionally filling up an
    /// automatic one.
    LexiconMerge(LexiconMergeOpts),
    /// Train a translation model, logging a per-epoch training curve.
    Train(TrainOpts),
    /// Translate with beam search and unknown-word replacement.
    Translate(TranslateOpts),
    /// Score translations: BLEU, NIST, rare-word recall, significance.
    Evaluate(EvaluateOpts),
}

#[derive(Args)]
pub struct CommonOpts {
    /// Flat key=value configuration file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Hyperparameter profile: desk (default) or paper.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Random seed; identical seeds reproduce artifacts byte for byte.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct VocabOpts {
    /// Tokenized text, one sentence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary file to write.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Keep tokens occurring at least this many times.
    #[arg(long, short = 'u')]
    pub threshold: Option<u32>,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args)]
pub struct LexiconTrainOpts {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub trg: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub trg_vocab: PathBuf,
    /// Lexicon TSV to write.
    #[arg(long, short)]
    pub output: PathBuf,
    /// EM iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Include a NULL source word in alignment.
    #[arg(long)]
    pub null_word: bool,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args)]
pub struct LexiconMergeOpts {
    /// Automatic lexicon TSV; when given, the output is the fill-up hybrid.
    #[arg(long)]
    pub auto: Option<PathBuf>,
    /// Dictionary TSV: `source<TAB>target`, one pair per line.
    #[arg(long)]
    pub manual: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub trg_vocab: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args)]
pub struct TrainOpts {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub trg: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub trg_vocab: PathBuf,
    #[arg(long)]
    pub dev_src: Option<PathBuf>,
    #[arg(long)]
    pub dev_trg: Option<PathBuf>,
    /// Output distribution: base, bias or linear.
    #[arg(long)]
    pub mode: Option<String>,
    /// Lexicon TSV; required in bias and linear modes.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub model_out: PathBuf,
    /// Training-curve TSV to write.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed: Option<usize>,
    /// Bias-mode epsilon added to lexicon probabilities before the log.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args)]
pub struct TranslateOpts {
    #[arg(long)]
    pub model: PathBuf,
    /// Tokenized source text, one sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub trg_vocab: PathBuf,
    /// Lexicon TSV backing bias/linear model modes.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Lexicon TSV used to replace emitted unknown tokens.
    #[arg(long)]
    pub replace_unk: Option<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, short)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub eos_discount: Option<f64>,
    /// Maximum output length (default 2|F| + 5).
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Sidecar TSV of per-step attention vectors.
    #[arg(long)]
    pub attention: Option<PathBuf>,
    /// JSON-lines record of unknown-word replacements.
    #[arg(long)]
    pub replacements: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonOpts,
}

#[derive(Args)]
pub struct EvaluateOpts {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Target-side training corpus for rare-word recall.
    #[arg(long)]
    pub train_trg: Option<PathBuf>,
    /// Rare-word frequency threshold.
    #[arg(long)]
    pub rare_threshold: Option<u64>,
    /// Count a token as rare from the training corpus only, ignoring
    /// reference frequencies.
    #[arg(long)]
    pub rare_in_training_only: bool,
    /// Baseline translations for paired bootstrap significance.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Bootstrap resampling iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Bootstrap metric: bleu (default) or nist.
    #[arg(long)]
    pub metric: Option<String>,
    /// Attention TSV (from translate --attention) for entropy.
    #[arg(long)]
    pub attention: Option<PathBuf>,
    /// Add-one smoothing for higher-order BLEU precisions.
    #[arg(long)]
    pub smooth: bool,
    /// System name for the report and summary row.
    #[arg(long, default_value = "system")]
    pub system: String,
    /// JSON report to write.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Flat TSV summary row to write.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonOpts,
}
