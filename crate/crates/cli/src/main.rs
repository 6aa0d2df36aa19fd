//! `convtx`: vocabulary building, training, translation, scoring and
//! alignment analysis for character-level translation models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "convtx", version, about = "Character-level transformer / convtransformer translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ToyTask {
    Copy,
    Cipher,
}

#[derive(Subcommand)]
enum Command {
    /// Build a shared character vocabulary from parallel corpora.
    BuildVocab {
        /// Source-side files (repeatable, paired with --tgt in order).
        #[arg(long, required = true)]
        src: Vec<PathBuf>,
        #[arg(long, required = true)]
        tgt: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// TSV transliteration table applied before counting.
        #[arg(long)]
        translit: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
    },
    /// Train a model from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate a file line by line.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Beam width; greedy decoding when omitted.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        length_penalty: f64,
        /// Directory for per-line cross-attention matrices.
        #[arg(long)]
        dump_attn: Option<PathBuf>,
        #[arg(long)]
        translit: Option<PathBuf>,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Character tokens instead of whitespace-separated words.
        #[arg(long)]
        char: bool,
        #[arg(long)]
        smooth: bool,
    },
    /// Compare cross-attention alignments of checkpoints with CCA.
    Analyze {
        #[arg(long)]
        ckpt_a: PathBuf,
        /// Repeatable; one report row per checkpoint.
        #[arg(long, required = true)]
        ckpt_b: Vec<PathBuf>,
        #[arg(long)]
        src: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = convtransformer::align::DEFAULT_GRID)]
        grid: usize,
        #[arg(long, default_value_t = convtransformer::align::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = convtransformer::align::DEFAULT_REG)]
        reg: f64,
        /// Language tag written to the report.
        #[arg(long, default_value = "test")]
        lang: String,
        #[arg(long)]
        translit: Option<PathBuf>,
        /// Directory for the sampled attention matrices of every model.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Write a synthetic parallel corpus.
    ToyData {
        #[arg(long, value_enum)]
        task: ToyTask,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildVocab { src, tgt, out, translit, min_count } => {
            commands::build_vocab(&src, &tgt, &out, translit.as_deref(), min_count)
        }
        Command::Train { config, out, resume } => commands::train(&config, &out, resume.as_deref()),
        Command::Translate { ckpt, input, out, beam, length_penalty, dump_attn, translit } => {
            commands::translate(&ckpt, &input, &out, beam, length_penalty, dump_attn.as_deref(), translit.as_deref())
        }
        Command::Score { hyp, reference, char, smooth } => commands::score(&hyp, &reference, char, smooth),
        Command::Analyze { ckpt_a, ckpt_b, src, reference, n, out, seed, grid, k, reg, lang, translit, dump_dir } => {
            let opts = config::AnalyzeConfig { n, grid, k, reg, seed };
            commands::analyze(
                &ckpt_a,
                &ckpt_b,
                &src,
                &reference,
                &opts,
                &lang,
                &out,
                translit.as_deref(),
                dump_dir.as_deref(),
            )
        }
        Command::ToyData { task, n, out_dir, seed } => {
            commands::toy_data(matches!(task, ToyTask::Cipher), n, &out_dir, seed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
