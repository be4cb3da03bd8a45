//! The `iolab` command line: data generation, vocabulary building, training,
//! decoding, evaluation, sweeps, and single-sentence traces.
//!
//! Every subcommand accepts `--config <file>` with UTF-8 `key = value` lines;
//! explicit flags override config values. Exit codes: 0 success, 1 usage
//! error, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::corpus::{
    build_vocabulary, generate_synthetic, load_parallel, load_sentences, write_parallel,
    ParallelExample, SyntheticTaskSpec, TaskKind, Vocabulary,
};
use crate::decoder::{decode, render_trace, DecodeConfig, DecodeMode};
use crate::evaluation::{
    adherence, corpus_bleu, exact_match, length_binned_bleu, AdherenceMode,
};
use crate::harness::{
    default_gammas, sweep, train_logged, SweepGrid, TrainConfig,
};
use crate::model::Model;
use crate::orders::{OrderKind, OrderSpec};

/// Keys a config file may define; anything else is rejected to catch typos.
const CONFIG_KEYS: &[&str] = &[
    "order",
    "tau",
    "eos_penalty",
    "mode",
    "steps",
    "batch_size",
    "lr",
    "warmup",
    "seed",
    "d_model",
    "n_layers",
    "n_heads",
    "d_ffn",
    "dropout",
    "max_len",
    "train_src",
    "train_tgt",
    "dev_src",
    "dev_tgt",
    "vocab",
    "checkpoint",
];

/// Parsed `key = value` config file.
#[derive(Debug, Default)]
pub struct ConfigFile {
    map: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`, got {raw:?}", path.display(), i + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            if !CONFIG_KEYS.contains(&key) {
                bail!(
                    "{}:{}: unknown config key `{key}` (valid keys: {})",
                    path.display(),
                    i + 1,
                    CONFIG_KEYS.join(", ")
                );
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                bail!("{}:{}: duplicate config key `{key}`", path.display(), i + 1);
            }
        }
        Ok(ConfigFile { map })
    }

    fn load_opt(path: Option<&Path>) -> Result<ConfigFile> {
        match path {
            Some(p) => ConfigFile::load(p),
            None => Ok(ConfigFile::default()),
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!("config key `{key}` = {raw:?}: {e}"),
            },
        }
    }
}

/// Flag if given, else the config value, else the default.
fn merged<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str, default: T) -> Result<T>
where
    T::Err: fmt::Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(cfg.get(key)?.unwrap_or(default)),
    }
}

/// Flag if given, else the config value, else an error naming both spellings.
fn need<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    match flag {
        Some(v) => Ok(v),
        None => cfg.get(key)?.ok_or_else(|| {
            anyhow::anyhow!("missing --{} (or config key `{key}`)", key.replace('_', "-"))
        }),
    }
}

#[derive(Parser, Debug)]
#[command(name = "iolab", version, about = "Insertion-based sequence generation lab")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic parallel corpus (and its vocabulary).
    GenData(GenDataArgs),
    /// Build a frequency-sorted vocabulary from token text files.
    BuildVocab(BuildVocabArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Decode a source file with a trained checkpoint.
    Decode(DecodeArgs),
    /// Score hypotheses or a checkpoint (BLEU, exact match, adherence, bins).
    Evaluate(EvaluateArgs),
    /// Evaluate checkpoints over the (tau, gamma, mode) grid.
    Sweep(SweepArgs),
    /// Print the insertion trace for one source sentence.
    Trace(TraceArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Task kind: copy, reverse, sort, lexicon-translate.
    #[arg(long, value_parser = TaskKind::from_str)]
    task: TaskKind,
    /// Content vocabulary size (specials come on top).
    #[arg(long)]
    vocab_size: usize,
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of examples to draw.
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out_src: PathBuf,
    #[arg(long)]
    out_tgt: PathBuf,
    /// Also write the task vocabulary as TSV.
    #[arg(long)]
    out_vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildVocabArgs {
    /// Token text files to count (repeatable).
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Keep at most this many content tokens.
    #[arg(long, default_value_t = 32_000)]
    max_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generation order kind.
    #[arg(long, value_parser = OrderKind::from_str)]
    order: Option<OrderKind>,
    /// Oracle softmax temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Warmup steps of the inverse-square-root schedule.
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Steps between metrics lines.
    #[arg(long, default_value_t = 1_000)]
    eval_interval: usize,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    d_ffn: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Longest source/hypothesis the model accepts.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    train_src: Option<PathBuf>,
    #[arg(long)]
    train_tgt: Option<PathBuf>,
    #[arg(long)]
    dev_src: Option<PathBuf>,
    #[arg(long)]
    dev_tgt: Option<PathBuf>,
    /// Vocabulary TSV.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Source token text file.
    #[arg(long)]
    input: PathBuf,
    /// Hypotheses output file.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-sentence insertion traces here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// serial or parallel.
    #[arg(long, value_parser = DecodeMode::from_str)]
    mode: Option<DecodeMode>,
    /// Gamma subtracted from every end-of-slot log-probability.
    #[arg(long)]
    eos_penalty: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// bleu, exact-match, adherence, or length-bins.
    #[arg(long)]
    metric: Metric,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Hypothesis token text (bleu, exact-match, length-bins).
    #[arg(long)]
    hyp: Option<PathBuf>,
    /// Reference token text.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Source token text (length-bins, adherence).
    #[arg(long)]
    src: Option<PathBuf>,
    /// Checkpoint to judge (adherence).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Order whose adherence is measured.
    #[arg(long, value_parser = OrderKind::from_str)]
    order: Option<OrderKind>,
    /// free (replay serial decode) or forced (model argmax over valid actions).
    #[arg(long, value_parser = AdherenceMode::from_str, default_value = "free")]
    adherence_mode: AdherenceMode,
    #[arg(long)]
    eos_penalty: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Metric {
    Bleu,
    ExactMatch,
    Adherence,
    LengthBins,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `tau=path` checkpoint entries (repeatable).
    #[arg(long = "checkpoint", value_parser = parse_tau_checkpoint, required = true)]
    checkpoints: Vec<(f64, PathBuf)>,
    #[arg(long, value_parser = OrderKind::from_str)]
    order: Option<OrderKind>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    dev_src: Option<PathBuf>,
    #[arg(long)]
    dev_tgt: Option<PathBuf>,
    /// Comma-separated gamma grid (default 0,0.5,...,8).
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    /// Comma-separated decode modes (default serial,parallel).
    #[arg(long, value_delimiter = ',', value_parser = DecodeMode::from_str)]
    modes: Option<Vec<DecodeMode>>,
    /// Also write the rendered table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_parser = DecodeMode::from_str)]
    mode: Option<DecodeMode>,
    #[arg(long)]
    eos_penalty: Option<f64>,
    /// Source tokens.
    #[arg(required = true)]
    source: Vec<String>,
}

fn parse_tau_checkpoint(s: &str) -> Result<(f64, PathBuf), String> {
    let Some((tau, path)) = s.split_once('=') else {
        return Err(format!("expected tau=path, got {s:?}"));
    };
    let tau: f64 = tau.trim().parse().map_err(|e| format!("bad tau in {s:?}: {e}"))?;
    Ok((tau, PathBuf::from(path.trim())))
}

/// Parses and runs `argv`; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::BuildVocab(args) => cmd_build_vocab(args),
        Command::Train(args) => cmd_train(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Trace(args) => cmd_trace(args),
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let spec = SyntheticTaskSpec {
        kind: args.task,
        vocab_size: args.vocab_size,
        min_len: args.min_len,
        max_len: args.max_len,
        seed: args.seed,
    };
    let examples = generate_synthetic(&spec, args.count)?;
    let vocab = crate::corpus::synthetic_vocabulary(&spec, &examples);
    write_parallel(&examples, &vocab, &args.out_src, &args.out_tgt)?;
    if let Some(path) = &args.out_vocab {
        vocab.write_tsv(path)?;
    }
    println!(
        "wrote {} {} examples to {} / {}",
        examples.len(),
        args.task,
        args.out_src.display(),
        args.out_tgt.display()
    );
    Ok(())
}

fn cmd_build_vocab(args: BuildVocabArgs) -> Result<()> {
    let mut text = String::new();
    for path in &args.input {
        text.push_str(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        );
        text.push('\n');
    }
    let vocab = build_vocabulary(text.split_whitespace(), args.max_size)?;
    vocab.write_tsv(&args.out)?;
    println!("wrote vocabulary of {} entries to {}", vocab.size(), args.out.display());
    Ok(())
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::read_tsv(path).with_context(|| format!("reading vocabulary {}", path.display()))
}

fn load_model(path: &Path, vocab: &Vocabulary) -> Result<Model> {
    let model =
        Model::load(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    anyhow::ensure!(
        model.cfg.vocab_size == vocab.size(),
        "checkpoint vocab_size {} does not match vocabulary size {}",
        model.cfg.vocab_size,
        vocab.size()
    );
    Ok(model)
}

/// Builds the effective [`TrainConfig`] from flags over config-file values
/// over desk defaults.
fn resolve_train_config(
    args: &TrainArgs,
    cfg: &ConfigFile,
    vocab_size: usize,
) -> Result<TrainConfig> {
    let order = merged(args.order, cfg, "order", OrderKind::Uniform)?;
    let mut tc = TrainConfig::desk_defaults(order, vocab_size);
    tc.tau = merged(args.tau, cfg, "tau", tc.tau)?;
    tc.steps = merged(args.steps, cfg, "steps", tc.steps)?;
    tc.batch_size = merged(args.batch_size, cfg, "batch_size", tc.batch_size)?;
    tc.lr = merged(args.lr, cfg, "lr", tc.lr)?;
    tc.warmup = merged(args.warmup, cfg, "warmup", tc.warmup)?;
    tc.seed = merged(args.seed, cfg, "seed", tc.seed)?;
    tc.eval_interval = args.eval_interval;
    tc.checkpoint = match &args.checkpoint {
        Some(p) => Some(p.clone()),
        None => cfg.get("checkpoint")?,
    };
    let m = &mut tc.model;
    m.d_model = merged(args.d_model, cfg, "d_model", m.d_model)?;
    m.n_layers = merged(args.n_layers, cfg, "n_layers", m.n_layers)?;
    m.n_heads = merged(args.n_heads, cfg, "n_heads", m.n_heads)?;
    m.d_ffn = merged(args.d_ffn, cfg, "d_ffn", m.d_ffn)?;
    m.dropout = merged(args.dropout, cfg, "dropout", m.dropout)?;
    m.max_len = merged(args.max_len, cfg, "max_len", m.max_len)?;
    m.seed = tc.seed;
    Ok(tc)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = ConfigFile::load_opt(args.config.as_deref())?;
    let vocab_path: PathBuf = need(args.vocab.clone(), &cfg, "vocab")?;
    let vocab = load_vocab(&vocab_path)?;
    let tc = resolve_train_config(&args, &cfg, vocab.size())?;
    let train_src: PathBuf = need(args.train_src.clone(), &cfg, "train_src")?;
    let train_tgt: PathBuf = need(args.train_tgt.clone(), &cfg, "train_tgt")?;
    let train_data = load_parallel(&train_src, &train_tgt, &vocab)?;
    let dev_src: Option<PathBuf> = match args.dev_src.clone() {
        Some(p) => Some(p),
        None => cfg.get("dev_src")?,
    };
    let dev_data = match dev_src {
        Some(src) => {
            let tgt: PathBuf = need(args.dev_tgt.clone(), &cfg, "dev_tgt")?;
            load_parallel(&src, &tgt, &vocab)?
        }
        None => Vec::new(),
    };
    let out = train_logged(&tc, &train_data, &dev_data, &vocab, &mut |line| {
        println!("{line}");
    })?;
    if let Some(path) = &tc.checkpoint {
        println!("checkpoint written to {}", path.display());
    }
    drop(out);
    Ok(())
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let cfg = ConfigFile::load_opt(args.config.as_deref())?;
    let vocab = load_vocab(&need(args.vocab.clone(), &cfg, "vocab")?)?;
    let model = load_model(&need(args.checkpoint.clone(), &cfg, "checkpoint")?, &vocab)?;
    let mode = merged(args.mode, &cfg, "mode", DecodeMode::Serial)?;
    let gamma = merged(args.eos_penalty, &cfg, "eos_penalty", 0.0)?;
    let sources = load_sentences(&args.input, &vocab)?;
    let mut hyp_text = String::new();
    let mut trace_text = String::new();
    for (i, src) in sources.iter().enumerate() {
        let dc = DecodeConfig::for_source(mode, gamma, src.len());
        let trace = decode(&model, src, &dc)?;
        hyp_text.push_str(&vocab.render(trace.hypothesis()));
        hyp_text.push('\n');
        if args.trace.is_some() {
            trace_text.push_str(&format!("sentence {i}\n"));
            trace_text.push_str(&render_trace(&trace, &vocab));
        }
    }
    fs::write(&args.out, hyp_text)?;
    if let Some(path) = &args.trace {
        fs::write(path, trace_text)?;
    }
    println!("decoded {} sentences to {}", sources.len(), args.out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = ConfigFile::load_opt(args.config.as_deref())?;
    let vocab = load_vocab(&need(args.vocab.clone(), &cfg, "vocab")?)?;
    let reference = args.reference.clone().context("missing --reference")?;
    let refs = load_sentences(&reference, &vocab)?;
    match args.metric {
        Metric::Bleu => {
            let hyps = load_sentences(&args.hyp.clone().context("missing --hyp")?, &vocab)?;
            print!("{}", corpus_bleu(&hyps, &refs)?.render());
        }
        Metric::ExactMatch => {
            let hyps = load_sentences(&args.hyp.clone().context("missing --hyp")?, &vocab)?;
            println!("exact_match={:.2}", exact_match(&hyps, &refs)?);
        }
        Metric::LengthBins => {
            let hyps = load_sentences(&args.hyp.clone().context("missing --hyp")?, &vocab)?;
            let srcs = load_sentences(&args.src.clone().context("missing --src")?, &vocab)?;
            print!("{}", length_binned_bleu(&hyps, &refs, &srcs)?.render());
        }
        Metric::Adherence => {
            let model =
                load_model(&need(args.checkpoint.clone(), &cfg, "checkpoint")?, &vocab)?;
            let order_kind = need(args.order, &cfg, "order")?;
            let gamma = merged(args.eos_penalty, &cfg, "eos_penalty", 0.0)?;
            let srcs = load_sentences(&args.src.clone().context("missing --src")?, &vocab)?;
            anyhow::ensure!(
                srcs.len() == refs.len(),
                "source count {} does not match reference count {}",
                srcs.len(),
                refs.len()
            );
            let examples: Vec<ParallelExample> = srcs
                .into_iter()
                .zip(refs)
                .map(|(source, target)| ParallelExample { source, target })
                .collect();
            let order = OrderSpec::new(order_kind, &vocab);
            let report =
                adherence(&model, &order, &examples, args.adherence_mode, gamma)?;
            println!("{}", report.render_line());
        }
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = ConfigFile::load_opt(args.config.as_deref())?;
    let vocab = load_vocab(&need(args.vocab.clone(), &cfg, "vocab")?)?;
    let order_kind = need(args.order, &cfg, "order")?;
    let dev_src: PathBuf = need(args.dev_src.clone(), &cfg, "dev_src")?;
    let dev_tgt: PathBuf = need(args.dev_tgt.clone(), &cfg, "dev_tgt")?;
    let dev = load_parallel(&dev_src, &dev_tgt, &vocab)?;
    let mut grid = SweepGrid::new(args.checkpoints.clone());
    if let Some(gammas) = args.gammas.clone() {
        grid.gammas = gammas;
    } else {
        grid.gammas = default_gammas();
    }
    if let Some(modes) = args.modes.clone() {
        grid.modes = modes;
    }
    let result = sweep(&grid, order_kind, &vocab, &dev)?;
    let rendered = result.render();
    print!("{rendered}");
    if let Some(path) = &args.out {
        fs::write(path, rendered)?;
    }
    Ok(())
}

fn cmd_trace(args: TraceArgs) -> Result<()> {
    let cfg = ConfigFile::load_opt(args.config.as_deref())?;
    let vocab = load_vocab(&need(args.vocab.clone(), &cfg, "vocab")?)?;
    let model = load_model(&need(args.checkpoint.clone(), &cfg, "checkpoint")?, &vocab)?;
    let mode = merged(args.mode, &cfg, "mode", DecodeMode::Serial)?;
    let gamma = merged(args.eos_penalty, &cfg, "eos_penalty", 0.0)?;
    let source = vocab.encode(&args.source);
    let dc = DecodeConfig::for_source(mode, gamma, source.len());
    let trace = decode(&model, &source, &dc)?;
    print!("{}", render_trace(&trace, &vocab));
    println!("hypothesis: {}", vocab.render(trace.hypothesis()));
    Ok(())
}
