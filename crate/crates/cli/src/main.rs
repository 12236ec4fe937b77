use std::fs;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dfn::corpus::{load_source, write_jsonl, Family, SynthSource, Truncation};
use dfn::embed::{load_pretrained, Vocabulary};
use dfn::policy::{self, EvalMode};
use dfn::{checkpoint, Ablation, Error, Model, Sample, Strategy, TrainConfig};

/// Dynamic fusion network for multiple-choice reading comprehension.
#[derive(Parser)]
#[command(name = "dfn", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write a checkpoint plus a metrics stream.
    Train(TrainArgs),
    /// Greedy (or sampled) accuracy of a checkpoint, with per-sample records.
    Eval(EvalArgs),
    /// Keyword table of greedy (strategy, step) choices.
    Analyze(AnalyzeArgs),
    /// Write a synthetic corpus as JSONL.
    Synth(SynthArgs),
    /// Accuracy of several checkpoints averaged at the answer distribution.
    Ensemble(EnsembleArgs),
}

#[derive(Args)]
struct DataArg {
    /// RACE directory, samples JSONL file, or `synth:<family|mixed>,n=..,vocab=..,seed=..`.
    #[arg(long, env = "DFN_DATA")]
    data: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    data: DataArg,
    /// Held-out corpus evaluated after every epoch.
    #[arg(long)]
    eval_data: Option<String>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_name = "no-df|no-mr|no-df-mr")]
    ablate: Option<Ablation>,
    #[arg(long, value_name = "integral|answer-only|entangled")]
    fixed_strategy: Option<Strategy>,
    /// GloVe-style text file with `word_dim` values per word.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Stop once held-out greedy accuracy reaches this value.
    #[arg(long, requires = "eval_data")]
    stop_at: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArg,
    /// Per-sample records (JSONL).
    #[arg(long, default_value = "eval_records.jsonl")]
    records: PathBuf,
    /// Draw one episode per sample with this seed instead of decoding greedily.
    #[arg(long)]
    sampled: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArg,
    #[arg(long, value_delimiter = ',', default_value = "_,not,except")]
    keywords: Vec<String>,
    /// Also write the table as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// cloze, longneg, entangle or mixed.
    #[arg(long, default_value = "mixed")]
    family: String,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    vocab: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[command(flatten)]
    data: DataArg,
}

fn truncation(c: &TrainConfig) -> Truncation {
    Truncation {
        passage: c.max_passage,
        question: c.max_question,
        answer: c.max_answer,
    }
}

fn load_data(source: &str, trunc: Truncation) -> Result<Vec<Sample>> {
    load_source(source, trunc).with_context(|| format!("loading {source}"))
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::parse_kv(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    Ok(policy::ablate(&config, args.ablate.unwrap_or(config.ablation), args.fixed_strategy)?)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = train_config(&args)?;
    let trunc = truncation(&config);
    let train = load_data(&args.data.data, trunc)?;
    let eval = args.eval_data.as_deref().map(|s| load_data(s, trunc)).transpose()?;
    let vocab = Vocabulary::build(train.iter().chain(eval.iter().flatten()));
    let mut model = match &args.embeddings {
        Some(path) => {
            let table = load_pretrained(path, &vocab, config.word_dim)?;
            Model::new(config, vocab, table)?
        }
        None => Model::with_random_words(config, vocab)?,
    };
    log::info!(
        "training on {} samples ({} trainable scalars)",
        train.len(),
        model.store.num_trainable_scalars()
    );

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let metrics_path = args.out.join("metrics.jsonl");
    let mut sink = BufWriter::new(fs::File::create(&metrics_path)?);
    let mut write_err = None;
    let metrics = policy::train(&mut model, &train, eval.as_deref(), |m| {
        if let Err(e) = serde_json::to_writer(&mut sink, m).map_err(std::io::Error::from).and_then(|_| writeln!(sink)) {
            write_err.get_or_insert(e);
        }
        match args.stop_at {
            Some(target) if m.split == "eval" && m.accuracy >= target => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        }
    })?;
    sink.flush()?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("writing {}", metrics_path.display()));
    }
    checkpoint::save(&model, &args.out)?;

    if let Some(last) = metrics.last() {
        println!(
            "epoch {} {} accuracy {:.4} expected reward {:.4}",
            last.epoch, last.split, last.accuracy, last.expected_reward
        );
    }
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn load_model(dir: &Path) -> Result<Model> {
    checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn print_families(records: &[policy::SampleRecord]) {
    let shares = policy::family_strategy_shares(records);
    for (family, acc) in policy::family_accuracy(records) {
        let share: Vec<String> = shares[&family].iter().map(|s| format!("{s:.2}")).collect();
        println!("  {family:<9} accuracy {acc:.4}  strategy shares {}", share.join("/"));
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let samples = load_data(&args.data.data, truncation(&model.config))?;
    let mode = args.sampled.map_or(EvalMode::Greedy, |seed| EvalMode::Sampled { seed });
    let ev = policy::evaluate(&model, &samples, mode)?;
    let mut w = BufWriter::new(fs::File::create(&args.records)?);
    for r in &ev.records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    println!("accuracy {:.4} on {} samples", ev.accuracy, samples.len());
    print_families(&ev.records);
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let samples = load_data(&args.data.data, truncation(&model.config))?;
    let keywords: Vec<&str> = args.keywords.iter().map(String::as_str).collect();
    let ev = policy::evaluate(&model, &samples, EvalMode::Greedy)?;
    let rows = policy::keyword_table(&samples, &ev.records, &keywords);
    println!("{:<10} {:>6}  {:<28} {}", "keyword", "count", "dominant", "integral/answer-only/entangled");
    for row in &rows {
        if row.is_empty() {
            log::warn!("keyword {:?} occurs in no question", row.keyword);
            println!("{:<10} {:>6}  (absent)", row.keyword, 0);
            continue;
        }
        let ((g, t), share) = row.dominant.expect("non-empty row");
        let shares: Vec<String> = row.strategy_share.iter().map(|s| format!("{s:.2}")).collect();
        let dominant = format!("{g}, step {t} ({:.0}%)", 100.0 * share);
        println!("{:<10} {:>6}  {:<28} {}", row.keyword, row.count, dominant, shares.join("/"));
    }
    if samples.iter().any(|s| s.family.is_some()) {
        println!("by family:");
        print_families(&ev.records);
    }
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let family = match args.family.as_str() {
        "mixed" => None,
        name => Some(name.parse::<Family>()?),
    };
    let source = SynthSource {
        family,
        n: args.n,
        vocab_size: args.vocab,
        seed: args.seed,
    };
    let samples = source.generate()?;
    write_jsonl(&args.out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn cmd_ensemble(args: EnsembleArgs) -> Result<()> {
    let members = args.checkpoints.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let samples = load_data(&args.data.data, truncation(&members[0].config))?;
    let ev = policy::ensemble_eval(&members, &samples)?;
    for (path, acc) in args.checkpoints.iter().zip(&ev.member_accuracy) {
        println!("member {} accuracy {acc:.4}", path.display());
    }
    println!("ensemble accuracy {:.4} on {} samples", ev.accuracy, samples.len());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::StrategyOutOfRange { .. }) => 1,
        Some(Error::NonFinite { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    let result = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Ensemble(a) => cmd_ensemble(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
