mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use answergen::corpus::io::{read_dataset, read_raw_corpus, write_dataset, write_jsonl};
use answergen::corpus::synth::synth_raw;
use answergen::corpus::{load_embeddings, preprocess, write_embeddings, EmbeddingTable, RuleTagger, Vocabulary};
use answergen::evaluation::{evaluate_answers, generate_answers, read_answers, write_answers};
use answergen::numerics::Scalar;
use answergen::pipeline::Prepared;
use answergen::retrieval::{build_snippet_sets, read_snippet_cache, write_snippet_cache, WordSpace};
use answergen::training::{train, Checkpoint};
use answergen::{selftest, Error, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::RunConfig;

/// Review-guided answer generation for product questions.
#[derive(Parser, Debug)]
#[command(name = "answergen", version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Beam width for `generate`.
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Train without part-of-speech embeddings.
    #[arg(long, global = true)]
    no_pos: bool,
    /// Train without the review memory.
    #[arg(long, global = true)]
    no_review: bool,
    /// Float width, 32 or 64.
    #[arg(long, global = true)]
    precision: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic raw corpus.
    Synth,
    /// Tokenize, tag and filter the raw corpus; build vocabulary and word table.
    Prepare,
    /// Retrieve review snippets for every pair.
    Snippets,
    /// Train and checkpoint the best model.
    Train,
    /// Beam-decode answers for the evaluation split.
    Generate,
    /// Score an answer file.
    Evaluate {
        /// Answer file to score instead of the configured one.
        #[arg(long)]
        answers: Option<PathBuf>,
    },
    /// Run the built-in checks.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({"error": e.kind(), "message": e.to_string(), "line": e.line()});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn log(value: serde_json::Value) {
    eprintln!("{value}");
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(bits) = cli.precision {
        cfg.precision = bits;
    }
    if let Some(width) = cli.beam {
        cfg.decoding.beam_width = width;
    }
    if cli.no_pos {
        cfg.model.use_pos = false;
    }
    if cli.no_review {
        cfg.model.use_review = false;
    }
    let cfg = cfg.finish()?;

    match &cli.command {
        Command::Synth => synth(&cfg),
        Command::Prepare => prepare(&cfg),
        Command::Snippets => snippets(&cfg),
        Command::Train => match cfg.precision {
            32 => train_as::<f32>(&cfg),
            _ => train_as::<f64>(&cfg),
        },
        Command::Generate => generate(&cfg, cli.precision),
        Command::Evaluate { answers } => evaluate(&cfg, answers.as_deref()),
        Command::Selftest => run_selftest(),
    }
}

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::Io(io::Error::new(
                io::ErrorKind::NotFound,
                format!("missing input {}", p.display()),
            )));
        }
    }
    Ok(())
}

fn parent_dir(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let (records, _) = synth_raw(&cfg.synth);
    parent_dir(&cfg.paths.corpus)?;
    write_jsonl(&cfg.paths.corpus, &records)?;
    log(json!({"event": "synth", "records": records.len(), "path": cfg.paths.corpus}));
    Ok(())
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    let p = &cfg.paths;
    require(&[&p.corpus])?;
    if let Some(e) = &p.embeddings {
        require(&[e])?;
    }
    let raw = read_raw_corpus(&p.corpus)?;
    let (dataset, stats) = preprocess(&raw, &RuleTagger)?;
    if dataset.pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocab = Vocabulary::build(&dataset, cfg.min_freq);
    let table = match &p.embeddings {
        Some(path) => load_embeddings(path, &vocab, cfg.model.dim, cfg.seed)?,
        None => EmbeddingTable::seeded(&vocab, cfg.model.dim, cfg.seed),
    };
    for path in [&p.dataset, &p.vocab, &p.word_table] {
        parent_dir(path)?;
    }
    write_dataset(&p.dataset, &dataset)?;
    fs::write(&p.vocab, vocab.to_json()? + "\n")?;
    write_embeddings(&p.word_table, &vocab, &table)?;
    log(json!({
        "event": "prepare",
        "stats": stats,
        "vocab": vocab.len(),
        "tags": vocab.tag_count(),
        "vocab_sha256": vocab.hash(),
    }));
    Ok(())
}

fn load_parts(cfg: &RunConfig) -> Result<(answergen::corpus::Dataset, Vocabulary, EmbeddingTable)> {
    let p = &cfg.paths;
    require(&[&p.dataset, &p.vocab, &p.word_table])?;
    let dataset = read_dataset(&p.dataset)?;
    let vocab = Vocabulary::from_json(&fs::read_to_string(&p.vocab)?)?;
    let table = load_embeddings(&p.word_table, &vocab, cfg.model.dim, cfg.seed)?;
    Ok((dataset, vocab, table))
}

fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    require(&[&cfg.paths.snippets])?;
    let (dataset, vocab, table) = load_parts(cfg)?;
    let sets = read_snippet_cache(&cfg.paths.snippets)?;
    Ok(Prepared::with_sets(dataset, vocab, table, sets))
}

fn snippets(cfg: &RunConfig) -> Result<()> {
    let (dataset, vocab, table) = load_parts(cfg)?;
    let (sets, summary) = build_snippet_sets(&dataset, &WordSpace::new(&vocab, &table), &cfg.retrieval)?;
    parent_dir(&cfg.paths.snippets)?;
    write_snippet_cache(&cfg.paths.snippets, &sets)?;
    let source = if cfg.retrieval.pi.is_some() { "override" } else { "calibrated" };
    log(json!({
        "event": "snippets",
        "pi": summary.pi,
        "pi_source": source,
        "pairs": summary.pairs,
        "excluded": summary.excluded,
    }));
    Ok(())
}

fn train_as<T: Scalar>(cfg: &RunConfig) -> Result<()> {
    let prepared = load_prepared(cfg)?;
    let train_set = prepared.examples(answergen::corpus::Split::Train)?;
    let validation = prepared.examples(answergen::corpus::Split::Validation)?;
    let mut model = prepared.model::<T>(cfg.model.clone(), cfg.seed)?;
    let hash = prepared.vocab.hash();
    let p = &cfg.paths;
    parent_dir(&p.train_log)?;
    parent_dir(&p.checkpoint)?;
    let mut train_log = BufWriter::new(File::create(&p.train_log)?);
    log(json!({
        "event": "train_start",
        "train_examples": train_set.len(),
        "validation_examples": validation.len(),
        "parameters": model.params.iter().map(|(_, q)| q.tensor.data().len()).sum::<usize>(),
        "precision": T::BITS,
    }));
    let report = train(&mut model, &train_set, &validation, &cfg.train, |epoch, m, improved| {
        let line = json!({"event": "epoch", "improved": improved, "log": epoch});
        writeln!(train_log, "{line}")?;
        train_log.flush()?;
        log(line);
        if improved {
            Checkpoint::from_model(m, &cfg.train, &hash, epoch.epoch, epoch.val_loss).save(&p.checkpoint)?;
        }
        Ok(())
    })?;
    log(json!({
        "event": "train_done",
        "epochs": report.epochs.len(),
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "checkpoint": p.checkpoint,
    }));
    Ok(())
}

fn generate(cfg: &RunConfig, precision: Option<u32>) -> Result<()> {
    require(&[&cfg.paths.checkpoint])?;
    let prepared = load_prepared(cfg)?;
    let ck = Checkpoint::load(&cfg.paths.checkpoint)?;
    if ck.vocab_sha256 != prepared.vocab.hash() {
        return Err(Error::Checkpoint("vocabulary differs from the one the checkpoint was trained with".into()));
    }
    let examples = prepared.examples(cfg.eval_split)?;
    let beam = cfg.decoding.beam();
    let answers = match precision.unwrap_or(ck.precision) {
        32 => generate_answers(&ck.to_model::<f32>()?, &examples, &prepared.vocab, &beam)?,
        _ => generate_answers(&ck.to_model::<f64>()?, &examples, &prepared.vocab, &beam)?,
    };
    parent_dir(&cfg.paths.answers)?;
    write_answers(&cfg.paths.answers, &answers)?;
    log(json!({
        "event": "generate",
        "answers": answers.len(),
        "beam_width": beam.beam_width,
        "path": cfg.paths.answers,
    }));
    Ok(())
}

fn evaluate(cfg: &RunConfig, answers: Option<&Path>) -> Result<()> {
    let path = answers.unwrap_or(&cfg.paths.answers);
    require(&[path])?;
    let prepared = load_prepared(cfg)?;
    let answers = read_answers(path)?;
    let excluded: std::collections::HashSet<&str> = prepared
        .sets
        .iter()
        .filter(|s| s.excluded)
        .map(|s| s.pair_id.as_str())
        .collect();
    let pairs: Vec<_> = prepared
        .pairs(cfg.eval_split)
        .into_iter()
        .filter(|p| !excluded.contains(p.pair_id.as_str()))
        .collect();
    let report = evaluate_answers(&answers, &pairs, &prepared.space());
    parent_dir(&cfg.paths.report)?;
    fs::write(&cfg.paths.report, report.to_json()? + "\n")?;
    log(json!({
        "event": "evaluate",
        "distinct_1": report.distinct_1,
        "distinct_2": report.distinct_2,
        "es": report.es,
        "scored": report.scored,
        "errors": report.errors,
        "path": cfg.paths.report,
    }));
    Ok(())
}

fn run_selftest() -> Result<()> {
    let checks = selftest::run();
    for c in &checks {
        log(json!(c));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("selftest failed: {}", failed.join(", "))))
    }
}
