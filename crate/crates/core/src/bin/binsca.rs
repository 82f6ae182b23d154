//! Command-line front end.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use binsca::corpus::{ingest_source_corpus, read_source_records, write_source_records, ScaDatabase};
use binsca::detect::{ComponentReport, DEFAULT_THETA};
use binsca::embed::{import_external_embeddings, train_toy_projection, TrainConfig, DEFAULT_DIM};
use binsca::eval::{evaluate_matching, evaluate_sca};
use binsca::locality::DEFAULT_MIN_SIMILARITY;
use binsca::scan::{embed_database, run_scan, MatchReport, ScanOptions, ScanPaths};
use binsca::simulate::{compile_binary, generate_corpus, generate_training_pairs, read_pairs, write_pairs, GroundTruth, SimConfig};

#[derive(Parser)]
#[command(name = "binsca", version, about = "Binary-to-source function matching and TPL detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or embed the source function database.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Match a binary against the database and report its components.
    Scan(ScanArgs),
    /// Score reports against simulator ground truth.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Generate a synthetic corpus, binary and ground truth.
    Simulate(SimulateArgs),
    /// Train the toy projection on labeled pairs and print the loss.
    Loss(LossArgs),
}

#[derive(Subcommand)]
enum CorpusCommand {
    Build {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Embed {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DIM)]
        dim: usize,
        /// Precomputed vectors to validate and use instead of hashing.
        #[arg(long)]
        import: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    binary: PathBuf,
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
    #[arg(long)]
    deps: Option<PathBuf>,
    #[arg(long = "min-sim", default_value_t = DEFAULT_MIN_SIMILARITY)]
    min_sim: f64,
    /// Vectors for the binary functions, keyed by hex address.
    #[arg(long = "binary-vectors")]
    binary_vectors: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    Match {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Database for fuzzy matching; without it fuzzy equals exact.
        #[arg(long)]
        db: Option<PathBuf>,
    },
    Sca {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of labeled training pairs to emit.
    #[arg(long, default_value_t = 32)]
    pairs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("SCA_SEED") {
        Ok(v) => Ok(Some(v.parse().with_context(|| format!("SCA_SEED is not an integer: {v}"))?)),
        Err(_) => Ok(None),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn corpus(cmd: CorpusCommand) -> Result<()> {
    match cmd {
        CorpusCommand::Build { input, out } => {
            let records = read_source_records(&input)?;
            let total = records.len();
            let (db, diagnostics) = ingest_source_corpus(records);
            for d in &diagnostics {
                eprintln!("warning: record {}: {}", d.index, d.message);
            }
            db.persist(&out)?;
            eprintln!(
                "{} records, {} functions, {} files, {} tpls",
                total,
                db.functions.len(),
                db.files.len(),
                db.tpls.len()
            );
        }
        CorpusCommand::Embed { db, dim, import, out } => {
            let db = ScaDatabase::load(&db)?;
            let table = match import {
                Some(path) => {
                    let table = import_external_embeddings(&path)?;
                    if let Some(id) = table.vectors.keys().find(|id| !db.functions.contains_key(*id)) {
                        bail!("imported vector `{id}` has no function in the database");
                    }
                    table
                }
                None => embed_database(&db, dim)?,
            };
            table.write(&out)?;
            eprintln!("{} vectors of dimension {}", table.len(), table.dim);
        }
    }
    Ok(())
}

fn scan(args: ScanArgs) -> Result<()> {
    let paths = ScanPaths {
        binary: args.binary,
        db: args.db,
        corpus: args.corpus,
        binary_vectors: args.binary_vectors,
        deps: args.deps,
        out_dir: args.out,
    };
    let options = ScanOptions {
        k: args.k,
        theta: args.theta,
        min_similarity: args.min_sim,
    };
    let output = run_scan(&paths, &options)?;
    for w in &output.components.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{} matches, {} components",
        output.matches.matches.len(),
        output.components.components.len()
    );
    Ok(())
}

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Match { pred, truth, db } => {
            let report = MatchReport::load(&pred)?;
            let truth = GroundTruth::load(&truth)?;
            let db = match db {
                Some(p) => ScaDatabase::load(&p)?,
                None => ScaDatabase::default(),
            };
            let outcome = evaluate_matching(&report, &truth, &db)?;
            if !outcome.retrieval.closure_holds {
                eprintln!("warning: final recall exceeds the retrieval bound");
            }
            print_json(&outcome)
        }
        EvalCommand::Sca { pred, truth } => {
            let report = ComponentReport::load(&pred)?;
            let truth = GroundTruth::load(&truth)?;
            if report.binary != truth.binary {
                bail!("report is for `{}`, truth for `{}`", report.binary, truth.binary);
            }
            let labeled: BTreeSet<String> = truth.component_list;
            print_json(&evaluate_sca(&report, &labeled))
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = env_seed()?.or(args.seed) {
        config.seed = seed;
    }
    let corpus = generate_corpus(&config)?;
    let (db, diagnostics) = ingest_source_corpus(corpus.records.iter().cloned());
    if let Some(d) = diagnostics.first() {
        bail!("simulated record {} rejected: {}", d.index, d.message);
    }
    let (_, files) = corpus.link_plan(&config);
    let (binary, truth) = compile_binary(&db, &files, &config, &corpus.vendored_from)?;

    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_source_records(&out.join("records.jsonl"), &corpus.records)?;
    corpus.dependency.write(&out.join("deps.jsonl"))?;
    binary.write(&out.join("binary.jsonl"))?;
    truth.write(&out.join("truth.json"))?;
    let pair_count = args.pairs.min(truth.mapping.len());
    let pairs = generate_training_pairs(&db, &corpus, &config, pair_count)?;
    write_pairs(&out.join("pairs.jsonl"), &pairs)?;
    eprintln!(
        "{} source records, {} binary functions, {} linked tpls",
        corpus.records.len(),
        binary.functions.len(),
        truth.component_list.len()
    );
    Ok(())
}

fn loss(args: LossArgs) -> Result<()> {
    let pairs = read_pairs(&args.pairs)?;
    let config = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        seed: env_seed()?.unwrap_or(args.seed),
        ..Default::default()
    };
    let run = train_toy_projection(&pairs, &config)?;
    print_json(&serde_json::json!({
        "pairs": pairs.len(),
        "epochs": config.epochs,
        "initial": { "loss": run.initial.loss, "l_bin": run.initial.l_bin, "l_src": run.initial.l_src },
        "final": { "loss": run.last.loss, "l_bin": run.last.l_bin, "l_src": run.last.l_src },
        "tau": run.projection.tau(),
    }))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Corpus(cmd) => corpus(cmd),
        Command::Scan(args) => scan(args),
        Command::Eval(cmd) => eval(cmd),
        Command::Simulate(args) => simulate(args),
        Command::Loss(args) => loss(args),
    }
}
