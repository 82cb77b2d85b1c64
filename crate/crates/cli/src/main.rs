//! `daclr`: dataset preparation, training, retrieval and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing::{info, warn};

use daclr_core::config::RunConfig;
use daclr_core::dataset::{synth_dataset, Dataset, SUMMARIES_FILE};
use daclr_core::encoder::EncoderModel;
use daclr_core::eval::{evaluate, load_run};
use daclr_core::pipeline::{save_run, DenseIndex, Retriever, Stage};
use daclr_core::sparse::{IndexField, SparseIndex};
use daclr_core::summarizer::client::{summarize_batch, SummaryInput, Summarizer};
use daclr_core::summarizer::PromptTemplate;
use daclr_core::trainer::{
    curve_from_csv, curve_to_csv, initial_state, load_checkpoint, train, TrainData, TrainOptions, CHECKPOINT_FILE,
    STATE_FILE,
};

const CHECKPOINT_DIR: &str = "checkpoint";
const CURVES_FILE: &str = "curves.csv";
const DENSE_INDEX_FILE: &str = "dense.idx";
const SPARSE_INDEX_FILE: &str = "sparse.json";
const RUN_FILE: &str = "run.txt";
const REPORT_FILE: &str = "report.csv";

#[derive(Parser)]
#[command(name = "daclr", version, about = "Event-aware evidence retrieval for fact checking")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the configured dataset directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset directory and print its statistics.
    Ingest,
    /// Produce event summaries for every claim and evidence item.
    Summarize {
        /// Use the rule-based extractor instead of the remote model.
        #[arg(long)]
        offline: bool,
        /// Fall back to the rule-based extractor when a remote call fails.
        #[arg(long)]
        fallback_on_error: bool,
    },
    /// Build the sparse and dense indexes.
    Index {
        /// Encode with a freshly initialized model instead of the checkpoint.
        #[arg(long)]
        untrained: bool,
    },
    /// Train the encoder; resumes from an existing checkpoint.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        /// Negatives per claim.
        #[arg(long = "k")]
        k: Option<usize>,
        /// Ignore an existing checkpoint and start over.
        #[arg(long)]
        fresh: bool,
    },
    /// Retrieve evidence and write a run file.
    Retrieve {
        #[arg(long)]
        claim_id: Option<String>,
        /// Split whose claims are retrieved when no claim id is given.
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        /// Stop after the recall stage.
        #[arg(long)]
        recall_only: bool,
        #[arg(long)]
        untrained: bool,
        /// Output path; defaults to run.txt in the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a run file against the dataset judgments.
    Eval {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic dataset (with summaries) into the dataset directory.
    Synth {
        #[arg(long)]
        claims: Option<usize>,
        #[arg(long)]
        evidence: Option<usize>,
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Print the training curve as CSV.
    Curves {
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Validation,
    Test,
    All,
}

impl Split {
    fn ids(self, ds: &Dataset) -> Vec<String> {
        match self {
            Split::Train => ds.splits.train.clone(),
            Split::Validation => ds.splits.validation.clone(),
            Split::Test => ds.splits.test.clone(),
            Split::All => ds.claims.iter().map(|c| c.id.clone()).collect(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        cfg.paths.out_dir = dir;
    }
    if let Some(dir) = cli.data_dir {
        cfg.paths.data_dir = dir;
    }
    match cli.command {
        Command::Ingest => ingest(&cfg),
        Command::Summarize {
            offline,
            fallback_on_error,
        } => summarize(&cfg, offline, fallback_on_error),
        Command::Index { untrained } => index(&cfg, untrained),
        Command::Train { epochs, k, fresh } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(k) = k {
                cfg.train.k = k;
            }
            cfg.validate()?;
            train_cmd(&cfg, fresh)
        }
        Command::Retrieve {
            claim_id,
            split,
            p,
            q,
            recall_only,
            untrained,
            output,
        } => {
            if let Some(p) = p {
                cfg.retrieval.p = p;
            }
            if let Some(q) = q {
                cfg.retrieval.q = q;
            }
            retrieve(&cfg, claim_id.as_deref(), split, recall_only, untrained, output)
        }
        Command::Eval { run, split, output } => eval(&cfg, run, split, output),
        Command::Synth {
            claims,
            evidence,
            clusters,
        } => {
            let s = &mut cfg.synth;
            s.n_claims = claims.unwrap_or(s.n_claims);
            s.n_evidence = evidence.unwrap_or(s.n_evidence);
            s.n_clusters = clusters.unwrap_or(s.n_clusters);
            synth(&cfg)
        }
        Command::Curves { output } => curves(&cfg, output),
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.paths.out_dir)
        .with_context(|| format!("creating {}", cfg.paths.out_dir.display()))?;
    Ok(cfg.paths.out_dir.join(name))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    Dataset::load(&cfg.paths.data_dir).with_context(|| format!("loading dataset from {}", cfg.paths.data_dir.display()))
}

fn require_summaries(ds: &Dataset) -> Result<()> {
    let missing = ds.missing_summaries();
    if let Some(first) = missing.first() {
        bail!(
            "{} records have no event summary (first: {first}); run `daclr summarize` first",
            missing.len()
        );
    }
    Ok(())
}

fn ingest(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let judgments: usize = ds.qrels.0.values().map(|s| s.len()).sum();
    println!("claims      {}", ds.claims.len());
    println!("evidence    {}", ds.corpus.len());
    println!("judgments   {judgments}");
    println!(
        "splits      train {} / validation {} / test {}",
        ds.splits.train.len(),
        ds.splits.validation.len(),
        ds.splits.test.len()
    );
    println!("no summary  {}", ds.missing_summaries().len());
    Ok(())
}

fn summarize(cfg: &RunConfig, offline: bool, fallback_on_error: bool) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let inputs: Vec<SummaryInput> = ds
        .claims
        .iter()
        .map(SummaryInput::from)
        .chain(ds.corpus.iter().map(SummaryInput::from))
        .collect();
    let template = PromptTemplate::builtin();
    let summarizer = if offline {
        Summarizer::Offline
    } else {
        Summarizer::Remote {
            cfg: &cfg.mllm,
            template: &template,
            fallback_on_error,
        }
    };
    let path = cfg.paths.data_dir.join(SUMMARIES_FILE);
    let report = summarize_batch(&summarizer, &inputs, &path)?;
    println!(
        "written {} / skipped {} / fallback {} / failed {}",
        report.written,
        report.skipped,
        report.fallback,
        report.failed.len()
    );
    if !report.failed.is_empty() {
        bail!("{} records failed, first: {}", report.failed.len(), report.failed[0]);
    }
    Ok(())
}

fn checkpoint_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.out_dir.join(CHECKPOINT_DIR)
}

fn load_model(cfg: &RunConfig, untrained: bool) -> Result<EncoderModel> {
    if untrained {
        return Ok(cfg.new_model()?);
    }
    let path = checkpoint_dir(cfg).join(CHECKPOINT_FILE);
    EncoderModel::load(&path).with_context(|| format!("loading {} (run `daclr train` or pass --untrained)", path.display()))
}

fn index(cfg: &RunConfig, untrained: bool) -> Result<()> {
    let ds = load_dataset(cfg)?;
    require_summaries(&ds)?;
    let model = load_model(cfg, untrained)?;
    let sparse = SparseIndex::build(&ds.corpus, IndexField::Full, cfg.bm25)?;
    sparse.save(&out_path(cfg, SPARSE_INDEX_FILE)?)?;
    let dense = DenseIndex::build(&model, &ds.corpus)?;
    dense.save(&out_path(cfg, DENSE_INDEX_FILE)?)?;
    println!("indexed {} evidence items (model {})", dense.len(), dense.fingerprint());
    Ok(())
}

fn train_cmd(cfg: &RunConfig, fresh: bool) -> Result<()> {
    let ds = load_dataset(cfg)?;
    require_summaries(&ds)?;
    let tcfg = cfg.train_config();
    let data = TrainData {
        claims: &ds.claims,
        corpus: &ds.corpus,
        qrels: &ds.qrels,
        train: &ds.splits.train,
        validation: &ds.splits.validation,
    };
    let dir = checkpoint_dir(cfg);
    let (model, state) = if !fresh && dir.join(STATE_FILE).exists() {
        let (model, state) = load_checkpoint(&dir)?;
        info!(steps_done = state.steps_done, "resuming from checkpoint");
        (model, state)
    } else {
        (cfg.new_model()?, initial_state(&tcfg, &data)?)
    };
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.clone()),
    };
    let out = train(&tcfg, model, state, &data, &opts)?;
    fs::write(out_path(cfg, CURVES_FILE)?, curve_to_csv(&out.curve))?;
    if let Some(last) = out.curve.last() {
        println!(
            "trained {} steps; final p_dyn {:.4}, acc_val {:.4}, total loss {:.4}",
            out.curve.len(),
            last.p_dyn,
            last.acc_val,
            last.l_total
        );
    }
    println!("checkpoint in {}", dir.display());
    Ok(())
}

fn retrieve(
    cfg: &RunConfig,
    claim_id: Option<&str>,
    split: Split,
    recall_only: bool,
    untrained: bool,
    output: Option<PathBuf>,
) -> Result<()> {
    let ds = load_dataset(cfg)?;
    require_summaries(&ds)?;
    let model = load_model(cfg, untrained)?;
    let idx_path = cfg.paths.out_dir.join(DENSE_INDEX_FILE);
    let index = match DenseIndex::load(&idx_path) {
        Ok(idx) if idx.fingerprint() == model.fingerprint() => idx,
        Ok(_) => {
            warn!("{} was built by another model; rebuilding in memory", idx_path.display());
            DenseIndex::build(&model, &ds.corpus)?
        }
        Err(_) => DenseIndex::build(&model, &ds.corpus)?,
    };
    let retriever = Retriever::new(&model, &index, &ds.corpus)?;
    let claims = match claim_id {
        Some(id) => vec![ds.claim(id).with_context(|| format!("unknown claim id {id}"))?.clone()],
        None => ds.claims_in(&split.ids(&ds)),
    };
    let (p, q) = (cfg.retrieval.p, cfg.retrieval.q);
    let lists = claims
        .iter()
        .map(|c| {
            if recall_only {
                retriever.recall(c, p)
            } else {
                retriever.retrieve(c, p, q)
            }
        })
        .collect::<daclr_core::Result<Vec<_>>>()?;
    let stage = if recall_only { Stage::Recall } else { Stage::Rerank };
    let path = match output {
        Some(p) => p,
        None => out_path(cfg, RUN_FILE)?,
    };
    save_run(&path, &lists, stage)?;
    println!("wrote {} claims to {}", lists.len(), path.display());
    Ok(())
}

fn eval(cfg: &RunConfig, run: Option<PathBuf>, split: Split, output: Option<PathBuf>) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let run_path = run.unwrap_or_else(|| cfg.paths.out_dir.join(RUN_FILE));
    let lists = load_run(&run_path).with_context(|| format!("reading {}", run_path.display()))?;
    let qrels = ds.qrels_for(&split.ids(&ds));
    let report = evaluate(&lists, &qrels, &cfg.retrieval.ks)?;
    let path = match output {
        Some(p) => p,
        None => out_path(cfg, REPORT_FILE)?,
    };
    fs::write(&path, report.to_csv())?;
    print!("{}", report.table());
    println!("{} claims; report in {}", report.claims, path.display());
    Ok(())
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.synth;
    let ds = synth_dataset(cfg.seed, s.n_claims, s.n_evidence, s.n_clusters)?;
    ds.save(&cfg.paths.data_dir)?;
    println!(
        "wrote {} claims and {} evidence items to {}",
        ds.claims.len(),
        ds.corpus.len(),
        cfg.paths.data_dir.display()
    );
    Ok(())
}

fn curves(cfg: &RunConfig, output: Option<PathBuf>) -> Result<()> {
    let path = cfg.paths.out_dir.join(CURVES_FILE);
    let points = if path.exists() {
        curve_from_csv(&fs::read_to_string(&path)?)?
    } else {
        let state = checkpoint_dir(cfg).join(STATE_FILE);
        if !state.exists() {
            bail!("no curves found in {}; run `daclr train` first", cfg.paths.out_dir.display());
        }
        load_checkpoint(&checkpoint_dir(cfg))?.1.curve
    };
    let csv = curve_to_csv(&points);
    match output {
        Some(p) => write_file(&p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
