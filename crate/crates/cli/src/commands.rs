use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lowmt_core::corpus::{self, ParallelCorpus, Split};
use lowmt_core::hpo::{
    self, Baseline, CommandTrainer, SearchSpace, StagedSearchOptions, ToyTrainer, Trainer, DEFAULT_CYCLE_STEPS,
    DEFAULT_EMISSION_FACTOR, DEFAULT_MAX_STEPS, DEFAULT_PATIENCE,
};
use lowmt_core::humeval::{self, CampaignStore, MappingConfig, Segment};
use lowmt_core::metrics::{self, MetricConfig};
use lowmt_core::subword::{self, SubwordModel, UnigramConfig, VocabPreset};
use lowmt_core::Execution;

use crate::{load_campaign_metrics, render_report, ReportFormat};

#[derive(Parser, Debug)]
#[command(name = "lowmt", version, about = "Low-resource MT toolkit: corpora, subwords, metrics, HPO and human evaluation")]
pub struct Cli {
    /// Run data-parallel stages on a single thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parallel corpus preparation.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Subword model training and segmentation.
    #[command(subcommand)]
    Subword(SubwordCmd),
    /// Automatic evaluation metrics.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Hyperparameter search.
    #[command(subcommand)]
    Hpo(HpoCmd),
    /// Human evaluation campaigns.
    #[command(subcommand)]
    Humeval(HumevalCmd),
}

#[derive(Subcommand, Debug)]
pub enum CorpusCmd {
    /// Split aligned source/target files into train, dev and test sets.
    Split {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        dev: usize,
        #[arg(long)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for {train,dev,test}.{src,tgt} and split.tsv.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Bpe,
    Unigram,
}

#[derive(Subcommand, Debug)]
pub enum SubwordCmd {
    /// Train a shared subword model.
    Train {
        #[arg(long, value_enum, default_value = "bpe")]
        kind: KindArg,
        /// Vocabulary size; overrides --preset.
        #[arg(long)]
        vocab_size: Option<usize>,
        /// 4k, 8k, 16k or 32k.
        #[arg(long, default_value = "16k")]
        preset: String,
        /// Plain-text training files, one sentence per line.
        #[arg(long = "input", required_unless_present = "corpus")]
        inputs: Vec<PathBuf>,
        /// split.tsv from `corpus split`; both sides of the training split are used.
        #[arg(long, conflicts_with = "inputs")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment text into pieces, one line in, one space-separated line out.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Join space-separated pieces back into text.
    Decode {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum MetricsCmd {
    /// Score a hypothesis file against a reference file.
    Score {
        #[arg(long = "hyp")]
        hypothesis: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Compare case-sensitively.
        #[arg(long)]
        case_sensitive: bool,
        #[arg(long, conflicts_with = "tsv")]
        json: bool,
        #[arg(long)]
        tsv: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TrainerArg {
    Toy,
    Command,
}

#[derive(Args, Debug)]
pub struct HpoRunArgs {
    /// Search space TOML; defaults to the built-in Transformer space.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "toy")]
    trainer: TrainerArg,
    /// Program for `--trainer command`, followed by its arguments.
    #[arg(long = "command", num_args = 1.., allow_hyphen_values = true)]
    command: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_CYCLE_STEPS)]
    cycle_steps: u64,
    /// Candidates per stage; all candidates when omitted.
    #[arg(long)]
    trials_per_stage: Option<usize>,
    /// Start unstaged parameters from a random draw instead of the first candidate.
    #[arg(long)]
    sampled_baseline: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid carbon intensity in gCO2/kWh.
    #[arg(long, default_value_t = DEFAULT_EMISSION_FACTOR)]
    emission_factor: f64,
    /// After the search, train the best configuration with early stopping.
    #[arg(long)]
    full_train: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: u64,
    #[arg(long, default_value_t = DEFAULT_PATIENCE)]
    patience: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum HpoCmd {
    /// Staged search over a space, writing trials.jsonl, emissions.json and best.json.
    Run(HpoRunArgs),
}

#[derive(Subcommand, Debug)]
pub enum HumevalCmd {
    /// Create a blind campaign store from aligned text files.
    Create {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// System output as NAME=PATH; repeat per system.
        #[arg(long = "output", required = true)]
        outputs: Vec<String>,
        #[arg(long = "annotator", required = true)]
        annotators: Vec<String>,
        /// Annotate a random sample of this many lines instead of all.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "LOWMT_STORE")]
        store: PathBuf,
    },
    /// Serve the annotation API and UI.
    Serve {
        #[arg(long, env = "LOWMT_STORE")]
        store: PathBuf,
        #[arg(long, env = "LOWMT_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
        /// Directory with the built UI bundle.
        #[arg(long = "static", env = "LOWMT_STATIC")]
        static_dir: Option<PathBuf>,
    },
    /// Import a published annotation export into a new store.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long, env = "LOWMT_STORE")]
        store: PathBuf,
    },
    /// Print the campaign report.
    Report {
        #[arg(long, env = "LOWMT_STORE")]
        store: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
        /// Fail unless every unit is annotated.
        #[arg(long)]
        strict: bool,
    },
    /// Print the inter-annotator agreement table.
    Kappa {
        #[arg(long, env = "LOWMT_STORE")]
        store: PathBuf,
    },
}

fn read_input(path: Option<&Path>) -> anyhow::Result<Box<dyn BufRead>> {
    Ok(match path {
        Some(p) => Box::new(BufReader::new(fs::File::open(p).with_context(|| p.display().to_string())?)),
        None => Box::new(BufReader::new(io::stdin())),
    })
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Corpus(CorpusCmd::Split { source, target, dev, test, seed, out: dir }) => {
            let corpus = corpus::load_parallel(&source, &target)?;
            let split = corpus::split_corpus(&corpus, dev, test, seed)?;
            write_split(&split, &dir)?;
            writeln!(
                out,
                "train={} dev={} test={}",
                split.count(Split::Train),
                split.count(Split::Dev),
                split.count(Split::Test)
            )?;
        }
        Command::Subword(cmd) => run_subword(cmd, exec, out)?,
        Command::Metrics(MetricsCmd::Score { hypothesis, reference, case_sensitive, json, tsv }) => {
            let hyps = read_lines(&hypothesis)?;
            let refs = read_lines(&reference)?;
            let config = MetricConfig { case_insensitive: !case_sensitive, execution: exec, ..Default::default() };
            let report = metrics::evaluate_all(&hyps, &refs, &config)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else if tsv {
                writeln!(out, "{}\n{}", metrics::MetricReport::TSV_HEADER, report.tsv_row())?;
            } else {
                write!(out, "{}", report.human())?;
            }
        }
        Command::Hpo(HpoCmd::Run(args)) => run_hpo(args, exec, out)?,
        Command::Humeval(cmd) => run_humeval(cmd, out)?,
    }
    Ok(())
}

fn write_split(split: &ParallelCorpus, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    for part in [Split::Train, Split::Dev, Split::Test] {
        let pairs = split.subset(part);
        let mut src = BufWriter::new(fs::File::create(dir.join(format!("{part}.src")))?);
        let mut tgt = BufWriter::new(fs::File::create(dir.join(format!("{part}.tgt")))?);
        for p in pairs {
            writeln!(src, "{}", p.source)?;
            writeln!(tgt, "{}", p.target)?;
        }
        src.flush()?;
        tgt.flush()?;
    }
    let mut tsv = BufWriter::new(fs::File::create(dir.join("split.tsv"))?);
    split.write_tsv(&mut tsv)?;
    tsv.flush()?;
    Ok(())
}

fn run_subword(cmd: SubwordCmd, exec: Execution, out: &mut dyn Write) -> anyhow::Result<()> {
    match cmd {
        SubwordCmd::Train { kind, vocab_size, preset, inputs, corpus: corpus_path, out: model_path } => {
            let size = match vocab_size {
                Some(v) => v,
                None => preset.parse::<VocabPreset>().map_err(|e| anyhow!(e))?.size(),
            };
            let owned: Vec<String> = match corpus_path {
                Some(p) => {
                    let c = ParallelCorpus::read_tsv(BufReader::new(fs::File::open(&p).with_context(|| p.display().to_string())?))?;
                    corpus::concat_bilingual(&c)?.into_iter().map(str::to_string).collect()
                }
                None => {
                    let mut all = Vec::new();
                    for p in &inputs {
                        all.extend(read_lines(p)?);
                    }
                    all
                }
            };
            let lines: Vec<&str> = owned.iter().map(String::as_str).collect();
            let model = match kind {
                KindArg::Bpe => subword::bpe_train_with(&lines, size, exec)?,
                KindArg::Unigram => {
                    SubwordModel::Unigram(subword::unigram_train_with(&lines, &UnigramConfig::new(size), exec)?.model)
                }
            };
            model.save(&model_path)?;
            writeln!(out, "{} vocab_size={} -> {}", model.kind(), model.vocab_size(), model_path.display())?;
        }
        SubwordCmd::Encode { model, input } => {
            let model = subword::load_model(&model)?;
            for line in read_input(input.as_deref())?.lines() {
                let pieces = model.encode(&line?)?;
                writeln!(out, "{}", pieces.join(" "))?;
            }
        }
        SubwordCmd::Decode { input } => {
            for line in read_input(input.as_deref())?.lines() {
                let line = line?;
                let pieces: Vec<&str> = line.split(' ').filter(|p| !p.is_empty()).collect();
                writeln!(out, "{}", subword::decode(&pieces))?;
            }
        }
    }
    Ok(())
}

fn run_hpo(args: HpoRunArgs, exec: Execution, out: &mut dyn Write) -> anyhow::Result<()> {
    let space = match &args.space {
        Some(p) => SearchSpace::load(p)?,
        None => SearchSpace::transformer(),
    };
    let toy;
    let command;
    let trainer: &dyn Trainer = match args.trainer {
        TrainerArg::Toy => {
            toy = ToyTrainer::new(args.seed);
            &toy
        }
        TrainerArg::Command => {
            let (program, rest) = args
                .command
                .split_first()
                .ok_or_else(|| anyhow!("--trainer command requires --command PROGRAM [ARGS...]"))?;
            command = CommandTrainer { program: program.clone(), args: rest.to_vec() };
            &command
        }
    };
    let options = StagedSearchOptions {
        cycle_steps: args.cycle_steps,
        trials_per_stage: args.trials_per_stage,
        baseline: if args.sampled_baseline { Baseline::Sampled } else { Baseline::FirstListed },
        seed: args.seed,
        emission_factor: args.emission_factor,
        execution: exec,
    };
    let mut outcome = hpo::staged_search(&space, trainer, &options)?;
    if args.full_train {
        let mut rec = hpo::full_train(
            &outcome.best,
            trainer,
            args.max_steps,
            args.cycle_steps,
            args.patience,
            args.emission_factor,
        )?;
        rec.id = outcome.trials.len();
        if rec.status != hpo::TrialStatus::Failed {
            outcome.ledger.record(rec.id, rec.energy_kwh)?;
        }
        outcome.trials.push(rec);
    }
    fs::create_dir_all(&args.out).with_context(|| args.out.display().to_string())?;
    let mut log = BufWriter::new(fs::File::create(args.out.join("trials.jsonl"))?);
    hpo::write_trial_log(&outcome.trials, &mut log)?;
    log.flush()?;
    fs::write(args.out.join("emissions.json"), serde_json::to_string_pretty(&outcome.ledger)? + "\n")?;
    fs::write(args.out.join("best.json"), serde_json::to_string_pretty(&outcome.best)? + "\n")?;
    writeln!(out, "best {}", serde_json::to_string(&outcome.best)?)?;
    writeln!(out, "trials {}", outcome.trials.len())?;
    writeln!(out, "energy_kwh {:.4}", outcome.ledger.total_kwh())?;
    writeln!(out, "kg_co2 {:.4}", outcome.ledger.total_kg())?;
    Ok(())
}

fn run_humeval(cmd: HumevalCmd, out: &mut dyn Write) -> anyhow::Result<()> {
    match cmd {
        HumevalCmd::Create { source, reference, outputs, annotators, sample, seed, store } => {
            let sources = read_lines(&source)?;
            let references = read_lines(&reference)?;
            let mut systems = Vec::new();
            let mut texts = Vec::new();
            for spec in &outputs {
                let (name, path) = spec
                    .split_once('=')
                    .ok_or_else(|| anyhow!("--output expects NAME=PATH, got {spec:?}"))?;
                systems.push(name.to_string());
                texts.push(read_lines(Path::new(path))?);
            }
            let n = sources.len();
            if references.len() != n || texts.iter().any(|t| t.len() != n) {
                bail!("source, reference and output files must have the same number of lines");
            }
            let mut rows: Vec<usize> = (0..n).collect();
            if let Some(k) = sample {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                if k > n {
                    bail!("cannot sample {k} of {n} lines");
                }
                rows.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                rows.truncate(k);
                rows.sort_unstable();
            }
            let segments = rows
                .iter()
                .enumerate()
                .map(|(i, &row)| Segment {
                    id: i as u64 + 1,
                    source: sources[row].clone(),
                    reference: references[row].clone(),
                    outputs: systems.iter().cloned().zip(texts.iter().map(|t| t[row].clone())).collect(),
                })
                .collect();
            let session = humeval::create_session(segments, systems, annotators, seed)?;
            let store = CampaignStore::create(&store, &session)?;
            writeln!(out, "created {} units in {}", store.session().total_units(), store.root().display())?;
        }
        HumevalCmd::Serve { store, bind, static_dir } => {
            let metrics = load_campaign_metrics(&store)?;
            let campaign = CampaignStore::open(&store)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .with_context(|| format!("cannot bind {bind}"))?;
                writeln!(out, "listening on http://{}", listener.local_addr()?)?;
                out.flush()?;
                let state = crate::server::AppState::new(campaign, metrics);
                crate::server::serve(listener, state, static_dir).await
            })?;
        }
        HumevalCmd::Ingest { data, mapping, store } => {
            let cfg = MappingConfig::load(&mapping)?;
            let (session, records) = humeval::ingest_published_dataset(&data, &cfg)?;
            let mut campaign = CampaignStore::create(&store, &session)?;
            campaign.append_records(&records)?;
            writeln!(
                out,
                "ingested {} units ({} annotators, {} segments, {} systems)",
                records.len(),
                session.annotators.len(),
                session.segments.len(),
                session.systems.len()
            )?;
        }
        HumevalCmd::Report { store, format, strict } => {
            let (session, records) = CampaignStore::snapshot(&store)?;
            let metrics = load_campaign_metrics(&store)?;
            write!(out, "{}", render_report(&session, &records, &metrics, format, strict)?)?;
        }
        HumevalCmd::Kappa { store } => {
            let (session, records) = CampaignStore::snapshot(&store)?;
            let report = humeval::he_report(
                &session,
                &records,
                &Default::default(),
                &humeval::MqmWeights::default(),
                true,
            )?;
            write!(out, "{}", report.kappa_tsv())?;
        }
    }
    Ok(())
}

/// Short machine-readable class of an error for the one-line diagnostic.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    use lowmt_core::corpus::CorpusError;
    use lowmt_core::hpo::HpoError;
    use lowmt_core::humeval::{HumevalError, StoreError};
    use lowmt_core::metrics::MetricsError;
    use lowmt_core::subword::SubwordError;
    for cause in err.chain() {
        if cause.is::<CorpusError>() {
            return "corpus";
        }
        if cause.is::<SubwordError>() {
            return "subword";
        }
        if cause.is::<MetricsError>() {
            return "metrics";
        }
        if cause.is::<HpoError>() {
            return "hpo";
        }
        if let Some(e) = cause.downcast_ref::<HumevalError>() {
            return match e {
                HumevalError::Validation { .. } => "validation",
                HumevalError::Conflict { .. } => "conflict",
                HumevalError::Incomplete { .. } => "incomplete",
                HumevalError::Ingest { .. } => "ingest",
                _ => "humeval",
            };
        }
        if cause.is::<StoreError>() {
            return "store";
        }
        if cause.is::<io::Error>() {
            return "io";
        }
    }
    "error"
}

/// `error[<kind>]: <message>` on a single line.
pub fn format_error(err: &anyhow::Error) -> String {
    let message = format!("{err:#}").replace(['\n', '\r'], " ");
    format!("error[{}]: {message}", error_kind(err))
}
