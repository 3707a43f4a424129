//! Command-line entry point: data preparation, training, evaluation, report
//! formatting, and the selfcheck battery.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use fewshot::augment::AugmentMethod;
use fewshot::config::{load_config, ConfigError, RunConfig, TrainMethod};
use fewshot::corpus::{ingest, to_unified_jsonl, CharAlphabet, CorpusError, Source};
use fewshot::encoder::{Encoder, TextEmbedder};
use fewshot::eval::{format_report, reports_from_jsonl, reports_to_jsonl, run_convtl_trials, run_trials};
use fewshot::numerics::{load_checkpoint, save_checkpoint, NumericsError, ParameterSet};
use fewshot::protonet::ProtoHead;
use fewshot::train::{conv_tl_train, meta_train, TrainError};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "fewshot", about = "Few-shot intent classification workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the JSON run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// key.path=value overrides applied before validation.
    #[arg(short = 'o', long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse source corpora into unified JSON-lines files plus the persisted
    /// character alphabet and an ingestion summary.
    PrepareData(ConfigArgs),
    /// Run the configured training method (episodic meta-training or the
    /// conventional transfer-learning baseline).
    Train(ConfigArgs),
    /// Run k-shot trials against the configured checkpoint and write the
    /// evaluation report.
    Evaluate(ConfigArgs),
    /// Format one or more JSON-lines report files as an aligned table.
    Report {
        /// Report .jsonl files produced by `evaluate`.
        inputs: Vec<PathBuf>,
        /// Optional path for the rendered table.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the fast invariant battery (gradient checks, oracle equivalences,
    /// identity-initialization and degeneracy checks).
    Selfcheck {
        /// Test hook: bias the analytic gradient of the named operation so
        /// the harness provably catches it.
        #[arg(long)]
        corrupt: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PrepareData(args) => cmd_prepare(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Report { inputs, output } => cmd_report(&inputs, output.as_deref()),
        Command::Selfcheck { corrupt } => cmd_selfcheck(corrupt.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if cause.downcast_ref::<CorpusError>().is_some() {
            return EXIT_DATA;
        }
        if let Some(train) = cause.downcast_ref::<TrainError>() {
            return match train {
                TrainError::Corpus(_) => EXIT_DATA,
                TrainError::Invalid(_) => EXIT_CONFIG,
                _ => EXIT_NUMERIC,
            };
        }
        if cause.downcast_ref::<NumericsError>().is_some() {
            return EXIT_NUMERIC;
        }
    }
    1
}

fn cmd_prepare(args: &ConfigArgs) -> anyhow::Result<ExitCode> {
    let config = load_config(&args.config, &args.overrides)?;
    let Some(prepare) = config.prepare.clone() else {
        return Err(ConfigError::Validation("config has no `prepare` section".into()).into());
    };
    let sources: Vec<Source> = prepare.sources.iter().map(|s| s.to_source()).collect();
    for source in &prepare.sources {
        let paths: Vec<&PathBuf> = match source {
            fewshot::config::SourceConfig::Unified { files } => files.iter().collect(),
            fewshot::config::SourceConfig::Snips { dir, .. } => vec![dir],
            fewshot::config::SourceConfig::Tsv { train, validation, .. }
            | fewshot::config::SourceConfig::Top { train, validation, .. } => {
                train.iter().chain(validation).collect()
            }
        };
        for p in paths {
            if !p.exists() {
                bail!(CorpusError::Io {
                    path: p.display().to_string(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing source"),
                });
            }
        }
    }
    let (registry, summary) = ingest(&sources)?;
    if registry.is_empty() {
        bail!(CorpusError::EmptyRegistry);
    }

    fs::create_dir_all(&prepare.output_dir)
        .with_context(|| format!("creating {}", prepare.output_dir.display()))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut write_all = || -> anyhow::Result<()> {
        for (task, content) in to_unified_jsonl(&registry) {
            let path = prepare.output_dir.join(format!("{task}.jsonl"));
            fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        let alphabet = CharAlphabet::from_registry(&registry);
        let alphabet_path = prepare.output_dir.join("char_alphabet.json");
        alphabet.save(&alphabet_path)?;
        written.push(alphabet_path);

        let counts: Vec<serde_json::Value> = summary
            .counts
            .iter()
            .map(|((task, intent), (train, validation))| {
                serde_json::json!({
                    "task": task,
                    "intent": intent,
                    "train": train,
                    "validation": validation,
                })
            })
            .collect();
        let doc = serde_json::json!({
            "total_utterances": summary.total_utterances,
            "total_intents": summary.total_intents,
            "multi_root_dropped": summary.multi_root_dropped,
            "warnings": summary.warnings,
            "counts": counts,
        });
        let summary_path = prepare.output_dir.join("summary.json");
        fs::write(&summary_path, serde_json::to_string_pretty(&doc)?)
            .with_context(|| format!("writing {}", summary_path.display()))?;
        written.push(summary_path);
        Ok(())
    };
    if let Err(err) = write_all() {
        for path in written {
            let _ = fs::remove_file(path);
        }
        return Err(err);
    }

    for warning in &summary.warnings {
        eprintln!("warning: {warning}");
    }
    println!(
        "prepared {} utterances across {} intents into {}",
        summary.total_utterances,
        summary.total_intents,
        prepare.output_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

struct TextPipeline {
    registry: fewshot::corpus::TaskRegistry,
    table: fewshot::corpus::EmbeddingTable,
    alphabet: CharAlphabet,
}

fn load_pipeline(config: &RunConfig) -> anyhow::Result<TextPipeline> {
    if config.corpora.is_empty() {
        bail!(ConfigError::Validation("corpora list is empty".into()));
    }
    let (registry, _) = ingest(&[Source::Unified {
        files: config.corpora.clone(),
    }])?;
    config.validate_against(&registry)?;
    let table = match &config.word_vectors {
        Some(path) => fewshot::corpus::load_word_vectors(path)?,
        None => bail!(ConfigError::Validation(
            "word_vectors is required for text corpora".into()
        )),
    };
    if table.dimension() != config.encoder.word_dim {
        bail!(ConfigError::Validation(format!(
            "word vectors have dimension {} but encoder.word_dim = {}",
            table.dimension(),
            config.encoder.word_dim
        )));
    }
    let alphabet = match &config.char_alphabet {
        Some(path) => CharAlphabet::load(path)?,
        None => CharAlphabet::from_registry(&registry),
    };
    Ok(TextPipeline {
        registry,
        table,
        alphabet,
    })
}

fn cmd_train(args: &ConfigArgs) -> anyhow::Result<ExitCode> {
    let config = load_config(&args.config, &args.overrides)?;
    let pipeline = load_pipeline(&config)?;
    let (training_view, forbidden) = config.training_view(&pipeline.registry);
    let embedder = TextEmbedder {
        encoder: Encoder::new(config.encoder.clone()),
        table: &pipeline.table,
        alphabet: &pipeline.alphabet,
    };
    let mut rng: rand_chacha::ChaCha8Rng = rand::SeedableRng::seed_from_u64(config.seed);
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;

    match config.method {
        TrainMethod::Protonet => {
            let head = ProtoHead::new(config.proto_head.clone());
            let mut params = ParameterSet::new();
            Encoder::new(config.encoder.clone()).init_params(&mut params, &mut rng);
            head.init_params(&mut params, &mut rng);
            let out = meta_train(
                &training_view,
                &embedder,
                &head,
                params,
                &config.augment,
                &config.schedule,
                config.seed,
                &config.output_dir,
                &forbidden,
            )?;
            println!("phase 1 checkpoint: {}", out.phase1_checkpoint.display());
            if let Some(p2) = out.phase2_checkpoint {
                println!("phase 2 checkpoint: {}", p2.display());
            }
            println!("loss log: {}", out.loss_log.display());
        }
        TrainMethod::Convtl => {
            let mut params = ParameterSet::new();
            Encoder::new(config.encoder.clone()).init_params(&mut params, &mut rng);
            let model = conv_tl_train(
                &training_view,
                &embedder,
                params,
                config.convtl.clone(),
                config.seed,
            )?;
            let path = config.output_dir.join("convtl.ckpt");
            save_checkpoint(&path, &model.params)?;
            println!("convtl checkpoint: {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn default_checkpoint(config: &RunConfig) -> PathBuf {
    match config.method {
        TrainMethod::Convtl => config.output_dir.join("convtl.ckpt"),
        TrainMethod::Protonet => {
            if config.augment.method == AugmentMethod::None {
                config.output_dir.join("phase1.ckpt")
            } else {
                config.output_dir.join("phase2.ckpt")
            }
        }
    }
}

fn cmd_evaluate(args: &ConfigArgs) -> anyhow::Result<ExitCode> {
    let config = load_config(&args.config, &args.overrides)?;
    let pipeline = load_pipeline(&config)?;
    let test_view = config.test_view(&pipeline.registry);
    let embedder = TextEmbedder {
        encoder: Encoder::new(config.encoder.clone()),
        table: &pipeline.table,
        alphabet: &pipeline.alphabet,
    };
    let checkpoint = config
        .eval_checkpoint
        .clone()
        .unwrap_or_else(|| default_checkpoint(&config));
    let params = load_checkpoint(&checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;

    let report = match config.method {
        TrainMethod::Protonet => {
            let head = ProtoHead::new(config.proto_head.clone());
            run_trials(
                &params,
                &test_view,
                &config.test_task,
                &embedder,
                &head,
                &config.augment,
                &config.evaluation,
                config.to_json(),
            )?
        }
        TrainMethod::Convtl => run_convtl_trials(
            &params,
            &config.convtl,
            &test_view,
            &config.test_task,
            &embedder,
            &config.evaluation,
            config.to_json(),
        )?,
    };

    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    let jsonl_path = config.output_dir.join("report.jsonl");
    fs::write(&jsonl_path, reports_to_jsonl(std::slice::from_ref(&report)))
        .with_context(|| format!("writing {}", jsonl_path.display()))?;
    let table = format_report(std::slice::from_ref(&report))?;
    let table_path = config.output_dir.join("report.txt");
    fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;
    print!("{table}");
    println!("report: {}", jsonl_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(inputs: &[PathBuf], output: Option<&Path>) -> anyhow::Result<ExitCode> {
    if inputs.is_empty() {
        bail!(ConfigError::Validation("report needs at least one input file".into()));
    }
    let mut reports = Vec::new();
    let mut digests = BTreeSet::new();
    for path in inputs {
        let content =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for r in reports_from_jsonl(&content)? {
            digests.insert(r.config_digest.clone());
            reports.push(r);
        }
    }
    let table = format_report(&reports)?;
    if digests.len() > 1 {
        eprintln!("note: table mixes {} distinct configurations", digests.len());
    }
    if let Some(path) = output {
        fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_selfcheck(corrupt: Option<&str>) -> anyhow::Result<ExitCode> {
    let report = fewshot::selfcheck::run(corrupt);
    print!("{}", report.render());
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}
