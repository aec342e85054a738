use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hiersent_core::corpus::{self, FilterConfig, SplitOptions, SplitRatios, DEFAULT_ARTICLE_CAP, DEFAULT_SEED};
use hiersent_core::epoch_log::read_epoch_log;
use hiersent_core::metrics::StdDevConvention;
use hiersent_core::penalty::{penalty_service, structure_penalty_with, PenaltyResponse, ValidityMode};
use hiersent_core::pipeline::{self, Pipeline, RunConfig, ScoreRow, Stage};
use hiersent_core::Execution;

#[derive(Parser)]
#[command(name = "hiersent", version, about = "Hierarchical JSON sentence representations")]
struct Cli {
    /// Run everything on the calling thread
    #[arg(long, global = true)]
    sequential: bool,

    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Structural penalty over decoded model outputs
    Penalty(PenaltyArgs),
    /// Corpus filtering, splitting and statistics
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Run or summarize the evaluation pipeline
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Validate and print a trainer epoch log (CSV)
    Epochs {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct PenaltyArgs {
    /// Validity rule: strict (whole output must be an object) or extract
    #[arg(long, default_value = "strict")]
    mode: ValidityMode,

    /// Serve one JSON request per stdin line, answering one line each
    #[arg(long, conflicts_with = "file")]
    stdin: bool,

    /// Treat each line of FILE as one decoded output and score the batch
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Drop equation, symbol, citation and incomplete sentences, then cap per article
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the exclusion report (JSON)
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ARTICLE_CAP)]
        article_cap: usize,
        /// File with one curator-flagged incomplete sentence id per line
        #[arg(long)]
        incomplete_ids: Option<PathBuf>,
    },
    /// Seeded train/val/test split
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Shuffle globally instead of per domain
        #[arg(long)]
        no_stratify: bool,
        /// Train/val/test fractions, e.g. 0.7,0.1,0.2
        #[arg(long, value_delimiter = ',', num_args = 3)]
        ratios: Option<Vec<f64>>,
    },
    /// Per-domain article and sentence counts
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Run stages from a TOML config
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset, e.g. evaluate,report (default: all)
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<Stage>>,
        /// Skip stages whose inputs are unchanged since their last run
        #[arg(long)]
        resume: bool,
    },
    /// Print the summary table of a finished run or a scores file
    Report {
        #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
        run: Option<PathBuf>,
        /// JSONL of {"id","cosine","bleu","rouge1_f1","meteor"} rows
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Use the n-1 denominator for standard deviations
        #[arg(long)]
        sample_std: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match run(cli.command, exec) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, exec: Execution) -> Result<ExitCode> {
    match command {
        Command::Penalty(args) => penalty(args, exec),
        Command::Corpus(cmd) => corpus_cmd(cmd, exec).map(|_| ExitCode::SUCCESS),
        Command::Pipeline(cmd) => pipeline_cmd(cmd, exec),
        Command::Epochs { log, json } => {
            let rows = read_epoch_log(&log)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                println!("{:>5} {:>10} {:>10} {:>9}", "epoch", "ce_loss", "penalty", "validity");
                for r in &rows {
                    println!("{:>5} {:>10.4} {:>10.4} {:>9.4}", r.epoch, r.ce_loss, r.struct_penalty, r.validity_rate);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn penalty(args: PenaltyArgs, exec: Execution) -> Result<ExitCode> {
    if args.stdin {
        let stdin = io::stdin();
        let stdout = io::stdout();
        let stats = penalty_service(stdin.lock(), stdout.lock(), args.mode).context("penalty service I/O")?;
        log::info!("answered {} requests, {} errors", stats.answered, stats.errors);
        return Ok(ExitCode::SUCCESS);
    }
    let Some(path) = args.file else {
        bail!("pass --stdin to serve requests or --file to score a batch");
    };
    let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let batch: Vec<String> = BufReader::new(file).lines().collect::<io::Result<_>>()?;
    let fragment = structure_penalty_with(&batch, args.mode, exec)?;
    let id = path.display().to_string();
    println!("{}", PenaltyResponse::new(id, &fragment).to_line());
    Ok(ExitCode::SUCCESS)
}

fn corpus_cmd(cmd: CorpusCommand, exec: Execution) -> Result<()> {
    match cmd {
        CorpusCommand::Filter {
            input,
            output,
            report,
            article_cap,
            incomplete_ids,
        } => {
            let records = corpus::load_corpus(&input)?;
            let incomplete_ids: BTreeSet<String> = match incomplete_ids {
                Some(p) => fs::read_to_string(&p)
                    .with_context(|| format!("reading {}", p.display()))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
                None => BTreeSet::new(),
            };
            let cfg = FilterConfig {
                article_cap,
                incomplete_ids,
                ..FilterConfig::default()
            };
            let total = records.len();
            let (kept, filter_report) = corpus::filter_sentences_with(records, &cfg, exec)?;
            corpus::save_corpus(&kept, &output)?;
            if let Some(p) = report {
                fs::write(&p, serde_json::to_string_pretty(&filter_report)? + "\n")
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            eprintln!("kept {} of {} sentences", kept.len(), total);
        }
        CorpusCommand::Split {
            input,
            output,
            seed,
            no_stratify,
            ratios,
        } => {
            let records = corpus::load_corpus(&input)?;
            let ratios = match ratios.as_deref() {
                Some(&[train, val, test]) => SplitRatios { train, val, test },
                _ => SplitRatios::default(),
            };
            let opts = SplitOptions {
                seed,
                ratios,
                stratify: !no_stratify,
            };
            let manifest = corpus::split_corpus(&records, &opts)?;
            corpus::save_manifest(&manifest, &output)?;
            let c = manifest.counts;
            eprintln!("train {} / val {} / test {}", c.train, c.val, c.test);
        }
        CorpusCommand::Stats { input, json } => {
            let records = corpus::load_corpus(&input)?;
            let stats = corpus::corpus_stats(&records);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{stats}");
            }
        }
    }
    Ok(())
}

fn pipeline_cmd(cmd: PipelineCommand, exec: Execution) -> Result<ExitCode> {
    match cmd {
        PipelineCommand::Run { config, stages, resume } => {
            let cfg = RunConfig::load(&config)?;
            let stages = stages.unwrap_or_else(|| Stage::ALL.to_vec());
            let pipeline = Pipeline::new(cfg).execution(exec);
            let mut stderr = io::stderr().lock();
            let mut ok = true;
            let mut sorted = stages.clone();
            sorted.sort();
            sorted.dedup();
            for stage in sorted {
                match pipeline.run_stage(stage, resume) {
                    Ok(s) => {
                        let note = if s.reused { " (reused)" } else { "" };
                        writeln!(stderr, "{:<12} in {:>5}  out {:>5}  failed {:>5}{note}", s.stage, s.inputs, s.outputs, s.failures)?;
                    }
                    Err(e) => {
                        writeln!(stderr, "{stage:<12} error: {e}")?;
                        ok = false;
                        break;
                    }
                }
            }
            if ok && stages.contains(&Stage::Report) {
                print!("{}", fs::read_to_string(pipeline.run_dir().join("report.txt"))?);
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        PipelineCommand::Report { run, scores, sample_std } => {
            let convention = if sample_std {
                StdDevConvention::Sample
            } else {
                StdDevConvention::Population
            };
            match (run, scores) {
                (Some(dir), _) => print!("{}", pipeline::load_report(&dir)?),
                (None, Some(path)) => {
                    let rows: Vec<ScoreRow> = pipeline::read_jsonl(&path)?;
                    print!("{}", pipeline::report_from_scores(&rows, convention)?);
                }
                (None, None) => bail!("pass --run or --scores"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
