use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use xaistudy::card::{render_card, validate_card, EvaluationCard};
use xaistudy::data::{load_dataset, Codebook};
use xaistudy::evaluation::{build_report, ReportOptions, SeMode};
use xaistudy::power::{
    estimate_cost, monte_carlo_power, CostQuery, PowerQuery, SdSource, GERMAN_CREDIT_ACCURACIES, RCDV_ACCURACIES,
    REFERENCE_N_GERMAN_CREDIT, REFERENCE_N_RCDV,
};
use xaistudy::simulate::{run_simulated_study, BehaviorModel, Knowledge, NoPacer, Pacer, SimulationOptions, SleepPacer};
use xaistudy::study::{
    AttentionBank, DocumentStore, FileStore, MainConfig, MemoryStore, ResponseSet, StoreSection, StudyApi,
    StudyConfig, StudyService, SurveyBank,
};
use xaistudy::{Execution, SystemClock};
use xaistudy_server::HttpClient;

#[derive(Parser)]
#[command(name = "xaistudy", version, about = "Human-centered evaluation of post hoc explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split data, train the model and precompute explanations.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the study server.
    Serve(ServeArgs),
    /// Register a prepared study with a running server.
    CreateStudy {
        #[arg(long)]
        server: String,
        /// A `study.json` written by `prepare`.
        study_config: PathBuf,
    },
    /// Drive a study with simulated participants.
    Simulate(SimulateArgs),
    /// Download a study's responses.
    Export {
        #[arg(long)]
        server: String,
        #[arg(long)]
        study: String,
        /// Output stem; writes `<stem>.decisions.csv`, `<stem>.surveys.csv` and `<stem>.exclusions.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        survey_bank: Option<PathBuf>,
    },
    /// Compute decision, reliance, fairness and survey metrics.
    Evaluate(EvaluateArgs),
    /// Sample size for a one-way ANOVA on condition means.
    Power(PowerArgs),
    /// Participant compensation estimate.
    Cost(CostArgs),
    /// Evaluation card tools.
    Card {
        #[command(subcommand)]
        action: CardAction,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// Main configuration; selects the store.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Studies to create at startup.
    #[arg(long = "study")]
    studies: Vec<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    study: String,
    #[arg(long, default_value_t = 30)]
    participants: usize,
    /// TOML behavior model.
    #[arg(long)]
    behavior: PathBuf,
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    server: String,
    /// Data and codebook holding the ground truth of served instances.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    attention_bank: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    first_index: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Sleep this fraction of each simulated task time; 0 does not wait.
    #[arg(long, default_value_t = 0.0)]
    pace: f64,
    /// Also write the export under this stem.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeArg {
    Pooled,
    Clustered,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Decisions CSV, or the stem of an export.
    #[arg(long)]
    export: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    /// Protected attribute; the codebook's first when omitted.
    #[arg(long)]
    protected: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long, value_enum, default_value_t = SeArg::Pooled)]
    se: SeArg,
    #[arg(long)]
    survey_bank: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Published {
    GermanCredit,
    Rcdv,
}

#[derive(Args)]
struct PowerArgs {
    /// Condition means, comma separated or repeated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    means: Vec<f64>,
    /// Use the published condition accuracies of a benchmark dataset.
    #[arg(long, value_enum, conflicts_with = "means")]
    published: Option<Published>,
    /// Common within-group sd; the binomial sd at the grand mean when omitted.
    #[arg(long)]
    sd: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    power: f64,
    /// Check the design by Monte-Carlo with this many simulations.
    #[arg(long)]
    monte_carlo: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    participants: usize,
    #[arg(long, default_value_t = xaistudy::power::REFERENCE_HOURLY_RATE)]
    rate: f64,
    #[arg(long, default_value_t = 20)]
    tasks: usize,
    #[arg(long, default_value_t = 6.0)]
    task_seconds: f64,
    #[arg(long, default_value_t = 8.0)]
    overhead_minutes: f64,
    #[arg(long, default_value_t = 0.0)]
    fee: f64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Subcommand)]
enum CardAction {
    /// Exit status 0 when complete, 1 with a list of issues otherwise.
    Validate { file: PathBuf },
    /// Write the card as Markdown.
    Render {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

fn survey_bank(path: Option<&Path>) -> Result<SurveyBank> {
    match path {
        Some(p) => SurveyBank::from_path(p).map_err(anyhow::Error::msg),
        None => Ok(SurveyBank::bundled()),
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let store: Arc<dyn DocumentStore> = match args.config.as_deref().map(MainConfig::from_path).transpose() {
        Ok(Some(MainConfig {
            store: StoreSection::File { path },
            ..
        })) => Arc::new(FileStore::open(&path).with_context(|| path.display().to_string())?),
        Ok(_) => Arc::new(MemoryStore::default()),
        Err(e) => bail!(e),
    };
    let service = Arc::new(StudyService::new(store, Arc::new(SystemClock)));
    for path in &args.studies {
        let config: StudyConfig = read_json(path)?;
        match service.create_study(config) {
            Ok(c) => println!("study {} ({}) with {} pool items", c.study_id, c.condition, c.pool_size),
            Err(e) if e.kind == xaistudy::study::ErrorKind::Conflict => println!("{}: already registered", path.display()),
            Err(e) => bail!("{}: {e}", path.display()),
        }
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        xaistudy_server::serve(listener, service, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let behavior = BehaviorModel::from_path(&args.behavior)?;
    let dataset = load_dataset(&args.data, &args.codebook)?;
    let attention = match &args.attention_bank {
        Some(p) => AttentionBank::from_path(p).map_err(anyhow::Error::msg)?,
        None => AttentionBank::bundled(),
    };
    let knowledge = Knowledge::from_dataset(&dataset, attention);
    let client = HttpClient::new(&args.server);
    let pacer: Box<dyn Pacer> = if args.pace > 0.0 {
        Box::new(SleepPacer { scale: args.pace })
    } else {
        Box::new(NoPacer)
    };
    let options = SimulationOptions {
        participants: args.participants,
        first_index: args.first_index,
        threads: args.threads,
    };
    let export = run_simulated_study(&client, &args.study, &behavior, &knowledge, pacer.as_ref(), options)?;
    println!(
        "{} decisions, {} surveys, {} exclusions",
        export.decisions.len(),
        export.surveys.len(),
        export.exclusions.len()
    );
    if let Some(stem) = &args.out {
        let paths = export.write_files(stem, &SurveyBank::bundled())?;
        println!("wrote {}", paths.decisions.display());
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let set = ResponseSet::read_files(&args.export)?;
    let codebook = Codebook::from_path(&args.codebook)?;
    let bank = survey_bank(args.survey_bank.as_deref())?;
    let options = ReportOptions {
        se_mode: match args.se {
            SeArg::Pooled => SeMode::Pooled,
            SeArg::Clustered => SeMode::Clustered,
        },
        protected: args.protected.clone(),
    };
    let report = build_report(&set, &codebook, &bank, &options)?;
    let text = match args.format {
        Format::Text => report.to_text(),
        Format::Json => report.to_json(),
    };
    std::fs::write(&args.out, &text).with_context(|| args.out.display().to_string())?;
    print!("{}", report.to_text());
    Ok(())
}

fn power(args: PowerArgs) -> Result<()> {
    let (means, reference) = match args.published {
        Some(Published::GermanCredit) => (GERMAN_CREDIT_ACCURACIES.to_vec(), Some(("German Credit", REFERENCE_N_GERMAN_CREDIT))),
        Some(Published::Rcdv) => (RCDV_ACCURACIES.to_vec(), Some(("RCDV", REFERENCE_N_RCDV))),
        None => (args.means.clone(), None),
    };
    if means.len() < 2 {
        bail!("give at least two means with --means, or --published");
    }
    let query = PowerQuery {
        group_means: means.clone(),
        sd: args.sd.map_or(SdSource::PooledBinomial, SdSource::Supplied),
        alpha: args.alpha,
        target_power: args.power,
    };
    let report = query.solve()?;
    let mc = args
        .monte_carlo
        .map(|sims| {
            monte_carlo_power(
                &means,
                report.common_sd,
                report.sample_size.per_group,
                args.alpha,
                sims,
                args.seed,
                Execution::Parallel,
            )
        })
        .transpose()?;
    match args.format {
        Format::Json => {
            let value = serde_json::json!({
                "report": report,
                "monte_carlo": mc,
                "reference_total_n": reference.map(|(_, n)| n),
            });
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
        Format::Text => {
            print!("{}", report.to_text());
            if let Some(mc) = mc {
                println!("monte-carlo power: {:.4} ± {:.4} ({} simulations)", mc.power, mc.se, mc.simulations);
            }
            if let Some((name, n)) = reference {
                println!(
                    "published total N for {name}: {n} (reference only; the variance behind it was not reported)"
                );
            }
        }
    }
    Ok(())
}

fn cost(args: CostArgs) -> Result<()> {
    let q = CostQuery {
        n_participants: args.participants,
        tasks_per_participant: args.tasks,
        avg_task_seconds: args.task_seconds,
        overhead_minutes: args.overhead_minutes,
        hourly_rate: args.rate,
        platform_fee_fraction: args.fee,
    };
    q.validate().map_err(anyhow::Error::msg)?;
    let c = estimate_cost(&q);
    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&serde_json::json!({"query": q, "cost": c}))?),
        Format::Text => print!("{}", c.to_text()),
    }
    Ok(())
}

fn card(action: CardAction) -> Result<ExitCode> {
    match action {
        CardAction::Validate { file } => {
            let card = match EvaluationCard::from_path(&file) {
                Ok(card) => card,
                Err(e) => {
                    println!("{e}");
                    return Ok(ExitCode::FAILURE);
                }
            };
            let issues = validate_card(&card);
            if issues.is_empty() {
                println!("{}: complete", file.display());
                Ok(ExitCode::SUCCESS)
            } else {
                for i in &issues {
                    println!("{i}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
        CardAction::Render { file, out } => {
            let card = EvaluationCard::from_path(&file)?;
            let doc = render_card(&card)?;
            std::fs::write(&out, doc).with_context(|| out.display().to_string())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Prepare { config, out } => {
            let cfg = MainConfig::from_path(&config).map_err(anyhow::Error::msg)?;
            let p = xaistudy::pipeline::prepare(&cfg, &out, &SystemClock).map_err(anyhow::Error::msg)?;
            println!(
                "model test accuracy {:.3}, F1 {:.3}; {} explanations ({} failed)",
                p.metrics.accuracy,
                p.metrics.f1,
                p.explained,
                p.failures.len()
            );
            println!("study config: {}", p.study_config_path.display());
        }
        Command::Serve(args) => serve(args)?,
        Command::CreateStudy { server, study_config } => {
            let config: StudyConfig = read_json(&study_config)?;
            let created = HttpClient::new(server).create_study(config)?;
            println!("{}", serde_json::to_string_pretty(&created)?);
        }
        Command::Simulate(args) => simulate(args)?,
        Command::Export {
            server,
            study,
            out,
            survey_bank: bank,
        } => {
            let set = HttpClient::new(server).export(&study)?;
            let paths = set.write_files(&out, &survey_bank(bank.as_deref())?)?;
            println!("wrote {} decisions to {}", set.decisions.len(), paths.decisions.display());
        }
        Command::Evaluate(args) => evaluate(args)?,
        Command::Power(args) => power(args)?,
        Command::Cost(args) => cost(args)?,
        Command::Card { action } => return card(action),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
