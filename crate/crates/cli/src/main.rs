use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use agentsim_cli::config::Overrides;
use agentsim_cli::review::{review_decide, review_list, review_show, review_stats};
use agentsim_cli::synthetic::SyntheticOptions;
use agentsim_cli::{cmd_export, cmd_validate, cmd_metrics, cmd_review_serve, cmd_seed_select, cmd_simulate, cmd_synthetic, CliError};
use agentsim_client::{StatusFilter, DEFAULT_PORT};
use agentsim_core::seeding::Strategy;
use agentsim_core::simulation::AgentAction;
use agentsim_core::synthetic::SyntheticSpec;
use agentsim_core::validation::api::DecisionRequest;
use agentsim_core::validation::Verdict;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "agentsim", version, about = "Corpus-grounded agent simulation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration (YAML).
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
}

impl ConfigArgs {
    fn overrides(&self, strategy: Option<Strategy>) -> Overrides {
        Overrides {
            out: self.out.clone(),
            strategy,
            rng_seed: self.rng_seed,
            parallelism: self.parallelism,
        }
    }
}

#[derive(Args, Clone)]
struct ServiceArgs {
    /// Port of a running review service on 127.0.0.1.
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Full base URL; takes precedence over --port.
    #[arg(long)]
    url: Option<String>,
}

impl ServiceArgs {
    fn base_url(&self) -> String {
        self.url.clone().unwrap_or_else(|| format!("http://127.0.0.1:{}", self.port))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a config: schema, ranges, files and (with --probe) backend reachability.
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        probe: bool,
    },
    /// Select seed queries and write <out>/seeds.jsonl.
    SeedSelect {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Run trajectories for every seed not yet in the manifest, then export.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to <out>/seeds.jsonl.
        #[arg(long)]
        seeds: Option<PathBuf>,
    },
    /// Apply review decisions and rewrite the dataset export.
    Export {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Aggregate metrics over an output tree into <out>/metrics.json.
    Metrics {
        #[command(flatten)]
        config: ConfigArgs,
        /// Other output trees to test against this one.
        #[arg(long)]
        compare: Vec<PathBuf>,
        /// Also write per-pair test statistics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the review API (and UI, if configured) in the foreground.
    ReviewServe {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Talk to a running review service.
    Review {
        #[command(subcommand)]
        command: ReviewCommand,
    },
    /// Write a planted-topic corpus, candidate queries and a scripted config.
    Synthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        documents: usize,
        #[arg(long, default_value_t = 20)]
        topics: usize,
        #[arg(long, default_value_t = 300)]
        queries: usize,
        #[arg(long, default_value_t = 50)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StatusArg {
    Pending,
    Decided,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerdictArg {
    Promote,
    Revise,
    Discard,
}

#[derive(Subcommand)]
enum ReviewCommand {
    List {
        #[command(flatten)]
        service: ServiceArgs,
        #[arg(long, value_enum, default_value = "pending")]
        status: StatusArg,
        #[arg(long)]
        limit: Option<usize>,
    },
    Show {
        #[command(flatten)]
        service: ServiceArgs,
        item_id: String,
    },
    Decide {
        #[command(flatten)]
        service: ServiceArgs,
        item_id: String,
        #[arg(long)]
        reviewer: String,
        #[arg(long, value_enum)]
        verdict: VerdictArg,
        /// Candidate index, required for promote.
        #[arg(long)]
        candidate: Option<usize>,
        /// Replacement action as JSON, required for revise.
        #[arg(long)]
        action: Option<String>,
        #[arg(long)]
        notes: Option<String>,
        #[arg(long)]
        expected_version: Option<u64>,
    },
    Stats {
        #[command(flatten)]
        service: ServiceArgs,
    },
}

fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn print_text(text: impl std::fmt::Display) {
    let _ = write!(std::io::stdout(), "{text}");
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate { config, probe } => match cmd_validate(&config.config, &config.overrides(None), probe) {
            Ok(warnings) => {
                for d in &warnings {
                    print_text(format!("{d}\n"));
                }
                print_text("OK\n");
                Ok(0)
            }
            Err(CliError::InvalidConfig(diagnostics)) => {
                for d in &diagnostics {
                    print_text(format!("{d}\n"));
                }
                Err(CliError::InvalidConfig(diagnostics))
            }
            Err(e) => Err(e),
        },
        Command::SeedSelect { config, strategy } => {
            print_text(cmd_seed_select(&config.config, &config.overrides(strategy))?);
            Ok(0)
        }
        Command::Simulate { config, seeds } => {
            let summary = cmd_simulate(&config.config, &config.overrides(None), seeds.as_deref())?;
            print_text(&summary);
            Ok(summary.exit_code())
        }
        Command::Export { config } => {
            print_text(cmd_export(&config.config, &config.overrides(None))?);
            Ok(0)
        }
        Command::Metrics { config, compare, csv } => {
            print_json(&cmd_metrics(&config.config, &config.overrides(None), &compare, csv.as_deref())?);
            Ok(0)
        }
        Command::ReviewServe { config, port } => {
            cmd_review_serve(&config.config, &config.overrides(None), port, |addr| {
                print_text(format!("review service listening on http://{addr} (ctrl-c to stop)\n"));
            })?;
            Ok(0)
        }
        Command::Review { command } => review(command),
        Command::Synthetic {
            out,
            documents,
            topics,
            queries,
            budget,
            rng_seed,
        } => {
            let options = SyntheticOptions {
                spec: SyntheticSpec {
                    documents,
                    topics,
                    queries,
                    rng_seed,
                    ..SyntheticSpec::default()
                },
                budget,
                clusters: topics,
            };
            print_text(cmd_synthetic(&out, &options)?);
            Ok(0)
        }
    }
}

fn review(command: ReviewCommand) -> Result<i32, CliError> {
    match command {
        ReviewCommand::List { service, status, limit } => {
            let status = match status {
                StatusArg::Pending => StatusFilter::Pending,
                StatusArg::Decided => StatusFilter::Decided,
                StatusArg::All => StatusFilter::All,
            };
            print_json(&review_list(&service.base_url(), status, limit)?);
        }
        ReviewCommand::Show { service, item_id } => print_json(&review_show(&service.base_url(), &item_id)?),
        ReviewCommand::Decide {
            service,
            item_id,
            reviewer,
            verdict,
            candidate,
            action,
            notes,
            expected_version,
        } => {
            let revised_action = match action {
                Some(json) => Some(
                    serde_json::from_str::<AgentAction>(&json)
                        .map_err(|e| CliError::Usage(format!("--action is not a valid action: {e}")))?,
                ),
                None => None,
            };
            let request = DecisionRequest {
                verdict: match verdict {
                    VerdictArg::Promote => Verdict::Promote,
                    VerdictArg::Revise => Verdict::Revise,
                    VerdictArg::Discard => Verdict::Discard,
                },
                chosen_candidate_index: candidate,
                revised_action,
                notes,
                expected_version,
            };
            print_json(&review_decide(&service.base_url(), &item_id, &reviewer, &request)?);
        }
        ReviewCommand::Stats { service } => print_json(&review_stats(&service.base_url())?),
    }
    Ok(0)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("AGENTSIM_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", e.to_json());
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
