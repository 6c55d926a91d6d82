//! The `kgaudit` command line.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{CommandFactory, Parser, Subcommand};
use kgaudit::builder::{load_inputs, BuildError, BuilderConfig, CategoryBank, GraphBuilder, ProjectOutcome};
use kgaudit::fuzz::{Executor, ForgeExecutor, RecordedExecutor};
use kgaudit::graph::{EdgeKind, KnowledgeGraph};
use kgaudit::harness::{ForgeToolchain, MockToolchain, Toolchain};
use kgaudit::ingest::load_project;
use kgaudit::llm::{HttpProvider, HttpSettings, LlmGateway, MockProvider, Provider, Usd};
use kgaudit::orchestrator::{AuditConfig, AuditReportOut, AuditWorkspace, Auditor, DEFAULT_GENERAL_RULES};
use kgaudit::taxonomy::BusinessType;

pub use config::{Config, ConfigError, Layer};

#[derive(Debug, Parser)]
#[command(name = "kgaudit", version, about = "Knowledge-graph driven smart contract auditing")]
struct Cli {
    /// TOML config file (default: $KNOWDIT_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Answer model calls from a mock script instead of the network.
    #[arg(long, global = true, value_name = "SCRIPT")]
    mock_llm: Option<PathBuf>,
    /// Replay fuzz outcomes from a recorded store instead of running forge.
    #[arg(long, global = true, value_name = "DIR")]
    mock_fuzz: Option<PathBuf>,
    /// Treat every harness build as successful.
    #[arg(long, global = true)]
    mock_toolchain: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and inspect knowledge graphs.
    #[command(subcommand)]
    Kg(KgCommand),
    /// Audit a project against a knowledge graph.
    #[command(subcommand)]
    Audit(AuditCommand),
}

#[derive(Debug, Subcommand)]
enum KgCommand {
    /// Build a graph from projects and their audit reports.
    Build {
        /// JSON list of {project_dir, findings_file}.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Spend cap in USD for the build; unlimited when absent.
        #[arg(long)]
        budget: Option<String>,
    },
    /// Print node and edge counts.
    Stats { graph: PathBuf },
    /// List the semantics of a business type and their patterns.
    Query {
        graph: PathBuf,
        #[arg(long)]
        business: String,
    },
}

#[derive(Debug, Subcommand)]
enum AuditCommand {
    /// Run the audit loop on a project.
    Run {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        kg: PathBuf,
        /// Spend cap in USD (default: the configured budget).
        #[arg(long)]
        budget: Option<String>,
        /// Output directory (default: $KNOWDIT_WORKSPACE, then audit-<project>).
        #[arg(long)]
        workspace: Option<PathBuf>,
    },
    /// Print the report of a finished audit.
    Report { workspace: PathBuf },
}

#[derive(Debug)]
enum CliError {
    /// Bad input; printed with the usage of `command`.
    User { message: String, command: &'static [&'static str] },
    Internal(String),
}

fn user(command: &'static [&'static str]) -> impl Fn(String) -> CliError {
    move |message| CliError::User { message, command }
}

fn internal(e: impl ToString) -> CliError {
    CliError::Internal(e.to_string())
}

fn usage(path: &[&str]) -> String {
    let mut cmd = Cli::command();
    let mut name = String::from("kgaudit");
    for p in path {
        match cmd.find_subcommand(p) {
            Some(sub) => cmd = sub.clone(),
            None => break,
        }
        name.push(' ');
        name.push_str(p);
    }
    cmd.bin_name(name).render_usage().to_string()
}

/// Runs one invocation and returns the process exit code: 0 on success,
/// 1 on user error, 2 on internal error.
pub fn run_cli(argv: &[String], env: &BTreeMap<String, String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let text = e.render().to_string();
            return match e.kind() {
                DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand if e.exit_code() == 0 => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match dispatch(cli, env, out) {
        Ok(()) => 0,
        Err(CliError::User { message, command }) => {
            let _ = writeln!(err, "error: {message}\n\n{}", usage(command));
            1
        }
        Err(CliError::Internal(message)) => {
            let _ = writeln!(err, "internal error: {message}");
            2
        }
    }
}

fn load_config(cli: &Cli, env: &BTreeMap<String, String>, extra: &[(&'static str, String)]) -> Result<Config, CliError> {
    let bad = |e: ConfigError| CliError::User {
        message: e.to_string(),
        command: &[],
    };
    let mut layers = Vec::new();
    let file = cli
        .config
        .clone()
        .or_else(|| env.get(config::CONFIG_ENV).map(PathBuf::from));
    if let Some(path) = file {
        layers.push(Layer::from_file(&path).map_err(bad)?);
    }
    layers.push(Layer::from_env(env).map_err(bad)?);
    let mut flags: Vec<(&str, String)> = Vec::new();
    if let Some(s) = cli.seed {
        flags.push(("seed", s.to_string()));
    }
    if let Some(p) = &cli.mock_llm {
        flags.push(("mock_llm", p.display().to_string()));
    }
    if let Some(p) = &cli.mock_fuzz {
        flags.push(("mock_fuzz", p.display().to_string()));
    }
    if cli.mock_toolchain {
        flags.push(("mock_toolchain", "true".into()));
    }
    flags.extend(extra.iter().cloned());
    layers.push(Layer::from_pairs("flags", flags).map_err(bad)?);
    Config::resolve(&layers).map_err(bad)
}

fn gateway(config: &Config) -> Result<LlmGateway, CliError> {
    let provider: Arc<dyn Provider> = match &config.mock_llm {
        Some(path) => Arc::new(MockProvider::from_file(path).map_err(|e| user(&[])(e.to_string()))?),
        None => {
            let api_key = config.api_key.clone().ok_or_else(|| {
                user(&[])("no model API key: set KNOWDIT_API_KEY or pass --mock-llm".to_string())
            })?;
            Arc::new(HttpProvider::new(HttpSettings {
                base_url: config.base_url.clone(),
                api_key,
                timeout: Duration::from_secs(config.request_timeout_secs),
            }))
        }
    };
    Ok(LlmGateway::new(provider, config.roles()))
}

fn category_bank(config: &Config) -> Result<CategoryBank, CliError> {
    match &config.categories {
        None => Ok(CategoryBank::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| user(&[])(format!("{}: {e}", path.display())))?;
            CategoryBank::from_json(&text).map_err(|e| user(&[])(format!("{}: {e}", path.display())))
        }
    }
}

fn parse_budget(raw: &str, command: &'static [&'static str]) -> Result<Usd, CliError> {
    let budget: Usd = raw.parse().map_err(|e: kgaudit::llm::BadAmount| user(command)(e.to_string()))?;
    if budget == Usd::ZERO {
        return Err(user(command)("--budget must be positive".into()));
    }
    Ok(budget)
}

fn load_graph(path: &Path, command: &'static [&'static str]) -> Result<KnowledgeGraph, CliError> {
    KnowledgeGraph::load(path).map_err(|e| user(command)(format!("{}: {e}", path.display())))
}

fn dispatch(cli: Cli, env: &BTreeMap<String, String>, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Kg(KgCommand::Build { manifest, out: dest, budget }) => {
            const CMD: &[&str] = &["kg", "build"];
            let config = load_config(&cli, env, &[])?;
            let budget = budget.as_deref().map(|b| parse_budget(b, CMD)).transpose()?;
            let inputs = load_inputs(manifest).map_err(|e| match e {
                BuildError::Manifest { .. } | BuildError::Ingest(_) => user(CMD)(e.to_string()),
                other => internal(other),
            })?;
            let mut llm = gateway(&config)?;
            if let Some(b) = budget {
                llm = llm.with_budget(b);
            }
            let bank = category_bank(&config)?;
            let builder = GraphBuilder::new(
                &llm,
                &bank,
                BuilderConfig {
                    max_chunk_units: config.chunk_units,
                    prior_cap: config.prior_cap,
                },
            );
            let report = builder.build_graph(&inputs);
            report.graph.save(dest).map_err(internal)?;
            for p in &report.projects {
                let line = match p {
                    ProjectOutcome::Built(s) => format!(
                        "built {}: semantics +{} merged {}, patterns +{} merged {}, findings {}, links {}",
                        s.name,
                        s.semantics.added.len(),
                        s.semantics.merged.len(),
                        s.patterns.added.len(),
                        s.patterns.merged.len(),
                        s.findings.len(),
                        s.links
                    ),
                    ProjectOutcome::Skipped { name, reason } => format!("skipped {name}: {reason}"),
                };
                writeln!(out, "{line}").map_err(internal)?;
            }
            if report.halted {
                writeln!(out, "budget exhausted; remaining projects skipped").map_err(internal)?;
            }
            writeln!(out, "{}", stats_line(&report.graph)).map_err(internal)?;
            writeln!(out, "cost=${}", llm.total_cost()).map_err(internal)?;
            Ok(())
        }
        Command::Kg(KgCommand::Stats { graph }) => {
            let g = load_graph(graph, &["kg", "stats"])?;
            writeln!(out, "{}", stats_line(&g)).map_err(internal)?;
            let stats = g.stats();
            let edges: Vec<String> = EdgeKind::ALL
                .iter()
                .map(|k| format!("{k}={}", stats.edges.get(k).copied().unwrap_or(0)))
                .collect();
            writeln!(out, "findings={} edges={} {}", stats.findings, g.edge_count(), edges.join(" ")).map_err(internal)?;
            Ok(())
        }
        Command::Kg(KgCommand::Query { graph, business }) => {
            const CMD: &[&str] = &["kg", "query"];
            let g = load_graph(graph, CMD)?;
            let ty: BusinessType = business.parse().map_err(|_| user(CMD)(format!("unknown business type `{business}`")))?;
            let sems = g.query_semantics_by_business(&BTreeSet::from([ty]));
            if sems.is_empty() {
                writeln!(out, "no semantics for {ty}").map_err(internal)?;
            }
            for s in sems {
                writeln!(out, "{} {}", s.id, s.title).map_err(internal)?;
                for (p, _) in g.linked_patterns(s.id).map_err(internal)? {
                    let attacks: Vec<String> = g.attack_types_of_pattern(p.id).iter().map(|a| a.to_string()).collect();
                    writeln!(out, "  {} {} [{}]", p.id, p.title, attacks.join(", ")).map_err(internal)?;
                }
            }
            Ok(())
        }
        Command::Audit(AuditCommand::Run {
            project,
            kg,
            budget,
            workspace,
        }) => {
            const CMD: &[&str] = &["audit", "run"];
            let mut extra = Vec::new();
            if let Some(b) = budget {
                parse_budget(b, CMD)?;
                extra.push(("budget", b.clone()));
            }
            if let Some(w) = workspace {
                extra.push(("workspace", w.display().to_string()));
            }
            let config = load_config(&cli, env, &extra)?;
            let corpus = load_project(project).map_err(|e| user(CMD)(e.to_string()))?;
            let mut graph = load_graph(kg, CMD)?;
            let ws_root = config
                .workspace
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("audit-{}", corpus.name)));
            clear_workspace(&ws_root).map_err(internal)?;
            let ws = AuditWorkspace::create(&ws_root).map_err(internal)?;

            let llm = gateway(&config)?;
            let bank = category_bank(&config)?;
            let toolchain: Box<dyn Toolchain> = if config.mock_toolchain {
                Box::new(MockToolchain::always_ok())
            } else {
                Box::new(ForgeToolchain {
                    forge: config.forge.clone(),
                    timeout: Duration::from_secs(config.build_timeout_secs),
                })
            };
            let executor: Box<dyn Executor> = match &config.mock_fuzz {
                Some(store) => Box::new(RecordedExecutor::new(store)),
                None => Box::new(ForgeExecutor {
                    forge: config.forge.clone(),
                }),
            };
            let general_rules = match &config.general_rules {
                Some(p) => std::fs::read_to_string(p).map_err(|e| user(CMD)(format!("{}: {e}", p.display())))?,
                None => DEFAULT_GENERAL_RULES.to_string(),
            };
            let auditor = Auditor {
                llm: &llm,
                bank: &bank,
                toolchain: toolchain.as_ref(),
                executor: executor.as_ref(),
                config: AuditConfig {
                    max_source_units: config.chunk_units,
                    max_repair_attempts: config.max_repair_attempts,
                    regeneration_cap: config.regeneration_cap,
                    fuzz_timeout: config.fuzz_timeout(),
                    seed: Some(config.seed),
                    general_rules,
                },
            };
            let report = auditor
                .run_audit(&corpus, &mut graph, config.budget, &ws)
                .map_err(internal)?;
            write_summary(out, &report, &ws_root).map_err(internal)?;
            Ok(())
        }
        Command::Audit(AuditCommand::Report { workspace }) => {
            const CMD: &[&str] = &["audit", "report"];
            let ws = AuditWorkspace { root: workspace.clone() };
            let path = ws.report_json();
            let text = std::fs::read_to_string(&path).map_err(|e| user(CMD)(format!("{}: {e}", path.display())))?;
            let report: AuditReportOut =
                serde_json::from_str(&text).map_err(|e| user(CMD)(format!("{}: {e}", path.display())))?;
            write!(out, "{}", report.render_markdown()).map_err(internal)?;
            Ok(())
        }
    }
}

fn stats_line(g: &KnowledgeGraph) -> String {
    let s = g.stats();
    format!("semantics={} patterns={} links={} projects={}", s.semantics, s.patterns, s.links(), s.projects)
}

/// Removes the outputs of an earlier audit so reruns start clean. Only the
/// layout this tool writes is touched.
fn clear_workspace(root: &Path) -> std::io::Result<()> {
    for dir in ["specs", "harnesses", "runs"] {
        let p = root.join(dir);
        if p.is_dir() {
            std::fs::remove_dir_all(p)?;
        }
    }
    for file in ["memory.log", "report.json", "report.md", "kg.json"] {
        let p = root.join(file);
        if p.is_file() {
            std::fs::remove_file(p)?;
        }
    }
    Ok(())
}

fn write_summary(out: &mut dyn Write, report: &AuditReportOut, root: &Path) -> std::io::Result<()> {
    writeln!(out, "pairs mapped: {}", report.pairs_mapped)?;
    for f in &report.findings {
        writeln!(out, "finding [{}] {} ({})", f.severity, f.title, f.pair)?;
    }
    if let Some(h) = &report.halted {
        writeln!(out, "halted: {h}")?;
    }
    writeln!(
        out,
        "findings={} calls={} cost=${}",
        report.findings.len(),
        report.ledger.calls,
        report.ledger.total
    )?;
    writeln!(out, "workspace: {}", root.display())
}
