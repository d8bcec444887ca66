use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use tokio::sync::mpsc;

use cohortq_client::Client;
use cohortq_core::agent::{AgentConfig, AgentEvent, ConfigOverrides, EventKind, EventSink};
use cohortq_core::assets;
use cohortq_core::ehr::{generate, write_store, GeneratorConfig};
use cohortq_core::eval::{export_report, load_benchmark, parse_benchmark, run_benchmark, ReportFormat, RunMode};
use cohortq_core::runtime::{build_agent, catalog_from, script_spec};
use cohortq_service::{load_config, serve, AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "cohortq", version, about = "Conversational cohort queries over a synthetic EHR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic store and write it as CSV.
    GenData {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Generator configuration (JSON); defaults to the bundled demo.
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Ask one question and print the trajectory and result link.
    Ask {
        #[arg(long)]
        question: String,
        /// Model script: a file or `builtin:<name>`.
        #[arg(long)]
        script: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Send the question to a running service instead.
        #[arg(long)]
        server: Option<String>,
        #[arg(long, value_enum)]
        delegation: Option<Switch>,
        #[arg(long, value_enum)]
        kb: Option<Switch>,
        /// Print the full trajectory as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Score the agent on a benchmark file.
    Eval {
        /// JSON-lines file or `builtin:<name>`.
        #[arg(long)]
        benchmark: String,
        #[arg(long, value_enum, default_value = "single")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "on")]
        delegation: Switch,
        #[arg(long, value_enum, default_value = "on")]
        kb: Switch,
        /// Seed for the generated store.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        script: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write every trajectory as JSON lines.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Chained,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Markdown,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Markdown => ReportFormat::Markdown,
        }
    }
}

fn service_config(path: Option<&PathBuf>) -> Result<ServiceConfig> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => ServiceConfig::default(),
    })
}

fn overrides(delegation: Option<Switch>, kb: Option<Switch>) -> ConfigOverrides {
    ConfigOverrides {
        delegation: delegation.map(Switch::on),
        kb_enabled: kb.map(Switch::on),
        ..ConfigOverrides::default()
    }
}

/// Script that drives a bundled benchmark under the given switches.
fn bundled_script(benchmark: &str, config: &AgentConfig) -> Option<String> {
    let name = match benchmark {
        "epi" => "epi",
        "brands" if config.kb_enabled => "brands_kb_on",
        "brands" => "brands_kb_off",
        "chained" if config.delegation => "chained_delegation_on",
        "chained" => "chained_delegation_off",
        _ => return None,
    };
    Some(format!("builtin:{name}"))
}

fn describe_event(ev: &AgentEvent) -> String {
    let p = &ev.payload;
    let agent = p["agent"].as_str().unwrap_or("query_agent");
    let body = match ev.kind {
        EventKind::AssistantText => p["text"].as_str().unwrap_or_default().to_string(),
        EventKind::ToolCall => format!("{agent} -> {} {}", p["name"].as_str().unwrap_or("?"), p["arguments"]),
        EventKind::ToolResult => {
            let content = p["content"].as_str().unwrap_or_default();
            let flag = if p["is_error"].as_bool() == Some(true) { " (error)" } else { "" };
            format!("{agent} <- {}{flag}: {content}", p["name"].as_str().unwrap_or("?"))
        }
        EventKind::DelegationStarted => format!("term={} intent={}", p["term"], p["intent"]),
        EventKind::DelegationFinished => format!("shortlist={}", p["shortlist"]),
        EventKind::TurnDone => p.to_string(),
        EventKind::TurnError => p.to_string(),
    };
    format!("[{:>3}] {:<19} {body}", ev.sequence, ev.kind.as_str())
}

fn links_in(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|w| w.find("/results/").map(|i| &w[i..]))
        .map(|w| w.trim_end_matches(|c: char| ".,;:)]}>\"'`".contains(c)).to_string())
        .collect()
}

async fn ask(
    question: String,
    script: Option<String>,
    config: Option<PathBuf>,
    server: Option<String>,
    o: ConfigOverrides,
    as_json: bool,
) -> Result<()> {
    if let Some(base) = server {
        let client = Client::new(base);
        let chat = client.create_chat(Some(&o)).await?;
        let turn = client
            .send_message_with(&chat.session_id, &question, |ev| {
                if !as_json {
                    println!("{}", describe_event(ev));
                }
            })
            .await?;
        if as_json {
            let events: Vec<_> = turn.events.iter().collect();
            println!("{}", serde_json::to_string_pretty(&json!({"session_id": chat.session_id, "events": events}))?);
        }
        let text = turn.final_text().unwrap_or_default();
        println!("answer: {text}");
        for url in links_in(text) {
            println!("url: {}{url}", client.base_url());
        }
        return match turn.terminal() {
            Some(ev) if ev.kind == EventKind::TurnDone => Ok(()),
            _ => bail!("turn did not complete"),
        };
    }

    let mut cfg = service_config(config.as_ref())?;
    if let Some(s) = script {
        cfg.agent.model = Some(script_spec(&s));
    }
    let agent_config = cfg.agent.with_overrides(&o)?;
    let agent = build_agent(&cfg.data, &agent_config)?;
    let mut session = agent.new_session("ask", agent_config)?;
    let (tx, mut rx) = mpsc::unbounded_channel();
    let printer = tokio::spawn(async move {
        let mut lines = Vec::new();
        while let Some(ev) = rx.recv().await {
            lines.push(describe_event(&ev));
        }
        lines
    });
    let sink = EventSink::new(tx);
    let trajectory = agent.run_turn(&mut session, &question, &sink).await?;
    drop(sink);
    let lines = printer.await?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&trajectory)?);
    } else {
        for l in lines {
            println!("{l}");
        }
        println!("answer: {}", trajectory.final_text);
        for url in &trajectory.urls {
            println!("url: {url}");
        }
    }
    if !trajectory.outcome.is_completed() {
        bail!("turn ended with {}", trajectory.outcome.describe());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
async fn eval(
    benchmark: String,
    mode: ModeArg,
    delegation: Switch,
    kb: Switch,
    seed: Option<u64>,
    out: PathBuf,
    format: FormatArg,
    script: Option<String>,
    config: Option<PathBuf>,
    trajectories: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = service_config(config.as_ref())?;
    if seed.is_some() {
        cfg.data.seed = seed;
    }
    let agent_config = cfg.agent.with_overrides(&overrides(Some(delegation), Some(kb)))?;
    let catalog = catalog_from(&cfg.data)?;
    let (items, builtin) = match benchmark.strip_prefix("builtin:") {
        Some(name) => {
            let text = assets::benchmark(name).ok_or_else(|| anyhow!("no bundled benchmark named `{name}`"))?;
            (parse_benchmark(text, &catalog)?, Some(name))
        }
        None => (load_benchmark(&benchmark, &catalog)?, None),
    };
    let model = match (script, &agent_config.model) {
        (Some(s), _) => script_spec(&s),
        (None, Some(m)) => m.clone(),
        (None, None) => builtin
            .and_then(|b| bundled_script(b, &agent_config))
            .map(|s| script_spec(&s))
            .ok_or_else(|| anyhow!("no model configured: pass --script or --config"))?,
    };
    let agent_config = AgentConfig {
        model: Some(model),
        ..agent_config
    };
    let agent = build_agent(&cfg.data, &agent_config)?;
    let mode = match mode {
        ModeArg::Single => RunMode::Single,
        ModeArg::Chained => RunMode::Chained,
    };
    let run = run_benchmark(&items, mode, &agent, &agent_config).await?;
    std::fs::write(&out, export_report(&run.report, format.into()))
        .with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = trajectories {
        let mut text = String::new();
        for t in &run.trajectories {
            text.push_str(&serde_json::to_string(t)?);
            text.push('\n');
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let a = &run.report.aggregate;
    eprintln!(
        "{} items, exact match {:.3}, f1 {:.3}, failed {}, mean tokens {:.1} -> {}",
        run.report.rows.len(),
        run.report.exact_match_rate(),
        a.f1.mean,
        run.report.rows.iter().filter(|r| r.failed).count(),
        a.tokens.mean,
        out.display()
    );
    Ok(())
}

fn gen_data(
    seed: Option<u64>,
    patients: Option<usize>,
    out: PathBuf,
    generator: Option<PathBuf>,
    catalog: Option<PathBuf>,
) -> Result<()> {
    let mut config: GeneratorConfig = match generator {
        Some(p) => serde_json::from_str(
            &std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => assets::demo_config(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(n) = patients {
        config.n_patients = n;
    }
    let catalog = catalog_from(&cohortq_core::runtime::DataConfig {
        catalog,
        ..Default::default()
    })?;
    let store = generate(&config, &catalog)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_store(&store, &out, Some(&config))?;
    println!(
        "wrote {} patients and {} events to {}",
        store.len(),
        store.events().len(),
        out.display()
    );
    Ok(())
}

async fn run_server(config: Option<PathBuf>, host: String, port: u16) -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cfg = service_config(config.as_ref())?;
    let state = Arc::new(AppState::from_config(&cfg)?);
    let listener = tokio::net::TcpListener::bind((host.as_str(), port))
        .await
        .with_context(|| format!("binding {host}:{port}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    serve(listener, state).await?;
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData {
            seed,
            patients,
            out,
            generator,
            catalog,
        } => gen_data(seed, patients, out, generator, catalog),
        Command::Serve { config, port, host } => run_server(config, host, port).await,
        Command::Ask {
            question,
            script,
            config,
            server,
            delegation,
            kb,
            json,
        } => ask(question, script, config, server, overrides(delegation, kb), json).await,
        Command::Eval {
            benchmark,
            mode,
            delegation,
            kb,
            seed,
            out,
            format,
            script,
            config,
            trajectories,
        } => {
            eval(
                benchmark,
                mode,
                delegation,
                kb,
                seed,
                out,
                format,
                script,
                config,
                trajectories,
            )
            .await
        }
    }
}
