//! `dbchat`: serve the HTTP API, ingest documents, run workflows, or chat in
//! the terminal.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad usage, config or input.

mod boot;
mod config;
mod render;

use std::collections::BTreeMap;
use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dbchat_core::awel::{execute_with, load_dag, AwelError, ExecOptions, NodeKind};
use dbchat_core::rag::{valid_space_name, RagError};
use dbchat_core::session::run_turn;
use dbchat_core::Value;

use crate::config::Config;

#[derive(Parser)]
#[command(name = "dbchat", version, about = "Chat with your data through agents, workflows and local models")]
struct Cli {
    /// JSON config file. `DBCHAT_CONFIG` takes precedence when set. Without
    /// either, a mock model on the bundled demo script is used and data goes
    /// to ./data.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP server.
    Serve {
        /// Overrides `listen_addr` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Add documents to a knowledge space.
    Ingest {
        #[arg(long)]
        space: String,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Run a workflow file and print its report as JSON.
    RunDag {
        #[arg(long)]
        file: PathBuf,
        /// `name=value`, repeatable. Values are text.
        #[arg(long = "input", value_parser = parse_input)]
        inputs: Vec<(String, String)>,
        /// Run independent nodes concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Interactive chat on stdin. `/quit` or end of input leaves.
    Chat {
        /// Continue this conversation instead of starting a new one.
        #[arg(long)]
        conversation: Option<String>,
        /// Knowledge space consulted by the agents.
        #[arg(long)]
        space: Option<String>,
    },
}

fn parse_input(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected name=value, got `{s}`")),
    }
}

/// An error and the exit code it maps to.
struct Failure(u8, String);

impl Failure {
    fn usage(msg: impl ToString) -> Self {
        Failure(2, msg.to_string())
    }

    fn runtime(msg: impl ToString) -> Self {
        Failure(1, msg.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn load_config(flag: Option<PathBuf>) -> Result<Config, Failure> {
    let from_env = std::env::var_os("DBCHAT_CONFIG").filter(|v| !v.is_empty()).map(PathBuf::from);
    match from_env.or(flag).as_deref() {
        Some(p) => Config::load(p).map_err(Failure::usage),
        None => Ok(Config::default()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load_config(cli.config).and_then(|cfg| match cli.command {
        Command::Serve { listen } => serve(cfg, listen),
        Command::Ingest { space, files } => ingest(&cfg, &space, &files),
        Command::RunDag { file, inputs, parallel } => run_dag(&cfg, &file, inputs, parallel),
        Command::Chat { conversation, space } => chat(&cfg, conversation, space),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("dbchat: {msg}");
            ExitCode::from(code)
        }
    }
}

fn serve(mut cfg: Config, listen: Option<String>) -> Outcome {
    if let Some(addr) = listen {
        cfg.listen_addr = addr;
    }
    let app = boot::build(&cfg).map_err(Failure::runtime)?;
    let state =
        dbchat_server::AppState::new(app.store, app.gateway, app.runtime, app.spaces, boot::server_options(&cfg));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(Failure::runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.listen_addr)
            .await
            .map_err(|e| Failure::runtime(format!("cannot listen on {}: {e}", cfg.listen_addr)))?;
        let addr = listener.local_addr().map_err(Failure::runtime)?;
        eprintln!("dbchat listening on http://{addr}");
        dbchat_server::serve(listener, state).await.map_err(Failure::runtime)
    })
}

fn ingest(cfg: &Config, space: &str, files: &[PathBuf]) -> Outcome {
    if !valid_space_name(space) {
        return Err(Failure::usage(format!("invalid knowledge space name `{space}`, expected [a-z0-9_-]+")));
    }
    let texts = files
        .iter()
        .map(|f| {
            std::fs::read_to_string(f).map(|t| (f, t)).map_err(|e| Failure::runtime(format!("{}: {e}", f.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let app = boot::build(cfg).map_err(Failure::runtime)?;
    let mut total = 0;
    for (path, text) in texts {
        let doc_id =
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
        let n = app.spaces.ingest(space, &doc_id, &text, cfg.knowledge.max_chars).map_err(|e| match e {
            RagError::InvalidSpaceName(_) | RagError::InvalidMaxChars(_) => Failure::usage(e),
            e => Failure::runtime(format!("{}: {e}", path.display())),
        })?;
        println!("{}: {n} chunks", path.display());
        total += n;
    }
    println!("total: {total} chunks in space {space}");
    Ok(())
}

fn dag_error(file: &Path, e: AwelError) -> Failure {
    match e {
        AwelError::Invalid(violations) => {
            let lines: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
            Failure::usage(format!("{}: invalid workflow:\n{}", file.display(), lines.join("\n")))
        }
        e => Failure::usage(format!("{}: {e}", file.display())),
    }
}

fn run_dag(cfg: &Config, file: &Path, inputs: Vec<(String, String)>, parallel: bool) -> Outcome {
    let source = std::fs::read_to_string(file).map_err(|e| Failure::usage(format!("{}: {e}", file.display())))?;
    let dag = load_dag(&source).map_err(|e| dag_error(file, e))?;
    let inputs: BTreeMap<String, Value> = inputs.into_iter().map(|(k, v)| (k, Value::Text(v))).collect();
    // checked before a conversation is created for the run
    if let Some(n) = dag.nodes.iter().find(|n| n.kind == NodeKind::Input && !inputs.contains_key(&n.id)) {
        return Err(dag_error(file, AwelError::MissingInput(n.id.clone())));
    }
    let app = boot::build(cfg).map_err(Failure::runtime)?;
    let conv = app.store.create_conversation().map_err(Failure::runtime)?;
    eprintln!("conversation: {conv}");
    let rt = app.runtime.for_conversation(&conv);
    let report = execute_with(&dag, &inputs, &rt, ExecOptions { parallel }).map_err(|e| dag_error(file, e))?;
    let json = serde_json::to_string_pretty(&report).map_err(Failure::runtime)?;
    println!("{json}");
    if report.failures.is_empty() {
        Ok(())
    } else {
        let nodes: Vec<&str> = report.failures.iter().map(|f| f.node.as_str()).collect();
        Err(Failure::runtime(format!("{} node(s) failed: {}", nodes.len(), nodes.join(", "))))
    }
}

fn chat(cfg: &Config, conversation: Option<String>, space: Option<String>) -> Outcome {
    if let Some(s) = &space {
        if !valid_space_name(s) {
            return Err(Failure::usage(format!("invalid knowledge space name `{s}`, expected [a-z0-9_-]+")));
        }
    }
    let app = boot::build(cfg).map_err(Failure::runtime)?;
    let conv = match conversation {
        Some(c) => {
            app.store.create_named(&c).map_err(Failure::usage)?;
            c
        }
        None => app.store.create_conversation().map_err(Failure::runtime)?,
    };
    eprintln!("conversation: {conv}");
    let mut rt = app.runtime.for_conversation(&conv);
    if let Some(s) = space.or_else(|| cfg.knowledge_space.clone()) {
        rt = rt.with_knowledge(app.spaces.space(&s).map_err(Failure::runtime)?);
    }

    let interactive = std::io::stdin().is_terminal();
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut out = std::io::stdout();
    loop {
        if interactive {
            print!("you> ");
            let _ = out.flush();
        }
        let Some(line) = lines.next() else { break };
        let line = line.map_err(Failure::runtime)?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "/quit" {
            break;
        }
        let mut renderer = render::Renderer::default();
        run_turn(&app.store, &rt, text, &mut |event| {
            let _ = write!(out, "{}", renderer.event(event));
            let _ = out.flush();
        })
        .map_err(Failure::runtime)?;
    }
    Ok(())
}
