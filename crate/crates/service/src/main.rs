use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ponzilens_core::bytecode::{disassemble, listing_json_lines};
use ponzilens_core::cfg::to_dot;
use ponzilens_core::pipeline::{analyze, AnalysisConfig};
use ponzilens_core::report::{build_report, report_schema, to_json};
use ponzilens_service::cache::{DiskCache, CACHE_DIR_ENV};
use ponzilens_service::input::{Address, InputRef};
use ponzilens_service::jobs::{run_analysis, Service, ServiceConfig};
use ponzilens_service::rpc::RPC_URL_ENV;
use ponzilens_service::server;

#[derive(Parser)]
#[command(name = "ponzilens", version, about = "Execution-path analysis of EVM bytecode for Ponzi-scheme features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one contract and write its report.
    Analyze(AnalyzeArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Print the instruction listing.
    Disasm {
        /// Hex file or inline 0x-prefixed hex.
        input: String,
        /// One JSON object per instruction.
        #[arg(long)]
        json: bool,
    },
    /// Print the report JSON Schema.
    Schema,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Hex file or inline 0x-prefixed hex. Omit when using --address.
    input: Option<String>,
    /// Fetch runtime code for this address.
    #[arg(long, conflicts_with = "input", requires = "rpc")]
    address: Option<String>,
    /// Node JSON-RPC endpoint.
    #[arg(long, env = RPC_URL_ENV)]
    rpc: Option<String>,
    #[arg(long)]
    max_paths: Option<usize>,
    #[arg(long)]
    max_blocks: Option<usize>,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the recovered CFG in Graphviz format.
    #[arg(long)]
    emit_cfg_dot: Option<PathBuf>,
    /// Emit the raw events of one path as JSON.
    #[arg(long, value_name = "ID")]
    dump_trace: Option<usize>,
    /// Destination for --dump-trace; stderr when omitted.
    #[arg(long, requires = "dump_trace")]
    trace_out: Option<PathBuf>,
    /// Feasibility checker.
    #[arg(long)]
    solver: Option<String>,
    /// Command line for the smtlib-command solver, e.g. "z3 -in".
    #[arg(long)]
    solver_command: Option<String>,
    /// Rule deciding which writes store investor addresses.
    #[arg(long)]
    investing_rule: Option<String>,
    #[arg(long, env = CACHE_DIR_ENV)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Analysis worker threads; defaults to available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Allowed browser origin; repeatable. Any origin when omitted.
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
    /// Let requests use the smtlib-command solver.
    #[arg(long)]
    allow_solver_command: bool,
    /// Default endpoint for address inputs.
    #[arg(long, env = RPC_URL_ENV)]
    rpc: Option<String>,
    #[arg(long, env = CACHE_DIR_ENV)]
    cache_dir: Option<PathBuf>,
}

fn input_ref(text: &str) -> InputRef {
    if text.starts_with("0x") || text.starts_with("0X") {
        InputRef::Hex(text.to_string())
    } else {
        InputRef::File(PathBuf::from(text))
    }
}

fn write_output(path: Option<&PathBuf>, text: &str, to_stderr: bool) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None if to_stderr => Ok(writeln!(std::io::stderr(), "{text}")?),
        None => Ok(writeln!(std::io::stdout(), "{text}")?),
    }
}

fn config_of(a: &AnalyzeArgs) -> Result<AnalysisConfig> {
    let mut config = AnalysisConfig::default();
    if let Some(n) = a.max_paths {
        config.limits.max_paths = n;
    }
    if let Some(n) = a.max_blocks {
        config.limits.max_blocks_per_path = n;
    }
    if !config.limits.is_valid() {
        bail!("--max-paths and --max-blocks must be positive");
    }
    if let Some(cmd) = &a.solver_command {
        config.solver = "smtlib-command".into();
        config.solver_options.insert("command".into(), cmd.clone());
    }
    if let Some(s) = &a.solver {
        config.solver = s.clone();
    }
    if let Some(r) = &a.investing_rule {
        config.investing_rule = r.clone();
    }
    config.strategies()?;
    Ok(config)
}

fn run_analyze(a: AnalyzeArgs) -> Result<()> {
    let config = config_of(&a)?;
    let input = match (&a.input, &a.address) {
        (Some(text), None) => input_ref(text),
        (None, Some(addr)) => {
            let address: Address = addr.parse()?;
            InputRef::Chain { address, endpoint: a.rpc.clone().context("--address needs --rpc or PONZILENS_RPC_URL")? }
        }
        _ => bail!("give a hex file, inline 0x hex, or --address"),
    };
    let cache = a.cache_dir.clone().map(DiskCache::new);
    let resolved = input.resolve(cache.as_ref())?;
    let address = resolved.address.as_deref();

    let json = if a.emit_cfg_dot.is_some() || a.dump_trace.is_some() {
        let analysis = analyze(&resolved.bytes, &config)?;
        if let Some(path) = &a.emit_cfg_dot {
            let dot = analysis.cfg.as_ref().map(to_dot).unwrap_or_else(|| "digraph cfg {}\n".into());
            std::fs::write(path, dot).with_context(|| format!("writing {}", path.display()))?;
        }
        if let Some(id) = a.dump_trace {
            let trace = analysis
                .trace_json(id)
                .with_context(|| format!("no path {id}; {} paths were enumerated", analysis.runs.len()))?;
            write_output(a.trace_out.as_ref(), &serde_json::to_string_pretty(&trace)?, true)?;
        }
        to_json(&build_report(&analysis, address)?)
    } else {
        run_analysis(&resolved.bytes, address, &config, cache.as_ref())?.json
    };
    write_output(a.out.as_ref(), &json, false)
}

fn run_serve(a: ServeArgs) -> Result<()> {
    let mut config = ServiceConfig {
        cache: a.cache_dir.map(DiskCache::new),
        default_endpoint: a.rpc,
        allow_solver_command: a.allow_solver_command,
        ..ServiceConfig::default()
    };
    if let Some(n) = a.workers {
        config.workers = n;
    }
    let svc = Arc::new(Service::start(config));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind).await.with_context(|| format!("binding {}", a.bind))?;
        server::serve(listener, svc, &a.cors_origins).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Analyze(a) => run_analyze(a),
        Command::Serve(a) => run_serve(a),
        Command::Disasm { input, json } => {
            let bytes = input_ref(&input).resolve(None)?.bytes;
            let instrs = disassemble(&bytes);
            if json {
                print!("{}", listing_json_lines(&instrs));
            } else {
                for i in &instrs {
                    println!("{i}");
                }
            }
            Ok(())
        }
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&report_schema())?);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
