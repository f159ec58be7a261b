//! Command-line front end: run campaigns, replay inputs, and export the
//! inferred state machine. Thin synchronous wrapper over the engine; every
//! exit path prints one machine-parseable `RESULT ...` line.

use crate::engine::{self, Budget, ChannelKind, EngineConfig, ExecOptions, Mode, Outcome};
use crate::mutation::{Dictionary, FuzzInput};
use crate::mvp::StateRegistry;
use crate::runtime::assign_states;
use crate::targets::{lookup, register_custom_io_hooks, TargetSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const NET_HOOKS_ENV: &str = "STATEFUZZ_NET_HOOKS";

#[derive(Parser)]
#[command(name = "statefuzz", about = "Stateful greybox fuzzer for message-oriented servers")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign.
    Fuzz(FuzzArgs),
    /// Re-execute one saved .safl input and print what happened.
    Replay(ReplayArgs),
    /// Print the state machine a finished campaign inferred.
    Ipsm(IpsmArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Stateful,
    Stateless,
    ResponseCode,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ChannelArg {
    InProcess,
    Tcp,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long)]
    target: String,
    /// Directory of .safl seed files.
    #[arg(long)]
    seeds: PathBuf,
    /// Output directory (queue/, crashes/, stats.jsonl, ipsm-*.dot).
    #[arg(long)]
    out: PathBuf,
    /// Stop after this many fuzz executions.
    #[arg(long)]
    execs: Option<u64>,
    /// Stop after this many seconds of wall time.
    #[arg(long)]
    duration: Option<u64>,
    #[arg(long, value_enum, default_value = "stateful")]
    mode: ModeArg,
    /// Fix the state-distance threshold instead of calibrating it.
    #[arg(long)]
    epsilon: Option<u32>,
    #[arg(long, default_value = "1")]
    rng_seed: u64,
    #[arg(long, value_enum, default_value = "in-process")]
    channel: ChannelArg,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long, default_value = "50")]
    reply_timeout_ms: u64,
    #[arg(long, default_value = "1000")]
    hang_timeout_ms: u64,
    /// Allow a non-empty output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    target: String,
    /// The .safl input to replay.
    input: PathBuf,
    /// Also print the hook-event log.
    #[arg(long)]
    trace: bool,
    /// State-distance threshold used when mapping snapshots to state ids.
    #[arg(long, default_value = "5")]
    epsilon: u32,
    #[arg(long, value_enum, default_value = "in-process")]
    channel: ChannelArg,
}

#[derive(Args)]
struct IpsmArgs {
    /// A finished campaign's output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "dot")]
    format: FormatArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Dot,
    Json,
}

/// Parses argv and runs the chosen command, returning the process exit code:
/// 0 clean, 2 a unique crash was found, 1 setup or input error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version through this path too.
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match cli.command {
        Command::Fuzz(a) => cmd_fuzz(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Ipsm(a) => cmd_ipsm(a),
    }
}

fn fail(msg: &str) -> i32 {
    println!("RESULT status=error msg={:?}", msg);
    1
}

/// Resolves the target name and applies `STATEFUZZ_NET_HOOKS` if set: a
/// comma-separated list of hook-point names wired as custom I/O routines.
fn resolve_target(name: &str) -> Result<TargetSpec, String> {
    let spec = lookup(name).ok_or_else(|| format!("unknown target {name:?}"))?;
    match std::env::var(NET_HOOKS_ENV) {
        Err(_) => Ok(spec),
        Ok(raw) => {
            let names: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            register_custom_io_hooks(spec, &names, &names).map_err(|e| e.to_string())
        }
    }
}

fn load_seeds(dir: &Path) -> Result<Vec<FuzzInput>, String> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("seeds dir {}: {e}", dir.display()))?
        .filter_map(|r| r.ok().map(|d| d.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "safl"))
        .collect();
    paths.sort();
    let mut seeds = Vec::new();
    for p in paths {
        seeds.push(crate::safl::read_file(&p).map_err(|e| format!("{}: {e}", p.display()))?);
    }
    if seeds.is_empty() {
        return Err(format!("no .safl seeds in {}", dir.display()));
    }
    Ok(seeds)
}

fn channel(arg: ChannelArg) -> ChannelKind {
    match arg {
        ChannelArg::InProcess => ChannelKind::InProcess,
        ChannelArg::Tcp => ChannelKind::TcpLoopback,
    }
}

fn cmd_fuzz(a: FuzzArgs) -> i32 {
    let spec = match resolve_target(&a.target) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let seeds = match load_seeds(&a.seeds) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    if !a.resume {
        let occupied = std::fs::read_dir(&a.out)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if occupied {
            return fail(&format!(
                "out dir {} is not empty (use --resume)",
                a.out.display()
            ));
        }
    }
    let dictionary = match &a.dict {
        None => Dictionary::empty(),
        Some(p) => match Dictionary::load(p) {
            Ok(d) => d,
            Err(e) => return fail(&format!("{}: {e}", p.display())),
        },
    };
    let cfg = EngineConfig {
        mode: match a.mode {
            ModeArg::Stateful => Mode::Stateful,
            ModeArg::Stateless => Mode::Stateless,
            ModeArg::ResponseCode => Mode::ResponseCode,
        },
        budget: Budget {
            execs: a.execs.or(if a.duration.is_none() { Some(100_000) } else { None }),
            wall: a.duration.map(Duration::from_secs),
        },
        rng_seed: a.rng_seed,
        channel: channel(a.channel),
        epsilon_override: a.epsilon,
        dictionary,
        reply_timeout: Duration::from_millis(a.reply_timeout_ms),
        hang_timeout: Duration::from_millis(a.hang_timeout_ms),
        out_dir: Some(a.out.clone()),
        ..EngineConfig::default()
    };
    let report = match engine::run_campaign(&spec, &seeds, &cfg) {
        Ok(r) => r,
        Err(e) => return fail(&e.to_string()),
    };
    let crashed = report.unique_crashes() > 0;
    println!(
        "RESULT status={} execs={} corpus={} states={} transitions={} crashes_unique={} hangs={} epsilon={} elapsed_s={:.2}",
        if crashed { "crash" } else { "ok" },
        report.execs,
        report.corpus_entries,
        report.states,
        report.transitions,
        report.unique_crashes(),
        report.hangs,
        report.epsilon,
        report.elapsed.as_secs_f64(),
    );
    if crashed {
        2
    } else {
        0
    }
}

fn cmd_replay(a: ReplayArgs) -> i32 {
    let spec = match resolve_target(&a.target) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let input = match crate::safl::read_file(&a.input) {
        Ok(i) => i,
        Err(e) => return fail(&format!("{}: {e}", a.input.display())),
    };
    let opts = ExecOptions {
        capture: true,
        channel: channel(a.channel),
        ..ExecOptions::default()
    };
    let v = engine::execute_input(&spec, &input.messages, &opts);
    let mut registry = StateRegistry::new();
    let seq = assign_states(v.digests.as_deref().unwrap_or(&[]), &mut registry, a.epsilon);
    for (i, burst) in v.replies.iter().enumerate() {
        for reply in burst {
            println!("reply[{i}] {}", String::from_utf8_lossy(reply).escape_default());
        }
    }
    if a.trace {
        for e in &v.events {
            println!("event {e}");
        }
    }
    let seq_str = seq
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(",");
    match v.outcome {
        Outcome::Ok => {
            println!("RESULT status=ok states={seq_str}");
            0
        }
        Outcome::Crash(site) => {
            println!(
                "RESULT status=crash group={} states={seq_str}",
                site.group_key()
            );
            2
        }
        Outcome::Hang => {
            println!("RESULT status=hang states={seq_str}");
            2
        }
    }
}

fn cmd_ipsm(a: IpsmArgs) -> i32 {
    // Campaigns timestamp their exports; take the newest one.
    let mut dots: Vec<PathBuf> = match std::fs::read_dir(&a.out) {
        Ok(d) => d
            .filter_map(|r| r.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("ipsm-") && n.ends_with(".dot"))
            })
            .collect(),
        Err(e) => return fail(&format!("{}: {e}", a.out.display())),
    };
    dots.sort();
    let Some(path) = dots.pop() else {
        return fail(&format!("no ipsm-*.dot in {}", a.out.display()));
    };
    let dot = match std::fs::read_to_string(&path) {
        Ok(d) => d,
        Err(e) => return fail(&format!("{}: {e}", path.display())),
    };
    match a.format {
        FormatArg::Dot => print!("{dot}"),
        FormatArg::Json => {
            let Some((states, transitions)) = crate::ipsm::parse_dot(&dot) else {
                return fail(&format!("{} is not a valid machine export", path.display()));
            };
            let json = serde_json::json!({
                "states": states,
                "transitions": transitions.iter().map(|(f, t)| vec![f, t]).collect::<Vec<_>>(),
            });
            println!("{json}");
        }
    }
    println!(
        "RESULT status=ok file={} format={}",
        path.display(),
        match a.format {
            FormatArg::Dot => "dot",
            FormatArg::Json => "json",
        }
    );
    0
}
