//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when the command ran but recorded a failure
//! outcome (ingest error, failed session, comparison ordering not met), 2 on
//! usage errors.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use formulink_core::agent::{advance, AgentError, RoundTrace, Stage};
use formulink_core::kb::KbError;
use formulink_core::sim::{scripted_designer, SHIPPED_SEED};

use crate::api::{ingest_report, serve, App};
use crate::config::ServiceConfig;
use crate::runs::{compare_to_dir, sweep_to_dir, CompareRequest};
use crate::world::World;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "formulink", version, about = "Dialogue-driven optimisation formulation workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk and embed a corpus directory and report the index size.
    Ingest {
        corpus_dir: PathBuf,
        #[arg(long)]
        chunk_size: usize,
    },
    /// Interactive dialogue in the terminal. An empty line sends the
    /// scripted designer's next message.
    Chat {
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value = "scripted")]
        profile: String,
        #[arg(long, default_value_t = 2000)]
        chunk_size: usize,
        /// Service config providing the corpus and backends.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the chunk-size × k sweep and write sweep.json, sweep.csv and traces.
    Sweep {
        #[arg(long, default_value_t = SHIPPED_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the three-arm comparison and write comparison.json and CSVs.
    Compare {
        /// Inclusive seed range `A..B`, or a single seed.
        #[arg(long, default_value = "1..5", value_parser = parse_seed_range)]
        seeds: RangeInclusive<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SHIPPED_SEED)]
        corpus_seed: u64,
        /// Override the training iterations (quick runs).
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the episodes per iteration (quick runs).
        #[arg(long)]
        batch_episodes: Option<usize>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parses `A..B` (inclusive) or a single seed.
pub fn parse_seed_range(s: &str) -> Result<RangeInclusive<u64>, String> {
    let parse = |t: &str| {
        t.trim()
            .parse::<u64>()
            .map_err(|e| format!("`{t}` is not a seed: {e}"))
    };
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    if a > b {
        return Err(format!("empty seed range {s}"));
    }
    Ok(a..=b)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(
    args: impl IntoIterator<Item = impl Into<OsString> + Clone>,
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, stdin, out, err) {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_FAILURE
        }
    }
}

fn execute(
    command: Command,
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, String> {
    let io = |e: std::io::Error| e.to_string();
    match command {
        Command::Ingest {
            corpus_dir,
            chunk_size,
        } => match ingest_report(&corpus_dir, chunk_size) {
            Ok(report) => {
                writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("json")).map_err(io)?;
                Ok(EXIT_OK)
            }
            Err(e @ KbError::EmbedderOversize { .. }) => {
                writeln!(err, "EmbedderOversize at chunk size {chunk_size}: {e}").map_err(io)?;
                Ok(EXIT_FAILURE)
            }
            Err(e) => Err(format!("ingest failed: {e}")),
        },
        Command::Chat {
            k,
            profile,
            chunk_size,
            config,
        } => chat(k, &profile, chunk_size, config, stdin, out),
        Command::Sweep { seed, out: dir } => {
            let table = sweep_to_dir(seed, &dir).map_err(|e| e.to_string())?;
            writeln!(out, "chunk_size  k   outcome            rounds").map_err(io)?;
            for r in &table.rows {
                writeln!(out, "{:>10} {:>2}   {:<18} {:>6}", r.chunk_size, r.k, r.outcome, r.rounds)
                    .map_err(io)?;
            }
            writeln!(out, "wrote {}", dir.join("sweep.json").display()).map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::Compare {
            seeds,
            out: dir,
            corpus_seed,
            iterations,
            batch_episodes,
        } => {
            let req = CompareRequest {
                seeds: Some(seeds.collect()),
                iterations,
                batch_episodes,
                session_id: None,
            };
            req.validate()?;
            let report = compare_to_dir(&req, corpus_seed, None, &dir).map_err(|e| e.to_string())?;
            for a in &report.arms {
                writeln!(out, "{:>6}: median final score {:+.4}", a.arm, a.median_final_score)
                    .map_err(io)?;
            }
            writeln!(out, "ordering holds: {}", report.verdict.holds).map_err(io)?;
            writeln!(out, "wrote {}", dir.join("comparison.json").display()).map_err(io)?;
            Ok(if report.verdict.holds { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(&config).map_err(|e| e.to_string())?;
            let rt = tokio::runtime::Runtime::new().map_err(io)?;
            rt.block_on(async {
                let app = App::open(cfg).map_err(|e| e.to_string())?;
                serve(app).await.map_err(io)
            })?;
            Ok(EXIT_OK)
        }
    }
}

fn print_trace(out: &mut dyn Write, t: &RoundTrace) -> std::io::Result<()> {
    writeln!(out, "--- round {} [{}] prompt {} tokens", t.round, t.stage.label(), t.prompt_tokens)?;
    if let Some(q) = &t.query {
        writeln!(out, "query: {q}")?;
    }
    for h in &t.retrieved {
        writeln!(out, "  {}#{} score {:.4}", h.doc, h.chunk, h.score)?;
    }
    writeln!(out, "{}", t.reply)
}

fn chat(
    k: usize,
    profile: &str,
    chunk_size: usize,
    config: Option<PathBuf>,
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<i32, String> {
    let io = |e: std::io::Error| e.to_string();
    let cfg = match config {
        Some(p) => ServiceConfig::load(&p).map_err(|e| e.to_string())?,
        None => ServiceConfig::default(),
    };
    let profile = ServiceConfig::profile_for(profile);
    if !cfg.serves_profile(&profile) {
        return Err(format!(
            "profile `{}` needs the {} backend; configure it with --config",
            profile.name, profile.backend
        ));
    }
    let world = World::from_config(&cfg).map_err(|e| e.to_string())?;
    let mut state = world
        .new_session("chat".into(), profile, k, chunk_size)
        .map_err(|e| e.to_string())?;
    let built = world.index(chunk_size);
    let index = built.as_ref().as_ref().ok();
    writeln!(out, "corpus {} at chunk size {chunk_size}, k = {k}", world.label).map_err(io)?;
    while !state.stage.is_terminal() {
        write!(out, "[{} r{}] > ", state.stage.label(), state.round).map_err(io)?;
        out.flush().map_err(io)?;
        let mut line = String::new();
        if stdin.read_line(&mut line).map_err(io)? == 0 {
            writeln!(out).map_err(io)?;
            return Ok(EXIT_OK);
        }
        let mut text = line.trim().to_string();
        if text.is_empty() {
            text = scripted_designer(&state);
            writeln!(out, "(designer) {text}").map_err(io)?;
        }
        match advance(&world.gateway, index, &mut state, &text) {
            Ok(t) => print_trace(out, &t).map_err(io)?,
            Err(e @ (AgentError::ContextOversize { .. } | AgentError::Ingest(_))) => {
                writeln!(out, "session failed: {e}").map_err(io)?;
            }
            Err(e) => writeln!(out, "round not completed: {e}").map_err(io)?,
        }
    }
    if state.stage == Stage::Done {
        if let Some(f) = state.formulation_text() {
            writeln!(out, "formulation:\n{f}").map_err(io)?;
        }
        Ok(EXIT_OK)
    } else {
        writeln!(out, "session ended {:?}", state.failure_reason).map_err(io)?;
        Ok(EXIT_FAILURE)
    }
}
