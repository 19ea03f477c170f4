//! The `col` command line.
//!
//! Exit codes: 0 on success, 1 on a domain error (bad script line, unknown
//! feature, invalid document), 2 on a usage error.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use col_core::engine::{query_with, FactSet, QueryOptions};
use col_core::fixtures;
use col_core::graph::export_dot;
use col_core::model::Value;
use col_core::teach::{replay_script, Session, Speaker};
use col_core::{load_kb, new_kb, save_kb, to_document_string, DocError, KnowledgeBase};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "col", version, about = "Teach and query a concept-oriented knowledge base")]
pub struct Cli {
    /// Knowledge-base document.
    #[arg(long, global = true, default_value = "kb.json")]
    pub kb: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Example {
    /// Humans and Breakable, before any teaching.
    GlassesSeed,
    /// The glasses dialogue fully taught.
    Glasses,
    /// The evaporation frame.
    GasLaw,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a new knowledge-base document.
    Init {
        /// Seed document to start from.
        #[arg(long, conflicts_with = "example")]
        seed: Option<PathBuf>,
        /// Start from bundled example knowledge.
        #[arg(long, value_enum)]
        example: Option<Example>,
        /// Overwrite an existing document.
        #[arg(long)]
        force: bool,
    },
    /// Apply a teaching script, or read statements from stdin.
    Teach {
        #[arg(required_unless_present = "interactive", conflicts_with = "interactive")]
        script: Option<PathBuf>,
        #[arg(long)]
        interactive: bool,
    },
    /// Answer a goal from the given facts.
    Query {
        /// `feature=value`, repeatable.
        #[arg(long = "fact", value_name = "FEATURE=VALUE", value_parser = parse_fact)]
        facts: Vec<(String, String)>,
        #[arg(long)]
        goal: String,
        /// Plain deduction, without advice for control features.
        #[arg(long)]
        deduce: bool,
        /// Print the answer as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print the concept graph in DOT format.
    ExportDot,
    /// Check the document and report invariant violations.
    Validate,
    /// Run the HTTP teaching service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

fn parse_fact(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected FEATURE=VALUE, got {s:?}"))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || v.is_empty() {
        return Err(format!("expected FEATURE=VALUE, got {s:?}"));
    }
    Ok((k.to_string(), v.to_string()))
}

/// A domain failure; reported with exit code 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Document(#[from] DocError),
    #[error(transparent)]
    Kb(#[from] col_core::KbError),
    #[error(transparent)]
    Script(#[from] col_core::teach::ScriptError),
    #[error("{0}")]
    Other(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match execute(cli, input, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<i32, CliError> {
    let path = cli.kb.as_path();
    match cli.command {
        Command::Init { seed, example, force } => {
            if path.exists() && !force {
                return Err(CliError::Other(format!("{} exists; use --force to overwrite", path.display())));
            }
            let kb = match (seed, example) {
                (Some(seed), _) => new_kb(Some(&std::fs::read_to_string(&seed)?))?,
                (None, Some(Example::GlassesSeed)) => fixtures::case_study_seed(),
                (None, Some(Example::Glasses)) => fixtures::case_study().kb,
                (None, Some(Example::GasLaw)) => fixtures::gas_law(),
                (None, None) => KnowledgeBase::new(),
            };
            save_kb(&kb, path)?;
            writeln!(out, "wrote {} (revision {})", path.display(), kb.revision())?;
        }
        Command::Teach { script: Some(script), .. } => {
            let kb = load_or_empty(path)?;
            let text = std::fs::read_to_string(&script)?;
            let replay = replay_script(kb, &text)?;
            for entry in replay.session.transcript.iter().filter(|e| e.speaker == Speaker::Machine) {
                writeln!(out, "{}", entry.utterance)?;
            }
            save_kb(&replay.kb, path)?;
            writeln!(out, "saved {} (revision {})", path.display(), replay.kb.revision())?;
        }
        Command::Teach { script: None, .. } => {
            let mut kb = load_or_empty(path)?;
            let mut session = Session::new("cli");
            let mut failures = 0usize;
            for line in input.lines() {
                let line = line?;
                if line.trim_start().starts_with('#') {
                    continue;
                }
                let step = session.step(&mut kb, &line);
                writeln!(out, "{}", step.reply.text)?;
                failures += usize::from(step.error.is_some());
            }
            save_kb(&kb, path)?;
            writeln!(out, "saved {} (revision {})", path.display(), kb.revision())?;
            if failures > 0 {
                writeln!(out, "{failures} statement(s) were not applied")?;
            }
        }
        Command::Query { facts, goal, deduce, json } => {
            let kb = load_kb(path)?;
            if kb.feature(&goal).is_none() {
                return Err(col_core::KbError::UnknownFeature(goal).into());
            }
            let mut given = FactSet::new();
            for (k, v) in facts {
                let def = kb.feature(&k).ok_or_else(|| col_core::KbError::UnknownFeature(k.clone()))?;
                let value = match v.parse::<f64>() {
                    Ok(x) if def.is_numeric() => Value::Number(x),
                    _ => Value::Label(v),
                };
                given.bind(k, value);
            }
            given.canonicalize(&kb).map_err(|e| CliError::Other(e.to_string()))?;
            let options = if deduce { QueryOptions::deduce() } else { QueryOptions::default() };
            let answer = query_with(&kb, &given, &goal, options);
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&answer).expect("answers serialize"))?;
            } else {
                write_answer(out, &answer)?;
            }
        }
        Command::ExportDot => {
            let kb = load_kb(path)?;
            write!(out, "{}", export_dot(&kb))?;
        }
        Command::Validate => {
            let kb = load_kb(path)?;
            // Loading already validates; re-render to confirm the document is canonical.
            let canonical = to_document_string(&kb)?;
            let on_disk = std::fs::read_to_string(path)?;
            writeln!(
                out,
                "ok: {} concepts, {} features, {} frames, revision {}",
                kb.concept_count(),
                kb.feature_count(),
                kb.frames().count(),
                kb.revision()
            )?;
            if canonical != on_disk {
                writeln!(out, "note: document is valid but not in canonical form")?;
            }
        }
        Command::Serve { bind } => {
            let kb = load_kb(path)?;
            let state = crate::api::AppState::new(kb, Some(path.to_path_buf()));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::api::serve(state, bind))?;
        }
    }
    Ok(0)
}

fn load_or_empty(path: &Path) -> Result<KnowledgeBase, CliError> {
    if path.exists() {
        Ok(load_kb(path)?)
    } else {
        Ok(KnowledgeBase::new())
    }
}

fn write_answer(out: &mut dyn Write, answer: &col_core::engine::Answer) -> std::io::Result<()> {
    use col_core::engine::AnswerStatus;
    match answer.status {
        AnswerStatus::Exact => {
            let value = answer.value.as_ref().expect("exact answers carry a value");
            writeln!(out, "{} = {value} (exact)", answer.goal)?;
            if !answer.premise.is_empty() {
                let wanted: Vec<String> = answer.premise.iter().map(ToString::to_string).collect();
                writeln!(out, "  to get {}", wanted.join(", "))?;
            }
            for step in &answer.derivation {
                writeln!(out, "  {step}")?;
            }
        }
        AnswerStatus::Approximate => {
            let candidates: Vec<String> = answer.candidates.iter().map(ToString::to_string).collect();
            writeln!(out, "{} could be {} (approximate)", answer.goal, candidates.join(" or "))?;
            writeln!(out, "  missing: {}", answer.missing.join(", "))?;
        }
        AnswerStatus::Unknown => writeln!(out, "{}: no deduction (unknown)", answer.goal)?,
    }
    Ok(())
}
