//! `cdm` command-line front end: `stats`, `run` and `align`.
//!
//! [`run`] parses arguments and executes one command without touching the
//! process streams, so tests can drive it in-process. JSON goes to
//! [`Outcome::stdout`] only on success.

use std::fs;
use std::path::{Path, PathBuf};

use cdm_core::pipeline::{align_pair, run_corpus, CdmConfig, WeightMode};
use cdm_core::stats::{sentence_stats_csv, sequence_matching_rate, vocabulary_matching_rate};
use cdm_core::tensorio::{read_dump, LogitsMatrix};
use cdm_core::vocab::normalize_token;
use cdm_core::{CanonicalToken, CompatReport, Error, LossReport, Vocabulary};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { code: EXIT_OK, stdout, stderr: String::new() }
    }

    fn fail(code: i32, message: impl std::fmt::Display) -> Self {
        Self { code, stdout: String::new(), stderr: format!("error: {message}\n") }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cdm", version, about = "Cross-tokenizer alignment and distillation loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Vocabulary and sequence matching rates of two tokenizers.
    Stats(StatsArgs),
    /// Align, map and score a paired corpus of logit dumps.
    Run(RunArgs),
    /// Sequence alignment only, one span list per record.
    Align(AlignArgs),
}

#[derive(Debug, clap::Args)]
struct StatsArgs {
    /// first vocabulary JSON (token -> id)
    #[arg(long)]
    vocab_a: PathBuf,
    /// second vocabulary JSON (token -> id)
    #[arg(long)]
    vocab_b: PathBuf,
    /// JSONL of {"tokens": [...]} per sentence, tokenized by the first tokenizer
    #[arg(long, requires = "tokenized_b")]
    tokenized_a: Option<PathBuf>,
    /// JSONL of {"tokens": [...]} per sentence, tokenized by the second tokenizer
    #[arg(long, requires = "tokenized_a")]
    tokenized_b: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct CorpusArgs {
    /// student logit dump
    #[arg(long)]
    student: PathBuf,
    /// teacher logit dump
    #[arg(long)]
    teacher: PathBuf,
    /// student vocabulary JSON
    #[arg(long)]
    vocab_student: PathBuf,
    /// teacher vocabulary JSON
    #[arg(long)]
    vocab_teacher: PathBuf,
    /// configuration JSON; missing fields take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// write both mapping tables as JSON
    #[arg(long)]
    out_tables: Option<PathBuf>,
    /// write the aggregate loss report as JSON
    #[arg(long)]
    out_report: Option<PathBuf>,
    /// write the per-record span alignments as JSON
    #[arg(long)]
    out_alignments: Option<PathBuf>,
    /// write per-sentence statistics as CSV
    #[arg(long)]
    out_sentences: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Weights {
    Entropy,
    Uniform,
}

#[derive(Debug, clap::Args)]
struct AlignArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// DTW weighting: entropy-derived or all ones
    #[arg(long, value_enum, default_value = "entropy")]
    weights: Weights,
    /// also write the alignments to this path
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_invariant_violation() {
            Failure::Internal(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type CmdResult = std::result::Result<String, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                Outcome { code: EXIT_INPUT, stdout: String::new(), stderr: text }
            } else {
                Outcome { code: EXIT_OK, stdout: text, stderr: String::new() }
            };
        }
    };
    let result = match cli.command {
        Command::Stats(a) => cmd_stats(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Align(a) => cmd_align(&a),
    };
    match result {
        Ok(stdout) => Outcome::ok(stdout),
        Err(Failure::Input(m)) => Outcome::fail(EXIT_INPUT, m),
        Err(Failure::Internal(m)) => Outcome::fail(EXIT_INTERNAL, m),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> std::result::Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

#[derive(Deserialize)]
struct TokenizedLine {
    tokens: Vec<String>,
}

fn read_tokenized(path: &Path) -> std::result::Result<Vec<Vec<CanonicalToken>>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let line: TokenizedLine = serde_json::from_str(l)
                .map_err(|e| Failure::Input(format!("{} line {}: {e}", path.display(), n + 1)))?;
            Ok(line.tokens.iter().map(|t| normalize_token(t)).collect())
        })
        .collect()
}

fn cmd_stats(a: &StatsArgs) -> CmdResult {
    let v_a = Vocabulary::load(&a.vocab_a)?;
    let v_b = Vocabulary::load(&a.vocab_b)?;
    let (smr, n_sentences) = match (&a.tokenized_a, &a.tokenized_b) {
        (Some(pa), Some(pb)) => {
            let ta = read_tokenized(pa)?;
            let tb = read_tokenized(pb)?;
            (Some(sequence_matching_rate(&ta, &tb)?), ta.len())
        }
        _ => (None, 0),
    };
    let report = CompatReport {
        smr,
        vmr: vocabulary_matching_rate(&v_a, &v_b),
        n_sentences,
        span_accuracy: None,
        mapping_coverage: None,
    };
    Ok(to_json(&report))
}

struct Loaded {
    student: Vec<LogitsMatrix>,
    teacher: Vec<LogitsMatrix>,
    v_stu: Vocabulary,
    v_tea: Vocabulary,
    cfg: CdmConfig,
}

fn load_corpus(a: &CorpusArgs) -> std::result::Result<Loaded, Failure> {
    let cfg = match &a.config {
        Some(p) => CdmConfig::load(p)?,
        None => CdmConfig::default(),
    };
    cfg.validate()?;
    let v_stu = Vocabulary::load(&a.vocab_student)?;
    let v_tea = Vocabulary::load(&a.vocab_teacher)?;
    let student = read_dump(&a.student)?;
    let teacher = read_dump(&a.teacher)?;
    if student.len() != teacher.len() {
        return Err(Error::RecordCountMismatch { student: student.len(), teacher: teacher.len() }.into());
    }
    Ok(Loaded { student, teacher, v_stu, v_tea, cfg })
}

#[derive(Serialize)]
struct RunSummary<'a> {
    report: &'a LossReport,
    compat: &'a CompatReport,
}

fn cmd_run(a: &RunArgs) -> CmdResult {
    let l = load_corpus(&a.corpus)?;
    let out = run_corpus(&l.student, &l.teacher, &l.v_stu, &l.v_tea, &l.cfg)?;
    if let Some(p) = &a.out_tables {
        write_file(p, &out.state.export_json())?;
    }
    if let Some(p) = &a.out_report {
        write_file(p, &to_json(&out.report))?;
    }
    if let Some(p) = &a.out_alignments {
        write_file(p, &to_json(&out.alignments))?;
    }
    if let Some(p) = &a.out_sentences {
        write_file(p, &sentence_stats_csv(&out.sentence_stats))?;
    }
    Ok(to_json(&RunSummary { report: &out.report, compat: &out.compat }))
}

fn cmd_align(a: &AlignArgs) -> CmdResult {
    let l = load_corpus(&a.corpus)?;
    let mode = match a.weights {
        Weights::Entropy => WeightMode::Entropy,
        Weights::Uniform => WeightMode::Uniform,
    };
    let alignments = l
        .student
        .iter()
        .zip(&l.teacher)
        .enumerate()
        .map(|(i, (s, t))| {
            align_pair(s, t, &l.v_stu, &l.v_tea, l.cfg.c, mode)
                .map_err(|e| Error::Sentence { index: i, source: Box::new(e) })
        })
        .collect::<cdm_core::Result<Vec<_>>>()?;
    let json = to_json(&alignments);
    if let Some(p) = &a.out {
        write_file(p, &json)?;
    }
    Ok(json)
}
