//! Command-line driver for the grammar inference engine.
//!
//! Four subcommands: `infer` learns a grammar from a directory of seed
//! programs against a membership oracle, `eval` scores a learned grammar
//! by precision/recall/F1, `sample` prints random programs derived from
//! a grammar, and `parse` tests one program for membership.
//!
//! Exit codes: 0 success, 1 domain failure (rejected seed, rejected
//! program, unsampleable grammar), 2 configuration error (bad flags,
//! missing or malformed files).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use ginfer_core::{
    evaluate, grammar_stats, infer, read_grammar, recognize, sample, write_grammar, EvalError,
    Grammar, InferenceConfig, InferenceError, InputMode, Oracle, OracleBackend, OracleConfig,
    SamplerConfig,
};

#[derive(Parser)]
#[command(name = "ginfer", version, about = "Black-box grammar inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Infer a grammar from a directory of seed programs.
    Infer(InferArgs),
    /// Score a learned grammar against an oracle and a test corpus.
    Eval(EvalArgs),
    /// Print random programs derived from a grammar.
    Sample(SampleArgs),
    /// Check one program for membership in a grammar's language.
    Parse(ParseArgs),
}

#[derive(Args)]
struct OracleArgs {
    /// Golden grammar file acting as the membership oracle.
    #[arg(long, value_name = "FILE")]
    golden: Option<PathBuf>,
    /// External oracle command; exit status 0 accepts. `{}` becomes the
    /// program file path in temp-file mode.
    #[arg(long, value_name = "CMD", num_args = 1.., allow_hyphen_values = true)]
    oracle_cmd: Option<Vec<String>>,
    /// Hand programs to the external command as a temp file argument
    /// instead of on stdin.
    #[arg(long)]
    oracle_tempfile: bool,
    /// Oracle timeout in milliseconds (default 10000, or ORACLE_TIMEOUT_MS).
    #[arg(long, value_name = "MS")]
    timeout_ms: Option<u64>,
    /// Disable the oracle's per-program result cache.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args)]
struct InferArgs {
    /// Directory of seed program files, read in filename order.
    #[arg(long, value_name = "DIR")]
    seeds: PathBuf,
    /// Output grammar file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Output stats JSON file (default: <out>.stats.json).
    #[arg(long, value_name = "FILE")]
    stats: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Sibling context width used for bubble ranking.
    #[arg(long, default_value_t = 2, value_name = "N")]
    k: usize,
    /// Cap on candidate bubble length (default: unbounded).
    #[arg(long, value_name = "N")]
    max_bubble_len: Option<usize>,
    /// Ranked candidates tried per bubbling step, singles and pairs.
    #[arg(long, default_value_t = 100, value_name = "N")]
    top: usize,
    /// Substitution programs queried per merge direction before sampling
    /// caps them.
    #[arg(long, default_value_t = 50, value_name = "N")]
    check_budget: usize,
    /// Seed for every sampling decision.
    #[arg(long, default_value_t = 0, value_name = "N")]
    rng_seed: u64,
    /// Skip bracket pre-structuring (ablation).
    #[arg(long)]
    no_prestructure: bool,
    /// Skip recursive reapplication of learned rules (ablation).
    #[arg(long)]
    no_reapply: bool,
    /// Retry failed bubbles against single-character token labels
    /// instance by instance (ablation).
    #[arg(long)]
    partial_merge: bool,
    /// Keep candidate bubbles containing exactly one bracket token
    /// (ablation).
    #[arg(long)]
    one_bracket_bubbles: bool,
    /// Rank bubbles by similarity and count only, without depth and
    /// brevity tiebreaks (ablation).
    #[arg(long)]
    old_ranking: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Learned grammar file to score.
    #[arg(long, value_name = "FILE")]
    grammar: PathBuf,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Directory of held-out test programs for recall.
    #[arg(long, value_name = "DIR")]
    tests: Option<PathBuf>,
    /// Also draw this many recall tests from the golden grammar.
    #[arg(long, value_name = "N")]
    sample_tests: Option<usize>,
    /// Programs sampled from the learned grammar for precision.
    #[arg(long, default_value_t = 200, value_name = "N")]
    n_precision: usize,
    /// Seed for both samplers.
    #[arg(long, default_value_t = 0, value_name = "N")]
    rng_seed: u64,
    /// Write the report as JSON here in addition to printing it.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Grammar file.
    grammar: PathBuf,
    /// Number of programs to derive.
    count: usize,
    /// PRNG seed.
    seed: u64,
    /// Derivation depth bound.
    #[arg(long, default_value_t = 50, value_name = "N")]
    max_depth: usize,
    /// Write each program to its own file in this directory instead of
    /// printing.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    /// Grammar file.
    grammar: PathBuf,
    /// Program text to test.
    program: String,
}

enum CliError {
    /// Bad flags or unusable input files; exit 2.
    Config(String),
    /// The domain said no: rejected seed, unsampleable grammar; exit 1.
    Domain(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) | CliError::Domain(msg) => write!(f, "{}", msg),
        }
    }
}

impl CliError {
    fn code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Domain(_) => ExitCode::from(1),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Parse(args) => cmd_parse(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            e.code()
        }
    }
}

fn read_grammar_file(path: &Path) -> Result<Grammar, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {}", path.display(), e)))?;
    read_grammar(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))
}

/// One program per file, files taken in filename order. A single
/// trailing newline is stripped from each file so ordinary text files
/// hold exactly one program.
fn read_programs_dir(dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("cannot read directory {}: {}", dir.display(), e)))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry
            .map_err(|e| CliError::Config(format!("cannot read directory {}: {}", dir.display(), e)))?;
        if entry.path().is_file() {
            paths.push(entry.path());
        }
    }
    if paths.is_empty() {
        return Err(CliError::Config(format!("{} contains no program files", dir.display())));
    }
    paths.sort();
    let mut programs = Vec::with_capacity(paths.len());
    for path in &paths {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {}", path.display(), e)))?;
        programs.push(strip_one_newline(text));
    }
    Ok(programs)
}

fn strip_one_newline(mut s: String) -> String {
    if s.ends_with('\n') {
        s.pop();
        if s.ends_with('\r') {
            s.pop();
        }
    }
    s
}

fn build_oracle(args: &OracleArgs) -> Result<Oracle, CliError> {
    let backend = match (&args.golden, &args.oracle_cmd) {
        (Some(path), None) => OracleBackend::Golden(read_grammar_file(path)?),
        (None, Some(argv)) if !argv.is_empty() => OracleBackend::Command {
            argv: argv.clone(),
            input: if args.oracle_tempfile { InputMode::TempFile } else { InputMode::Stdin },
        },
        _ => {
            return Err(CliError::Config(
                "exactly one of --golden or --oracle-cmd is required".to_string(),
            ))
        }
    };
    let mut cfg = OracleConfig::new(backend);
    if let Some(ms) = args.timeout_ms {
        cfg.timeout = Duration::from_millis(ms);
    }
    if args.no_cache {
        cfg.cache = false;
    }
    Ok(Oracle::new(cfg))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {}", path.display(), e)))
}

fn stats_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".stats.json");
    out.with_file_name(name)
}

fn cmd_infer(args: InferArgs) -> Result<ExitCode, CliError> {
    let seeds = read_programs_dir(&args.seeds)?;
    let mut oracle = build_oracle(&args.oracle)?;
    let mut cfg = InferenceConfig::default();
    cfg.context_width = args.k;
    cfg.max_bubble_len = args.max_bubble_len;
    cfg.top_candidates = args.top;
    cfg.check_budget = args.check_budget;
    cfg.rng_seed = args.rng_seed;
    cfg.flags.prestructure = !args.no_prestructure;
    cfg.flags.reapply = !args.no_reapply;
    cfg.flags.partial_merge = args.partial_merge;
    cfg.flags.one_bracket_bubbles = args.one_bracket_bubbles;
    cfg.flags.improved_ranking = !args.old_ranking;
    let (grammar, stats) = infer(&seeds, &mut oracle, &cfg).map_err(|e| match e {
        InferenceError::SeedRejected { .. } => CliError::Domain(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    write_file(&args.out, &write_grammar(&grammar))?;
    let stats_path = args.stats.clone().unwrap_or_else(|| stats_path_for(&args.out));
    let json = serde_json::to_string_pretty(&stats).expect("stats are plain data");
    write_file(&stats_path, &json)?;
    let gs = grammar_stats(&grammar);
    println!(
        "wrote {} ({} nonterminals, {} alternatives); {} oracle queries; stats in {}",
        args.out.display(),
        gs.nonterminal_count,
        gs.alternative_count,
        stats.queries,
        stats_path.display(),
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, CliError> {
    let learned = read_grammar_file(&args.grammar)?;
    let mut oracle = build_oracle(&args.oracle)?;
    let mut tests = match &args.tests {
        Some(dir) => read_programs_dir(dir)?,
        None => Vec::new(),
    };
    if let Some(n) = args.sample_tests {
        let golden_path = args.oracle.golden.as_ref().ok_or_else(|| {
            CliError::Config(
                "--sample-tests draws tests from the golden grammar and needs --golden".to_string(),
            )
        })?;
        let golden = read_grammar_file(golden_path)?;
        let sampler = SamplerConfig { seed: args.rng_seed, ..SamplerConfig::default() };
        let extra =
            sample(&golden, n, &sampler).map_err(|e| CliError::Domain(e.to_string()))?;
        tests.extend(extra);
    }
    let sampler = SamplerConfig { seed: args.rng_seed, ..SamplerConfig::default() };
    let report =
        evaluate(&learned, &mut oracle, &tests, args.n_precision, &sampler).map_err(|e| match e {
            EvalError::Sample(_) => CliError::Domain(e.to_string()),
            other => CliError::Config(other.to_string()),
        })?;
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&report).expect("report is plain data");
        write_file(path, &json)?;
    }
    print!("{}", report.to_text());
    Ok(ExitCode::SUCCESS)
}

/// One program per line: backslash, newline, and carriage return are
/// escaped so embedded line breaks cannot split a program across lines.
fn escape_line(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

fn cmd_sample(args: SampleArgs) -> Result<ExitCode, CliError> {
    let grammar = read_grammar_file(&args.grammar)?;
    let cfg = SamplerConfig {
        seed: args.seed,
        max_depth: args.max_depth,
        ..SamplerConfig::default()
    };
    let programs =
        sample(&grammar, args.count, &cfg).map_err(|e| CliError::Domain(e.to_string()))?;
    match &args.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::Config(format!("cannot create {}: {}", dir.display(), e)))?;
            for (i, program) in programs.iter().enumerate() {
                let path = dir.join(format!("t{:04}.txt", i));
                write_file(&path, &format!("{}\n", program))?;
            }
            println!("wrote {} programs to {}", programs.len(), dir.display());
        }
        None => {
            for program in &programs {
                println!("{}", escape_line(program));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_parse(args: ParseArgs) -> Result<ExitCode, CliError> {
    let grammar = read_grammar_file(&args.grammar)?;
    if recognize(&grammar, &args.program) {
        println!("accepted");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("rejected");
        Ok(ExitCode::from(1))
    }
}
