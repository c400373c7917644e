//! Membership oracles.
//!
//! An oracle answers "does the target language accept this program?".
//! Two backends exist: a golden grammar checked with the recognizer, and
//! an external command that receives the program (on stdin or via a temp
//! file) and answers with its exit status: zero accepts, nonzero rejects,
//! and exceeding the time limit rejects and is counted separately.
//! Results are cached by exact program text, so the query counter tracks
//! real backend evaluations only.

use rustc_hash::FxHashMap;
use std::error::Error;
use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::grammar::Grammar;
use crate::parsing::recognize;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(10_000);

/// Environment variable overriding the default command timeout.
pub const TIMEOUT_ENV: &str = "ORACLE_TIMEOUT_MS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Stdin,
    TempFile,
}

#[derive(Debug, Clone)]
pub enum OracleBackend {
    /// Membership in a known grammar, via the recognizer.
    Golden(Grammar),
    /// External command; `{}` arguments become the temp file path in
    /// temp-file mode (appended as a final argument if absent).
    Command { argv: Vec<String>, input: InputMode },
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub backend: OracleBackend,
    pub timeout: Duration,
    pub cache: bool,
}

/// Timeout taken from an `ORACLE_TIMEOUT_MS`-style value, falling back to
/// the default on absence or garbage.
pub fn timeout_from_env_value(value: Option<&str>) -> Duration {
    value
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_millis)
        .unwrap_or(DEFAULT_TIMEOUT)
}

impl OracleConfig {
    /// Config with caching on and the timeout from `ORACLE_TIMEOUT_MS`
    /// (default 10s).
    pub fn new(backend: OracleBackend) -> Self {
        let env = std::env::var(TIMEOUT_ENV).ok();
        OracleConfig {
            backend,
            timeout: timeout_from_env_value(env.as_deref()),
            cache: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct OracleStats {
    /// Backend evaluations (cache misses).
    pub queries: u64,
    pub cache_hits: u64,
    /// Command evaluations that hit the time limit (each also rejects).
    pub timeouts: u64,
    /// Wall time spent inside the backend.
    pub backend_time: Duration,
}

#[derive(Debug)]
pub enum OracleError {
    Spawn { program: String, source: std::io::Error },
    Io { context: &'static str, source: std::io::Error },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::Spawn { program, source } => {
                write!(f, "failed to run oracle command `{}`: {}", program, source)
            }
            OracleError::Io { context, source } => write!(f, "oracle {}: {}", context, source),
        }
    }
}

impl Error for OracleError {}

pub struct Oracle {
    cfg: OracleConfig,
    cache: FxHashMap<String, bool>,
    stats: OracleStats,
}

impl Oracle {
    pub fn new(cfg: OracleConfig) -> Self {
        Oracle { cfg, cache: FxHashMap::default(), stats: OracleStats::default() }
    }

    pub fn stats(&self) -> &OracleStats {
        &self.stats
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    /// Ask the backend about one program, going through the cache.
    pub fn query(&mut self, program: &str) -> Result<bool, OracleError> {
        if self.cfg.cache {
            if let Some(&hit) = self.cache.get(program) {
                self.stats.cache_hits += 1;
                return Ok(hit);
            }
        }
        let started = Instant::now();
        let verdict = match &self.cfg.backend {
            OracleBackend::Golden(g) => recognize(g, program),
            OracleBackend::Command { argv, input } => {
                run_command(argv, *input, program, self.cfg.timeout, &mut self.stats)?
            }
        };
        self.stats.backend_time += started.elapsed();
        self.stats.queries += 1;
        if self.cfg.cache {
            self.cache.insert(program.to_string(), verdict);
        }
        Ok(verdict)
    }
}

fn run_command(
    argv: &[String],
    input: InputMode,
    program: &str,
    timeout: Duration,
    stats: &mut OracleStats,
) -> Result<bool, OracleError> {
    assert!(!argv.is_empty(), "oracle command is never empty");
    // Keep the temp file alive until the child has finished.
    let mut temp: Option<tempfile::NamedTempFile> = None;
    let mut args: Vec<String> = argv[1..].to_vec();
    let mut placeholder_used = false;
    if input == InputMode::TempFile {
        let mut file = tempfile::NamedTempFile::new()
            .map_err(|source| OracleError::Io { context: "temp file creation failed", source })?;
        file.write_all(program.as_bytes())
            .map_err(|source| OracleError::Io { context: "temp file write failed", source })?;
        file.flush()
            .map_err(|source| OracleError::Io { context: "temp file write failed", source })?;
        let path = file.path().to_string_lossy().into_owned();
        for arg in &mut args {
            if arg == "{}" {
                *arg = path.clone();
                placeholder_used = true;
            }
        }
        if !placeholder_used {
            args.push(path);
        }
        temp = Some(file);
    }
    let mut child = Command::new(&argv[0])
        .args(&args)
        .stdin(if input == InputMode::Stdin { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|source| OracleError::Spawn { program: argv[0].clone(), source })?;
    if input == InputMode::Stdin {
        if let Some(mut stdin) = child.stdin.take() {
            // A child that exits without reading produces EPIPE here; the
            // exit status still decides, so the error is irrelevant.
            let _ = stdin.write_all(program.as_bytes());
        }
    }
    let deadline = Instant::now() + timeout;
    let verdict = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status.success(),
            Ok(None) => {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    stats.timeouts += 1;
                    break false;
                }
                std::thread::sleep(Duration::from_millis(1));
            }
            Err(source) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(OracleError::Io { context: "wait failed", source });
            }
        }
    };
    drop(temp);
    Ok(verdict)
}
