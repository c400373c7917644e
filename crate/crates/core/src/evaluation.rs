//! Quality measurement for learned grammars.
//!
//! Precision: sample programs from the learned grammar and ask the
//! oracle; the accepted fraction. A query that times out counts as a
//! rejection. Recall: the fraction of an independent test set the
//! learned grammar recognizes. F1 combines the two harmonically.

use std::error::Error;
use std::fmt;
use std::fs;
use std::time::{Duration, Instant};

use crate::grammar::{grammar_stats, Grammar, GrammarStats};
use crate::oracle::{Oracle, OracleError};
use crate::parsing::{recognize, sample, SampleError, SamplerConfig};

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug)]
pub enum EvalError {
    Sample(SampleError),
    Oracle(OracleError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Sample(e) => write!(f, "sampling the learned grammar failed: {}", e),
            EvalError::Oracle(e) => write!(f, "{}", e),
        }
    }
}

impl Error for EvalError {}

impl From<SampleError> for EvalError {
    fn from(e: SampleError) -> Self {
        EvalError::Sample(e)
    }
}

impl From<OracleError> for EvalError {
    fn from(e: OracleError) -> Self {
        EvalError::Oracle(e)
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub samples_total: usize,
    pub samples_accepted: usize,
    pub tests_total: usize,
    pub tests_recognized: usize,
    /// Oracle timeouts observed while judging the samples.
    pub timeouts: u64,
    pub grammar: GrammarStats,
    pub sample_time: Duration,
    pub judge_time: Duration,
    pub recall_time: Duration,
    /// Peak resident set so far, if the platform exposes it.
    pub peak_memory_kb: Option<u64>,
}

impl EvalReport {
    /// Flat `key = value` lines, one metric per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("precision", format!("{:.4}", self.precision));
        line("recall", format!("{:.4}", self.recall));
        line("f1", format!("{:.4}", self.f1));
        line("samples_total", self.samples_total.to_string());
        line("samples_accepted", self.samples_accepted.to_string());
        line("tests_total", self.tests_total.to_string());
        line("tests_recognized", self.tests_recognized.to_string());
        line("timeouts", self.timeouts.to_string());
        line("nonterminals", self.grammar.nonterminal_count.to_string());
        line("alternatives", self.grammar.alternative_count.to_string());
        line("total_symbols", self.grammar.total_symbols.to_string());
        line("terminals", self.grammar.terminal_count.to_string());
        line("sample_time_ms", self.sample_time.as_millis().to_string());
        line("judge_time_ms", self.judge_time.as_millis().to_string());
        line("recall_time_ms", self.recall_time.as_millis().to_string());
        line(
            "peak_memory_kb",
            self.peak_memory_kb.map_or_else(|| "unknown".to_string(), |v| v.to_string()),
        );
        out
    }
}

/// Sample `n_samples` programs from `learned` and judge them with the
/// oracle; check every test string against `learned`. Sampling is
/// all-or-nothing: a grammar the sampler cannot draw from yields an
/// error rather than a partial report.
pub fn evaluate(
    learned: &Grammar,
    oracle: &mut Oracle,
    tests: &[String],
    n_samples: usize,
    sampler: &SamplerConfig,
) -> Result<EvalReport, EvalError> {
    let sample_started = Instant::now();
    let samples = sample(learned, n_samples, sampler)?;
    let sample_time = sample_started.elapsed();

    let timeouts_before = oracle.stats().timeouts;
    let judge_started = Instant::now();
    let mut samples_accepted = 0;
    for program in &samples {
        if oracle.query(program)? {
            samples_accepted += 1;
        }
    }
    let judge_time = judge_started.elapsed();
    let timeouts = oracle.stats().timeouts - timeouts_before;

    let recall_started = Instant::now();
    let tests_recognized = tests.iter().filter(|t| recognize(learned, t)).count();
    let recall_time = recall_started.elapsed();

    let precision =
        if samples.is_empty() { 0.0 } else { samples_accepted as f64 / samples.len() as f64 };
    let recall =
        if tests.is_empty() { 0.0 } else { tests_recognized as f64 / tests.len() as f64 };
    Ok(EvalReport {
        precision,
        recall,
        f1: f1(precision, recall),
        samples_total: samples.len(),
        samples_accepted,
        tests_total: tests.len(),
        tests_recognized,
        timeouts,
        grammar: grammar_stats(learned),
        sample_time,
        judge_time,
        recall_time,
        peak_memory_kb: peak_memory_kb(),
    })
}

/// Peak resident set size in kilobytes, read from the process status
/// file where available (Linux); None elsewhere.
pub fn peak_memory_kb() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            let digits: String = rest.chars().filter(|c| c.is_ascii_digit()).collect();
            return digits.parse().ok();
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::read_grammar;
    use crate::oracle::{OracleBackend, OracleConfig};

    fn tiny() -> Grammar {
        read_grammar("t0 : \"a\" t1 ;\nt1 : \"b\" ;\nt1 : \"c\" t1 ;\n").unwrap()
    }

    #[test]
    fn f1_is_the_harmonic_mean() {
        assert_eq!(format!("{:.2}", f1(0.90, 0.96)), "0.93");
        assert_eq!(f1(1.0, 1.0), 1.0);
        assert_eq!(f1(0.0, 0.7), 0.0);
        assert_eq!(f1(0.7, 0.0), 0.0);
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert!((f1(0.5, 0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_grammar_scores_one_on_both_axes() {
        let g = tiny();
        let mut oracle = Oracle::new(OracleConfig::new(OracleBackend::Golden(g.clone())));
        let tests = vec!["ab".to_string(), "acb".to_string(), "accb".to_string()];
        let report =
            evaluate(&g, &mut oracle, &tests, 50, &SamplerConfig::default()).unwrap();
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.samples_total, 50);
        assert_eq!(report.samples_accepted, 50);
        assert_eq!(report.timeouts, 0);
    }

    #[test]
    fn disjoint_oracle_scores_zero_precision() {
        let g = tiny();
        let other = read_grammar("t0 : \"zzz\" ;\n").unwrap();
        let mut oracle = Oracle::new(OracleConfig::new(OracleBackend::Golden(other)));
        let tests = vec!["ab".to_string(), "zzz".to_string()];
        let report =
            evaluate(&g, &mut oracle, &tests, 20, &SamplerConfig::default()).unwrap();
        assert_eq!(report.precision, 0.0);
        assert_eq!(report.f1, 0.0);
        assert_eq!(report.recall, 0.5);
    }

    #[test]
    fn timeouts_count_as_rejections_and_are_reported() {
        let g = read_grammar("t0 : \"a\" ;\n").unwrap();
        let mut cfg = OracleConfig::new(OracleBackend::Command {
            argv: vec!["sleep".to_string(), "5".to_string()],
            input: crate::oracle::InputMode::Stdin,
        });
        cfg.timeout = Duration::from_millis(40);
        let mut oracle = Oracle::new(cfg);
        let report =
            evaluate(&g, &mut oracle, &[], 3, &SamplerConfig::default()).unwrap();
        // The grammar has one string, so one backend call times out and
        // the rest are cache hits; every sample counts as rejected.
        assert_eq!(report.precision, 0.0);
        assert!(report.timeouts >= 1);
        assert_eq!(report.samples_accepted, 0);
    }

    #[test]
    fn report_text_lists_every_metric() {
        let g = tiny();
        let mut oracle = Oracle::new(OracleConfig::new(OracleBackend::Golden(g.clone())));
        let report =
            evaluate(&g, &mut oracle, &["ab".to_string()], 5, &SamplerConfig::default())
                .unwrap();
        let text = report.to_text();
        for key in [
            "precision",
            "recall",
            "f1",
            "samples_total",
            "tests_total",
            "timeouts",
            "nonterminals",
            "peak_memory_kb",
        ] {
            assert!(text.contains(key), "missing {} in {}", key, text);
        }
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"precision\""));
    }

    #[test]
    fn peak_memory_reads_the_linux_counter() {
        if std::path::Path::new("/proc/self/status").exists() {
            let kb = peak_memory_kb().expect("VmHWM present on Linux");
            assert!(kb > 0);
        }
    }

    #[test]
    fn unsampleable_grammar_reports_an_error() {
        // Only rule is infinitely recursive: t0 -> t0. Sampling fails.
        let g = Grammar {
            start: 0,
            rules: vec![crate::grammar::Rule {
                lhs: 0,
                rhs: vec![crate::grammar::Symbol::Nonterminal(0)],
            }],
        };
        let mut oracle = Oracle::new(OracleConfig::new(OracleBackend::Golden(tiny())));
        let err = evaluate(&g, &mut oracle, &[], 5, &SamplerConfig::default());
        assert!(matches!(err, Err(EvalError::Sample(_))));
    }
}
