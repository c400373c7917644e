//! Black-box context-free grammar inference from example programs.
//!
//! Given a handful of sample programs and a membership oracle for the
//! target language, the engine tokenizes the samples, pre-structures them
//! along matched brackets, and then greedily generalizes: it proposes
//! nonterminal merges and sibling groupings ("bubbles"), keeps exactly
//! those the oracle unanimously confirms, replays confirmed groupings
//! across all trees for free, and finally widens single-character
//! terminals into character classes where the oracle allows. The result
//! is a compact grammar whose language covers the samples and, to the
//! extent the merge checks generalize, the rest of the target language.

pub mod evaluation;
pub mod format;
pub mod grammar;
pub mod inference;
pub mod oracle;
pub mod parsing;
pub mod prestructure;
pub mod tokenizer;
pub mod tree;

pub use evaluation::{evaluate, f1, peak_memory_kb, EvalError, EvalReport};
pub use format::{read_grammar, write_grammar, GrammarParseError};
pub use grammar::{grammar_stats, CharClass, Grammar, GrammarStats, NonterminalId, Rule, Symbol};
pub use inference::{infer, InferenceConfig, InferenceError, InferenceFlags, InferenceStats};
pub use oracle::{InputMode, Oracle, OracleBackend, OracleConfig, OracleError, OracleStats};
pub use parsing::{recognize, sample, SampleError, SamplerConfig};
pub use prestructure::{prestructure, BracketConfig};
pub use tokenizer::{tokenize, Token, TokenKind, TokenSequence, DEFAULT_QUOTES};
pub use tree::{extract_grammar, Node, NodeId, ParseTree};
