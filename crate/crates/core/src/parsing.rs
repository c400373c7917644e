//! Recognition and sampling for grammars.
//!
//! Recognition runs in two stages. A greedy lexer first maps the input
//! string to a sequence of the grammar's own terminal symbols, always
//! taking the longest match (ties go to the terminal that appears first
//! in rule order). An Earley recognizer then decides whether the start
//! symbol derives that sequence; left recursion, ambiguity, and unit
//! cycles are all fine. Grammars here are epsilon-free by construction
//! (no empty right-hand sides, no empty terminals), which the recognizer
//! relies on.
//!
//! Sampling expands leftmost nonterminals with uniformly chosen
//! alternatives from a fixed-seed ChaCha8 stream, abandoning derivations
//! that exceed the depth bound and retrying up to an attempt budget.

use std::error::Error;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::grammar::{CharClass, Grammar, NonterminalId, Symbol};

/// Greedy longest-match lexing of `text` into indices over `terminals`
/// (the grammar's terminal list in appearance order). Returns None when
/// some position matches no terminal.
fn lex(terminals: &[Symbol], text: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        let mut best: Option<(usize, usize)> = None; // (byte len, terminal index)
        for (idx, term) in terminals.iter().enumerate() {
            let len = match term {
                Symbol::Terminal(lit) => {
                    if !lit.is_empty() && rest.starts_with(lit.as_str()) {
                        lit.len()
                    } else {
                        0
                    }
                }
                Symbol::Class(c) => {
                    if c.is_run() {
                        rest.chars()
                            .take_while(|&ch| c.contains(ch))
                            .map(char::len_utf8)
                            .sum()
                    } else {
                        match rest.chars().next() {
                            Some(ch) if c.contains(ch) => ch.len_utf8(),
                            _ => 0,
                        }
                    }
                }
                Symbol::Nonterminal(_) => 0,
            };
            if len > 0 && best.map_or(true, |(blen, _)| len > blen) {
                best = Some((len, idx));
            }
        }
        let (len, idx) = best?;
        out.push(idx);
        pos += len;
    }
    Some(out)
}

/// Earley recognition of a lexed terminal sequence.
///
/// Items are deduplicated by how they can arrive, which keeps every
/// structure reusable across positions instead of allocating one set per
/// position. Predictions all have dot 0 and are keyed by nonterminal;
/// scanned items advance over a terminal and completed items over a
/// nonterminal, so the two classes cannot collide, and distinct sources
/// scan to distinct items. Only completion results need a real seen-set.
fn derives(g: &Grammar, terminals: &[Symbol], input: &[usize]) -> bool {
    let mut by_lhs: FxHashMap<NonterminalId, Vec<usize>> = FxHashMap::default();
    let mut max_nt = g.start;
    for (ri, rule) in g.rules.iter().enumerate() {
        by_lhs.entry(rule.lhs).or_default().push(ri);
        max_nt = max_nt.max(rule.lhs);
        for sym in &rule.rhs {
            if let Symbol::Nonterminal(nt) = sym {
                max_nt = max_nt.max(*nt);
            }
        }
    }
    let n = input.len();
    // Item: (rule index, dot, origin set).
    type Item = (usize, usize, usize);
    let mut sets: Vec<Vec<Item>> = vec![Vec::new(); n + 1];
    // Last position each nonterminal was predicted at.
    let mut predicted: Vec<usize> = vec![usize::MAX; max_nt + 1];
    // Completion results already added at the current position.
    let mut comp_seen: FxHashSet<Item> = FxHashSet::default();
    // (lhs, origin) pairs already completed at the current position: a
    // repeat completion would rescan the same origin set for the same
    // additions.
    let mut fin: FxHashSet<(NonterminalId, usize)> = FxHashSet::default();
    for &ri in by_lhs.get(&g.start).map(Vec::as_slice).unwrap_or(&[]) {
        sets[0].push((ri, 0, 0));
    }
    predicted[g.start] = 0;
    for i in 0..=n {
        // An empty position can never feed a later one: every addition
        // starts from a live item, so reject as soon as one goes dark.
        if sets[i].is_empty() {
            return false;
        }
        comp_seen.clear();
        fin.clear();
        let mut j = 0;
        while j < sets[i].len() {
            let (ri, dot, origin) = sets[i][j];
            j += 1;
            let rule = &g.rules[ri];
            if dot < rule.rhs.len() {
                match &rule.rhs[dot] {
                    Symbol::Nonterminal(nt) => {
                        if predicted[*nt] != i {
                            predicted[*nt] = i;
                            if let Some(rules) = by_lhs.get(nt) {
                                for &ri2 in rules {
                                    sets[i].push((ri2, 0, i));
                                }
                            }
                        }
                    }
                    term => {
                        if i < n && &terminals[input[i]] == term {
                            sets[i + 1].push((ri, dot + 1, origin));
                        }
                    }
                }
            } else {
                // Epsilon-freeness guarantees origin < i here, so the
                // origin set is fully built and one scan of it covers
                // everything this completion can ever add.
                if origin == i || !fin.insert((rule.lhs, origin)) {
                    continue;
                }
                let completed = rule.lhs;
                let (done, rest) = sets.split_at_mut(i);
                let source = &done[origin];
                let target = &mut rest[0];
                for k in 0..source.len() {
                    let (ri2, dot2, origin2) = source[k];
                    if let Some(Symbol::Nonterminal(nt)) = g.rules[ri2].rhs.get(dot2) {
                        if *nt == completed && comp_seen.insert((ri2, dot2 + 1, origin2)) {
                            target.push((ri2, dot2 + 1, origin2));
                        }
                    }
                }
            }
        }
    }
    sets[n]
        .iter()
        .any(|&(ri, dot, origin)| origin == 0 && dot == g.rules[ri].rhs.len() && g.rules[ri].lhs == g.start)
}

/// Whether the grammar accepts `text` (lexing with the grammar's own
/// terminals, then checking derivability). The empty string is never
/// accepted: grammars here cannot derive it.
pub fn recognize(g: &Grammar, text: &str) -> bool {
    if text.is_empty() {
        return false;
    }
    let terminals = g.terminals();
    match lex(&terminals, text) {
        Some(input) => derives(g, &terminals, &input),
        None => false,
    }
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub seed: u64,
    pub max_depth: usize,
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { seed: 0, max_depth: 50, max_attempts: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SampleError {
    /// No derivation stayed within the depth bound after the full attempt
    /// budget; reported for the first string that failed.
    AttemptsExhausted { index: usize, max_attempts: usize },
}

impl fmt::Display for SampleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleError::AttemptsExhausted { index, max_attempts } => write!(
                f,
                "sample {} still exceeded the depth bound after {} attempts",
                index, max_attempts
            ),
        }
    }
}

impl Error for SampleError {}

pub(crate) fn sample_class(rng: &mut ChaCha8Rng, class: CharClass) -> String {
    let len = if class.is_run() { rng.gen_range(1..=4) } else { 1 };
    let mut out = String::with_capacity(len);
    for _ in 0..len {
        let c = match class {
            CharClass::Digit | CharClass::Digits => (b'0' + rng.gen_range(0..10u8)) as char,
            CharClass::Lower | CharClass::Lowers => (b'a' + rng.gen_range(0..26u8)) as char,
            CharClass::Upper | CharClass::Uppers => (b'A' + rng.gen_range(0..26u8)) as char,
            CharClass::Alnum => {
                let i = rng.gen_range(0..62u8);
                match i {
                    0..=9 => (b'0' + i) as char,
                    10..=35 => (b'a' + i - 10) as char,
                    _ => (b'A' + i - 36) as char,
                }
            }
        };
        out.push(c);
    }
    out
}

fn try_derive(
    g: &Grammar,
    by_lhs: &FxHashMap<NonterminalId, Vec<usize>>,
    rng: &mut ChaCha8Rng,
    max_depth: usize,
) -> Option<String> {
    let mut out = String::new();
    let mut stack: Vec<(Symbol, usize)> = vec![(Symbol::Nonterminal(g.start), 0)];
    while let Some((sym, depth)) = stack.pop() {
        match sym {
            Symbol::Terminal(t) => out.push_str(&t),
            Symbol::Class(c) => out.push_str(&sample_class(rng, c)),
            Symbol::Nonterminal(nt) => {
                if depth >= max_depth {
                    return None;
                }
                let rules = by_lhs.get(&nt)?;
                let ri = rules[rng.gen_range(0..rules.len())];
                for sym in g.rules[ri].rhs.iter().rev() {
                    stack.push((sym.clone(), depth + 1));
                }
            }
        }
    }
    Some(out)
}

/// Draw `count` strings from the grammar. One ChaCha8 stream seeded with
/// `cfg.seed` drives the whole batch, so equal inputs give byte-equal
/// output. Abandoned attempts consume randomness deterministically too.
pub fn sample(g: &Grammar, count: usize, cfg: &SamplerConfig) -> Result<Vec<String>, SampleError> {
    let mut by_lhs: FxHashMap<NonterminalId, Vec<usize>> = FxHashMap::default();
    for (ri, rule) in g.rules.iter().enumerate() {
        by_lhs.entry(rule.lhs).or_default().push(ri);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        let mut done = false;
        for _ in 0..cfg.max_attempts {
            if let Some(s) = try_derive(g, &by_lhs, &mut rng, cfg.max_depth) {
                out.push(s);
                done = true;
                break;
            }
        }
        if !done {
            return Err(SampleError::AttemptsExhausted { index, max_attempts: cfg.max_attempts });
        }
    }
    Ok(out)
}
