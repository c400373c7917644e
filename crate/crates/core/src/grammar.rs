//! Grammar data model and summary statistics.

use std::collections::BTreeSet;
use std::fmt;

pub type NonterminalId = usize;

/// Character classes a terminal position may be generalized to.
///
/// The first three match exactly one character; the run variants match one
/// or more characters of the class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum CharClass {
    Digit,
    Lower,
    Upper,
    Digits,
    Lowers,
    Uppers,
    Alnum,
}

impl CharClass {
    pub fn name(self) -> &'static str {
        match self {
            CharClass::Digit => "digit",
            CharClass::Lower => "lower",
            CharClass::Upper => "upper",
            CharClass::Digits => "digits",
            CharClass::Lowers => "lowers",
            CharClass::Uppers => "uppers",
            CharClass::Alnum => "alnum",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "digit" => CharClass::Digit,
            "lower" => CharClass::Lower,
            "upper" => CharClass::Upper,
            "digits" => CharClass::Digits,
            "lowers" => CharClass::Lowers,
            "uppers" => CharClass::Uppers,
            "alnum" => CharClass::Alnum,
            _ => return None,
        })
    }

    /// Whether `c` belongs to the class's character set.
    pub fn contains(self, c: char) -> bool {
        match self {
            CharClass::Digit | CharClass::Digits => c.is_ascii_digit(),
            CharClass::Lower | CharClass::Lowers => c.is_ascii_lowercase(),
            CharClass::Upper | CharClass::Uppers => c.is_ascii_uppercase(),
            CharClass::Alnum => c.is_ascii_alphanumeric(),
        }
    }

    /// Run variants match maximal nonempty runs; single variants match one char.
    pub fn is_run(self) -> bool {
        matches!(
            self,
            CharClass::Digits | CharClass::Lowers | CharClass::Uppers | CharClass::Alnum
        )
    }
}

/// One position on a rule's right-hand side.
///
/// Variant order matters: the derived `Ord` is the canonical symbol order
/// used when sorting alternatives for output.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Symbol {
    Terminal(String),
    Class(CharClass),
    Nonterminal(NonterminalId),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Terminal(t) => write!(f, "{:?}", t),
            Symbol::Class(c) => f.write_str(c.name()),
            Symbol::Nonterminal(id) => write!(f, "t{}", id),
        }
    }
}

/// A single alternative: `lhs -> rhs`. The rhs is never empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rule {
    pub lhs: NonterminalId,
    pub rhs: Vec<Symbol>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    pub start: NonterminalId,
    pub rules: Vec<Rule>,
}

impl Grammar {
    pub fn rules_for(&self, nt: NonterminalId) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(move |r| r.lhs == nt)
    }

    /// All nonterminals mentioned anywhere, left-hand or right-hand side.
    pub fn nonterminals(&self) -> BTreeSet<NonterminalId> {
        let mut set = BTreeSet::new();
        for rule in &self.rules {
            set.insert(rule.lhs);
            for sym in &rule.rhs {
                if let Symbol::Nonterminal(id) = sym {
                    set.insert(*id);
                }
            }
        }
        set
    }

    /// Distinct terminal symbols (literals and classes) in appearance order.
    pub fn terminals(&self) -> Vec<Symbol> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for rule in &self.rules {
            for sym in &rule.rhs {
                match sym {
                    Symbol::Terminal(_) | Symbol::Class(_) => {
                        if seen.insert(sym.clone()) {
                            out.push(sym.clone());
                        }
                    }
                    Symbol::Nonterminal(_) => {}
                }
            }
        }
        out
    }

    /// Structural checks: at least one rule, no empty rhs, every referenced
    /// nonterminal defined, start defined.
    pub fn validate(&self) -> Result<(), String> {
        if self.rules.is_empty() {
            return Err("grammar has no rules".to_string());
        }
        let lhs: BTreeSet<NonterminalId> = self.rules.iter().map(|r| r.lhs).collect();
        if !lhs.contains(&self.start) {
            return Err(format!("start nonterminal t{} has no rule", self.start));
        }
        for rule in &self.rules {
            if rule.rhs.is_empty() {
                return Err(format!("rule for t{} has an empty right-hand side", rule.lhs));
            }
            for sym in &rule.rhs {
                if let Symbol::Nonterminal(id) = sym {
                    if !lhs.contains(id) {
                        return Err(format!("t{} is used but never defined", id));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Size summary of a grammar.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GrammarStats {
    /// Distinct nonterminals.
    pub nonterminal_count: usize,
    /// Distinct terminal symbols (literals and classes).
    pub terminal_count: usize,
    /// Number of alternatives (rules).
    pub alternative_count: usize,
    /// Total right-hand-side symbol occurrences.
    pub total_symbols: usize,
    /// `total_symbols / alternative_count`.
    pub mean_alternative_len: f64,
}

pub fn grammar_stats(g: &Grammar) -> GrammarStats {
    let alternative_count = g.rules.len();
    let total_symbols: usize = g.rules.iter().map(|r| r.rhs.len()).sum();
    GrammarStats {
        nonterminal_count: g.nonterminals().len(),
        terminal_count: g.terminals().len(),
        alternative_count,
        total_symbols,
        mean_alternative_len: if alternative_count == 0 {
            0.0
        } else {
            total_symbols as f64 / alternative_count as f64
        },
    }
}
