//! Plain-text grammar serialization.
//!
//! One alternative per line:
//!
//! ```text
//! t0 : "while" " " t1 " " "do" " " t0 ;
//! t1 : digits ;
//! ```
//!
//! Terminals are double-quoted with exactly two escapes, `\"` and `\\`;
//! every other character, newlines included, is literal. Character classes
//! appear as bare names (`digit`, `lower`, `upper`, `digits`, `lowers`,
//! `uppers`, `alnum`), nonterminals as `t<k>`. The start symbol is the
//! left-hand side of the first rule. Reading and writing preserve rule
//! order exactly, so write-then-read is the identity.

use std::error::Error;
use std::fmt;

use crate::grammar::{CharClass, Grammar, NonterminalId, Rule, Symbol};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarParseError {
    /// 1-based line where the problem was detected.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for GrammarParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl Error for GrammarParseError {}

pub fn write_grammar(g: &Grammar) -> String {
    let mut out = String::new();
    for rule in &g.rules {
        out.push_str(&format!("t{} :", rule.lhs));
        for sym in &rule.rhs {
            out.push(' ');
            match sym {
                Symbol::Terminal(t) => {
                    out.push('"');
                    for c in t.chars() {
                        match c {
                            '"' => out.push_str("\\\""),
                            '\\' => out.push_str("\\\\"),
                            other => out.push(other),
                        }
                    }
                    out.push('"');
                }
                Symbol::Class(c) => out.push_str(c.name()),
                Symbol::Nonterminal(id) => out.push_str(&format!("t{}", id)),
            }
        }
        out.push_str(" ;\n");
    }
    out
}

struct Scanner {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Scanner {
    fn new(text: &str) -> Self {
        Scanner { chars: text.chars().collect(), pos: 0, line: 1 }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.next();
        }
    }

    fn err(&self, message: impl Into<String>) -> GrammarParseError {
        GrammarParseError { line: self.line, message: message.into() }
    }

    fn ident(&mut self) -> String {
        let mut name = String::new();
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric()) {
            name.push(self.next().unwrap());
        }
        name
    }

    fn quoted(&mut self) -> Result<String, GrammarParseError> {
        let open_line = self.line;
        self.next(); // consume the opening quote
        let mut text = String::new();
        loop {
            match self.next() {
                None => {
                    return Err(GrammarParseError {
                        line: open_line,
                        message: "unterminated string literal".to_string(),
                    })
                }
                Some('"') => return Ok(text),
                Some('\\') => match self.next() {
                    Some('"') => text.push('"'),
                    Some('\\') => text.push('\\'),
                    Some(c) => {
                        return Err(self.err(format!(
                            "invalid escape `\\{}` (only \\\" and \\\\ are recognized)",
                            c
                        )))
                    }
                    None => {
                        return Err(GrammarParseError {
                            line: open_line,
                            message: "unterminated string literal".to_string(),
                        })
                    }
                },
                Some(c) => text.push(c),
            }
        }
    }
}

fn parse_name(name: &str) -> Option<Symbol> {
    if let Some(rest) = name.strip_prefix('t') {
        if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
            // Reject ids that overflow rather than silently wrapping.
            return rest.parse::<NonterminalId>().ok().map(Symbol::Nonterminal);
        }
    }
    CharClass::from_name(name).map(Symbol::Class)
}

pub fn read_grammar(text: &str) -> Result<Grammar, GrammarParseError> {
    let mut sc = Scanner::new(text);
    let mut rules: Vec<Rule> = Vec::new();
    // First-use line per nonterminal, for definedness diagnostics.
    let mut use_lines: Vec<(NonterminalId, usize)> = Vec::new();
    loop {
        sc.skip_ws();
        if sc.peek().is_none() {
            break;
        }
        let head_line = sc.line;
        let head = sc.ident();
        let lhs = match parse_name(&head) {
            Some(Symbol::Nonterminal(id)) => id,
            _ => {
                return Err(GrammarParseError {
                    line: head_line,
                    message: format!("expected a rule head like `t0`, found `{}`", head),
                })
            }
        };
        sc.skip_ws();
        if sc.peek() != Some(':') {
            return Err(sc.err("expected `:` after rule head"));
        }
        sc.next();
        let mut rhs = Vec::new();
        loop {
            sc.skip_ws();
            match sc.peek() {
                None => return Err(sc.err("unexpected end of input inside a rule (missing `;`)")),
                Some(';') => {
                    sc.next();
                    break;
                }
                Some('"') => rhs.push(Symbol::Terminal(sc.quoted()?)),
                Some(c) if c.is_ascii_alphanumeric() => {
                    let sym_line = sc.line;
                    let name = sc.ident();
                    match parse_name(&name) {
                        Some(sym) => {
                            if let Symbol::Nonterminal(id) = sym {
                                use_lines.push((id, sym_line));
                            }
                            rhs.push(sym);
                        }
                        None => {
                            return Err(GrammarParseError {
                                line: sym_line,
                                message: format!("unknown symbol name `{}`", name),
                            })
                        }
                    }
                }
                Some(c) => return Err(sc.err(format!("unexpected character `{}`", c))),
            }
        }
        if rhs.is_empty() {
            return Err(GrammarParseError {
                line: head_line,
                message: format!("rule for t{} has an empty right-hand side", lhs),
            });
        }
        rules.push(Rule { lhs, rhs });
    }
    if rules.is_empty() {
        return Err(GrammarParseError { line: 1, message: "no rules found".to_string() });
    }
    let defined: std::collections::BTreeSet<NonterminalId> = rules.iter().map(|r| r.lhs).collect();
    for (id, line) in use_lines {
        if !defined.contains(&id) {
            return Err(GrammarParseError {
                line,
                message: format!("t{} is used but never defined", id),
            });
        }
    }
    Ok(Grammar { start: rules[0].lhs, rules })
}
