//! Character-class tokenizer.
//!
//! Input text is split into maximal runs of lowercase letters, uppercase
//! letters, digits, or whitespace; every other character becomes a
//! one-character punctuation token. A quote character opens a string
//! group: the quote, the raw content up to the next identical quote, and
//! the closing quote come out as three opaque tokens. An unterminated
//! quote is demoted to ordinary punctuation.

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenKind {
    Lower,
    Upper,
    Digit,
    Whitespace,
    Punct,
    Quote,
    StringContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
}

impl Token {
    pub fn new(text: impl Into<String>, kind: TokenKind) -> Self {
        let text = text.into();
        debug_assert!(!text.is_empty(), "token text is never empty");
        Token { text, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Concatenation of all token texts; equals the tokenized input.
    pub fn reconstruct(&self) -> String {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

pub const DEFAULT_QUOTES: [char; 2] = ['"', '\''];

fn class_of(c: char) -> TokenKind {
    if c.is_ascii_lowercase() {
        TokenKind::Lower
    } else if c.is_ascii_uppercase() {
        TokenKind::Upper
    } else if c.is_ascii_digit() {
        TokenKind::Digit
    } else if c.is_ascii_whitespace() {
        TokenKind::Whitespace
    } else {
        // Includes all non-ASCII characters: one token per char.
        TokenKind::Punct
    }
}

pub fn tokenize(text: &str, quote_chars: &[char]) -> TokenSequence {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if quote_chars.contains(&c) {
            // Find the matching close quote; content in between is opaque.
            if let Some(off) = chars[i + 1..].iter().position(|&d| d == c) {
                let close = i + 1 + off;
                tokens.push(Token::new(c.to_string(), TokenKind::Quote));
                if close > i + 1 {
                    let content: String = chars[i + 1..close].iter().collect();
                    tokens.push(Token::new(content, TokenKind::StringContent));
                }
                tokens.push(Token::new(c.to_string(), TokenKind::Quote));
                i = close + 1;
                continue;
            }
            // Unterminated quote: plain punctuation.
            tokens.push(Token::new(c.to_string(), TokenKind::Punct));
            i += 1;
            continue;
        }
        let kind = class_of(c);
        if kind == TokenKind::Punct {
            tokens.push(Token::new(c.to_string(), TokenKind::Punct));
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && !quote_chars.contains(&chars[j]) && class_of(chars[j]) == kind {
            j += 1;
        }
        let run: String = chars[i..j].iter().collect();
        tokens.push(Token::new(run, kind));
        i = j;
    }
    TokenSequence { tokens }
}
