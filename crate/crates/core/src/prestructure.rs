//! Bracket-guided pre-structuring of token sequences.
//!
//! A single stack pass groups each properly matched bracket pair, together
//! with everything between, under a fresh nonterminal node. Bracket nodes
//! get their ids at opener time, so an outer bracket's id precedes its
//! inner brackets'. Any mismatch (wrong closer, unopened closer, unclosed
//! opener) makes the whole program fall back to a flat tree and releases
//! the ids handed out along the way.

use crate::grammar::NonterminalId;
use crate::tokenizer::{TokenKind, TokenSequence};
use crate::tree::{Node, NodeId, ParseTree};

#[derive(Debug, Clone)]
pub struct BracketConfig {
    /// (opener, closer) pairs; matched against punctuation tokens only.
    pub pairs: Vec<(String, String)>,
}

impl Default for BracketConfig {
    fn default() -> Self {
        BracketConfig {
            pairs: vec![
                ("(".to_string(), ")".to_string()),
                ("[".to_string(), "]".to_string()),
                ("{".to_string(), "}".to_string()),
            ],
        }
    }
}

impl BracketConfig {
    pub fn closer_for(&self, opener: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(o, _)| o == opener)
            .map(|(_, c)| c.as_str())
    }

    pub fn is_opener(&self, text: &str) -> bool {
        self.pairs.iter().any(|(o, _)| o == text)
    }

    pub fn is_closer(&self, text: &str) -> bool {
        self.pairs.iter().any(|(_, c)| c == text)
    }

    /// Whether `text` is any bracket token, opener or closer.
    pub fn is_bracket(&self, text: &str) -> bool {
        self.is_opener(text) || self.is_closer(text)
    }
}

/// One in-progress node during the stack pass.
struct Frame {
    label: NonterminalId,
    children: Vec<NodeId>,
    /// Closer that would complete this frame; None for the root.
    expected_closer: Option<String>,
}

/// Build a tree for `tokens` with one node per matched bracket pair.
///
/// `next_id` supplies fresh labels and is advanced for each bracket node
/// kept; on fallback it is restored, so a flat result consumes no ids.
pub fn prestructure(
    tokens: &TokenSequence,
    brackets: &BracketConfig,
    root_label: NonterminalId,
    next_id: &mut NonterminalId,
) -> ParseTree {
    let entry_id = *next_id;
    let mut nodes: Vec<Node> = tokens
        .tokens
        .iter()
        .map(|t| Node::Leaf { token: t.clone() })
        .collect();
    let mut stack = vec![Frame {
        label: root_label,
        children: Vec::new(),
        expected_closer: None,
    }];
    let mut ok = true;
    for (i, tok) in tokens.tokens.iter().enumerate() {
        let is_punct = tok.kind == TokenKind::Punct;
        if is_punct && brackets.is_opener(&tok.text) {
            let label = *next_id;
            *next_id += 1;
            stack.push(Frame {
                label,
                children: vec![i],
                expected_closer: brackets.closer_for(&tok.text).map(str::to_string),
            });
        } else if is_punct && brackets.is_closer(&tok.text) {
            let top = stack.last_mut().unwrap();
            if top.expected_closer.as_deref() == Some(tok.text.as_str()) {
                top.children.push(i);
                let frame = stack.pop().unwrap();
                nodes.push(Node::Internal { label: frame.label, children: frame.children });
                stack.last_mut().unwrap().children.push(nodes.len() - 1);
            } else {
                ok = false;
                break;
            }
        } else {
            stack.last_mut().unwrap().children.push(i);
        }
    }
    if ok && stack.len() == 1 {
        let root_frame = stack.pop().unwrap();
        nodes.push(Node::Internal {
            label: root_frame.label,
            children: root_frame.children,
        });
        let root = nodes.len() - 1;
        return ParseTree::from_parts(nodes, root);
    }
    // Mismatched or unclosed bracket: flat tree, ids released.
    *next_id = entry_id;
    ParseTree::flat(root_label, &tokens.tokens)
}
