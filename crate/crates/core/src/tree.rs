//! Arena-backed parse trees over token leaves.
//!
//! Internal nodes carry a nonterminal label and an ordered child list;
//! leaves carry tokens. Every structural edit the inference engine makes
//! (wrapping a child range, relabeling) preserves the leaf sequence, so
//! the concatenated leaf text of a tree never changes after construction.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::grammar::{Grammar, NonterminalId, Rule, Symbol};
use crate::tokenizer::Token;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Internal { label: NonterminalId, children: Vec<NodeId> },
    Leaf { token: Token },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    nodes: Vec<Node>,
    pub root: NodeId,
}

impl ParseTree {
    /// Flat tree: a single root whose children are the tokens in order.
    pub fn flat(root_label: NonterminalId, tokens: &[Token]) -> Self {
        let mut nodes: Vec<Node> =
            tokens.iter().map(|t| Node::Leaf { token: t.clone() }).collect();
        let children: Vec<NodeId> = (0..tokens.len()).collect();
        nodes.push(Node::Internal { label: root_label, children });
        ParseTree { root: tokens.len(), nodes }
    }

    pub fn from_parts(nodes: Vec<Node>, root: NodeId) -> Self {
        ParseTree { nodes, root }
    }

    pub fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn label(&self, id: NodeId) -> Option<NonterminalId> {
        match &self.nodes[id] {
            Node::Internal { label, .. } => Some(*label),
            Node::Leaf { .. } => None,
        }
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        match &self.nodes[id] {
            Node::Internal { children, .. } => children,
            Node::Leaf { .. } => &[],
        }
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id], Node::Leaf { .. })
    }

    /// Ids of live nodes, root first, children left to right. Nodes detached
    /// by edits are not visited.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            for &c in self.children(id).iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Leaf tokens in order.
    pub fn leaf_tokens(&self) -> Vec<&Token> {
        self.preorder()
            .into_iter()
            .filter_map(|id| match &self.nodes[id] {
                Node::Leaf { token } => Some(token),
                _ => None,
            })
            .collect()
    }

    /// Concatenated text of all leaves.
    pub fn leaf_string(&self) -> String {
        self.leaf_tokens().iter().map(|t| t.text.as_str()).collect()
    }

    /// Concatenated text of the leaves under one node.
    pub fn leaf_string_of(&self, id: NodeId) -> String {
        let mut out = String::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                Node::Leaf { token } => out.push_str(&token.text),
                Node::Internal { children, .. } => {
                    for &c in children.iter().rev() {
                        stack.push(c);
                    }
                }
            }
        }
        out
    }

    /// Byte span of each live node within `leaf_string()`, indexed by
    /// NodeId. Detached nodes get (0, 0). Spans always fall on character
    /// boundaries because leaves hold whole tokens.
    pub fn byte_spans(&self) -> Vec<(usize, usize)> {
        let mut spans = vec![(0usize, 0usize); self.nodes.len()];
        // Post-order accumulation via an explicit stack: (node, visited).
        let mut pos = 0usize;
        let mut stack: Vec<(NodeId, bool)> = vec![(self.root, false)];
        while let Some((id, visited)) = stack.pop() {
            match &self.nodes[id] {
                Node::Leaf { token } => {
                    spans[id] = (pos, pos + token.text.len());
                    pos += token.text.len();
                }
                Node::Internal { children, .. } => {
                    if visited {
                        let start = children.first().map(|&c| spans[c].0).unwrap_or(pos);
                        let end = children.last().map(|&c| spans[c].1).unwrap_or(pos);
                        spans[id] = (start, end);
                    } else {
                        stack.push((id, true));
                        for &c in children.iter().rev() {
                            stack.push((c, false));
                        }
                    }
                }
            }
        }
        spans
    }

    /// Root distance of each live node, indexed by NodeId (root = 0).
    pub fn depths(&self) -> Vec<usize> {
        let mut depths = vec![0usize; self.nodes.len()];
        let mut stack = vec![(self.root, 0usize)];
        while let Some((id, d)) = stack.pop() {
            depths[id] = d;
            for &c in self.children(id) {
                stack.push((c, d + 1));
            }
        }
        depths
    }

    /// Parent of each live node, indexed by NodeId; root and detached
    /// nodes map to None.
    pub fn parents(&self) -> Vec<Option<NodeId>> {
        let mut parents = vec![None; self.nodes.len()];
        for id in self.preorder() {
            for &c in self.children(id) {
                parents[c] = Some(id);
            }
        }
        parents
    }

    /// Preorder position of each live node (usize::MAX for detached ones).
    pub fn preorder_positions(&self) -> Vec<usize> {
        let mut pos = vec![usize::MAX; self.nodes.len()];
        for (i, id) in self.preorder().into_iter().enumerate() {
            pos[id] = i;
        }
        pos
    }

    /// Replace `children[start .. start+len]` of `parent` with a fresh
    /// internal node labeled `label` holding exactly those children.
    /// Returns the new node's id.
    pub fn wrap(
        &mut self,
        parent: NodeId,
        start: usize,
        len: usize,
        label: NonterminalId,
    ) -> NodeId {
        let taken: Vec<NodeId> = self.children(parent)[start..start + len].to_vec();
        let new_id = self.push(Node::Internal { label, children: taken });
        match &mut self.nodes[parent] {
            Node::Internal { children, .. } => {
                children.splice(start..start + len, [new_id]);
            }
            Node::Leaf { .. } => unreachable!("wrap target must be internal"),
        }
        new_id
    }

    /// Set one internal node's label.
    pub fn set_label(&mut self, id: NodeId, label: NonterminalId) {
        match &mut self.nodes[id] {
            Node::Internal { label: l, .. } => *l = label,
            Node::Leaf { .. } => unreachable!("leaves carry no label"),
        }
    }

    /// Relabel every internal node labeled `from` to `to`.
    pub fn relabel(&mut self, from: NonterminalId, to: NonterminalId) {
        for node in &mut self.nodes {
            if let Node::Internal { label, .. } = node {
                if *label == from {
                    *label = to;
                }
            }
        }
    }

    /// Wrap every leaf that is a child of an internal node in a fresh
    /// single-child internal node; `label_for` picks the label per token.
    pub fn wrap_each_leaf(&mut self, mut label_for: impl FnMut(&Token) -> NonterminalId) {
        for id in self.preorder() {
            let child_ids: Vec<NodeId> = self.children(id).to_vec();
            for (idx, c) in child_ids.into_iter().enumerate() {
                let token = match &self.nodes[c] {
                    Node::Leaf { token } => token.clone(),
                    Node::Internal { .. } => continue,
                };
                let label = label_for(&token);
                let wrapper = self.push(Node::Internal { label, children: vec![c] });
                match &mut self.nodes[id] {
                    Node::Internal { children, .. } => children[idx] = wrapper,
                    Node::Leaf { .. } => unreachable!(),
                }
            }
        }
    }

    /// Order-sensitive structural hash of the live tree (labels, tokens,
    /// shape). Stable within a process; used to verify that rejected edits
    /// leave no trace.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            match &self.nodes[id] {
                Node::Leaf { token } => {
                    1u8.hash(&mut h);
                    token.text.hash(&mut h);
                }
                Node::Internal { label, children } => {
                    2u8.hash(&mut h);
                    label.hash(&mut h);
                    children.len().hash(&mut h);
                    for &c in children.iter().rev() {
                        stack.push(c);
                    }
                }
            }
        }
        h.finish()
    }
}

/// Read the grammar the trees currently encode: one rule per distinct
/// (label, child symbol sequence) pair, leaf children as terminals. Rules
/// are ordered by (lhs, rhs); the start symbol is the first tree's root
/// label. Labels are kept as-is, not renumbered.
pub fn extract_grammar(trees: &[ParseTree]) -> Grammar {
    let mut set: std::collections::BTreeSet<Rule> = std::collections::BTreeSet::new();
    for tree in trees {
        for id in tree.preorder() {
            if let Node::Internal { label, children } = tree.node(id) {
                debug_assert!(!children.is_empty(), "internal nodes always have children");
                if children.is_empty() {
                    continue;
                }
                let rhs: Vec<Symbol> = children
                    .iter()
                    .map(|&c| match tree.node(c) {
                        Node::Leaf { token } => Symbol::Terminal(token.text.clone()),
                        Node::Internal { label, .. } => Symbol::Nonterminal(*label),
                    })
                    .collect();
                set.insert(Rule { lhs: *label, rhs });
            }
        }
    }
    let start = trees
        .first()
        .and_then(|t| t.label(t.root))
        .unwrap_or(0);
    let mut rules: Vec<Rule> = set.into_iter().collect();
    rules.sort();
    Grammar { start, rules }
}
