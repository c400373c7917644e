//! The grammar inference engine.
//!
//! Pipeline: tokenize the seeds, pre-structure each along matched
//! brackets, wrap every leaf in a per-token-text label, and then
//! generalize greedily under oracle control:
//!
//! 1. merge every pair of labels the oracle confirms interchangeable
//!    ("merge all valid");
//! 2. repeatedly propose sibling groupings ("bubbles"), ranked by context
//!    similarity, and merge the first one the oracle confirms against
//!    some existing label, replaying the confirmed grouping across all
//!    trees without further queries;
//! 3. alternate 1 and 2 until a whole round accepts nothing;
//! 4. widen single-token labels to character classes where the oracle
//!    accepts randomized replacements.
//!
//! A merge check never mutates the trees: candidate programs are built by
//! splicing substrings over the current leaf text, so a rejected
//! candidate leaves no trace by construction. Every choice point
//! (iteration order, tie-breaking, sampling) is pinned to fixed orders or
//! a fixed-seed ChaCha8 stream, which makes whole runs reproducible
//! query-for-query.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::error::Error;
use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::grammar::{CharClass, Grammar, NonterminalId, Rule, Symbol};
use crate::oracle::{Oracle, OracleError};
use crate::parsing::sample_class;
use crate::prestructure::{prestructure, BracketConfig};
use crate::tokenizer::{tokenize, Token, TokenKind};
use crate::tree::{Node, NodeId, ParseTree};

#[derive(Debug, Clone)]
pub struct InferenceFlags {
    /// Group matched brackets into nodes before inference.
    pub prestructure: bool,
    /// Replay accepted groupings across all trees without queries.
    pub reapply: bool,
    /// After a bubble fails every whole-label merge, try merging it into
    /// single-character token labels instance by instance.
    pub partial_merge: bool,
    /// Keep candidate bubbles containing exactly one bracket token
    /// (normally those are skipped: they can never respect bracket
    /// matching on their own).
    pub one_bracket_bubbles: bool,
    /// Rank bubbles by (similarity, depth, count, brevity); the old
    /// ranking uses (similarity, count) only.
    pub improved_ranking: bool,
}

impl Default for InferenceFlags {
    fn default() -> Self {
        InferenceFlags {
            prestructure: true,
            reapply: true,
            partial_merge: false,
            one_bracket_bubbles: false,
            improved_ranking: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceConfig {
    /// Sibling context width used for bubble/label similarity.
    pub context_width: usize,
    /// Longest sibling run considered as a bubble; None = unbounded.
    pub max_bubble_len: Option<usize>,
    /// How many ranked bubbles are tried per round, alone and in pairs.
    pub top_candidates: usize,
    /// Check programs queried per merge direction before sampling kicks in.
    pub check_budget: usize,
    /// Seed for every sampling decision (check sampling, expansion
    /// replacements).
    pub rng_seed: u64,
    pub flags: InferenceFlags,
    pub brackets: BracketConfig,
    /// Characters that open and close opaque string groups while
    /// tokenizing.
    pub quotes: Vec<char>,
    /// Verify leaf preservation after every accepted merge (slow; meant
    /// for tests).
    pub self_check: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            context_width: 2,
            max_bubble_len: None,
            top_candidates: 100,
            check_budget: 50,
            rng_seed: 0,
            flags: InferenceFlags::default(),
            brackets: BracketConfig::default(),
            quotes: crate::tokenizer::DEFAULT_QUOTES.to_vec(),
            self_check: false,
        }
    }
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct InferenceStats {
    pub seed_count: usize,
    pub token_count: usize,
    /// Full merge-then-bubble rounds until quiescence.
    pub epochs: usize,
    pub epoch_times: Vec<Duration>,
    pub merges_accepted: usize,
    pub merges_rejected: usize,
    /// Nodes created by replaying accepted groupings (no queries).
    pub reapplied_wraps: usize,
    pub queries_during_reapply: u64,
    /// Oracle counters, net of anything the caller did with the same
    /// oracle beforehand.
    pub queries: u64,
    pub cache_hits: u64,
    pub timeouts: u64,
    pub oracle_time: Duration,
    /// Time generating and ranking bubbles.
    pub bubble_time: Duration,
    /// Time constructing check and expansion programs.
    pub build_time: Duration,
    pub total_time: Duration,
    /// Candidate positions enumerated by the first bubble-generation pass.
    pub first_pass_bubble_positions: Option<usize>,
    pub first_epoch_time: Duration,
    pub expansions_adopted: usize,
}

#[derive(Debug)]
pub enum InferenceError {
    NoSeeds,
    EmptySeed { index: usize },
    SeedRejected { index: usize, program: String },
    Oracle(OracleError),
}

impl fmt::Display for InferenceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InferenceError::NoSeeds => write!(f, "no seed programs given"),
            InferenceError::EmptySeed { index } => {
                write!(f, "seed {} is empty; every seed must contain at least one token", index)
            }
            InferenceError::SeedRejected { index, program } => {
                write!(f, "the oracle rejects seed {} ({:?}); seeds must be valid programs", index, program)
            }
            InferenceError::Oracle(e) => write!(f, "{}", e),
        }
    }
}

impl Error for InferenceError {}

impl From<OracleError> for InferenceError {
    fn from(e: OracleError) -> Self {
        InferenceError::Oracle(e)
    }
}

/// Working state: one tree per seed plus label bookkeeping.
pub struct InferenceState {
    pub trees: Vec<ParseTree>,
    /// Labels born as per-token wrappers, with their token.
    dummy_token: BTreeMap<NonterminalId, Token>,
    /// Completed merges: absorbed label -> survivor (possibly chained).
    redirects: HashMap<NonterminalId, NonterminalId>,
    /// Adopted character-class generalizations.
    expansions: BTreeMap<NonterminalId, CharClass>,
    next_id: NonterminalId,
    root_label: NonterminalId,
}

impl InferenceState {
    /// Tokenize, pre-structure (per config), and dummy-wrap the seeds.
    /// Bracket nodes take ids first (seed order, outer before inner),
    /// then token labels by first occurrence.
    pub fn from_seeds(seeds: &[String], cfg: &InferenceConfig) -> Result<Self, InferenceError> {
        if seeds.is_empty() {
            return Err(InferenceError::NoSeeds);
        }
        let root_label = 0;
        let mut next_id = 1;
        let mut trees = Vec::with_capacity(seeds.len());
        for (index, seed) in seeds.iter().enumerate() {
            let tokens = tokenize(seed, &cfg.quotes);
            if tokens.is_empty() {
                return Err(InferenceError::EmptySeed { index });
            }
            let tree = if cfg.flags.prestructure {
                prestructure(&tokens, &cfg.brackets, root_label, &mut next_id)
            } else {
                ParseTree::flat(root_label, &tokens.tokens)
            };
            trees.push(tree);
        }
        let mut by_text: HashMap<String, NonterminalId> = HashMap::new();
        let mut dummy_token = BTreeMap::new();
        for tree in &mut trees {
            tree.wrap_each_leaf(|token| {
                *by_text.entry(token.text.clone()).or_insert_with(|| {
                    let id = next_id;
                    next_id += 1;
                    dummy_token.insert(id, token.clone());
                    id
                })
            });
        }
        Ok(InferenceState {
            trees,
            dummy_token,
            redirects: HashMap::new(),
            expansions: BTreeMap::new(),
            next_id,
            root_label,
        })
    }

    pub fn fresh_label(&mut self) -> NonterminalId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Follow completed merges to the surviving label.
    pub fn resolve(&self, mut label: NonterminalId) -> NonterminalId {
        while let Some(&next) = self.redirects.get(&label) {
            label = next;
        }
        label
    }

    fn record_merge(&mut self, absorbed: NonterminalId, survivor: NonterminalId) {
        for tree in &mut self.trees {
            tree.relabel(absorbed, survivor);
        }
        self.redirects.insert(absorbed, survivor);
    }

    /// Distinct labels in the trees, ordered by (closest distance to any
    /// root, id). This is both the merge snapshot order and the target
    /// order for bubble merges.
    pub fn labels_by_distance(&self) -> Vec<NonterminalId> {
        let mut min_depth: BTreeMap<NonterminalId, usize> = BTreeMap::new();
        for tree in &self.trees {
            let depths = tree.depths();
            for id in tree.preorder() {
                if let Some(label) = tree.label(id) {
                    let d = min_depth.entry(label).or_insert(usize::MAX);
                    *d = (*d).min(depths[id]);
                }
            }
        }
        let mut labels: Vec<(usize, NonterminalId)> =
            min_depth.into_iter().map(|(l, d)| (d, l)).collect();
        labels.sort();
        labels.into_iter().map(|(_, l)| l).collect()
    }

    /// Whether `label` currently stands for exactly one token text: born
    /// as a token wrapper and never given any other expansion.
    pub fn is_token_label(&self, label: NonterminalId) -> bool {
        let Some(expected) = self.dummy_token.get(&label) else { return false };
        let mut saw = false;
        for tree in &self.trees {
            for id in tree.preorder() {
                if tree.label(id) != Some(label) {
                    continue;
                }
                saw = true;
                let ch = tree.children(id);
                if ch.len() != 1 {
                    return false;
                }
                match tree.node(ch[0]) {
                    Node::Leaf { token } => {
                        if token.text != expected.text {
                            return false;
                        }
                    }
                    Node::Internal { .. } => return false,
                }
            }
        }
        saw
    }

    /// Token labels born from a one-character bracket token.
    fn is_bracket_label(&self, label: NonterminalId, brackets: &BracketConfig) -> bool {
        match self.dummy_token.get(&label) {
            Some(token) => {
                token.text.chars().count() == 1 && brackets.is_bracket(&token.text)
            }
            None => false,
        }
    }

    /// All (tree, node) occurrences of a label, trees in order, nodes in
    /// preorder position.
    fn label_occurrences(&self, label: NonterminalId) -> Vec<(usize, NodeId)> {
        let mut out = Vec::new();
        for (ti, tree) in self.trees.iter().enumerate() {
            for id in tree.preorder() {
                if tree.label(id) == Some(label) {
                    out.push((ti, id));
                }
            }
        }
        out
    }
}

/// A contiguous run of siblings appearing somewhere in the trees.
#[derive(Debug, Clone)]
pub struct Bubble {
    pub symbols: Vec<NonterminalId>,
    pub occurrences: Vec<Occurrence>,
    /// Shallowest parent depth over all occurrences.
    pub depth: usize,
    /// Filled in by ranking: best context similarity to any label.
    pub similarity: f64,
    /// Earliest occurrence key (tree, parent preorder position, start).
    min_pos: (usize, usize, usize),
}

impl Bubble {
    pub fn count(&self) -> usize {
        self.occurrences.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occurrence {
    pub tree: usize,
    pub parent: NodeId,
    pub start: usize,
}

/// Enumerate every candidate bubble: contiguous sibling runs of length
/// at least 2 (at most `max_bubble_len`), excluding full child lists, and
/// excluding runs containing exactly one bracket token unless configured
/// otherwise. Returns the bubbles (grouped by symbol sequence) and the
/// raw number of positions enumerated, before grouping.
pub fn generate_bubbles(state: &InferenceState, cfg: &InferenceConfig) -> (Vec<Bubble>, usize) {
    struct Builder {
        occurrences: Vec<Occurrence>,
        depth: usize,
        min_pos: (usize, usize, usize),
    }
    let mut map: HashMap<Vec<NonterminalId>, Builder> = HashMap::new();
    let mut order: Vec<Vec<NonterminalId>> = Vec::new();
    let mut positions = 0usize;
    for (ti, tree) in state.trees.iter().enumerate() {
        let depths = tree.depths();
        let prepos = tree.preorder_positions();
        for node in tree.preorder() {
            let children = tree.children(node);
            let m = children.len();
            if m < 2 {
                continue;
            }
            // Token-wrapped trees have no leaf children here; if a caller
            // hands us raw trees, windows touching leaves are skipped.
            let labels: Vec<Option<NonterminalId>> =
                children.iter().map(|&c| tree.label(c)).collect();
            let max_len = cfg.max_bubble_len.unwrap_or(m).min(m);
            for start in 0..m {
                let longest = max_len.min(m - start);
                for len in 2..=longest.max(1) {
                    if len < 2 {
                        continue;
                    }
                    if start == 0 && len == m {
                        continue; // the full list is already a node
                    }
                    let window = &labels[start..start + len];
                    if window.iter().any(|l| l.is_none()) {
                        continue;
                    }
                    let window: Vec<NonterminalId> =
                        window.iter().map(|l| l.unwrap()).collect();
                    if !cfg.flags.one_bracket_bubbles {
                        let brackets = window
                            .iter()
                            .filter(|&&l| state.is_bracket_label(l, &cfg.brackets))
                            .count();
                        if brackets == 1 {
                            continue;
                        }
                    }
                    positions += 1;
                    let occ = Occurrence { tree: ti, parent: node, start };
                    let pos_key = (ti, prepos[node], start);
                    match map.get_mut(window.as_slice()) {
                        Some(b) => {
                            b.occurrences.push(occ);
                            b.depth = b.depth.min(depths[node]);
                            b.min_pos = b.min_pos.min(pos_key);
                        }
                        None => {
                            order.push(window.clone());
                            map.insert(
                                window,
                                Builder {
                                    occurrences: vec![occ],
                                    depth: depths[node],
                                    min_pos: pos_key,
                                },
                            );
                        }
                    }
                }
            }
        }
    }
    let bubbles = order
        .into_iter()
        .map(|symbols| {
            let b = map.remove(symbols.as_slice()).unwrap();
            Bubble {
                symbols,
                occurrences: b.occurrences,
                depth: b.depth,
                similarity: 0.0,
                min_pos: b.min_pos,
            }
        })
        .collect();
    (bubbles, positions)
}

/// Sibling context of width k: labels of the k siblings on each side.
/// Defined only where a full k siblings exist on both sides; occurrences
/// that touch a sibling-list edge contribute no context. (Edge positions
/// would otherwise make unrelated sequences in different trees look
/// alike purely for both starting or ending a list.)
type Context = (Vec<NonterminalId>, Vec<NonterminalId>);

fn window_context(
    siblings: &[Option<NonterminalId>],
    start: usize,
    len: usize,
    k: usize,
) -> Option<Context> {
    if start < k || start + len + k > siblings.len() {
        return None;
    }
    let side = |range: std::ops::Range<usize>| {
        range.map(|i| siblings[i]).collect::<Option<Vec<_>>>()
    };
    let left = side(start - k..start)?;
    let right = side(start + len..start + len + k)?;
    Some((left, right))
}

/// Context sets of every label over all its node occurrences. Root
/// nodes have no siblings and contribute nothing.
fn label_contexts(
    state: &InferenceState,
    k: usize,
) -> BTreeMap<NonterminalId, BTreeSet<Context>> {
    let mut out: BTreeMap<NonterminalId, BTreeSet<Context>> = BTreeMap::new();
    for tree in &state.trees {
        let parents = tree.parents();
        for id in tree.preorder() {
            let Some(label) = tree.label(id) else { continue };
            let entry = out.entry(label).or_default();
            let Some(p) = parents[id] else { continue };
            let sibs: Vec<Option<NonterminalId>> =
                tree.children(p).iter().map(|&c| tree.label(c)).collect();
            let pos = tree.children(p).iter().position(|&c| c == id).unwrap();
            if let Some(ctx) = window_context(&sibs, pos, 1, k) {
                entry.insert(ctx);
            }
        }
    }
    out
}

fn jaccard(a: &BTreeSet<Context>, b: &BTreeSet<Context>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Score and order the bubbles, best first, truncated to the configured
/// candidate budget. Similarity is the best Jaccard overlap between the
/// bubble's sibling contexts and any current label's contexts. The order
/// is total (final tiebreak is the earliest occurrence position), so it
/// does not depend on the input permutation.
pub fn rank_bubbles(
    state: &InferenceState,
    mut bubbles: Vec<Bubble>,
    cfg: &InferenceConfig,
) -> Vec<Bubble> {
    let k = cfg.context_width;
    let label_ctx = label_contexts(state, k);
    for bubble in &mut bubbles {
        let mut ctx: BTreeSet<Context> = BTreeSet::new();
        for occ in &bubble.occurrences {
            let tree = &state.trees[occ.tree];
            let sibs: Vec<Option<NonterminalId>> = tree
                .children(occ.parent)
                .iter()
                .map(|&c| tree.label(c))
                .collect();
            if let Some(c) = window_context(&sibs, occ.start, bubble.symbols.len(), k) {
                ctx.insert(c);
            }
        }
        bubble.similarity = label_ctx
            .values()
            .map(|lc| jaccard(&ctx, lc))
            .fold(0.0, f64::max);
    }
    let improved = cfg.flags.improved_ranking;
    bubbles.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap()
            .then_with(|| {
                if improved {
                    b.depth
                        .cmp(&a.depth)
                        .then_with(|| b.count().cmp(&a.count()))
                        .then_with(|| a.symbols.len().cmp(&b.symbols.len()))
                } else {
                    b.count().cmp(&a.count())
                }
            })
            .then_with(|| a.symbols.cmp(&b.symbols))
            .then_with(|| a.min_pos.cmp(&b.min_pos))
    });
    bubbles.truncate(cfg.top_candidates);
    bubbles
}

/// A proposed generalization for the oracle to confirm or refute.
#[derive(Debug, Clone)]
pub enum MergeCandidate {
    /// Treat two existing labels as one; the earlier label (by distance
    /// order) survives.
    Labels { keep: NonterminalId, drop: NonterminalId },
    /// Group the bubble under a node and merge it with `target`.
    BubbleInto { bubble: Bubble, target: NonterminalId },
    /// Group two bubbles under one fresh label. The second bubble's
    /// occurrence list must already be disjoint from the first's.
    BubblePair { first: Bubble, second: Bubble },
}

/// What an accepted merge did: the surviving label and the grouping
/// rules available for replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppliedMerge {
    pub survivor: NonterminalId,
    pub rules: Vec<LearnedRule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LearnedRule {
    pub lhs: NonterminalId,
    pub pattern: Vec<NonterminalId>,
}

/// Per-tree leaf strings and node spans, computed once per check.
struct TreeGeometry {
    text: Vec<String>,
    spans: Vec<Vec<(usize, usize)>>,
}

impl TreeGeometry {
    fn of(state: &InferenceState) -> Self {
        TreeGeometry {
            text: state.trees.iter().map(|t| t.leaf_string()).collect(),
            spans: state.trees.iter().map(|t| t.byte_spans()).collect(),
        }
    }

    fn splice(&self, tree: usize, span: (usize, usize), replacement: &str) -> String {
        let text = &self.text[tree];
        let mut out = String::with_capacity(text.len() - (span.1 - span.0) + replacement.len());
        out.push_str(&text[..span.0]);
        out.push_str(replacement);
        out.push_str(&text[span.1..]);
        out
    }

    fn node_span(&self, tree: usize, node: NodeId) -> (usize, usize) {
        self.spans[tree][node]
    }

    fn occurrence_span(&self, state: &InferenceState, occ: &Occurrence, len: usize) -> (usize, usize) {
        let children = state.trees[occ.tree].children(occ.parent);
        let first = self.spans[occ.tree][children[occ.start]];
        let last = self.spans[occ.tree][children[occ.start + len - 1]];
        (first.0, last.1)
    }
}

/// Label -> occurrences, each list in (tree, preorder position) order,
/// exactly the order a fresh scan of the trees would visit them. Built
/// once per merge pass and folded forward through accepted label merges,
/// which replaces a per-candidate walk over every node with a lookup.
/// Valid only while tree shape is unchanged: grouping merges add nodes,
/// so passes that accept one must return before touching the index again.
struct LabelIndex {
    by_label: FxHashMap<NonterminalId, Vec<(usize, u32, NodeId)>>,
}

impl LabelIndex {
    fn of(state: &InferenceState) -> Self {
        let mut by_label: FxHashMap<NonterminalId, Vec<(usize, u32, NodeId)>> =
            FxHashMap::default();
        for (ti, tree) in state.trees.iter().enumerate() {
            for (rank, id) in tree.preorder().into_iter().enumerate() {
                if let Some(label) = tree.label(id) {
                    by_label.entry(label).or_default().push((ti, rank as u32, id));
                }
            }
        }
        LabelIndex { by_label }
    }

    fn occurrences(&self, label: NonterminalId) -> &[(usize, u32, NodeId)] {
        self.by_label.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Fold an accepted label merge forward: `drop`'s occurrences now
    /// carry `keep`'s label. Both lists are (tree, position)-sorted, so
    /// one linear merge keeps the combined list in scan order.
    fn merge(&mut self, keep: NonterminalId, drop: NonterminalId) {
        let Some(dropped) = self.by_label.remove(&drop) else { return };
        let kept = self.by_label.entry(keep).or_default();
        let mut merged = Vec::with_capacity(kept.len() + dropped.len());
        let (mut a, mut b) = (kept.iter().copied().peekable(), dropped.into_iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&(at, ar, _)), Some(&(bt, br, _))) => {
                    if (at, ar) <= (bt, br) {
                        merged.push(a.next().unwrap());
                    } else {
                        merged.push(b.next().unwrap());
                    }
                }
                (Some(_), None) => merged.push(a.next().unwrap()),
                (None, Some(_)) => merged.push(b.next().unwrap()),
                (None, None) => break,
            }
        }
        *kept = merged;
    }
}

/// Sites where one side of a merge occurs: (tree, byte span) plus the
/// distinct strings those sites currently hold. Expansions borrow from
/// the geometry snapshot; only synthetic sides (a bare token string) own
/// their text.
struct Side<'g> {
    sites: Vec<(usize, (usize, usize))>,
    expansions: Vec<Cow<'g, str>>,
}

impl<'g> Side<'g> {
    fn from_label(geo: &'g TreeGeometry, index: &LabelIndex, label: NonterminalId) -> Side<'g> {
        let mut side = Side { sites: Vec::new(), expansions: Vec::new() };
        let mut by_len: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(ti, _, node) in index.occurrences(label) {
            let span = geo.node_span(ti, node);
            side.push_site(&mut by_len, ti, span, &geo.text[ti][span.0..span.1]);
        }
        side
    }

    fn from_bubble(state: &InferenceState, geo: &'g TreeGeometry, bubble: &Bubble) -> Side<'g> {
        let mut side = Side { sites: Vec::new(), expansions: Vec::new() };
        let mut by_len: HashMap<usize, Vec<usize>> = HashMap::new();
        for occ in &bubble.occurrences {
            let span = geo.occurrence_span(state, occ, bubble.symbols.len());
            side.push_site(&mut by_len, occ.tree, span, &geo.text[occ.tree][span.0..span.1]);
        }
        side
    }

    /// Record one site, keeping its text among the expansions unless an
    /// earlier site already holds the same string (length-bucketed, so
    /// distinct-length texts are never compared or hashed).
    fn push_site(
        &mut self,
        by_len: &mut HashMap<usize, Vec<usize>>,
        tree: usize,
        span: (usize, usize),
        text: &'g str,
    ) {
        self.sites.push((tree, span));
        let slots = by_len.entry(text.len()).or_default();
        if slots.iter().any(|&i| self.expansions[i] == text) {
            return;
        }
        slots.push(self.expansions.len());
        self.expansions.push(Cow::Borrowed(text));
    }
}

/// Cross-substitution programs: every donor string at every receiver
/// site, deduplicated preserving first appearance. Duplicates can only
/// share a length, so the index buckets by length and compares within
/// the bucket; distinct-length programs are never hashed or compared.
fn cross_programs(geo: &TreeGeometry, receivers: &Side, donors: &Side) -> Vec<String> {
    let mut by_len: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut out: Vec<String> = Vec::new();
    for &(tree, span) in &receivers.sites {
        for donor in &donors.expansions {
            let program = geo.splice(tree, span, donor);
            let slots = by_len.entry(program.len()).or_default();
            if slots.iter().any(|&i| out[i] == program) {
                continue;
            }
            slots.push(out.len());
            out.push(program);
        }
    }
    out
}

/// Query one direction's programs, sampling down to the budget when the
/// set is larger. Short-circuits on the first rejection.
fn direction_accepted(
    programs: Vec<String>,
    oracle: &mut Oracle,
    cfg: &InferenceConfig,
) -> Result<bool, InferenceError> {
    let selected: Vec<&String> = if programs.len() > cfg.check_budget {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut idx = rand::seq::index::sample(&mut rng, programs.len(), cfg.check_budget)
            .into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &programs[i]).collect()
    } else {
        programs.iter().collect()
    };
    for program in selected {
        if !oracle.query(program)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn overlap(a: &Occurrence, alen: usize, b: &Occurrence, blen: usize) -> bool {
    a.tree == b.tree
        && a.parent == b.parent
        && a.start < b.start + blen
        && b.start < a.start + alen
}

/// Leftmost-greedy selection of mutually disjoint occurrences, then
/// wrap them under `label` right to left so indices stay valid.
fn wrap_occurrences(
    trees: &mut [ParseTree],
    occurrences: &[Occurrence],
    len: usize,
    label: NonterminalId,
) -> usize {
    let runs: Vec<(Occurrence, usize)> =
        occurrences.iter().map(|occ| (occ.clone(), len)).collect();
    wrap_runs(trees, &runs, label)
}

/// Wrap sibling runs of possibly differing lengths under `label`. All
/// runs are resolved against the pre-wrap child indices, so callers may
/// mix runs from several bubbles; overlapping runs are dropped by a
/// leftmost-greedy pass and survivors are wrapped right to left within
/// each parent so earlier wraps never shift later indices.
fn wrap_runs(
    trees: &mut [ParseTree],
    runs: &[(Occurrence, usize)],
    label: NonterminalId,
) -> usize {
    let mut by_parent: BTreeMap<(usize, NodeId), Vec<(usize, usize)>> = BTreeMap::new();
    for (occ, len) in runs {
        by_parent
            .entry((occ.tree, occ.parent))
            .or_default()
            .push((occ.start, *len));
    }
    let mut wrapped = 0;
    for ((tree, parent), mut spans) in by_parent {
        spans.sort_unstable();
        let mut accepted: Vec<(usize, usize)> = Vec::new();
        for (s, len) in spans {
            if accepted.last().map_or(true, |&(ps, pl)| ps + pl <= s) {
                accepted.push((s, len));
            }
        }
        for &(s, len) in accepted.iter().rev() {
            trees[tree].wrap(parent, s, len, label);
            wrapped += 1;
        }
    }
    wrapped
}

/// Check a merge candidate against the oracle and apply it if every
/// sampled cross-substitution in both directions is accepted. Candidate
/// programs are built by string splicing, so nothing is mutated unless
/// the merge is accepted; on acceptance the trees are updated and the
/// learned grouping rules are returned for replay.
pub fn check_merge(
    state: &mut InferenceState,
    candidate: &MergeCandidate,
    oracle: &mut Oracle,
    cfg: &InferenceConfig,
    stats: &mut InferenceStats,
) -> Result<Option<AppliedMerge>, InferenceError> {
    let geo = TreeGeometry::of(state);
    let mut index = LabelIndex::of(state);
    check_merge_with(state, &geo, &mut index, candidate, oracle, cfg, stats)
}

/// `check_merge` against caller-held geometry and label-index snapshots.
/// Both stay valid across rejected candidates and across label-only
/// merges (which rewrite labels, never tree shape or leaf text), so merge
/// passes hoist them instead of recomputing per candidate. An accepted
/// grouping merge adds nodes and leaves the index stale; callers return
/// from their pass before the next use.
fn check_merge_with(
    state: &mut InferenceState,
    geo: &TreeGeometry,
    index: &mut LabelIndex,
    candidate: &MergeCandidate,
    oracle: &mut Oracle,
    cfg: &InferenceConfig,
    stats: &mut InferenceStats,
) -> Result<Option<AppliedMerge>, InferenceError> {
    let build_started = Instant::now();
    let (side_a, side_b) = match candidate {
        MergeCandidate::Labels { keep, drop } => (
            Side::from_label(geo, index, *keep),
            Side::from_label(geo, index, *drop),
        ),
        MergeCandidate::BubbleInto { bubble, target } => (
            Side::from_bubble(state, geo, bubble),
            Side::from_label(geo, index, *target),
        ),
        MergeCandidate::BubblePair { first, second } => (
            Side::from_bubble(state, geo, first),
            Side::from_bubble(state, geo, second),
        ),
    };
    let programs_a = cross_programs(geo, &side_a, &side_b);
    stats.build_time += build_started.elapsed();
    if !direction_accepted(programs_a, oracle, cfg)? {
        stats.merges_rejected += 1;
        return Ok(None);
    }
    // The second direction is only worth constructing once the first
    // has passed; most rejections never get this far.
    let build_started = Instant::now();
    let programs_b = cross_programs(geo, &side_b, &side_a);
    stats.build_time += build_started.elapsed();
    if !direction_accepted(programs_b, oracle, cfg)? {
        stats.merges_rejected += 1;
        return Ok(None);
    }
    stats.merges_accepted += 1;
    let applied = apply_merge(state, candidate);
    if let MergeCandidate::Labels { keep, drop } = candidate {
        index.merge(*keep, *drop);
        if cfg.self_check {
            let scanned = state.label_occurrences(*keep);
            let indexed: Vec<(usize, NodeId)> =
                index.occurrences(*keep).iter().map(|&(ti, _, id)| (ti, id)).collect();
            assert_eq!(indexed, scanned, "label index must match a fresh scan");
        }
    }
    if cfg.self_check {
        for (ti, tree) in state.trees.iter().enumerate() {
            assert_eq!(
                tree.leaf_string(),
                geo.text[ti],
                "merge application must preserve leaf text"
            );
        }
    }
    Ok(Some(applied))
}

fn apply_merge(state: &mut InferenceState, candidate: &MergeCandidate) -> AppliedMerge {
    match candidate {
        MergeCandidate::Labels { keep, drop } => {
            state.record_merge(*drop, *keep);
            AppliedMerge { survivor: *keep, rules: Vec::new() }
        }
        MergeCandidate::BubbleInto { bubble, target } => {
            if state.is_token_label(*target) {
                // The grouped run absorbs the token label: the fresh
                // label survives and inherits the token alternative.
                let fresh = state.fresh_label();
                wrap_occurrences(&mut state.trees, &bubble.occurrences, bubble.symbols.len(), fresh);
                state.record_merge(*target, fresh);
                let pattern: Vec<NonterminalId> = bubble
                    .symbols
                    .iter()
                    .map(|&s| if s == *target { fresh } else { s })
                    .collect();
                AppliedMerge { survivor: fresh, rules: vec![LearnedRule { lhs: fresh, pattern }] }
            } else {
                wrap_occurrences(
                    &mut state.trees,
                    &bubble.occurrences,
                    bubble.symbols.len(),
                    *target,
                );
                AppliedMerge {
                    survivor: *target,
                    rules: vec![LearnedRule { lhs: *target, pattern: bubble.symbols.clone() }],
                }
            }
        }
        MergeCandidate::BubblePair { first, second } => {
            let fresh = state.fresh_label();
            let runs: Vec<(Occurrence, usize)> = first
                .occurrences
                .iter()
                .map(|occ| (occ.clone(), first.symbols.len()))
                .chain(
                    second
                        .occurrences
                        .iter()
                        .map(|occ| (occ.clone(), second.symbols.len())),
                )
                .collect();
            wrap_runs(&mut state.trees, &runs, fresh);
            AppliedMerge {
                survivor: fresh,
                rules: vec![
                    LearnedRule { lhs: fresh, pattern: first.symbols.clone() },
                    LearnedRule { lhs: fresh, pattern: second.symbols.clone() },
                ],
            }
        }
    }
}

/// Replay learned grouping rules across all trees until nothing matches:
/// every maximal run of siblings equal to a pattern is wrapped under the
/// rule's label, except a run that is already exactly the full child
/// list of a node with that label. Never queries the oracle. Returns the
/// number of nodes created.
pub fn reapply_rules(state: &mut InferenceState, rules: &[LearnedRule]) -> usize {
    let mut wraps = 0;
    let cap = 1_000_000;
    loop {
        let mut changed = false;
        for rule in rules {
            let len = rule.pattern.len();
            if len < 2 {
                continue;
            }
            for tree in &mut state.trees {
                'rescan: loop {
                    for node in tree.preorder() {
                        let children = tree.children(node);
                        if children.len() < len {
                            continue;
                        }
                        let labels: Vec<Option<NonterminalId>> =
                            children.iter().map(|&c| tree.label(c)).collect();
                        let full = children.len() == len;
                        let node_label = tree.label(node);
                        for start in 0..=children.len() - len {
                            if labels[start..start + len]
                                .iter()
                                .zip(&rule.pattern)
                                .all(|(l, p)| *l == Some(*p))
                            {
                                if full && start == 0 && node_label == Some(rule.lhs) {
                                    continue;
                                }
                                tree.wrap(node, start, len, rule.lhs);
                                wraps += 1;
                                changed = true;
                                assert!(wraps < cap, "replay did not terminate");
                                continue 'rescan;
                            }
                        }
                    }
                    break;
                }
            }
        }
        if !changed {
            return wraps;
        }
    }
}

/// One round of merging every currently valid label pair. Labels are
/// snapshotted in distance order at entry; each pair is resolved through
/// completed merges, skipped if it collapsed to one label or was already
/// attempted this round, and otherwise checked. Accepted merges apply
/// immediately and influence later pairs. Returns how many merges were
/// accepted.
pub fn merge_all_valid(
    state: &mut InferenceState,
    oracle: &mut Oracle,
    cfg: &InferenceConfig,
    stats: &mut InferenceStats,
) -> Result<usize, InferenceError> {
    let snapshot = state.labels_by_distance();
    let position: HashMap<NonterminalId, usize> =
        snapshot.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut attempted: FxHashSet<(NonterminalId, NonterminalId)> = FxHashSet::default();
    let mut accepted = 0;
    // Label merges never move leaves or nodes, so one geometry snapshot
    // and one label index serve the entire pass (the index follows each
    // accepted merge).
    let geo = TreeGeometry::of(state);
    let mut index = LabelIndex::of(state);
    for i in 0..snapshot.len() {
        for j in i + 1..snapshot.len() {
            let a = state.resolve(snapshot[i]);
            let b = state.resolve(snapshot[j]);
            if a == b {
                continue;
            }
            let (keep, drop) = if position[&a] <= position[&b] { (a, b) } else { (b, a) };
            if !attempted.insert((keep, drop)) {
                continue;
            }
            let candidate = MergeCandidate::Labels { keep, drop };
            if check_merge_with(state, &geo, &mut index, &candidate, oracle, cfg, stats)?.is_some()
            {
                accepted += 1;
            }
        }
    }
    Ok(accepted)
}

/// Try to merge both bubbles under one fresh label; skipped before any
/// queries when the second bubble has no occurrence disjoint from the
/// first's.
fn bubble_pair_candidate(first: &Bubble, second: &Bubble) -> Option<MergeCandidate> {
    let filtered: Vec<Occurrence> = second
        .occurrences
        .iter()
        .copied()
        .filter(|occ| {
            !first
                .occurrences
                .iter()
                .any(|a| overlap(a, first.symbols.len(), occ, second.symbols.len()))
        })
        .collect();
    if filtered.is_empty() {
        return None;
    }
    let mut second = second.clone();
    second.occurrences = filtered;
    Some(MergeCandidate::BubblePair { first: first.clone(), second })
}

/// Instance-by-instance merge of a bubble into single-character token
/// labels (the partial-merge ablation). A label qualifies when at least
/// one of its instances accepts every bubble expansion and the bubble's
/// own sites accept the token; qualifying instances are relabeled to the
/// bubble's fresh label, the rest keep theirs.
fn try_partial_merge(
    state: &mut InferenceState,
    geo: &TreeGeometry,
    index: &LabelIndex,
    bubble: &Bubble,
    targets: &[NonterminalId],
    oracle: &mut Oracle,
    cfg: &InferenceConfig,
    stats: &mut InferenceStats,
) -> Result<Option<AppliedMerge>, InferenceError> {
    let bubble_side = Side::from_bubble(state, geo, bubble);
    for &target in targets {
        if !state.is_token_label(target) {
            continue;
        }
        let token = state.dummy_token[&target].text.clone();
        if token.chars().count() != 1 {
            continue;
        }
        let occurrences: Vec<(usize, NodeId)> =
            index.occurrences(target).iter().map(|&(ti, _, id)| (ti, id)).collect();
        let mut passing: Vec<(usize, NodeId)> = Vec::new();
        for &(ti, node) in &occurrences {
            let span = geo.node_span(ti, node);
            let instance = Side { sites: vec![(ti, span)], expansions: Vec::new() };
            let programs = cross_programs(geo, &instance, &bubble_side);
            if direction_accepted(programs, oracle, cfg)? {
                passing.push((ti, node));
            }
        }
        if passing.is_empty() {
            stats.merges_rejected += 1;
            continue;
        }
        let token_side = Side { sites: Vec::new(), expansions: vec![Cow::Owned(token)] };
        let reverse = cross_programs(geo, &bubble_side, &token_side);
        if !direction_accepted(reverse, oracle, cfg)? {
            stats.merges_rejected += 1;
            continue;
        }
        stats.merges_accepted += 1;
        let fresh = state.fresh_label();
        wrap_occurrences(&mut state.trees, &bubble.occurrences, bubble.symbols.len(), fresh);
        for (ti, node) in passing {
            state.trees[ti].set_label(node, fresh);
        }
        return Ok(Some(AppliedMerge {
            survivor: fresh,
            rules: vec![LearnedRule { lhs: fresh, pattern: bubble.symbols.clone() }],
        }));
    }
    Ok(None)
}

/// One bubbling step: generate and rank bubbles, then walk the candidate
/// stream until the oracle accepts one merge. The stream holds at most
/// `top_candidates` entries in total: first the ranked bubbles (each
/// tried against every label in distance order), then bubble pairs in
/// rank-sum order filling whatever budget the single bubbles left free.
/// Pairs are speculative (two fresh groupings at once), so they never
/// displace a single bubble from the stream. Returns whether anything
/// was accepted.
fn bubbling_step(
    state: &mut InferenceState,
    oracle: &mut Oracle,
    cfg: &InferenceConfig,
    stats: &mut InferenceStats,
) -> Result<bool, InferenceError> {
    let gen_started = Instant::now();
    let (bubbles, positions) = generate_bubbles(state, cfg);
    if stats.first_pass_bubble_positions.is_none() {
        stats.first_pass_bubble_positions = Some(positions);
    }
    let ranked = rank_bubbles(state, bubbles, cfg);
    stats.bubble_time += gen_started.elapsed();
    // Valid for the whole step: every accepted merge returns immediately
    // below, and nothing else moves leaves or nodes.
    let geo = TreeGeometry::of(state);
    let mut index = LabelIndex::of(state);
    // Optional candidate trace for corpus debugging: set GINFER_TRACE to
    // print each step's ranked bubbles and the accepted merge to stderr.
    let trace_texts: Option<Vec<String>> = std::env::var_os("GINFER_TRACE").map(|_| {
        eprintln!("TRACE step ranked={}", ranked.len());
        ranked
            .iter()
            .enumerate()
            .map(|(r, b)| {
                let occ = &b.occurrences[0];
                let span = geo.occurrence_span(state, occ, b.symbols.len());
                let text = geo.text[occ.tree][span.0..span.1].to_string();
                eprintln!(
                    "TRACE   rank={} len={} sim={:.3} count={} depth={} text={:?}",
                    r,
                    b.symbols.len(),
                    b.similarity,
                    b.count(),
                    b.depth,
                    text
                );
                text
            })
            .collect()
    });
    let targets = state.labels_by_distance();
    for (rank, bubble) in ranked.iter().enumerate() {
        for &target in &targets {
            let candidate = MergeCandidate::BubbleInto { bubble: bubble.clone(), target };
            if let Some(applied) =
                check_merge_with(state, &geo, &mut index, &candidate, oracle, cfg, stats)?
            {
                if let Some(texts) = &trace_texts {
                    eprintln!(
                        "TRACE accepted rank={} into={} text={:?}",
                        rank, target, texts[rank]
                    );
                }
                finish_accepted(state, oracle, cfg, stats, &applied)?;
                return Ok(true);
            }
        }
        if cfg.flags.partial_merge {
            if let Some(applied) =
                try_partial_merge(state, &geo, &index, bubble, &targets, oracle, cfg, stats)?
            {
                finish_accepted(state, oracle, cfg, stats, &applied)?;
                return Ok(true);
            }
        }
    }
    let n = ranked.len();
    let mut pair_budget = cfg.top_candidates.saturating_sub(n);
    if n >= 2 && pair_budget > 0 {
        'pairs: for sum in 1..=(2 * n - 3) {
            let lo = if sum >= n { sum - n + 1 } else { 0 };
            let hi = (sum - 1) / 2;
            for i in lo..=hi {
                if pair_budget == 0 {
                    break 'pairs;
                }
                pair_budget -= 1;
                let j = sum - i;
                let Some(candidate) = bubble_pair_candidate(&ranked[i], &ranked[j]) else {
                    continue;
                };
                if let Some(applied) =
                    check_merge_with(state, &geo, &mut index, &candidate, oracle, cfg, stats)?
                {
                    if let Some(texts) = &trace_texts {
                        eprintln!(
                            "TRACE accepted pair ranks=({},{}) texts=({:?},{:?})",
                            i, j, texts[i], texts[j]
                        );
                    }
                    finish_accepted(state, oracle, cfg, stats, &applied)?;
                    return Ok(true);
                }
            }
        }
    }
    Ok(false)
}

fn finish_accepted(
    state: &mut InferenceState,
    oracle: &mut Oracle,
    cfg: &InferenceConfig,
    stats: &mut InferenceStats,
    applied: &AppliedMerge,
) -> Result<(), InferenceError> {
    if cfg.flags.reapply {
        let before = oracle.stats().queries;
        stats.reapplied_wraps += reapply_rules(state, &applied.rules);
        stats.queries_during_reapply += oracle.stats().queries - before;
    }
    Ok(())
}

/// The letter/digit class covering every character of `text`, if one
/// does. Decided from the text rather than the producing token's kind
/// so string-literal contents classify by what they hold.
fn text_class(text: &str) -> Option<TokenKind> {
    if text.is_empty() {
        return None;
    }
    if text.chars().all(|c| c.is_ascii_digit()) {
        Some(TokenKind::Digit)
    } else if text.chars().all(|c| c.is_ascii_lowercase()) {
        Some(TokenKind::Lower)
    } else if text.chars().all(|c| c.is_ascii_uppercase()) {
        Some(TokenKind::Upper)
    } else {
        None
    }
}

/// Candidate class ladder for a label whose instances are all single
/// tokens of one character class, most general last.
fn expansion_ladder(kind: TokenKind, all_single_char: bool) -> Vec<CharClass> {
    let (single, run) = match kind {
        TokenKind::Digit => (CharClass::Digit, CharClass::Digits),
        TokenKind::Lower => (CharClass::Lower, CharClass::Lowers),
        TokenKind::Upper => (CharClass::Upper, CharClass::Uppers),
        _ => return Vec::new(),
    };
    let mut ladder = Vec::new();
    if all_single_char {
        ladder.push(single);
    }
    ladder.push(run);
    ladder.push(CharClass::Alnum);
    ladder
}

/// Widen token-only labels to character classes. For each label whose
/// instances are all single leaves of one letter/digit class, each
/// ladder step gets ten fixed-seed replacement programs; the most
/// general step the oracle fully accepts is adopted and applied at
/// export. Returns how many labels were widened.
pub fn expand_terminals(
    state: &mut InferenceState,
    oracle: &mut Oracle,
    cfg: &InferenceConfig,
    stats: &mut InferenceStats,
) -> Result<usize, InferenceError> {
    let mut adopted = 0;
    let labels = state.labels_by_distance();
    let mut by_id: Vec<NonterminalId> = labels;
    by_id.sort_unstable();
    for label in by_id {
        let occurrences = state.label_occurrences(label);
        let mut kinds = BTreeSet::new();
        let mut texts = Vec::new();
        let mut eligible = !occurrences.is_empty();
        for &(ti, node) in &occurrences {
            let tree = &state.trees[ti];
            let ch = tree.children(node);
            if ch.len() != 1 {
                eligible = false;
                break;
            }
            match tree.node(ch[0]) {
                // Classify by the text itself, not the token kind, so
                // grouped string-literal contents are still widenable.
                Node::Leaf { token } => match text_class(&token.text) {
                    Some(kind) => {
                        kinds.insert(kind);
                        texts.push(token.text.clone());
                    }
                    None => {
                        eligible = false;
                        break;
                    }
                },
                Node::Internal { .. } => {
                    eligible = false;
                    break;
                }
            }
        }
        if !eligible || kinds.len() != 1 {
            continue;
        }
        let kind = *kinds.iter().next().unwrap();
        let all_single = texts.iter().all(|t| t.chars().count() == 1);
        let ladder = expansion_ladder(kind, all_single);
        if ladder.is_empty() {
            continue;
        }
        let geo = TreeGeometry::of(state);
        let mut best = None;
        for class in ladder {
            let build_started = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            let mut programs = Vec::with_capacity(10);
            for _ in 0..10 {
                let pick = rand::Rng::gen_range(&mut rng, 0..occurrences.len());
                let (ti, node) = occurrences[pick];
                let replacement = sample_class(&mut rng, class);
                programs.push(geo.splice(ti, geo.node_span(ti, node), &replacement));
            }
            stats.build_time += build_started.elapsed();
            if direction_accepted(programs, oracle, cfg)? {
                best = Some(class);
            }
        }
        if let Some(class) = best {
            state.expansions.insert(label, class);
            adopted += 1;
        }
    }
    stats.expansions_adopted = adopted;
    Ok(adopted)
}

/// Read the final grammar off the trees. Adopted class expansions
/// replace the affected labels' alternatives; labels born as token
/// wrappers that still amount to a single terminal are inlined at their
/// use sites; surviving labels are renumbered densely in id order (the
/// shared root keeps id 0). Rules come out sorted by (head, body).
pub fn export_grammar(state: &InferenceState) -> Grammar {
    let mut rules: BTreeMap<NonterminalId, BTreeSet<Vec<Symbol>>> = BTreeMap::new();
    for tree in &state.trees {
        for id in tree.preorder() {
            let Some(label) = tree.label(id) else { continue };
            let rhs: Vec<Symbol> = tree
                .children(id)
                .iter()
                .map(|&c| match tree.node(c) {
                    Node::Leaf { token } => Symbol::Terminal(token.text.clone()),
                    Node::Internal { label, .. } => Symbol::Nonterminal(*label),
                })
                .collect();
            if !rhs.is_empty() {
                rules.entry(label).or_default().insert(rhs);
            }
        }
    }
    for (&label, &class) in &state.expansions {
        if rules.contains_key(&label) {
            rules.insert(label, BTreeSet::from([vec![Symbol::Class(class)]]));
        }
    }
    // Token-born labels that still have exactly one single-symbol
    // alternative dissolve into that symbol at every use site.
    let mut inline: BTreeMap<NonterminalId, Symbol> = BTreeMap::new();
    for (&label, alts) in &rules {
        if label == state.root_label || !state.dummy_token.contains_key(&label) {
            continue;
        }
        if alts.len() == 1 {
            let alt = alts.iter().next().unwrap();
            if alt.len() == 1 {
                match &alt[0] {
                    sym @ (Symbol::Terminal(_) | Symbol::Class(_)) => {
                        inline.insert(label, sym.clone());
                    }
                    Symbol::Nonterminal(_) => {}
                }
            }
        }
    }
    for label in inline.keys() {
        rules.remove(label);
    }
    let renumber: BTreeMap<NonterminalId, NonterminalId> =
        rules.keys().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut out = Vec::new();
    for (&label, alts) in &rules {
        for alt in alts {
            let rhs: Vec<Symbol> = alt
                .iter()
                .map(|sym| match sym {
                    Symbol::Nonterminal(id) => match inline.get(id) {
                        Some(replacement) => replacement.clone(),
                        None => Symbol::Nonterminal(renumber[id]),
                    },
                    other => other.clone(),
                })
                .collect();
            // A root whose only child is a whole-program bracket node
            // reads off as the vacuous alternative X : X; skip it.
            if rhs == [Symbol::Nonterminal(renumber[&label])] {
                continue;
            }
            out.push(Rule { lhs: renumber[&label], rhs });
        }
    }
    out.sort();
    Grammar { start: renumber.get(&state.root_label).copied().unwrap_or(0), rules: out }
}

/// Run the whole pipeline on the seeds. The oracle must accept every
/// seed. Returns the final grammar and run statistics.
pub fn infer(
    seeds: &[String],
    oracle: &mut Oracle,
    cfg: &InferenceConfig,
) -> Result<(Grammar, InferenceStats), InferenceError> {
    let total_started = Instant::now();
    let baseline = *oracle.stats();
    let mut stats = InferenceStats::default();
    let mut state = InferenceState::from_seeds(seeds, cfg)?;
    stats.seed_count = seeds.len();
    stats.token_count = state.trees.iter().map(|t| t.leaf_tokens().len()).sum();
    for (index, seed) in seeds.iter().enumerate() {
        if !oracle.query(seed)? {
            return Err(InferenceError::SeedRejected { index, program: seed.clone() });
        }
    }
    let mut first_epoch = true;
    loop {
        let epoch_started = Instant::now();
        let mut accepted = 0;
        if first_epoch {
            accepted += merge_all_valid(&mut state, oracle, cfg, &mut stats)?;
        }
        while bubbling_step(&mut state, oracle, cfg, &mut stats)? {
            accepted += 1;
        }
        accepted += merge_all_valid(&mut state, oracle, cfg, &mut stats)?;
        let elapsed = epoch_started.elapsed();
        stats.epochs += 1;
        stats.epoch_times.push(elapsed);
        if first_epoch {
            stats.first_epoch_time = elapsed;
            first_epoch = false;
        }
        if accepted == 0 {
            break;
        }
    }
    expand_terminals(&mut state, oracle, cfg, &mut stats)?;
    let grammar = export_grammar(&state);
    if cfg.self_check {
        for seed in seeds {
            assert!(
                crate::parsing::recognize(&grammar, seed),
                "exported grammar must accept every seed"
            );
        }
    }
    let os = oracle.stats();
    stats.queries = os.queries - baseline.queries;
    stats.cache_hits = os.cache_hits - baseline.cache_hits;
    stats.timeouts = os.timeouts - baseline.timeouts;
    stats.oracle_time = os.backend_time - baseline.backend_time;
    stats.total_time = total_started.elapsed();
    Ok((grammar, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{read_grammar, write_grammar};
    use crate::oracle::{OracleBackend, OracleConfig};

    fn golden_statements() -> Grammar {
        read_grammar(concat!(
            "t0 : t1 ;\n",
            "t1 : t1 \" ; \" t1 ;\n",
            "t1 : \"L = \" t3 ;\n",
            "t1 : \"skip\" ;\n",
            "t1 : \"while \" t2 \" do \" t1 ;\n",
            "t1 : \"if \" t2 \" then \" t1 \" else \" t1 ;\n",
            "t2 : \"~\" t2 ;\n",
            "t2 : \"true\" ;\n",
            "t2 : \"false\" ;\n",
            "t2 : t2 \" & \" t2 ;\n",
            "t2 : t3 \" == \" t3 ;\n",
            "t3 : \"(\" t3 \"+\" t3 \")\" ;\n",
            "t3 : \"L\" ;\n",
            "t3 : \"n\" ;\n",
        ))
        .unwrap()
    }

    fn golden_oracle() -> Oracle {
        Oracle::new(OracleConfig::new(OracleBackend::Golden(golden_statements())))
    }

    fn two_seeds() -> Vec<String> {
        vec![
            "while n == (n+n) do L = n".to_string(),
            "L = ((n+n)+n) ; skip".to_string(),
        ]
    }

    #[test]
    fn golden_fixture_has_expected_size() {
        let s = crate::grammar::grammar_stats(&golden_statements());
        assert_eq!(s.nonterminal_count, 4);
        assert_eq!(s.alternative_count, 14);
    }

    #[test]
    fn state_building_assigns_bracket_ids_then_token_ids() {
        let cfg = InferenceConfig::default();
        let state = InferenceState::from_seeds(&two_seeds(), &cfg).unwrap();
        // Brackets: t1 (first seed), t2 and t3 (second seed, outer first).
        // Token labels follow in first-occurrence order starting at 4.
        assert_eq!(state.trees.len(), 2);
        let labels0: BTreeSet<_> = state.trees[0]
            .preorder()
            .into_iter()
            .filter_map(|id| state.trees[0].label(id))
            .collect();
        assert!(labels0.contains(&1));
        assert!(!labels0.contains(&2));
        let labels1: BTreeSet<_> = state.trees[1]
            .preorder()
            .into_iter()
            .filter_map(|id| state.trees[1].label(id))
            .collect();
        assert!(labels1.contains(&2) && labels1.contains(&3));
        assert_eq!(state.dummy_token.get(&4).map(|t| t.text.as_str()), Some("while"));
        assert_eq!(state.dummy_token.get(&5).map(|t| t.text.as_str()), Some(" "));
        assert_eq!(state.dummy_token.get(&6).map(|t| t.text.as_str()), Some("n"));
        assert_eq!(state.dummy_token.get(&14).map(|t| t.text.as_str()), Some("skip"));
        for (seed, tree) in two_seeds().iter().zip(&state.trees) {
            assert_eq!(&tree.leaf_string(), seed);
        }
    }

    #[test]
    fn merge_round_finds_the_valid_label_merges() {
        let cfg = InferenceConfig::default();
        let mut state = InferenceState::from_seeds(&two_seeds(), &cfg).unwrap();
        let mut oracle = golden_oracle();
        for seed in two_seeds() {
            assert!(oracle.query(&seed).unwrap());
        }
        let mut stats = InferenceStats::default();
        let accepted = merge_all_valid(&mut state, &mut oracle, &cfg, &mut stats).unwrap();
        assert_eq!(accepted, 4);
        // skip merged with the root; both extra brackets and the number
        // token merged with the first bracket label.
        assert_eq!(state.resolve(14), 0);
        assert_eq!(state.resolve(2), 1);
        assert_eq!(state.resolve(6), 1);
        assert_eq!(state.resolve(3), 1);
        assert_eq!(stats.merges_accepted, 4);
        assert!(stats.merges_rejected > 0);
    }

    #[test]
    fn rejected_merges_leave_no_trace() {
        let cfg = InferenceConfig::default();
        let mut state = InferenceState::from_seeds(&two_seeds(), &cfg).unwrap();
        let mut oracle = golden_oracle();
        let fingerprints: Vec<u64> = state.trees.iter().map(|t| t.fingerprint()).collect();
        let mut stats = InferenceStats::default();
        // Space token vs. equals token: plainly invalid.
        let candidate = MergeCandidate::Labels { keep: 5, drop: 7 };
        let applied = check_merge(&mut state, &candidate, &mut oracle, &cfg, &mut stats).unwrap();
        assert!(applied.is_none());
        let after: Vec<u64> = state.trees.iter().map(|t| t.fingerprint()).collect();
        assert_eq!(fingerprints, after);
        assert_eq!(stats.merges_rejected, 1);
    }

    #[test]
    fn pair_application_wraps_both_patterns_at_their_original_spans() {
        // Wrapping the first bubble shrinks the sibling list, so the
        // second bubble's occurrence indices must be interpreted against
        // the pre-wrap list, not the shifted one.
        let cfg = InferenceConfig::default();
        let seeds = vec!["a b c d".to_string()];
        let mut state = InferenceState::from_seeds(&seeds, &cfg).unwrap();
        let root = state.trees[0].preorder()[0];
        // Child labels: [a]=1, [ ]=2, [b]=3, [ ]=2, [c]=4, [ ]=2, [d]=5.
        let bubble = |symbols: Vec<NonterminalId>, start: usize| Bubble {
            symbols,
            occurrences: vec![Occurrence { tree: 0, parent: root, start }],
            depth: 0,
            similarity: 0.0,
            min_pos: (0, 0, start),
        };
        let candidate = MergeCandidate::BubblePair {
            first: bubble(vec![1, 2], 0),
            second: bubble(vec![3, 2], 2),
        };
        let applied = apply_merge(&mut state, &candidate);
        let tree = &state.trees[0];
        assert_eq!(tree.leaf_string(), "a b c d");
        let children = tree.children(root);
        assert_eq!(children.len(), 5);
        let spans = tree.byte_spans();
        let text = tree.leaf_string();
        let piece = |node: NodeId| text[spans[node].0..spans[node].1].to_string();
        assert_eq!(tree.label(children[0]), Some(applied.survivor));
        assert_eq!(piece(children[0]), "a ");
        assert_eq!(tree.label(children[1]), Some(applied.survivor));
        assert_eq!(piece(children[1]), "b ");
        assert_eq!(piece(children[2]), "c");
    }

    #[test]
    fn bubble_enumeration_matches_hand_count() {
        // One flat tree over 4 token labels: a b a b.
        let cfg = InferenceConfig {
            flags: InferenceFlags { prestructure: false, ..Default::default() },
            ..Default::default()
        };
        let state =
            InferenceState::from_seeds(&["xy+xy+".to_string()], &cfg).unwrap();
        // Tokens: xy + xy + -> labels a=xy b=+. Windows of length 2..3
        // (4 children, full span excluded): starts 0..2 len 2 (3), len 3
        // (2): five positions; distinct sequences: [a b], [b a], [a b a],
        // [b a b].
        let (bubbles, positions) = generate_bubbles(&state, &cfg);
        assert_eq!(positions, 5);
        assert_eq!(bubbles.len(), 4);
        let ab = bubbles
            .iter()
            .find(|b| b.symbols == vec![1, 2])
            .expect("the [xy +] bubble exists");
        assert_eq!(ab.count(), 2);
        assert_eq!(ab.depth, 0);
    }

    #[test]
    fn bubble_length_cap_limits_windows() {
        let cfg = InferenceConfig {
            max_bubble_len: Some(2),
            flags: InferenceFlags { prestructure: false, ..Default::default() },
            ..Default::default()
        };
        let state = InferenceState::from_seeds(&["xy+xy+".to_string()], &cfg).unwrap();
        let (bubbles, positions) = generate_bubbles(&state, &cfg);
        assert_eq!(positions, 3);
        assert!(bubbles.iter().all(|b| b.symbols.len() == 2));
    }

    #[test]
    fn single_bracket_windows_are_excluded_by_default() {
        let cfg = InferenceConfig {
            flags: InferenceFlags { prestructure: false, ..Default::default() },
            ..Default::default()
        };
        let state = InferenceState::from_seeds(&["(x)".to_string()], &cfg).unwrap();
        let (bubbles, positions) = generate_bubbles(&state, &cfg);
        // Windows: [( x] and [x )] (the full list is excluded as a
        // window) and both contain exactly one bracket.
        assert_eq!(positions, 0);
        assert!(bubbles.is_empty());
        let permissive = InferenceConfig {
            flags: InferenceFlags {
                prestructure: false,
                one_bracket_bubbles: true,
                ..Default::default()
            },
            ..Default::default()
        };
        let (bubbles, positions) = generate_bubbles(&state, &permissive);
        assert_eq!(positions, 2);
        assert_eq!(bubbles.len(), 2);
    }

    #[test]
    fn ranking_is_permutation_invariant_and_prefers_similarity() {
        let cfg = InferenceConfig {
            flags: InferenceFlags { prestructure: false, ..Default::default() },
            ..Default::default()
        };
        // "ab" appears twice in identical sibling contexts around "+",
        // so the bubble [a b] should rank above unrelated windows.
        let state = InferenceState::from_seeds(
            &["q ab+ab q".to_string(), "q ab q".to_string()],
            &cfg,
        )
        .unwrap();
        let (bubbles, _) = generate_bubbles(&state, &cfg);
        let ranked = rank_bubbles(&state, bubbles.clone(), &cfg);
        let mut reversed = bubbles;
        reversed.reverse();
        let ranked2 = rank_bubbles(&state, reversed, &cfg);
        let key = |b: &Bubble| (b.symbols.clone(), b.min_pos);
        assert_eq!(
            ranked.iter().map(key).collect::<Vec<_>>(),
            ranked2.iter().map(key).collect::<Vec<_>>()
        );
        for w in &ranked {
            assert!(w.similarity <= ranked[0].similarity);
        }
    }

    #[test]
    fn reapply_wraps_every_remaining_match_without_queries() {
        let cfg = InferenceConfig {
            flags: InferenceFlags { prestructure: false, ..Default::default() },
            ..Default::default()
        };
        let mut state =
            InferenceState::from_seeds(&["ab.ab.ab".to_string()], &cfg).unwrap();
        // Token labels: "ab"=1 "."=2; learned rule X -> ab . with X = 9.
        let wraps = reapply_rules(
            &mut state,
            &[LearnedRule { lhs: 9, pattern: vec![1, 2] }],
        );
        assert_eq!(wraps, 2);
        assert_eq!(state.trees[0].leaf_string(), "ab.ab.ab");
        let root = state.trees[0].root;
        let labels: Vec<_> = state.trees[0]
            .children(root)
            .iter()
            .map(|&c| state.trees[0].label(c).unwrap())
            .collect();
        assert_eq!(labels, vec![9, 9, 1]);
        // Re-running finds nothing new.
        assert_eq!(
            reapply_rules(&mut state, &[LearnedRule { lhs: 9, pattern: vec![1, 2] }]),
            0
        );
    }

    #[test]
    fn reapply_skips_existing_full_nodes_but_wraps_under_other_labels() {
        let cfg = InferenceConfig {
            flags: InferenceFlags { prestructure: false, ..Default::default() },
            ..Default::default()
        };
        let mut state = InferenceState::from_seeds(&["a+".to_string()], &cfg).unwrap();
        // The root's full child list matches, and the root is not the
        // rule head, so it gets wrapped (a unit alternative).
        let wraps = reapply_rules(
            &mut state,
            &[LearnedRule { lhs: 9, pattern: vec![1, 2] }],
        );
        assert_eq!(wraps, 1);
        let root = state.trees[0].root;
        assert_eq!(state.trees[0].children(root).len(), 1);
        let wrapped = state.trees[0].children(root)[0];
        assert_eq!(state.trees[0].label(wrapped), Some(9));
        // A second replay sees the grouping already under its own label.
        assert_eq!(
            reapply_rules(&mut state, &[LearnedRule { lhs: 9, pattern: vec![1, 2] }]),
            0
        );
    }

    #[test]
    fn expansion_widens_digits_but_not_keywords() {
        let golden = read_grammar(concat!(
            "t0 : \"v=\" t1 \";\" ;\n",
            "t1 : digits ;\n",
        ))
        .unwrap();
        let mut oracle = Oracle::new(OracleConfig::new(OracleBackend::Golden(golden)));
        let cfg = InferenceConfig::default();
        let mut state =
            InferenceState::from_seeds(&["v=7;".to_string(), "v=3;".to_string()], &cfg)
                .unwrap();
        let mut stats = InferenceStats::default();
        // Merge the two digit labels first so one label holds {7, 3}.
        let merged = merge_all_valid(&mut state, &mut oracle, &cfg, &mut stats).unwrap();
        assert!(merged >= 1);
        let adopted = expand_terminals(&mut state, &mut oracle, &cfg, &mut stats).unwrap();
        assert_eq!(adopted, 1);
        let g = export_grammar(&state);
        let text = write_grammar(&g);
        assert!(text.contains("digits"), "expected a digits class in {}", text);
        assert!(text.contains("\"v\""), "the keyword stays literal in {}", text);
    }

    #[test]
    fn export_inlines_simple_token_labels() {
        let cfg = InferenceConfig::default();
        let state = InferenceState::from_seeds(&["hi there".to_string()], &cfg).unwrap();
        let g = export_grammar(&state);
        // All three token labels dissolve into terminals.
        assert_eq!(g.rules.len(), 1);
        assert_eq!(
            g.rules[0].rhs,
            vec![
                Symbol::Terminal("hi".into()),
                Symbol::Terminal(" ".into()),
                Symbol::Terminal("there".into())
            ]
        );
        assert_eq!(g.start, 0);
    }

    #[test]
    fn infer_reproduces_the_two_seed_target_grammar() {
        let mut oracle = golden_oracle();
        let cfg = InferenceConfig { self_check: true, ..Default::default() };
        let (g, stats) = infer(&two_seeds(), &mut oracle, &cfg).unwrap();
        let expected = concat!(
            "t0 : \"L\" \" \" \"=\" \" \" t1 ;\n",
            "t0 : \"skip\" ;\n",
            "t0 : \"while\" \" \" t1 \" \" \"=\" \"=\" \" \" t1 \" \" \"do\" \" \" t0 ;\n",
            "t0 : t0 \" \" \";\" \" \" t0 ;\n",
            "t1 : \"(\" t1 \"+\" t1 \")\" ;\n",
            "t1 : \"n\" ;\n",
        );
        assert_eq!(write_grammar(&g), expected);
        let s = crate::grammar::grammar_stats(&g);
        assert_eq!(
            (s.nonterminal_count, s.alternative_count, s.total_symbols, s.terminal_count),
            (2, 6, 29, 11)
        );
        assert!(stats.merges_accepted >= 5);
        assert!(stats.epochs >= 1);
        assert!(stats.queries > 0);
        assert_eq!(stats.queries_during_reapply, 0);
    }

    #[test]
    fn infer_is_deterministic_including_query_counts() {
        let cfg = InferenceConfig::default();
        let mut o1 = golden_oracle();
        let (g1, s1) = infer(&two_seeds(), &mut o1, &cfg).unwrap();
        let mut o2 = golden_oracle();
        let (g2, s2) = infer(&two_seeds(), &mut o2, &cfg).unwrap();
        assert_eq!(write_grammar(&g1), write_grammar(&g2));
        assert_eq!(s1.queries, s2.queries);
        assert_eq!(s1.cache_hits, s2.cache_hits);
        assert_eq!(s1.merges_accepted, s2.merges_accepted);
        assert_eq!(s1.merges_rejected, s2.merges_rejected);
    }

    #[test]
    fn infer_rejects_bad_seed_with_its_index() {
        let mut oracle = golden_oracle();
        let cfg = InferenceConfig::default();
        let seeds = vec!["skip".to_string(), "not a program".to_string()];
        match infer(&seeds, &mut oracle, &cfg) {
            Err(InferenceError::SeedRejected { index, program }) => {
                assert_eq!(index, 1);
                assert_eq!(program, "not a program");
            }
            other => panic!("expected seed rejection, got {:?}", other.map(|(g, _)| g)),
        }
    }

    #[test]
    fn infer_requires_seeds_and_nonempty_seeds() {
        let mut oracle = golden_oracle();
        let cfg = InferenceConfig::default();
        assert!(matches!(infer(&[], &mut oracle, &cfg), Err(InferenceError::NoSeeds)));
        let seeds = vec!["".to_string()];
        assert!(matches!(
            infer(&seeds, &mut oracle, &cfg),
            Err(InferenceError::EmptySeed { index: 0 })
        ));
    }

    #[test]
    fn flat_mode_learns_nesting() {
        // Without pre-structuring, the nested grammar must be learned by
        // bubbling alone.
        let golden = read_grammar(concat!(
            "t0 : \"(\" t0 \"+\" t0 \")\" ;\n",
            "t0 : \"n\" ;\n",
        ))
        .unwrap();
        let mut oracle = Oracle::new(OracleConfig::new(OracleBackend::Golden(golden.clone())));
        let cfg = InferenceConfig {
            flags: InferenceFlags { prestructure: false, ..Default::default() },
            self_check: true,
            ..Default::default()
        };
        let seeds = vec!["((n+n)+(n+n))".to_string(), "n".to_string()];
        let (g, stats) = infer(&seeds, &mut oracle, &cfg).unwrap();
        assert_eq!(stats.queries_during_reapply, 0);
        for s in ["n", "(n+n)", "((n+(n+n))+n)"] {
            assert!(crate::parsing::recognize(&g, s), "should accept {}", s);
        }
    }

    #[test]
    fn reapply_fires_on_nested_occurrences_with_zero_queries() {
        // Seed 2 nests the bracket pattern: once the inner grouping is
        // learned from both seeds, replay must wrap the outer occurrence
        // in seed 2 without asking the oracle.
        let golden = read_grammar(concat!(
            "t0 : \"x\" \"=\" t1 \";\" ;\n",
            "t1 : \"(\" t1 \"+\" t1 \")\" ;\n",
            "t1 : \"n\" ;\n",
        ))
        .unwrap();
        let mut oracle = Oracle::new(OracleConfig::new(OracleBackend::Golden(golden)));
        let cfg = InferenceConfig {
            flags: InferenceFlags { prestructure: false, ..Default::default() },
            self_check: true,
            ..Default::default()
        };
        let seeds = vec!["x=(n+n);".to_string(), "x=((n+n)+n);".to_string()];
        let (g, stats) = infer(&seeds, &mut oracle, &cfg).unwrap();
        assert!(stats.reapplied_wraps >= 1, "stats: {:?}", stats);
        assert_eq!(stats.queries_during_reapply, 0);
        for s in ["x=n;", "x=((n+(n+n))+n);"] {
            assert!(crate::parsing::recognize(&g, s), "should accept {}", s);
        }
    }
}
