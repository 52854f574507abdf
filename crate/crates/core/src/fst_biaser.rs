//! Token-level boost trie for shallow-fusion biasing.
//!
//! Every matched token of an active phrase prefix earns `λ`. When the match
//! breaks, the unearned part is taken back and the state falls back to the
//! longest suffix of the recent tokens that is still a trie prefix. Reaching
//! the end of a phrase commits its boost.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::asr_core::Fusion;
use crate::corpus::{ContextSet, TokenId, BIAS, BLANK};

#[derive(Clone, Debug)]
struct Node {
    parent: Option<usize>,
    token: Option<TokenId>,
    depth: usize,
    terminal: bool,
    children: BTreeMap<TokenId, usize>,
}

#[derive(Clone, Debug)]
pub struct BiasTrie {
    nodes: Vec<Node>,
    lambda: f64,
}

pub const ROOT: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionState {
    pub node: usize,
    /// Boost granted for the active partial match, `λ·depth(node)`.
    pub boost: f64,
}

impl BiasTrie {
    pub fn new(phrases: impl IntoIterator<Item = impl AsRef<[TokenId]>>, lambda: f64) -> Self {
        let mut trie = Self {
            nodes: vec![Node {
                parent: None,
                token: None,
                depth: 0,
                terminal: false,
                children: BTreeMap::new(),
            }],
            lambda,
        };
        for p in phrases {
            trie.insert(p.as_ref());
        }
        trie
    }

    pub fn from_context(ctx: &ContextSet, lambda: f64) -> Self {
        Self::new(ctx.phrases().iter().map(|p| p.ids.as_slice()), lambda)
    }

    fn insert(&mut self, phrase: &[TokenId]) {
        if phrase.is_empty() {
            return;
        }
        let mut cur = ROOT;
        for &tok in phrase {
            cur = match self.nodes[cur].children.get(&tok) {
                Some(&n) => n,
                None => {
                    let id = self.nodes.len();
                    let depth = self.nodes[cur].depth + 1;
                    self.nodes.push(Node {
                        parent: Some(cur),
                        token: Some(tok),
                        depth,
                        terminal: false,
                        children: BTreeMap::new(),
                    });
                    self.nodes[cur].children.insert(tok, id);
                    id
                }
            };
        }
        self.nodes[cur].terminal = true;
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn depth(&self, node: usize) -> usize {
        self.nodes[node].depth
    }

    pub fn is_terminal(&self, node: usize) -> bool {
        self.nodes[node].terminal
    }

    pub fn child(&self, node: usize, tok: TokenId) -> Option<usize> {
        self.nodes[node].children.get(&tok).copied()
    }

    /// Tokens on the path from the root to `node`.
    pub fn path(&self, node: usize) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.nodes[node].depth);
        let mut cur = node;
        while let (Some(p), Some(t)) = (self.nodes[cur].parent, self.nodes[cur].token) {
            out.push(t);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn walk(&self, tokens: &[TokenId]) -> Option<usize> {
        tokens.iter().try_fold(ROOT, |n, &t| self.child(n, t))
    }

    /// Longest proper suffix of `history` that spells a trie prefix.
    fn longest_suffix(&self, history: &[TokenId]) -> usize {
        (1..=history.len())
            .find_map(|start| self.walk(&history[start..]))
            .unwrap_or(ROOT)
    }

    pub fn start(&self) -> FusionState {
        FusionState { node: ROOT, boost: 0.0 }
    }

    fn state_at(&self, node: usize) -> FusionState {
        FusionState {
            node,
            boost: self.lambda * self.nodes[node].depth as f64,
        }
    }

    /// Advances by one emitted token and returns the score change.
    pub fn score_step(&self, state: &FusionState, tok: TokenId) -> (FusionState, f64) {
        if tok == BLANK || tok == BIAS {
            return (state.clone(), 0.0);
        }
        let mut delta;
        let mut node = match self.child(state.node, tok) {
            Some(n) => {
                delta = self.lambda;
                n
            }
            None => {
                let mut history = self.path(state.node);
                history.push(tok);
                let n = self.longest_suffix(&history);
                delta = -state.boost + self.lambda * self.nodes[n].depth as f64;
                n
            }
        };
        // A completed phrase keeps its boost; matching resumes from the
        // longest suffix, whose tokens are granted again as a fresh prefix.
        while self.nodes[node].terminal {
            let next = self.longest_suffix(&self.path(node));
            delta += self.lambda * self.nodes[next].depth as f64;
            node = next;
        }
        (self.state_at(node), delta)
    }

    /// Total fusion score of a whole token sequence.
    pub fn fused_score(&self, tokens: &[TokenId]) -> f64 {
        let mut st = self.start();
        let mut total = 0.0;
        for &t in tokens {
            let (next, d) = self.score_step(&st, t);
            total += d;
            st = next;
        }
        total
    }

    /// One line per node: `id parent token terminal`, `-` for the root's
    /// missing parent and token.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, n) in self.nodes.iter().enumerate() {
            let parent = n.parent.map_or("-".to_string(), |p| p.to_string());
            let token = n.token.map_or("-".to_string(), |t| t.to_string());
            let _ = writeln!(out, "{id} {parent} {token} {}", u8::from(n.terminal));
        }
        out
    }
}

impl Fusion for BiasTrie {
    type State = FusionState;

    fn start(&self) -> FusionState {
        BiasTrie::start(self)
    }

    fn step(&self, state: &FusionState, token: TokenId) -> (FusionState, f64) {
        self.score_step(state, token)
    }
}
