//! Token trie for longest-common-prefix matching against cached entries.
//!
//! One node per token position. Every live node carries the largest entry
//! id terminating in its subtree, so the deepest node reachable along a
//! request yields the maximum LCP and the most-recent matching entry in a
//! single walk. Children are inline vectors (deep chains have exactly one
//! child), and nodes freed by eviction go on a free list, keeping live
//! memory proportional to the cached token count.

/// Token identifier as it appears in traces. Opaque; no tokenizer bundled.
pub type Token = u32;

/// Entry handle; the simulator uses the cache insertion index.
pub type EntryId = u64;

const NO_MAX: EntryId = EntryId::MAX;

#[derive(Debug, Default)]
struct Node {
    /// `(first token, node index)` pairs; almost always length 1.
    children: Vec<(Token, u32)>,
    /// Entries whose token sequence ends exactly here.
    terminals: Vec<EntryId>,
    /// Largest entry id terminating in this subtree; `NO_MAX` when empty.
    subtree_max: EntryId,
}

impl Node {
    fn child(&self, tok: Token) -> Option<u32> {
        self.children
            .iter()
            .find(|&&(t, _)| t == tok)
            .map(|&(_, idx)| idx)
    }

    fn detach_child(&mut self, tok: Token) {
        if let Some(pos) = self.children.iter().position(|&(t, _)| t == tok) {
            self.children.swap_remove(pos);
        }
    }
}

/// Prefix index over the cached entries' token sequences.
#[derive(Debug)]
pub struct PrefixTrie {
    nodes: Vec<Node>,
    free: Vec<u32>,
}

impl Default for PrefixTrie {
    fn default() -> Self {
        Self::new()
    }
}

impl PrefixTrie {
    pub fn new() -> Self {
        Self {
            nodes: vec![Node {
                children: Vec::new(),
                terminals: Vec::new(),
                subtree_max: NO_MAX,
            }],
            free: Vec::new(),
        }
    }

    fn alloc(&mut self) -> u32 {
        if let Some(idx) = self.free.pop() {
            idx
        } else {
            self.nodes.push(Node::default());
            (self.nodes.len() - 1) as u32
        }
    }

    fn recompute_max(&mut self, idx: usize) {
        let node = &self.nodes[idx];
        let mut best = node.terminals.iter().copied().max().unwrap_or(NO_MAX);
        for &(_, child) in &node.children {
            let m = self.nodes[child as usize].subtree_max;
            if m != NO_MAX && (best == NO_MAX || m > best) {
                best = m;
            }
        }
        self.nodes[idx].subtree_max = best;
    }

    /// Registers an entry's full token sequence. Ids must be fresh and
    /// increase over time for the recency tie-break to mean anything.
    pub fn insert(&mut self, id: EntryId, tokens: &[Token]) {
        let mut cur = 0usize;
        for &tok in tokens {
            let node = &mut self.nodes[cur];
            if node.subtree_max == NO_MAX || id > node.subtree_max {
                node.subtree_max = id;
            }
            cur = match self.nodes[cur].child(tok) {
                Some(idx) => idx as usize,
                None => {
                    let idx = self.alloc();
                    self.nodes[idx as usize].subtree_max = NO_MAX;
                    self.nodes[cur].children.push((tok, idx));
                    idx as usize
                }
            };
        }
        let node = &mut self.nodes[cur];
        node.terminals.push(id);
        if node.subtree_max == NO_MAX || id > node.subtree_max {
            node.subtree_max = id;
        }
    }

    /// Unregisters an entry, pruning nodes whose subtree became empty and
    /// refreshing subtree maxima along the path.
    pub fn remove(&mut self, id: EntryId, tokens: &[Token]) {
        // path[i] = (parent index, token taken, node index at depth i+1)
        let mut cur = 0u32;
        let mut path: Vec<(u32, Token, u32)> = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            let Some(next) = self.nodes[cur as usize].child(tok) else {
                debug_assert!(false, "removing an entry that was never inserted");
                return;
            };
            path.push((cur, tok, next));
            cur = next;
        }
        {
            let node = &mut self.nodes[cur as usize];
            if let Some(pos) = node.terminals.iter().position(|&e| e == id) {
                node.terminals.swap_remove(pos);
            } else {
                debug_assert!(false, "entry id not terminal at its own path end");
            }
        }
        // Walk back to the root: detach emptied children, refresh maxima.
        let mut emptied: Option<(Token, u32)> = None;
        for &(_, tok_into, node_idx) in path.iter().rev() {
            if let Some((tok, child_idx)) = emptied.take() {
                self.nodes[node_idx as usize].detach_child(tok);
                self.nodes[child_idx as usize].children.clear();
                self.nodes[child_idx as usize].terminals.clear();
                self.free.push(child_idx);
            }
            self.recompute_max(node_idx as usize);
            if self.nodes[node_idx as usize].subtree_max == NO_MAX {
                emptied = Some((tok_into, node_idx));
            }
        }
        if let Some((tok, child_idx)) = emptied {
            self.nodes[0].detach_child(tok);
            self.nodes[child_idx as usize].children.clear();
            self.nodes[child_idx as usize].terminals.clear();
            self.free.push(child_idx);
        }
        self.recompute_max(0);
    }

    /// Entry with the longest common prefix against `tokens`, with ties
    /// broken toward the largest (most recent) entry id. Returns the LCP
    /// depth alongside; `None` when no entry shares even the first token.
    ///
    /// The deepest reachable node gives the answer directly: every entry in
    /// its subtree shares exactly that many leading tokens with the
    /// request (an entry sharing more would have provided the next child).
    pub fn match_longest_prefix(&self, tokens: &[Token]) -> Option<(EntryId, usize)> {
        let mut cur = 0usize;
        let mut depth = 0usize;
        for &tok in tokens {
            let Some(next) = self.nodes[cur].child(tok) else {
                break;
            };
            cur = next as usize;
            depth += 1;
        }
        if depth == 0 {
            return None;
        }
        debug_assert_ne!(self.nodes[cur].subtree_max, NO_MAX, "live nodes carry a maximum");
        Some((self.nodes[cur].subtree_max, depth))
    }

    /// Live node count (excluding the root); test hook for leak checks.
    pub fn live_nodes(&self) -> usize {
        self.nodes.len() - 1 - self.free.len()
    }
}
