//! Decision trees over binary-encoded derivation histories. Histories are
//! mapped to fixed-width bitstrings per field; the tree greedily picks the
//! single-bit question with the largest entropy reduction on the rule being
//! predicted, and leaf distributions are smoothed against their ancestors.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use crate::clusters::{bits_for, Bitstring};
use crate::grammar::{Grammar, RuleId, TERM_NONE};
use crate::history::{HistoryTuple, TrainingEvent};

#[derive(Debug, Error)]
pub enum DtreeError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("no training events")]
    NoEvents,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// History fields a question can inspect, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HistField {
    SynP,
    SemP,
    RuleP,
    Ipc,
    H1p,
    H2p,
}

pub const FIELDS: [HistField; 6] =
    [HistField::SynP, HistField::SemP, HistField::RuleP, HistField::Ipc, HistField::H1p, HistField::H2p];

impl HistField {
    pub fn name(self) -> &'static str {
        match self {
            HistField::SynP => "syn_p",
            HistField::SemP => "sem_p",
            HistField::RuleP => "rule_p",
            HistField::Ipc => "ipc",
            HistField::H1p => "h1_p",
            HistField::H2p => "h2_p",
        }
    }

    pub fn parse(s: &str) -> Option<HistField> {
        FIELDS.iter().copied().find(|f| f.name() == s)
    }
}

/// Binary codes for every value a history field can take.
#[derive(Debug, Clone)]
pub struct BitstringTables {
    pub word: Vec<Bitstring>,
    pub syn: Vec<Bitstring>,
    pub sem: Vec<Bitstring>,
    pub rule: Vec<Bitstring>,
    pub ipc: Vec<Bitstring>,
    pub word_width: usize,
}

impl BitstringTables {
    /// Index-binary codes for every namespace; words get `word_width` bits.
    pub fn canonical(grammar: &Grammar, word_width: usize) -> BitstringTables {
        let index_table = |n: usize, w: usize| -> Vec<Bitstring> {
            (0..n).map(|i| Bitstring::from_index(i, w)).collect()
        };
        let ipc_width = bits_for(grammar.max_arity() + 1);
        BitstringTables {
            word: index_table(grammar.terms.len(), word_width),
            syn: index_table(grammar.syn_names.len(), bits_for(grammar.syn_names.len())),
            sem: index_table(grammar.sem_names.len(), bits_for(grammar.sem_names.len())),
            rule: index_table(grammar.rule_names.len(), bits_for(grammar.rule_names.len())),
            ipc: index_table(grammar.max_arity() + 1, ipc_width),
            word_width,
        }
    }

    /// Canonical tables, with word codes replaced by clustered ones where
    /// available. Words absent from the clustering (the reserved symbols,
    /// terminals unseen by the clusterer) get the smallest index codes not
    /// already taken.
    pub fn with_word_codes(
        grammar: &Grammar,
        codes: &BTreeMap<String, Bitstring>,
        word_width: usize,
    ) -> BitstringTables {
        let mut t = BitstringTables::canonical(grammar, word_width);
        let mut used: std::collections::HashSet<String> =
            codes.values().map(|c| c.padded(word_width).to_string()).collect();
        let mut next_free = 0usize;
        for (i, w) in grammar.terms.iter().enumerate() {
            match codes.get(w) {
                Some(c) => t.word[i] = c.padded(word_width),
                None => {
                    let mut c = Bitstring::from_index(next_free, word_width);
                    while !used.insert(c.to_string()) {
                        next_free += 1;
                        c = Bitstring::from_index(next_free, word_width);
                    }
                    next_free += 1;
                    t.word[i] = c;
                }
            }
        }
        t
    }

    pub fn width(&self, field: HistField) -> usize {
        match field {
            HistField::SynP => self.syn.first().map_or(0, |b| b.width()),
            HistField::SemP => self.sem.first().map_or(0, |b| b.width()),
            HistField::RuleP => self.rule.first().map_or(0, |b| b.width()),
            HistField::Ipc => self.ipc.first().map_or(0, |b| b.width()),
            HistField::H1p | HistField::H2p => self.word_width,
        }
    }

    pub fn encode(&self, hist: &HistoryTuple, field: HistField) -> &Bitstring {
        match field {
            HistField::SynP => &self.syn[hist.syn_p],
            HistField::SemP => &self.sem[hist.sem_p],
            HistField::RuleP => &self.rule[hist.rule_p],
            HistField::Ipc => &self.ipc[hist.ipc],
            HistField::H1p => &self.word[hist.h1_p],
            HistField::H2p => &self.word[hist.h2_p.unwrap_or(TERM_NONE)],
        }
    }
}

/// A single-bit question about one encoded history field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Question {
    pub field: HistField,
    pub bit: usize,
}

impl Question {
    pub fn answer(&self, tables: &BitstringTables, hist: &HistoryTuple) -> u8 {
        tables.encode(hist, self.field).bit(self.bit)
    }
}

#[derive(Debug, Clone)]
pub enum DtNode {
    Internal { q: Question, zero: usize, one: usize },
    Leaf,
}

#[derive(Debug, Clone)]
pub struct DecisionTree {
    pub nodes: Vec<DtNode>,
    /// Per node: rule counts from the growing set.
    pub counts: Vec<Vec<f64>>,
    /// Per node: interpolation weight of its own relative frequencies
    /// against the parent's smoothed distribution (uniform above the root).
    pub lambdas: Vec<f64>,
    /// Per node: smoothed rule distribution.
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GrowConfig {
    pub min_events: usize,
    pub min_gain: f64,
    pub max_depth: usize,
    /// Fixed interpolation weight; when unset, weights are fit on a held-out
    /// tenth of the events.
    pub lambda: Option<f64>,
    pub em_iters: usize,
}

impl Default for GrowConfig {
    fn default() -> GrowConfig {
        GrowConfig { min_events: 10, min_gain: 1e-4, max_depth: 24, lambda: None, em_iters: 50 }
    }
}

fn entropy(counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    if n <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in counts {
        if c > 0.0 {
            h -= (c / n) * (c / n).ln();
        }
    }
    h
}

impl DecisionTree {
    /// Grow a tree predicting the rule from the history. Every tenth event is
    /// held out for smoothing; the rest drive the splits.
    pub fn grow(
        grammar: &Grammar,
        tables: &BitstringTables,
        events: &[TrainingEvent],
        config: &GrowConfig,
    ) -> Result<DecisionTree, DtreeError> {
        if events.is_empty() {
            return Err(DtreeError::NoEvents);
        }
        let n_rules = grammar.rule_names.len();
        let mut grow_set = Vec::new();
        let mut held_out = Vec::new();
        for (i, e) in events.iter().enumerate() {
            if config.lambda.is_none() && i % 10 == 9 {
                held_out.push(e);
            } else {
                grow_set.push(e);
            }
        }
        if grow_set.is_empty() {
            grow_set = events.iter().collect();
            held_out.clear();
        }

        let mut tree = DecisionTree {
            nodes: Vec::new(),
            counts: Vec::new(),
            lambdas: Vec::new(),
            probs: Vec::new(),
        };
        tree.split(grammar, tables, &grow_set, 0, config, n_rules);
        tree.fit_lambdas(tables, &held_out, n_rules, config);
        tree.compute_probs(n_rules);
        Ok(tree)
    }

    fn split(
        &mut self,
        grammar: &Grammar,
        tables: &BitstringTables,
        events: &[&TrainingEvent],
        depth: usize,
        config: &GrowConfig,
        n_rules: usize,
    ) -> usize {
        let mut counts = vec![0.0; n_rules];
        for e in events {
            counts[e.rule] += 1.0;
        }
        let idx = self.nodes.len();
        self.nodes.push(DtNode::Leaf);
        self.counts.push(counts.clone());
        self.lambdas.push(0.5);
        self.probs.push(Vec::new());

        let h = entropy(&counts);
        if events.len() < config.min_events || depth >= config.max_depth || h == 0.0 {
            return idx;
        }
        let n = events.len() as f64;
        let mut best: Option<(f64, Question)> = None;
        for field in FIELDS {
            for bit in 0..tables.width(field) {
                let q = Question { field, bit };
                let mut c0 = vec![0.0; n_rules];
                let mut c1 = vec![0.0; n_rules];
                let mut n1 = 0.0;
                for e in events {
                    if q.answer(tables, &e.hist) == 1 {
                        c1[e.rule] += 1.0;
                        n1 += 1.0;
                    } else {
                        c0[e.rule] += 1.0;
                    }
                }
                if n1 == 0.0 || n1 == n {
                    continue;
                }
                let gain = h - ((n - n1) / n) * entropy(&c0) - (n1 / n) * entropy(&c1);
                // strict improvement, so ties keep the earliest (field, bit)
                if best.map_or(true, |(g, _)| gain > g + 1e-12) {
                    best = Some((gain, q));
                }
            }
        }
        let (gain, q) = match best {
            Some(b) => b,
            None => return idx,
        };
        if gain < config.min_gain {
            return idx;
        }
        let (zero_ev, one_ev): (Vec<_>, Vec<_>) =
            events.iter().partition(|e| q.answer(tables, &e.hist) == 0);
        let zero = self.split(grammar, tables, &zero_ev, depth + 1, config, n_rules);
        let one = self.split(grammar, tables, &one_ev, depth + 1, config, n_rules);
        self.nodes[idx] = DtNode::Internal { q, zero, one };
        idx
    }

    /// Node indices from the root to the leaf for this history.
    fn path(&self, tables: &BitstringTables, hist: &HistoryTuple) -> Vec<usize> {
        let mut path = vec![0];
        loop {
            match &self.nodes[*path.last().unwrap()] {
                DtNode::Internal { q, zero, one } => {
                    path.push(if q.answer(tables, hist) == 0 { *zero } else { *one });
                }
                DtNode::Leaf => return path,
            }
        }
    }

    pub fn classify(&self, tables: &BitstringTables, hist: &HistoryTuple) -> usize {
        *self.path(tables, hist).last().unwrap()
    }

    /// Smoothed probability of `rule` at the leaf this history reaches.
    pub fn rule_prob(&self, tables: &BitstringTables, hist: &HistoryTuple, rule: RuleId) -> f64 {
        self.probs[self.classify(tables, hist)][rule]
    }

    fn ml(&self, node: usize, n_rules: usize) -> Vec<f64> {
        let total: f64 = self.counts[node].iter().sum();
        if total > 0.0 {
            self.counts[node].iter().map(|c| c / total).collect()
        } else {
            vec![1.0 / n_rules as f64; n_rules]
        }
    }

    /// One interpolation weight per node, fit by expectation-maximization on
    /// the held-out events that reach it (nodes no held-out event reaches
    /// keep the 0.5 default).
    fn fit_lambdas(
        &mut self,
        tables: &BitstringTables,
        held_out: &[&TrainingEvent],
        n_rules: usize,
        config: &GrowConfig,
    ) {
        if let Some(l) = config.lambda {
            self.lambdas = vec![l; self.nodes.len()];
            return;
        }
        // events reaching each node, root to leaves
        let mut reached: Vec<Vec<&TrainingEvent>> = vec![Vec::new(); self.nodes.len()];
        for e in held_out {
            for node in self.path(tables, &e.hist) {
                reached[node].push(e);
            }
        }
        // parents must be smoothed before children, so walk in index order
        // (children always have larger indices than their parent)
        let uniform = vec![1.0 / n_rules as f64; n_rules];
        let mut smoothed: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        let mut parent_of: Vec<usize> = (0..self.nodes.len()).collect();
        for (i, n) in self.nodes.iter().enumerate() {
            if let DtNode::Internal { zero, one, .. } = n {
                parent_of[*zero] = i;
                parent_of[*one] = i;
            }
        }
        for i in 0..self.nodes.len() {
            let parent = if i == 0 { uniform.clone() } else { smoothed[parent_of[i]].clone() };
            let ml = self.ml(i, n_rules);
            let mut lambda = 0.5;
            if !reached[i].is_empty() {
                for _ in 0..config.em_iters {
                    let mut post = 0.0;
                    for e in &reached[i] {
                        let a = lambda * ml[e.rule];
                        let b = (1.0 - lambda) * parent[e.rule];
                        if a + b > 0.0 {
                            post += a / (a + b);
                        }
                    }
                    lambda = post / reached[i].len() as f64;
                }
                // keep a floor so unseen rules never get probability zero
                lambda = lambda.clamp(0.01, 0.99);
            }
            self.lambdas[i] = lambda;
            smoothed[i] = ml
                .iter()
                .zip(&parent)
                .map(|(m, p)| lambda * m + (1.0 - lambda) * p)
                .collect();
        }
    }

    fn compute_probs(&mut self, n_rules: usize) {
        let uniform = vec![1.0 / n_rules as f64; n_rules];
        let mut parent_of: Vec<usize> = (0..self.nodes.len()).collect();
        for (i, n) in self.nodes.iter().enumerate() {
            if let DtNode::Internal { zero, one, .. } = n {
                parent_of[*zero] = i;
                parent_of[*one] = i;
            }
        }
        for i in 0..self.nodes.len() {
            let parent = if i == 0 { uniform.clone() } else { self.probs[parent_of[i]].clone() };
            let ml = self.ml(i, n_rules);
            let l = self.lambdas[i];
            self.probs[i] =
                ml.iter().zip(&parent).map(|(m, p)| l * m + (1.0 - l) * p).collect();
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, DtNode::Leaf)).count()
    }

    /// Preorder text dump: `N field bit` for internal nodes, `L id counts...`
    /// for leaves, then per-node interpolation weights.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                DtNode::Internal { q, .. } => {
                    writeln!(f, "N {} {}", q.field.name(), q.bit)?;
                }
                DtNode::Leaf => {
                    let counts: Vec<String> =
                        self.counts[i].iter().map(|c| format!("{c}")).collect();
                    writeln!(f, "L {} {}", i, counts.join(" "))?;
                }
            }
        }
        for (i, l) in self.lambdas.iter().enumerate() {
            writeln!(f, "#lambda {i} {l:.12}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path, n_rules: usize) -> Result<DecisionTree, DtreeError> {
        let f = std::fs::File::open(path)?;
        let mut nodes: Vec<DtNode> = Vec::new();
        let mut counts: Vec<Vec<f64>> = Vec::new();
        let mut lambdas: Vec<(usize, f64)> = Vec::new();
        for (ln, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| DtreeError::Format { line: ln + 1, msg: msg.to_string() };
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("N") => {
                    let field = parts
                        .next()
                        .and_then(HistField::parse)
                        .ok_or_else(|| bad("unknown field"))?;
                    let bit = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("bad bit index"))?;
                    // children are resolved after the preorder scan
                    nodes.push(DtNode::Internal { q: Question { field, bit }, zero: 0, one: 0 });
                    counts.push(vec![0.0; n_rules]);
                }
                Some("L") => {
                    let _id: usize =
                        parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad id"))?;
                    let c: Result<Vec<f64>, _> = parts.map(|s| s.parse()).collect();
                    let c = c.map_err(|_| bad("bad count"))?;
                    if c.len() != n_rules {
                        return Err(bad("count vector length mismatch"));
                    }
                    nodes.push(DtNode::Leaf);
                    counts.push(c);
                }
                Some("#lambda") => {
                    let i: usize =
                        parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad node"))?;
                    let l: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("bad lambda"))?;
                    lambdas.push((i, l));
                }
                _ => return Err(bad("expected N, L or #lambda")),
            }
        }
        if nodes.is_empty() {
            return Err(DtreeError::NoEvents);
        }
        // reattach children: in a preorder dump the zero child directly
        // follows its parent, and the one child follows the zero subtree
        fn wire(nodes: &mut Vec<DtNode>, at: usize) -> usize {
            match nodes[at] {
                DtNode::Leaf => at + 1,
                DtNode::Internal { .. } => {
                    let zero = at + 1;
                    let after_zero = wire(nodes, zero);
                    let one = after_zero;
                    let end = wire(nodes, one);
                    if let DtNode::Internal { zero: z, one: o, .. } = &mut nodes[at] {
                        *z = zero;
                        *o = one;
                    }
                    end
                }
            }
        }
        let end = wire(&mut nodes, 0);
        if end != nodes.len() {
            return Err(DtreeError::Format { line: 0, msg: "dangling nodes".to_string() });
        }
        // internal counts are the sums of their children's
        for i in (0..nodes.len()).rev() {
            if let DtNode::Internal { zero, one, .. } = nodes[i] {
                counts[i] = (0..n_rules).map(|r| counts[zero][r] + counts[one][r]).collect();
            }
        }
        let mut tree = DecisionTree {
            lambdas: vec![0.5; nodes.len()],
            probs: Vec::new(),
            nodes,
            counts,
        };
        for (i, l) in lambdas {
            if i < tree.lambdas.len() {
                tree.lambdas[i] = l;
            }
        }
        tree.probs = vec![Vec::new(); tree.nodes.len()];
        tree.compute_probs(n_rules);
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{Grammar, TERM_TOP, TOP_ID};

    const G: &str = "\
#syn
s a b
#sem
x
#start S
#rules
r1 : S[s,x] -> A S B ; h1=2
r2 : S[s,x] -> A B ; h1=1
r3 : A[a,x] -> a
r4 : B[b,x] -> b
";

    fn event(g: &Grammar, ipc: usize, rule: &str) -> TrainingEvent {
        TrainingEvent {
            hist: HistoryTuple {
                syn_p: TOP_ID,
                sem_p: TOP_ID,
                rule_p: TOP_ID,
                ipc,
                h1_p: TERM_TOP,
                h2_p: None,
            },
            syn: 1,
            sem: 1,
            rule: g.rule_id(rule).unwrap(),
            h1: TERM_TOP,
            h2: None,
            prod: 0,
        }
    }

    #[test]
    fn canonical_tables_have_expected_widths() {
        let g = Grammar::parse_str(G).unwrap();
        let t = BitstringTables::canonical(&g, 16);
        assert_eq!(t.width(HistField::H1p), 16);
        assert_eq!(t.width(HistField::SynP), 2); // *top*, s, a, b -> 4 values
        assert_eq!(t.width(HistField::Ipc), 2); // positions 0..=3
        assert_eq!(t.width(HistField::RuleP), 3); // *top* + 4 rules -> 5 values
    }

    #[test]
    fn word_codes_fill_gaps_without_collisions() {
        let g = Grammar::parse_str(G).unwrap();
        let mut codes = BTreeMap::new();
        codes.insert("a".to_string(), Bitstring::parse("0000").unwrap());
        codes.insert("b".to_string(), Bitstring::parse("0001").unwrap());
        let t = BitstringTables::with_word_codes(&g, &codes, 4);
        let all: Vec<String> = t.word.iter().map(|b| b.to_string()).collect();
        let set: std::collections::HashSet<&String> = all.iter().collect();
        assert_eq!(set.len(), all.len(), "collision in {all:?}");
        assert_eq!(t.word[g.term_id("a").unwrap()].to_string(), "0000");
    }

    #[test]
    fn single_decisive_bit_is_found() {
        let g = Grammar::parse_str(G).unwrap();
        let t = BitstringTables::canonical(&g, 4);
        // ipc 1 -> always r3; ipc 2 -> always r2; differ in both ipc bits,
        // the gain is total either way, so the first bit wins the tie
        let mut events = Vec::new();
        for _ in 0..20 {
            events.push(event(&g, 1, "r3"));
            events.push(event(&g, 2, "r2"));
        }
        let cfg = GrowConfig { lambda: Some(0.9), ..GrowConfig::default() };
        let tree = DecisionTree::grow(&g, &t, &events, &cfg).unwrap();
        assert_eq!(tree.leaf_count(), 2);
        match &tree.nodes[0] {
            DtNode::Internal { q, .. } => {
                assert_eq!(q.field, HistField::Ipc);
                assert_eq!(q.bit, 0);
            }
            _ => panic!("expected a split at the root"),
        }
        let h1 = event(&g, 1, "r3").hist;
        let h2 = event(&g, 2, "r2").hist;
        assert!(tree.rule_prob(&t, &h1, g.rule_id("r3").unwrap()) > 0.8);
        assert!(tree.rule_prob(&t, &h2, g.rule_id("r2").unwrap()) > 0.8);
        assert_ne!(tree.classify(&t, &h1), tree.classify(&t, &h2));
    }

    #[test]
    fn stopping_rules_hold() {
        let g = Grammar::parse_str(G).unwrap();
        let t = BitstringTables::canonical(&g, 4);
        let mut events = Vec::new();
        for _ in 0..4 {
            events.push(event(&g, 1, "r3"));
            events.push(event(&g, 2, "r2"));
        }
        // below min_events: no split
        let cfg = GrowConfig { min_events: 10, lambda: Some(0.5), ..GrowConfig::default() };
        let tree = DecisionTree::grow(&g, &t, &events, &cfg).unwrap();
        assert_eq!(tree.leaf_count(), 1);
        // max_depth 0: no split either
        let cfg =
            GrowConfig { min_events: 2, max_depth: 0, lambda: Some(0.5), ..GrowConfig::default() };
        let tree = DecisionTree::grow(&g, &t, &events, &cfg).unwrap();
        assert_eq!(tree.leaf_count(), 1);
    }

    #[test]
    fn leaf_distributions_sum_to_one() {
        let g = Grammar::parse_str(G).unwrap();
        let t = BitstringTables::canonical(&g, 4);
        let mut events = Vec::new();
        for i in 0..60 {
            events.push(event(&g, 1 + i % 3, if i % 2 == 0 { "r3" } else { "r4" }));
        }
        let tree = DecisionTree::grow(&g, &t, &events, &GrowConfig::default()).unwrap();
        for p in &tree.probs {
            let s: f64 = p.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&x| x > 0.0), "smoothing must keep all rules possible");
        }
    }

    #[test]
    fn fixed_lambda_interpolates_with_uniform_at_root() {
        let g = Grammar::parse_str(G).unwrap();
        let t = BitstringTables::canonical(&g, 4);
        let events: Vec<_> = (0..5).map(|_| event(&g, 1, "r3")).collect();
        let n_rules = g.rule_names.len() as f64;
        let cfg = GrowConfig { lambda: Some(0.8), ..GrowConfig::default() };
        let tree = DecisionTree::grow(&g, &t, &events, &cfg).unwrap();
        let p = tree.rule_prob(&t, &events[0].hist, g.rule_id("r3").unwrap());
        assert!((p - (0.8 + 0.2 / n_rules)).abs() < 1e-9);
    }

    #[test]
    fn save_load_round_trip() {
        let g = Grammar::parse_str(G).unwrap();
        let t = BitstringTables::canonical(&g, 4);
        let mut events = Vec::new();
        for i in 0..100 {
            let rule = match i % 4 {
                0 => "r1",
                1 => "r2",
                2 => "r3",
                _ => "r4",
            };
            events.push(event(&g, 1 + i % 3, rule));
        }
        let tree = DecisionTree::grow(&g, &t, &events, &GrowConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tree.txt");
        tree.save(&path).unwrap();
        let back = DecisionTree::load(&path, g.rule_names.len()).unwrap();
        assert_eq!(tree.nodes.len(), back.nodes.len());
        for (a, b) in tree.probs.iter().zip(&back.probs) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        // classification agrees on all training histories
        for e in &events {
            assert_eq!(tree.classify(&t, &e.hist), back.classify(&t, &e.hist));
        }
    }
}
