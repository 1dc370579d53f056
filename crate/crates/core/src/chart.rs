//! Packed parse forests: exhaustive parsing, parse counting, enumeration,
//! Viterbi decoding under an arbitrary scoring model, and the most-likely
//! reference-consistent parse.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use num_bigint::BigUint;
use thiserror::Error;

use crate::grammar::{Grammar, NtId, ProdId, Sym, TermId};
use crate::history::HistoryTuple;
use crate::treebank::{collapse_unaries, LabelMap, RefNode, RefTree, Sentence};

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("scoring model returned a non-finite score")]
    NonFiniteScore,
}

/// A parse tree with propagated lexical heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nt: NtId,
    pub prod: ProdId,
    pub span: (usize, usize),
    pub h1: TermId,
    pub h2: Option<TermId>,
    pub children: Vec<TreeChild>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeChild {
    Node(Box<Tree>),
    Leaf { word: TermId, pos: usize },
}

impl Tree {
    /// Assemble a node, propagating H1/H2 from the production's designated
    /// children (the primary head of the designated child, or the terminal
    /// itself).
    pub fn assemble(grammar: &Grammar, nt: NtId, prod: ProdId, span: (usize, usize), children: Vec<TreeChild>) -> Tree {
        let p = &grammar.productions[prod];
        let head_of = |c: &TreeChild| match c {
            TreeChild::Node(t) => t.h1,
            TreeChild::Leaf { word, .. } => *word,
        };
        let h1 = head_of(&children[p.h1]);
        let h2 = p.h2.map(|i| head_of(&children[i]));
        Tree { nt, prod, span, h1, h2, children }
    }

    pub fn constituent_children(&self) -> impl Iterator<Item = &Tree> {
        self.children.iter().filter_map(|c| match c {
            TreeChild::Node(t) => Some(t.as_ref()),
            _ => None,
        })
    }

    pub fn leaf_terms(&self) -> Vec<TermId> {
        let mut out = Vec::new();
        fn walk(t: &Tree, out: &mut Vec<TermId>) {
            for c in &t.children {
                match c {
                    TreeChild::Node(sub) => walk(sub, out),
                    TreeChild::Leaf { word, .. } => out.push(*word),
                }
            }
        }
        walk(self, &mut out);
        out
    }

    /// Canonical derivation encoding: production ids in leftmost (preorder)
    /// expansion order. Used for deterministic tie-breaking.
    pub fn derivation_encoding(&self) -> Vec<ProdId> {
        let mut out = Vec::new();
        fn walk(t: &Tree, out: &mut Vec<ProdId>) {
            out.push(t.prod);
            for c in &t.children {
                if let TreeChild::Node(sub) = c {
                    walk(sub, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn internal_node_count(&self) -> usize {
        1 + self.constituent_children().map(|c| c.internal_node_count()).sum::<usize>()
    }

    /// One-line bracketed form, leaves tagged with their lexical NT label.
    pub fn to_bracketed(&self, grammar: &Grammar) -> String {
        let mut out = String::new();
        fn walk(t: &Tree, grammar: &Grammar, out: &mut String) {
            out.push('[');
            out.push_str(grammar.nt_label(t.nt));
            for c in &t.children {
                out.push(' ');
                match c {
                    TreeChild::Node(sub) => walk(sub, grammar, out),
                    TreeChild::Leaf { word, .. } => {
                        out.push_str(grammar.word(*word));
                        out.push('_');
                        out.push_str(grammar.nt_label(t.nt));
                    }
                }
            }
            out.push(' ');
            out.push_str(grammar.nt_label(t.nt));
            out.push(']');
        }
        walk(self, grammar, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Child {
    Item(usize),
    Word(usize),
}

#[derive(Debug, Clone)]
pub struct Alt {
    pub prod: ProdId,
    pub children: Vec<Child>,
}

#[derive(Debug, Clone)]
pub struct Item {
    pub nt: NtId,
    pub span: (usize, usize),
    pub alts: Vec<Alt>,
}

/// And/or graph over (span, non-terminal) items. Alternatives are
/// (production, children) pairs; complete derivations from a root yield the
/// token sequence.
#[derive(Debug, Clone)]
pub struct Forest {
    pub tokens: Vec<TermId>,
    pub items: Vec<Item>,
    pub roots: Vec<usize>,
}

impl Forest {
    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Item indices with children before parents.
    pub fn topo_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.items.len());
        let mut state = vec![0u8; self.items.len()];
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for start in 0..self.items.len() {
            if state[start] != 0 {
                continue;
            }
            stack.push((start, 0));
            state[start] = 1;
            while let Some(&mut (v, ref mut ai)) = stack.last_mut() {
                let mut advanced = false;
                'outer: while *ai < count_children(&self.items[v]) {
                    let c = nth_child(&self.items[v], *ai);
                    *ai += 1;
                    if let Child::Item(ci) = c {
                        if state[ci] == 0 {
                            state[ci] = 1;
                            stack.push((ci, 0));
                            advanced = true;
                            break 'outer;
                        }
                    }
                }
                if !advanced {
                    state[v] = 2;
                    order.push(v);
                    stack.pop();
                }
            }
        }
        order
    }
}

fn count_children(item: &Item) -> usize {
    item.alts.iter().map(|a| a.children.len()).sum()
}

fn nth_child(item: &Item, mut n: usize) -> Child {
    for a in &item.alts {
        if n < a.children.len() {
            return a.children[n];
        }
        n -= a.children.len();
    }
    unreachable!()
}

/// Exhaustive parsing: the forest of all complete parses rooted in the start
/// mnemonic. Unparseable sentences yield an empty forest.
pub fn parse_all(sentence: &Sentence, grammar: &Grammar) -> Forest {
    let tokens: Vec<TermId> = sentence.tokens.iter().map(|w| grammar.term_or_unk(w)).collect();
    let n = tokens.len();
    let mut items: Vec<Item> = Vec::new();
    let mut index: HashMap<(NtId, (usize, usize)), usize> = HashMap::new();

    for len in 1..=n {
        for i in 0..=(n - len) {
            let j = i + len;
            // non-unit productions (unit NT rules handled in a second pass)
            for (pid, p) in grammar.productions.iter().enumerate() {
                if p.rhs.len() == 1 && matches!(p.rhs[0], Sym::Nt(_)) {
                    continue;
                }
                let mut combos = Vec::new();
                match_rhs(&p.rhs, 0, i, j, &tokens, &index, &mut Vec::new(), &mut combos);
                for children in combos {
                    push_alt(&mut items, &mut index, p.lhs, (i, j), Alt { prod: pid, children });
                }
            }
            // unit productions in child-first order over the unary DAG
            for &lhs in &grammar.unary_order {
                for &pid in &grammar.prods_by_lhs[lhs] {
                    let p = &grammar.productions[pid];
                    if p.rhs.len() != 1 {
                        continue;
                    }
                    if let Sym::Nt(a) = p.rhs[0] {
                        if let Some(&ci) = index.get(&(a, (i, j))) {
                            push_alt(
                                &mut items,
                                &mut index,
                                lhs,
                                (i, j),
                                Alt { prod: pid, children: vec![Child::Item(ci)] },
                            );
                        }
                    }
                }
            }
        }
    }

    let start_members: BTreeSet<NtId> =
        grammar.mnemonics[grammar.start].members.iter().copied().collect();
    let mut roots = Vec::new();
    for &nt in &start_members {
        if let Some(&it) = index.get(&(nt, (0, n))) {
            roots.push(it);
        }
    }
    if n == 0 {
        roots.clear();
    }
    Forest { tokens, items, roots }
}

fn push_alt(
    items: &mut Vec<Item>,
    index: &mut HashMap<(NtId, (usize, usize)), usize>,
    nt: NtId,
    span: (usize, usize),
    alt: Alt,
) -> usize {
    let idx = *index.entry((nt, span)).or_insert_with(|| {
        items.push(Item { nt, span, alts: Vec::new() });
        items.len() - 1
    });
    items[idx].alts.push(alt);
    idx
}

fn match_rhs(
    rhs: &[Sym],
    k: usize,
    pos: usize,
    end: usize,
    tokens: &[TermId],
    index: &HashMap<(NtId, (usize, usize)), usize>,
    acc: &mut Vec<Child>,
    out: &mut Vec<Vec<Child>>,
) {
    if k == rhs.len() {
        if pos == end {
            out.push(acc.clone());
        }
        return;
    }
    match rhs[k] {
        Sym::Term(t) => {
            if pos < end && tokens[pos] == t {
                acc.push(Child::Word(pos));
                match_rhs(rhs, k + 1, pos + 1, end, tokens, index, acc, out);
                acc.pop();
            }
        }
        Sym::Nt(a) => {
            for mid in (pos + 1)..=end {
                if let Some(&ci) = index.get(&(a, (pos, mid))) {
                    acc.push(Child::Item(ci));
                    match_rhs(rhs, k + 1, mid, end, tokens, index, acc, out);
                    acc.pop();
                }
            }
        }
    }
}

/// Exact number of distinct complete derivations, by sum-product over the
/// and/or graph.
pub fn count_parses(forest: &Forest) -> BigUint {
    let mut memo: Vec<Option<BigUint>> = vec![None; forest.items.len()];
    for idx in forest.topo_order() {
        let mut total = BigUint::from(0u32);
        for alt in &forest.items[idx].alts {
            let mut prod = BigUint::from(1u32);
            for c in &alt.children {
                if let Child::Item(ci) = c {
                    prod *= memo[*ci].as_ref().unwrap();
                }
            }
            total += prod;
        }
        memo[idx] = Some(total);
    }
    let mut total = BigUint::from(0u32);
    for &r in &forest.roots {
        total += memo[r].as_ref().unwrap();
    }
    total
}

/// Distinct complete parses in a deterministic order, at most `limit`.
pub fn enumerate_parses(forest: &Forest, grammar: &Grammar, limit: usize) -> Vec<Tree> {
    let mut out = Vec::new();
    for &r in &forest.roots {
        if out.len() >= limit {
            break;
        }
        enum_item(forest, grammar, r, limit, &mut out);
    }
    out
}

fn enum_item(forest: &Forest, grammar: &Grammar, idx: usize, limit: usize, out: &mut Vec<Tree>) {
    let item = &forest.items[idx];
    for alt in &item.alts {
        if out.len() >= limit {
            return;
        }
        let mut partial: Vec<Vec<TreeChild>> = vec![Vec::new()];
        for c in &alt.children {
            let mut next = Vec::new();
            match c {
                Child::Word(pos) => {
                    for mut p in partial {
                        p.push(TreeChild::Leaf { word: forest.tokens[*pos], pos: *pos });
                        next.push(p);
                    }
                }
                Child::Item(ci) => {
                    let mut subs = Vec::new();
                    enum_item(forest, grammar, *ci, usize::MAX, &mut subs);
                    for p in partial {
                        for s in &subs {
                            let mut p2 = p.clone();
                            p2.push(TreeChild::Node(Box::new(s.clone())));
                            next.push(p2);
                        }
                    }
                }
            }
            partial = next;
        }
        for children in partial {
            if out.len() >= limit {
                return;
            }
            out.push(Tree::assemble(grammar, item.nt, alt.prod, item.span, children));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParentMode {
    Immediate,
    Functional,
}

/// A constituent as seen by a scoring model: its production, label, heads and
/// conditioning history.
pub struct ScoredConstituent<'a> {
    pub prod: ProdId,
    pub nt: NtId,
    pub h1: TermId,
    pub h2: Option<TermId>,
    pub ctx: &'a HistoryTuple,
}

/// Log-probability of one constituent given its bounded derivation history.
pub trait ScoringModel {
    fn parent_mode(&self) -> ParentMode {
        ParentMode::Immediate
    }
    /// Context-free models let the decoder collapse history states.
    fn context_free(&self) -> bool {
        false
    }
    fn log_prob(&self, grammar: &Grammar, c: &ScoredConstituent) -> f64;
}

/// Attributes a parent exposes to its children's histories.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ParentAttrs {
    pub(crate) syn: usize,
    pub(crate) sem: usize,
    pub(crate) rule: usize,
    pub(crate) h1: TermId,
    pub(crate) h2: Option<TermId>,
}

impl ParentAttrs {
    pub(crate) fn from_ctx(ctx: &HistoryTuple) -> ParentAttrs {
        ParentAttrs { syn: ctx.syn_p, sem: ctx.sem_p, rule: ctx.rule_p, h1: ctx.h1_p, h2: ctx.h2_p }
    }

    pub(crate) fn tuple(&self, ipc: usize) -> HistoryTuple {
        HistoryTuple {
            syn_p: self.syn,
            sem_p: self.sem,
            rule_p: self.rule,
            ipc,
            h1_p: self.h1,
            h2_p: self.h2,
        }
    }
}

pub(crate) fn child_ctx(
    grammar: &Grammar,
    mode: ParentMode,
    node_ctx: &HistoryTuple,
    own: ParentAttrs,
    child_nt: NtId,
    node_syn: usize,
    ipc: usize,
) -> HistoryTuple {
    match mode {
        ParentMode::Immediate => own.tuple(ipc),
        ParentMode::Functional => {
            if grammar.category(child_nt).syn != node_syn {
                own.tuple(ipc)
            } else {
                // same syntactic type: see through to the functional parent
                ParentAttrs::from_ctx(node_ctx).tuple(ipc)
            }
        }
    }
}

/// Total model log-probability of a tree: the sum over all constituents of
/// their history-conditioned scores, in leftmost order.
pub fn tree_logprob(grammar: &Grammar, model: &dyn ScoringModel, tree: &Tree) -> f64 {
    fn walk(grammar: &Grammar, model: &dyn ScoringModel, t: &Tree, ctx: &HistoryTuple) -> f64 {
        let mut total = model.log_prob(
            grammar,
            &ScoredConstituent { prod: t.prod, nt: t.nt, h1: t.h1, h2: t.h2, ctx },
        );
        let cat = grammar.category(t.nt);
        let own = ParentAttrs {
            syn: cat.syn,
            sem: cat.sem,
            rule: grammar.productions[t.prod].rule,
            h1: t.h1,
            h2: t.h2,
        };
        for (j, c) in t.children.iter().enumerate() {
            if let TreeChild::Node(sub) = c {
                let cctx =
                    child_ctx(grammar, model.parent_mode(), ctx, own, sub.nt, cat.syn, j + 1);
                total += walk(grammar, model, sub, &cctx);
            }
        }
        total
    }
    walk(grammar, model, tree, &HistoryTuple::top())
}

#[derive(Clone)]
struct Best {
    score: f64,
    enc: Vec<ProdId>,
    tree: Tree,
}

fn better(a: &Best, b: &Best) -> bool {
    a.score > b.score || (a.score == b.score && a.enc < b.enc)
}

type OutcomeMap = BTreeMap<TermId, Best>;

struct Decoder<'a> {
    forest: &'a Forest,
    grammar: &'a Grammar,
    model: &'a dyn ScoringModel,
    head_values: Vec<Option<Rc<BTreeSet<TermId>>>>,
    memo: HashMap<(usize, HistoryTuple), Rc<OutcomeMap>>,
}

impl<'a> Decoder<'a> {
    fn new(forest: &'a Forest, grammar: &'a Grammar, model: &'a dyn ScoringModel) -> Decoder<'a> {
        Decoder {
            forest,
            grammar,
            model,
            head_values: vec![None; forest.items.len()],
            memo: HashMap::new(),
        }
    }

    /// All primary-head values a subtree rooted at this item can take.
    fn head_values(&mut self, idx: usize) -> Rc<BTreeSet<TermId>> {
        if let Some(v) = &self.head_values[idx] {
            return Rc::clone(v);
        }
        let mut set = BTreeSet::new();
        let alts = self.forest.items[idx].alts.clone();
        for alt in &alts {
            let p = &self.grammar.productions[alt.prod];
            match alt.children[p.h1] {
                Child::Word(pos) => {
                    set.insert(self.forest.tokens[pos]);
                }
                Child::Item(ci) => {
                    let sub = self.head_values(ci);
                    set.extend(sub.iter().copied());
                }
            }
        }
        let rc = Rc::new(set);
        self.head_values[idx] = Some(Rc::clone(&rc));
        rc
    }

    fn solve(&mut self, idx: usize, ctx: &HistoryTuple) -> Result<Rc<OutcomeMap>, ChartError> {
        let key_ctx = if self.model.context_free() { HistoryTuple::top() } else { ctx.clone() };
        if let Some(m) = self.memo.get(&(idx, key_ctx.clone())) {
            return Ok(Rc::clone(m));
        }
        let item = self.forest.items[idx].clone();
        let cat = self.grammar.category(item.nt);
        let mut result: OutcomeMap = BTreeMap::new();
        for alt in &item.alts {
            let p = self.grammar.productions[alt.prod].clone();
            let a_candidates: Vec<TermId> = match alt.children[p.h1] {
                Child::Word(pos) => vec![self.forest.tokens[pos]],
                Child::Item(ci) => self.head_values(ci).iter().copied().collect(),
            };
            let b_candidates: Vec<Option<TermId>> = match p.h2 {
                None => vec![None],
                Some(i2) => match alt.children[i2] {
                    Child::Word(pos) => vec![Some(self.forest.tokens[pos])],
                    Child::Item(ci) => {
                        self.head_values(ci).iter().map(|&t| Some(t)).collect()
                    }
                },
            };
            for &a in &a_candidates {
                for &b in &b_candidates {
                    if p.h2 == Some(p.h1) && b != Some(a) {
                        continue;
                    }
                    let own_score = self.model.log_prob(
                        self.grammar,
                        &ScoredConstituent { prod: alt.prod, nt: item.nt, h1: a, h2: b, ctx },
                    );
                    if own_score.is_nan() || own_score == f64::INFINITY {
                        return Err(ChartError::NonFiniteScore);
                    }
                    if own_score == f64::NEG_INFINITY {
                        continue;
                    }
                    let own = ParentAttrs {
                        syn: cat.syn,
                        sem: cat.sem,
                        rule: p.rule,
                        h1: a,
                        h2: b,
                    };
                    let mut score = own_score;
                    let mut kids: Vec<TreeChild> = Vec::with_capacity(alt.children.len());
                    let mut ok = true;
                    for (j, c) in alt.children.iter().enumerate() {
                        match *c {
                            Child::Word(pos) => kids.push(TreeChild::Leaf {
                                word: self.forest.tokens[pos],
                                pos,
                            }),
                            Child::Item(ci) => {
                                let cnt = self.forest.items[ci].nt;
                                let cctx = child_ctx(
                                    self.grammar,
                                    self.model.parent_mode(),
                                    ctx,
                                    own,
                                    cnt,
                                    cat.syn,
                                    j + 1,
                                );
                                let cmap = self.solve(ci, &cctx)?;
                                let pick = if j == p.h1 {
                                    cmap.get(&a)
                                } else if Some(j) == p.h2 {
                                    b.and_then(|bb| cmap.get(&bb))
                                } else {
                                    cmap.values().fold(None, |acc: Option<&Best>, x| match acc {
                                        Some(cur) if better(cur, x) => Some(cur),
                                        _ => Some(x),
                                    })
                                };
                                match pick {
                                    Some(best) => {
                                        score += best.score;
                                        kids.push(TreeChild::Node(Box::new(best.tree.clone())));
                                    }
                                    None => {
                                        ok = false;
                                        break;
                                    }
                                }
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let tree =
                        Tree::assemble(self.grammar, item.nt, alt.prod, item.span, kids);
                    let cand = Best { score, enc: tree.derivation_encoding(), tree };
                    match result.get(&a) {
                        Some(cur) if better(cur, &cand) => {}
                        _ => {
                            result.insert(a, cand);
                        }
                    }
                }
            }
        }
        let rc = Rc::new(result);
        self.memo.insert((idx, key_ctx), Rc::clone(&rc));
        Ok(rc)
    }
}

/// The most likely complete parse, or `None` on an empty forest. Ties are
/// broken by the lexicographically smallest derivation encoding.
pub fn viterbi(
    forest: &Forest,
    grammar: &Grammar,
    model: &dyn ScoringModel,
) -> Result<Option<(Tree, f64)>, ChartError> {
    let mut dec = Decoder::new(forest, grammar, model);
    let top = HistoryTuple::top();
    let mut best: Option<Best> = None;
    for &r in &forest.roots {
        let m = dec.solve(r, &top)?;
        for cand in m.values() {
            match &best {
                Some(cur) if better(cur, cand) => {}
                _ => best = Some(cand.clone()),
            }
        }
    }
    Ok(best.map(|b| (b.tree, b.score)))
}

/// Forest of exactly the parses that are labeled-consistent with the
/// reference tree under the label map: the candidate's collapsed constituent
/// structure must equal the reference's, with grammar unary chains free to
/// refine each reference constituent in place.
pub fn consistent_subforest(
    grammar: &Grammar,
    tokens: &[TermId],
    reference: &RefTree,
    map: &LabelMap,
) -> Forest {
    let collapsed = collapse_unaries(reference);
    let mut items: Vec<Item> = Vec::new();
    let top_items = build_node(grammar, tokens, &collapsed, map, &mut items);
    let start_members: BTreeSet<NtId> =
        grammar.mnemonics[grammar.start].members.iter().copied().collect();
    let mut roots = Vec::new();
    for (&nt, &it) in top_items.iter() {
        if start_members.contains(&nt)
            && map.apply(&grammar.mnemonic_of(nt).id) == collapsed.label
        {
            roots.push(it);
        }
    }
    roots.sort_unstable();
    Forest { tokens: tokens.to_vec(), items, roots }
}

fn build_node(
    grammar: &Grammar,
    tokens: &[TermId],
    u: &RefTree,
    map: &LabelMap,
    items: &mut Vec<Item>,
) -> BTreeMap<NtId, usize> {
    // child sub-results, positionally aligned with u.children
    let mut child_maps: Vec<Option<BTreeMap<NtId, usize>>> = Vec::new();
    for c in &u.children {
        match c {
            RefNode::Constituent(sub) => {
                child_maps.push(Some(build_node(grammar, tokens, sub, map, items)));
            }
            RefNode::Leaf { .. } => child_maps.push(None),
        }
    }
    // token position of each child
    let mut positions = Vec::with_capacity(u.children.len());
    let mut pos = u.span.0;
    for c in &u.children {
        positions.push(pos);
        pos += match c {
            RefNode::Constituent(sub) => sub.span.1 - sub.span.0,
            RefNode::Leaf { .. } => 1,
        };
    }

    let mut at_node: BTreeMap<NtId, usize> = BTreeMap::new();
    let k = u.children.len();
    for (pid, p) in grammar.productions.iter().enumerate() {
        if p.rhs.len() != k {
            continue;
        }
        if k == 1 && matches!(p.rhs[0], Sym::Nt(_)) {
            continue; // unit rules handled by the chain pass
        }
        let mut children = Vec::with_capacity(k);
        let mut ok = true;
        for (j, sym) in p.rhs.iter().enumerate() {
            match (*sym, &u.children[j]) {
                (Sym::Term(t), RefNode::Leaf { word, .. }) => {
                    if positions[j] < tokens.len()
                        && tokens[positions[j]] == t
                        && grammar.word(t) == word
                    {
                        children.push(Child::Word(positions[j]));
                    } else {
                        ok = false;
                        break;
                    }
                }
                (Sym::Nt(a), RefNode::Constituent(sub)) => {
                    let eligible = map.apply(&grammar.mnemonic_of(a).id) == sub.label;
                    match child_maps[j].as_ref().and_then(|m| m.get(&a)) {
                        Some(&ci) if eligible => children.push(Child::Item(ci)),
                        _ => {
                            ok = false;
                            break;
                        }
                    }
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let idx = *at_node.entry(p.lhs).or_insert_with(|| {
                items.push(Item { nt: p.lhs, span: u.span, alts: Vec::new() });
                items.len() - 1
            });
            items[idx].alts.push(Alt { prod: pid, children });
        }
    }
    // unary chains within this reference constituent, children first
    for &lhs in &grammar.unary_order {
        for &pid in &grammar.prods_by_lhs[lhs] {
            let p = &grammar.productions[pid];
            if p.rhs.len() != 1 {
                continue;
            }
            if let Sym::Nt(a) = p.rhs[0] {
                if let Some(&ci) = at_node.get(&a) {
                    let idx = *at_node.entry(lhs).or_insert_with(|| {
                        items.push(Item { nt: lhs, span: u.span, alts: Vec::new() });
                        items.len() - 1
                    });
                    items[idx].alts.push(Alt { prod: pid, children: vec![Child::Item(ci)] });
                }
            }
        }
    }
    at_node
}

/// Most likely parse among those labeled-consistent with the reference;
/// `None` when no consistent parse exists.
pub fn best_consistent(
    forest: &Forest,
    grammar: &Grammar,
    model: &dyn ScoringModel,
    reference: &RefTree,
    map: &LabelMap,
) -> Result<Option<(Tree, f64)>, ChartError> {
    let sub = consistent_subforest(grammar, &forest.tokens, reference, map);
    viterbi(&sub, grammar, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Grammar;
    use crate::oracle;
    use crate::treebank::{consistent, parse_corpus, LabelMap, Sentence};

    pub const FIG1: &str = "\
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

    fn sentence(s: &str) -> Sentence {
        Sentence { tokens: s.split_whitespace().map(|w| w.to_string()).collect() }
    }

    /// Context-free model with explicit per-production probabilities.
    pub struct FixedProbs(pub Vec<f64>);
    impl ScoringModel for FixedProbs {
        fn context_free(&self) -> bool {
            true
        }
        fn log_prob(&self, _g: &Grammar, c: &ScoredConstituent) -> f64 {
            self.0[c.prod].ln()
        }
    }

    #[test]
    fn aabb_has_one_parse() {
        let g = Grammar::parse_str(FIG1).unwrap();
        let f = parse_all(&sentence("a a b b"), &g);
        assert_eq!(count_parses(&f), 1u32.into());
        let trees = enumerate_parses(&f, &g, 10);
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].leaf_terms().len(), 4);
    }

    #[test]
    fn ab_parses_via_r2() {
        let g = Grammar::parse_str(FIG1).unwrap();
        let f = parse_all(&sentence("a b"), &g);
        let trees = enumerate_parses(&f, &g, 10);
        assert_eq!(trees.len(), 1);
        assert_eq!(g.rule_names[g.productions[trees[0].prod].rule], "r2");
    }

    #[test]
    fn unparseable_yields_empty_forest() {
        let g = Grammar::parse_str(FIG1).unwrap();
        let f = parse_all(&sentence("a b a"), &g);
        assert!(f.is_empty());
        assert_eq!(count_parses(&f), 0u32.into());
        assert!(enumerate_parses(&f, &g, 10).is_empty());
        // out-of-vocabulary token
        let f = parse_all(&sentence("a q"), &g);
        assert!(f.is_empty());
    }

    const CATALAN: &str = "\
#syn
x
#sem
m
#start X
#rules
r1 : X[x,m] -> X X
r2 : X[x,m] -> a
";

    #[test]
    fn catalan_counts() {
        let g = Grammar::parse_str(CATALAN).unwrap();
        let f = parse_all(&sentence("a a a a a"), &g);
        assert_eq!(count_parses(&f), 14u32.into()); // C4
        let trees = enumerate_parses(&f, &g, usize::MAX);
        assert_eq!(trees.len(), 14);
        // all distinct
        for i in 0..trees.len() {
            for j in (i + 1)..trees.len() {
                assert_ne!(trees[i], trees[j]);
            }
        }
    }

    #[test]
    fn enumerate_respects_limit() {
        let g = Grammar::parse_str(CATALAN).unwrap();
        let f = parse_all(&sentence("a a a a a"), &g);
        assert_eq!(enumerate_parses(&f, &g, 0).len(), 0);
        assert_eq!(enumerate_parses(&f, &g, 5).len(), 5);
        assert_eq!(enumerate_parses(&f, &g, 100).len(), 14);
    }

    // Ambiguous PP-attachment style fixture: 2 parses of a 5-token sentence.
    pub const AMBIG: &str = "\
#syn
s v n p
#sem
x
#start S
#rules
s1 : S[s,x] -> v N ; h1=2
s2 : S[s,x] -> v N P ; h1=2
n1 : N[n,x] -> d n ; h1=2
n2 : N[n,x] -> d n P ; h1=2
p1 : P[p,x] -> p N ; h1=2
";

    #[test]
    fn ambiguous_fixture_matches_brute_force() {
        let g = Grammar::parse_str(AMBIG).unwrap();
        let s = sentence("v d n p d n");
        let f = parse_all(&s, &g);
        assert_eq!(count_parses(&f), 2u32.into());
        let oracle_trees = oracle::all_trees(&g, &s, 6);
        assert_eq!(oracle_trees.len(), 2);
        let mut enumerated = enumerate_parses(&f, &g, usize::MAX);
        let mut expected = oracle_trees;
        let key = |t: &Tree| t.derivation_encoding();
        enumerated.sort_by_key(key);
        expected.sort_by_key(key);
        assert_eq!(enumerated, expected);
    }

    #[test]
    fn viterbi_two_parse_probabilities() {
        // VP attachment: s2,n1,p1,n1 = 0.6*0.5*1.0*0.5 = 0.15
        // NP attachment: s1,n2,p1,n1 = 0.4*0.9*1.0*0.5 = 0.18
        let g = Grammar::parse_str(AMBIG).unwrap();
        let s = sentence("v d n p d n");
        let f = parse_all(&s, &g);
        let mut probs = vec![1.0; g.productions.len()];
        let find = |name: &str| {
            g.productions.iter().position(|p| g.rule_names[p.rule] == name).unwrap()
        };
        probs[find("s1")] = 0.4;
        probs[find("s2")] = 0.6;
        probs[find("n1")] = 0.5;
        probs[find("n2")] = 0.9;
        let model = FixedProbs(probs);
        let (tree, score) = viterbi(&f, &g, &model).unwrap().unwrap();
        assert!((score - (0.4f64 * 0.9 * 0.5).ln()).abs() < 1e-12);
        assert_eq!(g.rule_names[g.productions[tree.prod].rule], "s1");
    }

    #[test]
    fn viterbi_equals_enumeration_max() {
        let g = Grammar::parse_str(AMBIG).unwrap();
        let s = sentence("v d n p d n");
        let f = parse_all(&s, &g);
        let model = FixedProbs(vec![0.3; g.productions.len()]);
        let (_, score) = viterbi(&f, &g, &model).unwrap().unwrap();
        let best = enumerate_parses(&f, &g, usize::MAX)
            .iter()
            .map(|t| tree_logprob(&g, &model, t))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((score - best).abs() < 1e-9);
    }

    #[test]
    fn head_propagation() {
        let g = Grammar::parse_str(AMBIG).unwrap();
        let s = sentence("v d n p d n");
        let f = parse_all(&s, &g);
        for t in enumerate_parses(&f, &g, usize::MAX) {
            check_heads(&g, &t);
        }
    }

    fn check_heads(g: &Grammar, t: &Tree) {
        let p = &g.productions[t.prod];
        let head_of = |c: &TreeChild| match c {
            TreeChild::Node(n) => n.h1,
            TreeChild::Leaf { word, .. } => *word,
        };
        assert_eq!(t.h1, head_of(&t.children[p.h1]));
        assert_eq!(t.h2, p.h2.map(|i| head_of(&t.children[i])));
        for c in t.constituent_children() {
            check_heads(g, c);
        }
    }

    #[test]
    fn pcfg_argmax_invariant_under_monotone_transform() {
        let g = Grammar::parse_str(AMBIG).unwrap();
        let s = sentence("v d n p d n");
        let f = parse_all(&s, &g);
        let mut probs = vec![0.5; g.productions.len()];
        probs[0] = 0.4;
        probs[2] = 0.7;
        let base = FixedProbs(probs.clone());
        // squaring all probabilities doubles all tree log-scores: monotone
        let squared = FixedProbs(probs.iter().map(|p| p * p).collect());
        let t1 = viterbi(&f, &g, &base).unwrap().unwrap().0;
        let t2 = viterbi(&f, &g, &squared).unwrap().unwrap().0;
        assert_eq!(t1, t2);
    }

    #[test]
    fn best_consistent_prefers_consistent_parse() {
        let g = Grammar::parse_str(AMBIG).unwrap();
        let s = sentence("v d n p d n");
        let f = parse_all(&s, &g);
        // reference = NP attachment (lower-probability parse under this model)
        let reference = parse_corpus("[S v_v [N d_d n_n [P p_p [N d_d n_n N] P] N] S]")
            .unwrap()
            .remove(0)
            .1;
        let map = LabelMap::identity();
        let mut probs = vec![1.0; g.productions.len()];
        let find = |name: &str| {
            g.productions.iter().position(|p| g.rule_names[p.rule] == name).unwrap()
        };
        probs[find("s2")] = 0.9; // VP attachment strongly preferred
        probs[find("s1")] = 0.1;
        let model = FixedProbs(probs);
        let (vt, _) = viterbi(&f, &g, &model).unwrap().unwrap();
        assert!(!consistent(&vt, &g, &reference, &map, true).unwrap());
        let (bc, _) = best_consistent(&f, &g, &model, &reference, &map).unwrap().unwrap();
        assert!(consistent(&bc, &g, &reference, &map, true).unwrap());
        // oracle: enumerate + filter gives the same tree
        let filtered: Vec<Tree> = enumerate_parses(&f, &g, usize::MAX)
            .into_iter()
            .filter(|t| consistent(t, &g, &reference, &map, true).unwrap())
            .collect();
        assert_eq!(filtered.len(), 1);
        assert_eq!(bc, filtered[0]);
    }

    #[test]
    fn best_consistent_none_when_reference_unreachable() {
        let g = Grammar::parse_str(AMBIG).unwrap();
        let s = sentence("v d n p d n");
        let f = parse_all(&s, &g);
        // flat structure the grammar cannot produce
        let reference = parse_corpus("[S v_v d_d n_n p_p d_d n_n S]").unwrap().remove(0).1;
        let model = FixedProbs(vec![0.5; g.productions.len()]);
        let r = best_consistent(&f, &g, &model, &reference, &LabelMap::identity()).unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn best_consistent_unique_parse() {
        let g = Grammar::parse_str(FIG1).unwrap();
        let s = sentence("a a b b");
        let f = parse_all(&s, &g);
        let reference = parse_corpus(
            "[S [A a_t A] [S [A a_t A] [B b_t B] S] [B b_t B] S]",
        )
        .unwrap()
        .remove(0)
        .1;
        let model = FixedProbs(vec![0.5; g.productions.len()]);
        let (t, _) = best_consistent(&f, &g, &model, &reference, &LabelMap::identity())
            .unwrap()
            .unwrap();
        assert_eq!(t, enumerate_parses(&f, &g, 1).remove(0));
    }

    #[test]
    fn unary_chains_in_subforest() {
        // grammar with a unit rule NP2 -> NP1; reference has one collapsed NP
        let src = "\
#syn
s np n
#sem
x
#start S
#rules
s1 : S[s,x] -> NP2 v ; h1=1
u1 : NP2[np,x] -> NP1
n1 : NP1[np,x] -> n
";
        let g = Grammar::parse_str(src).unwrap();
        let s = sentence("n v");
        let f = parse_all(&s, &g);
        assert_eq!(count_parses(&f), 1u32.into());
        // reference writes only the collapsed NP bracket, labeled as the top of the chain
        let reference = parse_corpus("[S [NP2 n_t NP2] v_v S]").unwrap().remove(0).1;
        let model = FixedProbs(vec![1.0; g.productions.len()]);
        let r = best_consistent(&f, &g, &model, &reference, &LabelMap::identity()).unwrap();
        assert!(r.is_some());
        let t = r.unwrap().0;
        assert!(consistent(&t, &g, &reference, &LabelMap::identity(), true).unwrap());
    }
}
