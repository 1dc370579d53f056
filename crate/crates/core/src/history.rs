//! Derivation histories: leftmost derivations, the bounded conditioning
//! tuple each constituent is scored against, and training-event extraction.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::chart::{child_ctx, ParentAttrs, ParentMode, Tree, TreeChild};
use crate::grammar::{Grammar, ProdId, Sym, TermId, TERM_NONE, TERM_TOP, TOP_ID};
use crate::treebank::TreebankError;

/// Bounded history a constituent is conditioned on: attributes of its
/// (immediate or functional) parent plus its child position under the
/// immediate parent's rule (1-based; 0 at the root).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HistoryTuple {
    pub syn_p: usize,
    pub sem_p: usize,
    pub rule_p: usize,
    pub ipc: usize,
    pub h1_p: TermId,
    pub h2_p: Option<TermId>,
}

impl HistoryTuple {
    /// The history of a root constituent: every field maps to the
    /// distinguished top values.
    pub fn top() -> HistoryTuple {
        HistoryTuple {
            syn_p: TOP_ID,
            sem_p: TOP_ID,
            rule_p: TOP_ID,
            ipc: 0,
            h1_p: TERM_TOP,
            h2_p: None,
        }
    }
}

/// Leftmost derivation of a tree as a production sequence. For a context-free
/// derivation this is exactly the preorder traversal.
pub fn leftmost_derivation(tree: &Tree) -> Vec<ProdId> {
    tree.derivation_encoding()
}

/// Replay a production sequence by leftmost rewriting from the first
/// production's left-hand side. Returns the terminal yield, or `None` if some
/// production does not apply to the current leftmost non-terminal.
pub fn replay(grammar: &Grammar, prods: &[ProdId]) -> Option<Vec<TermId>> {
    let first = *prods.first()?;
    let mut form: Vec<Sym> = vec![Sym::Nt(grammar.productions[first].lhs)];
    for &pid in prods {
        let p = &grammar.productions[pid];
        let k = form.iter().position(|s| matches!(s, Sym::Nt(_)))?;
        match form[k] {
            Sym::Nt(nt) if nt == p.lhs => {
                form.splice(k..=k, p.rhs.iter().copied());
            }
            _ => return None,
        }
    }
    let mut out = Vec::with_capacity(form.len());
    for s in form {
        match s {
            Sym::Term(t) => out.push(t),
            Sym::Nt(_) => return None,
        }
    }
    Some(out)
}

/// One constituent observation: its bounded history and its own attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingEvent {
    pub hist: HistoryTuple,
    pub syn: usize,
    pub sem: usize,
    pub rule: usize,
    pub h1: TermId,
    pub h2: Option<TermId>,
    pub prod: ProdId,
}

/// All constituent events of a tree in leftmost order, with histories drawn
/// from the immediate or functional parent. In functional mode, a node whose
/// syntactic type equals its parent's sees through to the nearest ancestor of
/// a different type (or the top of the tree); the child-position field always
/// refers to the immediate parent's rule.
pub fn extract_events(grammar: &Grammar, tree: &Tree, mode: ParentMode) -> Vec<TrainingEvent> {
    let mut out = Vec::new();
    walk(grammar, tree, &HistoryTuple::top(), mode, &mut out);
    out
}

fn walk(
    grammar: &Grammar,
    t: &Tree,
    ctx: &HistoryTuple,
    mode: ParentMode,
    out: &mut Vec<TrainingEvent>,
) {
    let cat = grammar.category(t.nt);
    let rule = grammar.productions[t.prod].rule;
    out.push(TrainingEvent {
        hist: ctx.clone(),
        syn: cat.syn,
        sem: cat.sem,
        rule,
        h1: t.h1,
        h2: t.h2,
        prod: t.prod,
    });
    let own = ParentAttrs { syn: cat.syn, sem: cat.sem, rule, h1: t.h1, h2: t.h2 };
    for (j, c) in t.children.iter().enumerate() {
        if let TreeChild::Node(sub) = c {
            let cctx = child_ctx(grammar, mode, ctx, own, sub.nt, cat.syn, j + 1);
            walk(grammar, sub, &cctx, mode, out);
        }
    }
}

/// For each constituent (preorder index), the preorder index of its
/// functional parent — the nearest ancestor with a different syntactic type —
/// or `None` when every ancestor shares the node's type (the top of the tree
/// acts as the parent then).
pub fn functional_parents(grammar: &Grammar, tree: &Tree) -> Vec<Option<usize>> {
    fn walk(
        grammar: &Grammar,
        t: &Tree,
        ancestors: &mut Vec<(usize, usize)>, // (preorder index, syn)
        next: &mut usize,
        out: &mut Vec<Option<usize>>,
    ) {
        let idx = *next;
        *next += 1;
        let syn = grammar.category(t.nt).syn;
        out.push(ancestors.iter().rev().find(|(_, s)| *s != syn).map(|(i, _)| *i));
        ancestors.push((idx, syn));
        for c in &t.children {
            if let TreeChild::Node(sub) = c {
                walk(grammar, sub, ancestors, next, out);
            }
        }
        ancestors.pop();
    }
    let mut out = Vec::new();
    walk(grammar, tree, &mut Vec::new(), &mut 0, &mut out);
    out
}

fn h2_name<'a>(grammar: &'a Grammar, h2: Option<TermId>) -> &'a str {
    grammar.word(h2.unwrap_or(TERM_NONE))
}

/// Tab-separated event dump, one event per line:
/// syn_p sem_p rule_p ipc h1_p h2_p syn sem rule h1 h2.
pub fn write_events<W: Write>(
    w: &mut W,
    grammar: &Grammar,
    events: &[TrainingEvent],
) -> std::io::Result<()> {
    for e in events {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            grammar.syn_names[e.hist.syn_p],
            grammar.sem_names[e.hist.sem_p],
            grammar.rule_names[e.hist.rule_p],
            e.hist.ipc,
            grammar.word(e.hist.h1_p),
            h2_name(grammar, e.hist.h2_p),
            grammar.syn_names[e.syn],
            grammar.sem_names[e.sem],
            grammar.rule_names[e.rule],
            grammar.word(e.h1),
            h2_name(grammar, e.h2),
        )?;
    }
    Ok(())
}

/// Read an event dump produced by [`write_events`]. The `prod` field is not
/// part of the dump and is restored as the first production with the event's
/// rule id.
pub fn read_events(path: &Path, grammar: &Grammar) -> Result<Vec<TrainingEvent>, TreebankError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (ln, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| TreebankError::Format { line: ln + 1, msg: msg.to_string() };
        if cols.len() != 11 {
            return Err(bad("expected 11 tab-separated fields"));
        }
        let syn = |s: &str| grammar.syn_id(s).ok_or_else(|| bad("unknown syn type"));
        let sem = |s: &str| grammar.sem_id(s).ok_or_else(|| bad("unknown sem type"));
        let rule = |s: &str| grammar.rule_id(s).ok_or_else(|| bad("unknown rule"));
        let term =
            |s: &str| grammar.term_id(s).ok_or_else(|| bad("unknown word"));
        let opt_term = |s: &str| -> Result<Option<TermId>, TreebankError> {
            let t = term(s)?;
            Ok(if t == TERM_NONE { None } else { Some(t) })
        };
        let rid = rule(cols[8])?;
        let prod = grammar
            .productions
            .iter()
            .position(|p| p.rule == rid)
            .ok_or_else(|| bad("rule has no production"))?;
        out.push(TrainingEvent {
            hist: HistoryTuple {
                syn_p: syn(cols[0])?,
                sem_p: sem(cols[1])?,
                rule_p: rule(cols[2])?,
                ipc: cols[3].parse().map_err(|_| bad("bad ipc"))?,
                h1_p: term(cols[4])?,
                h2_p: opt_term(cols[5])?,
            },
            syn: syn(cols[6])?,
            sem: sem(cols[7])?,
            rule: rid,
            h1: term(cols[9])?,
            h2: opt_term(cols[10])?,
            prod,
        });
    }
    Ok(out)
}
