//! Probabilistic context-free model over mnemonic productions: relative
//! frequency estimation from best-consistent parses and treebank-constrained
//! inside-outside re-estimation.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::chart::{
    best_consistent, consistent_subforest, parse_all, Child, Forest, ScoredConstituent,
    ScoringModel, Tree,
};
use crate::grammar::{Grammar, GrammarError, MSym, MpId};
use crate::treebank::{LabelMap, RefTree, Sentence};

/// P-CFG: one probability per mnemonic production, normalized over each
/// left-hand-side mnemonic.
#[derive(Debug, Clone, PartialEq)]
pub struct PcfgModel {
    pub probs: Vec<f64>,
}

impl PcfgModel {
    pub fn uniform(grammar: &Grammar) -> PcfgModel {
        let mut probs = vec![0.0; grammar.mprods.len()];
        for group in &grammar.mprods_by_lhs {
            for &mp in group {
                probs[mp] = 1.0 / group.len() as f64;
            }
        }
        PcfgModel { probs }
    }

    /// Normalize per-mnemonic counts with additive smoothing `alpha`.
    pub fn from_counts(grammar: &Grammar, counts: &[f64], alpha: f64) -> PcfgModel {
        let mut probs = vec![0.0; grammar.mprods.len()];
        for group in &grammar.mprods_by_lhs {
            let total: f64 =
                group.iter().map(|&mp| counts[mp] + alpha).sum();
            for &mp in group {
                probs[mp] = if total > 0.0 {
                    (counts[mp] + alpha) / total
                } else {
                    1.0 / group.len() as f64
                };
            }
        }
        PcfgModel { probs }
    }

    pub fn prob(&self, mp: MpId) -> f64 {
        self.probs[mp]
    }

    pub fn save(&self, path: &Path, grammar: &Grammar) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        for (mp, p) in grammar.mprods.iter().enumerate() {
            let rhs: Vec<&str> = p
                .rhs
                .iter()
                .map(|s| match s {
                    MSym::Mnem(m) => grammar.mnemonics[*m].id.as_str(),
                    MSym::Term(t) => grammar.word(*t),
                })
                .collect();
            writeln!(
                f,
                "{} {} -> {} : {:.12}",
                grammar.rule_names[p.rule],
                grammar.mnemonics[p.lhs].id,
                rhs.join(" "),
                self.probs[mp],
            )?;
        }
        Ok(())
    }

    pub fn load(path: &Path, grammar: &Grammar) -> Result<PcfgModel, GrammarError> {
        let f = std::fs::File::open(path)?;
        let mut probs = vec![0.0; grammar.mprods.len()];
        for (ln, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| GrammarError::Syntax { line: ln + 1, msg: msg.to_string() };
            let (head, prob) =
                line.rsplit_once(':').ok_or_else(|| bad("missing `: prob`"))?;
            let prob: f64 = prob.trim().parse().map_err(|_| bad("bad probability"))?;
            let mut toks = head.split_whitespace();
            let rule = toks.next().ok_or_else(|| bad("missing rule id"))?;
            let lhs = toks.next().ok_or_else(|| bad("missing lhs mnemonic"))?;
            if toks.next() != Some("->") {
                return Err(bad("expected `->`"));
            }
            let rhs: Vec<&str> = toks.collect();
            let rule = grammar.rule_id(rule).ok_or_else(|| bad("unknown rule id"))?;
            let mp = grammar
                .mprods
                .iter()
                .position(|p| {
                    p.rule == rule
                        && grammar.mnemonics[p.lhs].id == lhs
                        && p.rhs.len() == rhs.len()
                        && p.rhs.iter().zip(&rhs).all(|(s, name)| match s {
                            MSym::Mnem(m) => grammar.mnemonics[*m].id == **name,
                            MSym::Term(t) => grammar.word(*t) == *name,
                        })
                })
                .ok_or_else(|| bad("no such mnemonic production"))?;
            probs[mp] = prob;
        }
        Ok(PcfgModel { probs })
    }
}

impl ScoringModel for PcfgModel {
    fn context_free(&self) -> bool {
        true
    }

    fn log_prob(&self, grammar: &Grammar, c: &ScoredConstituent) -> f64 {
        self.probs[grammar.prod_mprod[c.prod]].ln()
    }
}

pub fn tree_logprob_pcfg(grammar: &Grammar, model: &PcfgModel, tree: &Tree) -> f64 {
    crate::chart::tree_logprob(grammar, model, tree)
}

fn count_tree(grammar: &Grammar, tree: &Tree, counts: &mut [f64]) {
    counts[grammar.prod_mprod[tree.prod]] += 1.0;
    for c in tree.constituent_children() {
        count_tree(grammar, c, counts);
    }
}

/// Relative-frequency estimation: for each treebank sentence, take the
/// best consistent parse under a uniform bootstrap model and count its
/// mnemonic productions; normalize with additive smoothing. Sentences with no
/// consistent parse are skipped; the count of skipped sentences is returned.
pub fn estimate_rf(
    grammar: &Grammar,
    corpus: &[(Sentence, RefTree)],
    map: &LabelMap,
    alpha: f64,
) -> Result<(PcfgModel, usize), crate::chart::ChartError> {
    let bootstrap = PcfgModel::uniform(grammar);
    let mut counts = vec![0.0; grammar.mprods.len()];
    let mut skipped = 0;
    for (sentence, reference) in corpus {
        let forest = parse_all(sentence, grammar);
        match best_consistent(&forest, grammar, &bootstrap, reference, map)? {
            Some((tree, _)) => count_tree(grammar, &tree, &mut counts),
            None => skipped += 1,
        }
    }
    Ok((PcfgModel::from_counts(grammar, &counts, alpha), skipped))
}

/// Inside scores per forest item under the model; returns (inside, topo order).
fn inside(forest: &Forest, grammar: &Grammar, model: &PcfgModel) -> (Vec<f64>, Vec<usize>) {
    let order = forest.topo_order();
    let mut ins = vec![0.0; forest.items.len()];
    for &idx in &order {
        let mut total = 0.0;
        for alt in &forest.items[idx].alts {
            let mut v = model.probs[grammar.prod_mprod[alt.prod]];
            for c in &alt.children {
                if let Child::Item(ci) = c {
                    v *= ins[*ci];
                }
            }
            total += v;
        }
        ins[idx] = total;
    }
    (ins, order)
}

/// Treebank-constrained inside-outside: expectation-maximization over the
/// consistent sub-forests of the corpus. Returns the re-estimated model and
/// the per-iteration total log-likelihood of the constrained corpus
/// (non-decreasing). Sentences with no consistent parse are skipped.
pub fn io_train(
    grammar: &Grammar,
    corpus: &[(Sentence, RefTree)],
    map: &LabelMap,
    init: &PcfgModel,
    iterations: usize,
) -> (PcfgModel, Vec<f64>) {
    let forests: Vec<Forest> = corpus
        .iter()
        .map(|(sentence, reference)| {
            let tokens: Vec<_> =
                sentence.tokens.iter().map(|w| grammar.term_or_unk(w)).collect();
            consistent_subforest(grammar, &tokens, reference, map)
        })
        .filter(|f| !f.is_empty())
        .collect();
    let mut model = init.clone();
    let mut lls = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut counts = vec![0.0; grammar.mprods.len()];
        let mut ll = 0.0;
        for forest in &forests {
            let (ins, order) = inside(forest, grammar, &model);
            let z: f64 = forest.roots.iter().map(|&r| ins[r]).sum();
            if z <= 0.0 {
                continue;
            }
            ll += z.ln();
            let mut outs = vec![0.0; forest.items.len()];
            for &r in &forest.roots {
                outs[r] = 1.0;
            }
            for &idx in order.iter().rev() {
                let o = outs[idx];
                if o == 0.0 {
                    continue;
                }
                for alt in &forest.items[idx].alts {
                    let mut v = o * model.probs[grammar.prod_mprod[alt.prod]];
                    for c in &alt.children {
                        if let Child::Item(ci) = c {
                            v *= ins[*ci];
                        }
                    }
                    counts[grammar.prod_mprod[alt.prod]] += v / z;
                    for c in &alt.children {
                        if let Child::Item(ci) = c {
                            if ins[*ci] > 0.0 {
                                outs[*ci] += v / ins[*ci];
                            }
                        }
                    }
                }
            }
        }
        model = PcfgModel::from_counts(grammar, &counts, 0.0);
        lls.push(ll);
    }
    (model, lls)
}
