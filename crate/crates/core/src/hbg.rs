//! History-based models: conditional factor models with nested deleted
//! interpolation, the five-factor lexicalized model, and a simpler
//! head-driven variant. Both decompose a constituent's probability into
//! Syn/Sem/rule/head factors conditioned on the derivation history.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{ParentMode, ScoredConstituent, ScoringModel, Tree};
use crate::clusters::Bitstring;
use crate::dtree::{BitstringTables, DecisionTree, DtreeError, GrowConfig};
use crate::grammar::{Grammar, TermId, TERM_NONE};
use crate::history::TrainingEvent;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("decision tree: {0}")]
    Dtree(#[from] DtreeError),
    #[error("bitstring table: {0}")]
    Cluster(#[from] crate::clusters::ClusterError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How many count buckets the interpolation weights are tied over.
const BUCKETS: usize = 8;

fn bucket(total: f64) -> usize {
    let mut b = 0;
    let mut t = 1.0;
    while t * 2.0 <= total && b + 1 < BUCKETS {
        t *= 2.0;
        b += 1;
    }
    b
}

#[derive(Debug, Clone)]
pub struct FactorConfig {
    /// Fixed interpolation weight for every order and bucket; when unset,
    /// weights are fit on a held-out tenth of the data.
    pub lambda: Option<f64>,
    pub em_iters: usize,
}

impl Default for FactorConfig {
    fn default() -> FactorConfig {
        FactorConfig { lambda: None, em_iters: 50 }
    }
}

/// Conditional distribution p(outcome | v1..vk) smoothed by nested deleted
/// interpolation: each order's relative frequencies are mixed with the
/// distribution conditioned on one fewer variable (dropping the rightmost),
/// down to the unconditional frequencies and finally a uniform floor.
/// Interpolation weights depend on how often the conditioning context was
/// seen, tied across logarithmic count buckets.
#[derive(Debug, Clone)]
pub struct FactorModel {
    pub domain: usize,
    pub k: usize,
    counts: Vec<HashMap<Vec<usize>, HashMap<usize, f64>>>,
    totals: Vec<HashMap<Vec<usize>, f64>>,
    /// lambdas[j][b]: weight of the order-j relative frequencies in bucket b.
    lambdas: Vec<Vec<f64>>,
}

impl FactorModel {
    pub fn train(
        data: &[(Vec<usize>, usize)],
        domain: usize,
        k: usize,
        cfg: &FactorConfig,
    ) -> FactorModel {
        let mut train_set: Vec<&(Vec<usize>, usize)> = Vec::new();
        let mut held_out: Vec<&(Vec<usize>, usize)> = Vec::new();
        for (i, row) in data.iter().enumerate() {
            if cfg.lambda.is_none() && i % 10 == 9 {
                held_out.push(row);
            } else {
                train_set.push(row);
            }
        }
        if train_set.is_empty() {
            train_set = data.iter().collect();
            held_out.clear();
        }
        let mut m = FactorModel {
            domain,
            k,
            counts: vec![HashMap::new(); k + 1],
            totals: vec![HashMap::new(); k + 1],
            lambdas: vec![vec![cfg.lambda.unwrap_or(0.5); BUCKETS]; k + 1],
        };
        for (ctx, out) in &train_set {
            assert_eq!(ctx.len(), k, "context arity mismatch");
            m.add(ctx, *out, 1.0);
        }
        if cfg.lambda.is_none() {
            m.fit_lambdas(&held_out, cfg.em_iters);
        }
        m
    }

    fn add(&mut self, ctx: &[usize], out: usize, c: f64) {
        for j in 0..=self.k {
            let key = ctx[..j].to_vec();
            *self.counts[j].entry(key.clone()).or_default().entry(out).or_insert(0.0) += c;
            *self.totals[j].entry(key).or_insert(0.0) += c;
        }
    }

    fn ml(&self, j: usize, ctx: &[usize], out: usize) -> f64 {
        match self.totals[j].get(&ctx[..j]) {
            Some(&t) if t > 0.0 => {
                self.counts[j][&ctx[..j]].get(&out).copied().unwrap_or(0.0) / t
            }
            _ => 0.0,
        }
    }

    /// Effective weight of order j for this context: the tied bucket weight,
    /// or zero when the context was never seen at that order.
    fn lambda_at(&self, j: usize, ctx: &[usize]) -> f64 {
        match self.totals[j].get(&ctx[..j]) {
            Some(&t) if t > 0.0 => self.lambdas[j][bucket(t)],
            _ => 0.0,
        }
    }

    /// Fit one weight per (order, bucket) by expectation-maximization on the
    /// held-out rows reaching that bucket, lower orders first.
    fn fit_lambdas(&mut self, held_out: &[&(Vec<usize>, usize)], em_iters: usize) {
        for j in 0..=self.k {
            for b in 0..BUCKETS {
                let rows: Vec<_> = held_out
                    .iter()
                    .filter(|(ctx, _)| {
                        matches!(self.totals[j].get(&ctx[..j]), Some(&t) if t > 0.0 && bucket(t) == b)
                    })
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let mut lambda: f64 = 0.5;
                for _ in 0..em_iters {
                    let mut post = 0.0;
                    for (ctx, out) in rows.iter().map(|r| (&r.0, r.1)) {
                        let hi = lambda * self.ml(j, ctx, out);
                        let lo = (1.0 - lambda) * self.prob_up_to(j, ctx, out);
                        if hi + lo > 0.0 {
                            post += hi / (hi + lo);
                        }
                    }
                    lambda = post / rows.len() as f64;
                }
                self.lambdas[j][b] = lambda.clamp(0.01, 0.99);
            }
        }
    }

    /// Interpolated probability using orders below `j` only.
    fn prob_up_to(&self, j: usize, ctx: &[usize], out: usize) -> f64 {
        let mut p = 1.0 / self.domain as f64;
        for m in 0..j {
            let l = self.lambda_at(m, ctx);
            p = l * self.ml(m, ctx, out) + (1.0 - l) * p;
        }
        p
    }

    pub fn prob(&self, ctx: &[usize], out: usize) -> f64 {
        self.prob_up_to(self.k + 1, ctx, out)
    }

    /// Weight each component distribution contributes for this context:
    /// `[uniform, order 0, ..., order k]`. The weights sum to one and satisfy
    /// p(out|ctx) = sum_j w_j * component_j(out).
    pub fn mixture_weights(&self, ctx: &[usize]) -> Vec<f64> {
        let mut w = vec![0.0; self.k + 2];
        let mut residual = 1.0;
        for j in (0..=self.k).rev() {
            let l = self.lambda_at(j, ctx);
            w[j + 1] = residual * l;
            residual *= 1.0 - l;
        }
        w[0] = residual;
        w
    }

    pub fn save<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "fm {} {} {}", self.domain, self.k, BUCKETS)?;
        for (j, row) in self.lambdas.iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|l| format!("{l:.12}")).collect();
            writeln!(w, "l {} {}", j, vals.join(" "))?;
        }
        // only the full-order counts are stored; marginals are rebuilt
        let full: &HashMap<Vec<usize>, HashMap<usize, f64>> = &self.counts[self.k];
        let mut keys: Vec<&Vec<usize>> = full.keys().collect();
        keys.sort();
        for ctx in keys {
            let mut outs: Vec<(&usize, &f64)> = full[ctx].iter().collect();
            outs.sort_by_key(|(o, _)| **o);
            for (out, c) in outs {
                let ctx_s: Vec<String> = ctx.iter().map(|v| v.to_string()).collect();
                writeln!(w, "c {} {} {}", out, c, ctx_s.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FactorModel, ModelError> {
        let f = std::fs::File::open(path)?;
        let mut lines = BufReader::new(f).lines().enumerate();
        let bad = |ln: usize, msg: &str| ModelError::Format { line: ln + 1, msg: msg.to_string() };
        let (ln, header) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
        let header = header?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "fm" {
            return Err(bad(ln, "expected `fm domain k buckets` header"));
        }
        let domain: usize = h[1].parse().map_err(|_| bad(ln, "bad domain"))?;
        let k: usize = h[2].parse().map_err(|_| bad(ln, "bad k"))?;
        let mut m = FactorModel {
            domain,
            k,
            counts: vec![HashMap::new(); k + 1],
            totals: vec![HashMap::new(); k + 1],
            lambdas: vec![vec![0.5; BUCKETS]; k + 1],
        };
        for (ln, line) in lines {
            let line = line?;
            let t: Vec<&str> = line.split_whitespace().collect();
            match t.first() {
                None => continue,
                Some(&"l") => {
                    let j: usize = t[1].parse().map_err(|_| bad(ln, "bad order"))?;
                    for (b, v) in t[2..].iter().enumerate() {
                        m.lambdas[j][b] = v.parse().map_err(|_| bad(ln, "bad lambda"))?;
                    }
                }
                Some(&"c") => {
                    if t.len() != 3 + k {
                        return Err(bad(ln, "bad count row"));
                    }
                    let out: usize = t[1].parse().map_err(|_| bad(ln, "bad outcome"))?;
                    let c: f64 = t[2].parse().map_err(|_| bad(ln, "bad count"))?;
                    let ctx: Result<Vec<usize>, _> = t[3..].iter().map(|s| s.parse()).collect();
                    let ctx = ctx.map_err(|_| bad(ln, "bad context"))?;
                    m.add(&ctx, out, c);
                }
                _ => return Err(bad(ln, "expected `l` or `c` row")),
            }
        }
        Ok(m)
    }
}

fn opt_term(t: Option<TermId>) -> usize {
    t.unwrap_or(TERM_NONE)
}

/// The five-factor lexicalized model. A constituent's probability given its
/// history factors into Syn, Sem, rule, primary head and secondary head
/// predictions; the rule factor is a decision tree over the encoded history,
/// renormalized over the rules the constituent's mnemonic can rewrite with.
pub struct HbgModel {
    pub mode: ParentMode,
    pub tables: BitstringTables,
    pub f_syn: FactorModel,
    pub f_sem: FactorModel,
    pub rule_tree: DecisionTree,
    pub f_h1: FactorModel,
    pub f_h2: FactorModel,
}

/// Conditioning contexts of the five factors, in back-off order (rightmost
/// variable dropped first).
fn hbg_ctx_syn(e: &TrainingEvent) -> Vec<usize> {
    let h = &e.hist;
    vec![h.rule_p, h.ipc, h.h1_p, h.syn_p, h.sem_p]
}
fn hbg_ctx_sem(e: &TrainingEvent) -> Vec<usize> {
    let h = &e.hist;
    vec![e.syn, h.rule_p, h.ipc, h.h1_p, opt_term(h.h2_p), h.syn_p, h.sem_p]
}
fn hbg_ctx_h1(e: &TrainingEvent) -> Vec<usize> {
    let h = &e.hist;
    vec![e.rule, e.syn, e.sem, h.rule_p, h.ipc, h.h1_p, opt_term(h.h2_p)]
}
fn hbg_ctx_h2(e: &TrainingEvent) -> Vec<usize> {
    let h = &e.hist;
    vec![e.h1, e.rule, e.syn, e.sem, h.rule_p, h.ipc, h.syn_p]
}

#[derive(Debug, Clone, Default)]
pub struct HbgConfig {
    pub factor: FactorConfig,
    pub grow: GrowConfig,
}

impl HbgModel {
    pub fn train(
        grammar: &Grammar,
        tables: BitstringTables,
        mode: ParentMode,
        events: &[TrainingEvent],
        cfg: &HbgConfig,
    ) -> Result<HbgModel, ModelError> {
        let n_syn = grammar.syn_names.len();
        let n_sem = grammar.sem_names.len();
        let n_term = grammar.terms.len();
        let rows = |f: fn(&TrainingEvent) -> Vec<usize>, out: fn(&TrainingEvent) -> usize| {
            events.iter().map(|e| (f(e), out(e))).collect::<Vec<_>>()
        };
        let f_syn =
            FactorModel::train(&rows(hbg_ctx_syn, |e| e.syn), n_syn, 5, &cfg.factor);
        let f_sem =
            FactorModel::train(&rows(hbg_ctx_sem, |e| e.sem), n_sem, 7, &cfg.factor);
        let f_h1 =
            FactorModel::train(&rows(hbg_ctx_h1, |e| e.h1), n_term, 7, &cfg.factor);
        let f_h2 =
            FactorModel::train(&rows(hbg_ctx_h2, |e| opt_term(e.h2)), n_term, 7, &cfg.factor);
        let rule_tree = DecisionTree::grow(grammar, &tables, events, &cfg.grow)?;
        Ok(HbgModel { mode, tables, f_syn, f_sem, rule_tree, f_h1, f_h2 })
    }

    /// Rule probability renormalized over the rules the mnemonic supports.
    fn rule_prob(&self, grammar: &Grammar, c: &ScoredConstituent) -> f64 {
        let rule = grammar.productions[c.prod].rule;
        let support = grammar.rules_of_mnemonic(grammar.nt_mnemonic[c.nt]);
        let num = self.rule_tree.rule_prob(&self.tables, c.ctx, rule);
        let den: f64 =
            support.iter().map(|&r| self.rule_tree.rule_prob(&self.tables, c.ctx, r)).sum();
        num / den
    }
}

fn event_of(grammar: &Grammar, c: &ScoredConstituent) -> TrainingEvent {
    let cat = grammar.category(c.nt);
    TrainingEvent {
        hist: c.ctx.clone(),
        syn: cat.syn,
        sem: cat.sem,
        rule: grammar.productions[c.prod].rule,
        h1: c.h1,
        h2: c.h2,
        prod: c.prod,
    }
}

impl ScoringModel for HbgModel {
    fn parent_mode(&self) -> ParentMode {
        self.mode
    }

    fn log_prob(&self, grammar: &Grammar, c: &ScoredConstituent) -> f64 {
        let e = event_of(grammar, c);
        let p1 = self.f_syn.prob(&hbg_ctx_syn(&e), e.syn);
        let p2 = self.f_sem.prob(&hbg_ctx_sem(&e), e.sem);
        let p3 = self.rule_prob(grammar, c);
        let p4 = self.f_h1.prob(&hbg_ctx_h1(&e), e.h1);
        let p5 = self.f_h2.prob(&hbg_ctx_h2(&e), opt_term(e.h2));
        p1.ln() + p2.ln() + p3.ln() + p4.ln() + p5.ln()
    }
}

/// The simpler head-driven model: heads first, then Syn, Sem and finally the
/// rule given everything, all as interpolated factor models.
pub struct SimpleHeadModel {
    pub mode: ParentMode,
    pub f_h1: FactorModel,
    pub f_h2: FactorModel,
    pub f_syn: FactorModel,
    pub f_sem: FactorModel,
    pub f_rule: FactorModel,
}

fn simple_ctx_h1(e: &TrainingEvent) -> Vec<usize> {
    let h = &e.hist;
    vec![h.h1_p, opt_term(h.h2_p), h.rule_p, h.ipc]
}
fn simple_ctx_h2(e: &TrainingEvent) -> Vec<usize> {
    let h = &e.hist;
    vec![e.h1, h.h1_p, opt_term(h.h2_p), h.rule_p, h.ipc]
}
fn simple_ctx_syn(e: &TrainingEvent) -> Vec<usize> {
    let h = &e.hist;
    vec![e.h1, h.rule_p, h.ipc]
}
fn simple_ctx_sem(e: &TrainingEvent) -> Vec<usize> {
    let h = &e.hist;
    vec![e.syn, e.h1, h.rule_p, h.ipc]
}
fn simple_ctx_rule(e: &TrainingEvent) -> Vec<usize> {
    vec![e.syn, e.sem, e.h1, opt_term(e.h2)]
}

impl SimpleHeadModel {
    pub fn train(
        grammar: &Grammar,
        mode: ParentMode,
        events: &[TrainingEvent],
        cfg: &FactorConfig,
    ) -> SimpleHeadModel {
        let n_syn = grammar.syn_names.len();
        let n_sem = grammar.sem_names.len();
        let n_term = grammar.terms.len();
        let n_rule = grammar.rule_names.len();
        let rows = |f: fn(&TrainingEvent) -> Vec<usize>, out: fn(&TrainingEvent) -> usize| {
            events.iter().map(|e| (f(e), out(e))).collect::<Vec<_>>()
        };
        SimpleHeadModel {
            mode,
            f_h1: FactorModel::train(&rows(simple_ctx_h1, |e| e.h1), n_term, 4, cfg),
            f_h2: FactorModel::train(&rows(simple_ctx_h2, |e| opt_term(e.h2)), n_term, 5, cfg),
            f_syn: FactorModel::train(&rows(simple_ctx_syn, |e| e.syn), n_syn, 3, cfg),
            f_sem: FactorModel::train(&rows(simple_ctx_sem, |e| e.sem), n_sem, 4, cfg),
            f_rule: FactorModel::train(&rows(simple_ctx_rule, |e| e.rule), n_rule, 4, cfg),
        }
    }

    fn rule_prob(&self, grammar: &Grammar, c: &ScoredConstituent, e: &TrainingEvent) -> f64 {
        let support = grammar.rules_of_mnemonic(grammar.nt_mnemonic[c.nt]);
        let ctx = simple_ctx_rule(e);
        let num = self.f_rule.prob(&ctx, e.rule);
        let den: f64 = support.iter().map(|&r| self.f_rule.prob(&ctx, r)).sum();
        num / den
    }
}

impl ScoringModel for SimpleHeadModel {
    fn parent_mode(&self) -> ParentMode {
        self.mode
    }

    fn log_prob(&self, grammar: &Grammar, c: &ScoredConstituent) -> f64 {
        let e = event_of(grammar, c);
        let p1 = self.f_h1.prob(&simple_ctx_h1(&e), e.h1);
        let p2 = self.f_h2.prob(&simple_ctx_h2(&e), opt_term(e.h2));
        let p3 = self.f_syn.prob(&simple_ctx_syn(&e), e.syn);
        let p4 = self.f_sem.prob(&simple_ctx_sem(&e), e.sem);
        let p5 = self.rule_prob(grammar, c, &e);
        p1.ln() + p2.ln() + p3.ln() + p4.ln() + p5.ln()
    }
}

pub fn tree_logprob_hbg(grammar: &Grammar, model: &dyn ScoringModel, tree: &Tree) -> f64 {
    crate::chart::tree_logprob(grammar, model, tree)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: String,
    parent_mode: String,
    word_width: usize,
}

fn mode_name(m: ParentMode) -> &'static str {
    match m {
        ParentMode::Immediate => "immediate",
        ParentMode::Functional => "functional",
    }
}

fn parse_mode(s: &str) -> Result<ParentMode, ModelError> {
    match s {
        "immediate" => Ok(ParentMode::Immediate),
        "functional" => Ok(ParentMode::Functional),
        other => Err(ModelError::Manifest(format!("unknown parent mode `{other}`"))),
    }
}

fn save_factor(dir: &Path, name: &str, f: &FactorModel) -> std::io::Result<()> {
    let mut w = std::fs::File::create(dir.join(name))?;
    f.save(&mut w)
}

fn save_word_table(dir: &Path, grammar: &Grammar, tables: &BitstringTables) -> std::io::Result<()> {
    let mut rows: BTreeMap<(String, String), Bitstring> = BTreeMap::new();
    for (i, w) in grammar.terms.iter().enumerate() {
        rows.insert(("word".to_string(), w.clone()), tables.word[i].clone());
    }
    let mut f = std::fs::File::create(dir.join("words.tsv"))?;
    crate::clusters::write_bitstrings(&mut f, &rows)
}

fn load_word_tables(
    dir: &Path,
    grammar: &Grammar,
    word_width: usize,
) -> Result<BitstringTables, ModelError> {
    let rows = crate::clusters::load_bitstrings(&dir.join("words.tsv"))?;
    let mut tables = BitstringTables::canonical(grammar, word_width);
    for (i, w) in grammar.terms.iter().enumerate() {
        if let Some(code) = rows.get(&("word".to_string(), w.clone())) {
            tables.word[i] = code.padded(word_width);
        }
    }
    Ok(tables)
}

impl HbgModel {
    pub fn save(&self, dir: &Path, grammar: &Grammar) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest {
            kind: "hbg".to_string(),
            parent_mode: mode_name(self.mode).to_string(),
            word_width: self.tables.word_width,
        };
        std::fs::write(
            dir.join("manifest.toml"),
            toml::to_string(&manifest).map_err(|e| ModelError::Manifest(e.to_string()))?,
        )?;
        save_word_table(dir, grammar, &self.tables)?;
        save_factor(dir, "syn.fm", &self.f_syn)?;
        save_factor(dir, "sem.fm", &self.f_sem)?;
        save_factor(dir, "h1.fm", &self.f_h1)?;
        save_factor(dir, "h2.fm", &self.f_h2)?;
        self.rule_tree.save(&dir.join("rule.dt"))?;
        Ok(())
    }

    pub fn load(dir: &Path, grammar: &Grammar) -> Result<HbgModel, ModelError> {
        let manifest: Manifest =
            toml::from_str(&std::fs::read_to_string(dir.join("manifest.toml"))?)
                .map_err(|e| ModelError::Manifest(e.to_string()))?;
        if manifest.kind != "hbg" {
            return Err(ModelError::Manifest(format!("expected kind hbg, got {}", manifest.kind)));
        }
        let tables = load_word_tables(dir, grammar, manifest.word_width)?;
        Ok(HbgModel {
            mode: parse_mode(&manifest.parent_mode)?,
            f_syn: FactorModel::load(&dir.join("syn.fm"))?,
            f_sem: FactorModel::load(&dir.join("sem.fm"))?,
            f_h1: FactorModel::load(&dir.join("h1.fm"))?,
            f_h2: FactorModel::load(&dir.join("h2.fm"))?,
            rule_tree: DecisionTree::load(&dir.join("rule.dt"), grammar.rule_names.len())?,
            tables,
        })
    }
}

impl SimpleHeadModel {
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest {
            kind: "simple".to_string(),
            parent_mode: mode_name(self.mode).to_string(),
            word_width: 0,
        };
        std::fs::write(
            dir.join("manifest.toml"),
            toml::to_string(&manifest).map_err(|e| ModelError::Manifest(e.to_string()))?,
        )?;
        save_factor(dir, "h1.fm", &self.f_h1)?;
        save_factor(dir, "h2.fm", &self.f_h2)?;
        save_factor(dir, "syn.fm", &self.f_syn)?;
        save_factor(dir, "sem.fm", &self.f_sem)?;
        save_factor(dir, "rule.fm", &self.f_rule)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<SimpleHeadModel, ModelError> {
        let manifest: Manifest =
            toml::from_str(&std::fs::read_to_string(dir.join("manifest.toml"))?)
                .map_err(|e| ModelError::Manifest(e.to_string()))?;
        if manifest.kind != "simple" {
            return Err(ModelError::Manifest(format!(
                "expected kind simple, got {}",
                manifest.kind
            )));
        }
        Ok(SimpleHeadModel {
            mode: parse_mode(&manifest.parent_mode)?,
            f_h1: FactorModel::load(&dir.join("h1.fm"))?,
            f_h2: FactorModel::load(&dir.join("h2.fm"))?,
            f_syn: FactorModel::load(&dir.join("syn.fm"))?,
            f_sem: FactorModel::load(&dir.join("sem.fm"))?,
            f_rule: FactorModel::load(&dir.join("rule.fm"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{enumerate_parses, parse_all, viterbi};
    use crate::grammar::Grammar;
    use crate::history::extract_events;
    use crate::treebank::{parse_corpus, Sentence};

    #[test]
    fn factor_fixed_lambda_matches_hand_computation() {
        // k=1: p(o|c) = l*ml1 + (1-l)*(l*ml0 + (1-l)*uniform)
        let data = vec![
            (vec![0], 0),
            (vec![0], 0),
            (vec![0], 1),
            (vec![1], 1),
        ];
        let cfg = FactorConfig { lambda: Some(0.6), ..FactorConfig::default() };
        let m = FactorModel::train(&data, 2, 1, &cfg);
        let uniform = 0.5;
        let p0 = 0.6 * 0.5 + 0.4 * uniform; // ml0(0) = 2/4
        let expect = 0.6 * (2.0 / 3.0) + 0.4 * p0; // ml1(0|c=0) = 2/3
        assert!((m.prob(&[0], 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn factor_distributions_normalize() {
        let data: Vec<(Vec<usize>, usize)> = (0..50)
            .map(|i| (vec![i % 3, i % 2], (i * 7) % 4))
            .collect();
        let m = FactorModel::train(&data, 4, 2, &FactorConfig::default());
        for ctx in [[0, 0], [1, 1], [2, 0], [9, 9]] {
            let s: f64 = (0..4).map(|o| m.prob(&ctx, o)).sum();
            assert!((s - 1.0).abs() < 1e-9, "sum {s} for {ctx:?}");
        }
    }

    #[test]
    fn unseen_context_backs_off() {
        let data = vec![(vec![0], 0), (vec![0], 0), (vec![1], 1)];
        let cfg = FactorConfig { lambda: Some(0.7), ..FactorConfig::default() };
        let m = FactorModel::train(&data, 2, 1, &cfg);
        // context 5 never observed: order-1 weight collapses to zero
        let p0 = m.prob_up_to(1, &[5], 0);
        assert!((m.prob(&[5], 0) - p0).abs() < 1e-12);
        let w = m.mixture_weights(&[5]);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn mixture_weights_sum_to_one_and_reconstruct_prob() {
        let data: Vec<(Vec<usize>, usize)> =
            (0..80).map(|i| (vec![i % 4, i % 3], (i * 5) % 6)).collect();
        let m = FactorModel::train(&data, 6, 2, &FactorConfig::default());
        for ctx in [[0, 0], [3, 2], [1, 7]] {
            let w = m.mixture_weights(&ctx);
            let s: f64 = w.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            for o in 0..6 {
                let mut parts = w[0] / 6.0;
                for j in 0..=2 {
                    parts += w[j + 1] * m.ml(j, &ctx, o);
                }
                assert!((m.prob(&ctx, o) - parts).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn factor_round_trip() {
        let data: Vec<(Vec<usize>, usize)> =
            (0..60).map(|i| (vec![i % 4, i % 3], (i * 5) % 6)).collect();
        let m = FactorModel::train(&data, 6, 2, &FactorConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fm");
        let mut f = std::fs::File::create(&path).unwrap();
        m.save(&mut f).unwrap();
        drop(f);
        let back = FactorModel::load(&path).unwrap();
        for ctx in [[0, 0], [3, 2], [1, 7]] {
            for o in 0..6 {
                assert!((m.prob(&ctx, o) - back.prob(&ctx, o)).abs() < 1e-9);
            }
        }
    }

    // Attachment grammar where the correct rule is predictable from the
    // parent's head (visible to the history models, invisible to a P-CFG).
    const G: &str = "\
#syn
s v n p
#sem
x
#start S
#rules
s1 : S[s,x] -> V N ; h1=1
s2 : S[s,x] -> V N P ; h1=1
v1 : V[v,x] -> grab
v2 : V[v,x] -> see
n1 : N[n,x] -> d n ; h1=2
n2 : N[n,x] -> d n P ; h1=2
p1 : P[p,x] -> p N ; h1=2
";

    const REF_VP: &str =
        "[S [V grab_v V] [N d_d n_n N] [P p_p [N d_d n_n N] P] S]";
    const REF_NP: &str = "[S [V see_v V] [N d_d n_n [P p_p [N d_d n_n N] P] N] S]";

    fn corpus(refs: &[&str]) -> Vec<(Sentence, crate::treebank::RefTree)> {
        parse_corpus(&refs.join("\n\n")).unwrap()
    }

    fn train_events(g: &Grammar, refs: &[&str], mode: ParentMode) -> Vec<TrainingEvent> {
        let map = crate::treebank::LabelMap::identity();
        let boot = crate::pcfg::PcfgModel::uniform(g);
        let mut events = Vec::new();
        for (s, r) in corpus(refs) {
            let f = parse_all(&s, g);
            let (t, _) = crate::chart::best_consistent(&f, g, &boot, &r, &map)
                .unwrap()
                .expect("reference must be reachable");
            events.extend(extract_events(g, &t, mode));
        }
        events
    }

    #[test]
    fn hbg_disambiguates_by_parent_head() {
        let g = Grammar::parse_str(G).unwrap();
        let refs: Vec<&str> = std::iter::repeat([REF_VP, REF_NP])
            .take(12)
            .flatten()
            .collect();
        let events = train_events(&g, &refs, ParentMode::Immediate);
        let tables = BitstringTables::canonical(&g, 8);
        let cfg = HbgConfig {
            factor: FactorConfig { lambda: Some(0.9), ..FactorConfig::default() },
            grow: GrowConfig { min_events: 4, lambda: Some(0.9), ..GrowConfig::default() },
        };
        let model =
            HbgModel::train(&g, tables, ParentMode::Immediate, &events, &cfg).unwrap();
        let map = crate::treebank::LabelMap::identity();
        for (s, r) in corpus(&[REF_VP, REF_NP]) {
            let f = parse_all(&s, &g);
            let (t, score) = viterbi(&f, &g, &model).unwrap().unwrap();
            assert!(score.is_finite());
            assert!(
                crate::treebank::consistent(&t, &g, &r, &map, true).unwrap(),
                "model failed to recover the attachment for {:?}",
                s.tokens
            );
        }
    }

    #[test]
    fn simple_model_scores_and_decodes() {
        let g = Grammar::parse_str(G).unwrap();
        let refs: Vec<&str> = std::iter::repeat([REF_VP, REF_NP])
            .take(12)
            .flatten()
            .collect();
        let events = train_events(&g, &refs, ParentMode::Immediate);
        let cfg = FactorConfig { lambda: Some(0.9), ..FactorConfig::default() };
        let model = SimpleHeadModel::train(&g, ParentMode::Immediate, &events, &cfg);
        let map = crate::treebank::LabelMap::identity();
        for (s, r) in corpus(&[REF_VP, REF_NP]) {
            let f = parse_all(&s, &g);
            let (t, score) = viterbi(&f, &g, &model).unwrap().unwrap();
            assert!(score.is_finite());
            assert!(crate::treebank::consistent(&t, &g, &r, &map, true).unwrap());
        }
    }

    #[test]
    fn viterbi_matches_enumeration_for_history_model() {
        let g = Grammar::parse_str(G).unwrap();
        let refs = [REF_VP, REF_NP, REF_VP, REF_NP];
        let events = train_events(&g, &refs, ParentMode::Functional);
        let tables = BitstringTables::canonical(&g, 8);
        let cfg = HbgConfig {
            factor: FactorConfig { lambda: Some(0.8), ..FactorConfig::default() },
            grow: GrowConfig { min_events: 4, lambda: Some(0.8), ..GrowConfig::default() },
        };
        let model =
            HbgModel::train(&g, tables, ParentMode::Functional, &events, &cfg).unwrap();
        for (s, _) in corpus(&[REF_VP, REF_NP]) {
            let f = parse_all(&s, &g);
            let (_, score) = viterbi(&f, &g, &model).unwrap().unwrap();
            let best = enumerate_parses(&f, &g, usize::MAX)
                .iter()
                .map(|t| tree_logprob_hbg(&g, &model, t))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((score - best).abs() < 1e-9, "viterbi {score} vs enumerated {best}");
        }
    }

    #[test]
    fn hbg_bundle_round_trip() {
        let g = Grammar::parse_str(G).unwrap();
        let refs = [REF_VP, REF_NP, REF_VP, REF_NP, REF_VP, REF_NP];
        let events = train_events(&g, &refs, ParentMode::Functional);
        let tables = BitstringTables::canonical(&g, 8);
        let model = HbgModel::train(
            &g,
            tables,
            ParentMode::Functional,
            &events,
            &HbgConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path(), &g).unwrap();
        let back = HbgModel::load(dir.path(), &g).unwrap();
        let map = crate::treebank::LabelMap::identity();
        for (s, r) in corpus(&[REF_VP, REF_NP]) {
            let f = parse_all(&s, &g);
            let (t1, s1) = viterbi(&f, &g, &model).unwrap().unwrap();
            let (t2, s2) = viterbi(&f, &g, &back).unwrap().unwrap();
            assert_eq!(t1, t2);
            assert!((s1 - s2).abs() < 1e-9);
            let _ = crate::treebank::consistent(&t1, &g, &r, &map, true).unwrap();
        }
    }

    #[test]
    fn simple_bundle_round_trip() {
        let g = Grammar::parse_str(G).unwrap();
        let refs = [REF_VP, REF_NP, REF_VP, REF_NP];
        let events = train_events(&g, &refs, ParentMode::Immediate);
        let model = SimpleHeadModel::train(
            &g,
            ParentMode::Immediate,
            &events,
            &FactorConfig::default(),
        );
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = SimpleHeadModel::load(dir.path()).unwrap();
        for (s, _) in corpus(&[REF_VP]) {
            let f = parse_all(&s, &g);
            let (t1, s1) = viterbi(&f, &g, &model).unwrap().unwrap();
            let (t2, s2) = viterbi(&f, &g, &back).unwrap().unwrap();
            assert_eq!(t1, t2);
            assert!((s1 - s2).abs() < 1e-9);
        }
    }
}
