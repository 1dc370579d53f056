//! Annotated non-terminals, productions, rule templates, mnemonic classes and
//! head-child designations, plus the line-oriented grammar file format.
//!
//! A grammar file has five sections introduced by `#syn`, `#sem`, `#features`,
//! `#mnemonics` and `#rules`, plus an optional `#start` directive. Rule lines
//! look like
//!
//! ```text
//! r1 : S[s,decl] -> NP VP ; h1=1 h2=2
//! ```
//!
//! Symbols on a right-hand side that never occur as a left-hand side are
//! terminals; everything else is a non-terminal. Labels may contain feature
//! variables `$name` ranging over a declared feature's values; a rule line with
//! variables is a template and expands to one ground production per assignment,
//! all sharing the template's rule id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub type SynId = usize;
pub type SemId = usize;
pub type NtId = usize;
pub type TermId = usize;
pub type MnemId = usize;
pub type RuleId = usize;
pub type ProdId = usize;
/// Index of a mnemonic-level production.
pub type MpId = usize;

/// Reserved terminal ids, present in every grammar.
pub const TERM_TOP: TermId = 0;
pub const TERM_NONE: TermId = 1;
pub const TERM_UNK: TermId = 2;
/// Reserved syn/sem/rule id for the root history.
pub const TOP_ID: usize = 0;

pub const MAX_SYN: usize = 64;
pub const MAX_SEM: usize = 64;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: undeclared symbol `{sym}`")]
    Undeclared { line: usize, sym: String },
    #[error("line {line}: duplicate NT `{label}` with conflicting category")]
    ConflictingCategory { line: usize, label: String },
    #[error("line {line}: invalid head index {index} for rule of arity {arity}")]
    BadHead { line: usize, index: usize, arity: usize },
    #[error("grammar must contain at least one production")]
    Empty,
    #[error("too many {kind} symbols ({count}, max {max})")]
    TooManySymbols { kind: &'static str, count: usize, max: usize },
    #[error("NT `{label}` listed in more than one mnemonic")]
    DuplicateMnemonicMember { label: String },
    #[error("unary productions form a cycle through `{label}`")]
    UnaryCycle { label: String },
    #[error("template variable `${var}` is not a declared feature")]
    UnboundVariable { var: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Category {
    pub syn: SynId,
    pub sem: SemId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonTerminal {
    pub label: String,
    pub cat: Category,
    /// Feature assignment this label was expanded under, if any.
    pub features: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    Nt(NtId),
    Term(TermId),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Production {
    pub lhs: NtId,
    pub rhs: Vec<Sym>,
    pub rule: RuleId,
    /// Index into `rhs` of the child that supplies the primary head.
    pub h1: usize,
    /// Index into `rhs` of the child that supplies the secondary head.
    pub h2: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mnemonic {
    pub id: String,
    pub representative: NtId,
    pub members: Vec<NtId>,
}

/// A production over mnemonics; the unit of P-CFG estimation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MnemProduction {
    pub lhs: MnemId,
    pub rhs: Vec<MSym>,
    pub rule: RuleId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MSym {
    Mnem(MnemId),
    Term(TermId),
}

/// A schematic rule before feature-variable expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTemplate {
    pub rule_name: String,
    pub lhs_label: String,
    pub syn: String,
    pub sem: String,
    pub rhs_labels: Vec<String>,
    pub h1: Option<usize>,
    pub h2: Option<Option<usize>>,
    pub line: usize,
}

/// One ground instantiation of a template.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundRule {
    pub rule_name: String,
    pub lhs_label: String,
    pub syn: String,
    pub sem: String,
    pub rhs_labels: Vec<String>,
    pub h1: Option<usize>,
    pub h2: Option<Option<usize>>,
    pub line: usize,
    pub assignment: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct Grammar {
    pub syn_names: Vec<String>,
    pub sem_names: Vec<String>,
    pub nts: Vec<NonTerminal>,
    pub terms: Vec<String>,
    pub rule_names: Vec<String>,
    pub mnemonics: Vec<Mnemonic>,
    /// NT id -> id of its mnemonic.
    pub nt_mnemonic: Vec<MnemId>,
    pub productions: Vec<Production>,
    pub prods_by_lhs: Vec<Vec<ProdId>>,
    pub start: MnemId,
    pub mprods: Vec<MnemProduction>,
    /// Production id -> mnemonic-production id.
    pub prod_mprod: Vec<MpId>,
    pub mprods_by_lhs: Vec<Vec<MpId>>,
    /// NTs in an order where unary children precede unary parents.
    pub unary_order: Vec<NtId>,
    nt_by_label: HashMap<String, NtId>,
    term_by_name: HashMap<String, TermId>,
    syn_by_name: HashMap<String, SynId>,
    sem_by_name: HashMap<String, SemId>,
    rule_by_name: HashMap<String, RuleId>,
}

impl PartialEq for Grammar {
    fn eq(&self, other: &Self) -> bool {
        self.syn_names == other.syn_names
            && self.sem_names == other.sem_names
            && self.nts == other.nts
            && self.terms == other.terms
            && self.rule_names == other.rule_names
            && self.mnemonics == other.mnemonics
            && self.productions == other.productions
            && self.start == other.start
    }
}

impl Grammar {
    pub fn load(path: impl AsRef<Path>) -> Result<Grammar, GrammarError> {
        let text = std::fs::read_to_string(path)?;
        Grammar::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Grammar, GrammarError> {
        let decls = parse_sections(text)?;
        build_grammar(decls)
    }

    pub fn nt_id(&self, label: &str) -> Option<NtId> {
        self.nt_by_label.get(label).copied()
    }

    pub fn term_id(&self, word: &str) -> Option<TermId> {
        self.term_by_name.get(word).copied()
    }

    /// Term id for a token, mapping out-of-vocabulary words to `*unk*`.
    pub fn term_or_unk(&self, word: &str) -> TermId {
        self.term_id(word).unwrap_or(TERM_UNK)
    }

    pub fn syn_id(&self, name: &str) -> Option<SynId> {
        self.syn_by_name.get(name).copied()
    }

    pub fn sem_id(&self, name: &str) -> Option<SemId> {
        self.sem_by_name.get(name).copied()
    }

    pub fn rule_id(&self, name: &str) -> Option<RuleId> {
        self.rule_by_name.get(name).copied()
    }

    pub fn mnemonic_of(&self, nt: NtId) -> &Mnemonic {
        &self.mnemonics[self.nt_mnemonic[nt]]
    }

    pub fn category(&self, nt: NtId) -> Category {
        self.nts[nt].cat
    }

    /// Maximum rhs length over all productions.
    pub fn max_arity(&self) -> usize {
        self.productions.iter().map(|p| p.rhs.len()).max().unwrap_or(1)
    }

    /// Rule ids of mnemonic productions rewriting `mnem`.
    pub fn rules_of_mnemonic(&self, mnem: MnemId) -> Vec<RuleId> {
        let mut rules: Vec<RuleId> =
            self.mprods_by_lhs[mnem].iter().map(|&mp| self.mprods[mp].rule).collect();
        rules.sort_unstable();
        rules.dedup();
        rules
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("#syn\n");
        for s in self.syn_names.iter().skip(1) {
            let _ = writeln!(out, "{s}");
        }
        out.push_str("#sem\n");
        for s in self.sem_names.iter().skip(1) {
            let _ = writeln!(out, "{s}");
        }
        out.push_str("#mnemonics\n");
        for m in &self.mnemonics {
            let members: Vec<&str> =
                m.members.iter().map(|&n| self.nts[n].label.as_str()).collect();
            let _ = writeln!(out, "{} : {}", m.id, members.join(" "));
        }
        let _ = writeln!(out, "#start {}", self.mnemonics[self.start].id);
        out.push_str("#rules\n");
        for p in &self.productions {
            let lhs = &self.nts[p.lhs];
            let rhs: Vec<&str> = p
                .rhs
                .iter()
                .map(|s| match *s {
                    Sym::Nt(n) => self.nts[n].label.as_str(),
                    Sym::Term(t) => self.terms[t].as_str(),
                })
                .collect();
            let h2 = match p.h2 {
                Some(i) => format!("{}", i + 1),
                None => "none".to_string(),
            };
            let _ = writeln!(
                out,
                "{} : {}[{},{}] -> {} ; h1={} h2={}",
                self.rule_names[p.rule],
                lhs.label,
                self.syn_names[lhs.cat.syn],
                self.sem_names[lhs.cat.sem],
                rhs.join(" "),
                p.h1 + 1,
                h2
            );
        }
        out
    }

    pub fn nt_label(&self, nt: NtId) -> &str {
        &self.nts[nt].label
    }

    pub fn word(&self, t: TermId) -> &str {
        &self.terms[t]
    }
}

#[derive(Debug, Default)]
struct Declarations {
    syn: Vec<(String, usize)>,
    sem: Vec<(String, usize)>,
    features: BTreeMap<String, Vec<String>>,
    mnemonics: Vec<(String, Vec<String>, usize)>,
    start: Option<(String, usize)>,
    templates: Vec<RuleTemplate>,
}

fn parse_sections(text: &str) -> Result<Declarations, GrammarError> {
    let mut decls = Declarations::default();
    let mut section = "";
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = match raw.find("//") {
            Some(i) => &raw[..i],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('#') {
            let mut parts = rest.split_whitespace();
            let name = parts.next().unwrap_or("");
            match name {
                "syn" | "sem" | "features" | "mnemonics" | "rules" => section = match name {
                    "syn" => "syn",
                    "sem" => "sem",
                    "features" => "features",
                    "mnemonics" => "mnemonics",
                    _ => "rules",
                },
                "start" => {
                    let sym = parts.next().ok_or_else(|| GrammarError::Syntax {
                        line,
                        msg: "#start requires a symbol".into(),
                    })?;
                    decls.start = Some((sym.to_string(), line));
                }
                other => {
                    return Err(GrammarError::Syntax {
                        line,
                        msg: format!("unknown section `#{other}`"),
                    })
                }
            }
            continue;
        }
        match section {
            "syn" => {
                for s in content.split_whitespace() {
                    decls.syn.push((s.to_string(), line));
                }
            }
            "sem" => {
                for s in content.split_whitespace() {
                    decls.sem.push((s.to_string(), line));
                }
            }
            "features" => {
                let (name, vals) = content.split_once('=').ok_or_else(|| GrammarError::Syntax {
                    line,
                    msg: "feature declaration must be `name = v1 v2 ...`".into(),
                })?;
                let values: Vec<String> =
                    vals.split_whitespace().map(|s| s.to_string()).collect();
                if values.is_empty() {
                    return Err(GrammarError::Syntax {
                        line,
                        msg: "feature declared with no values".into(),
                    });
                }
                decls.features.insert(name.trim().to_string(), values);
            }
            "mnemonics" => {
                let (id, members) =
                    content.split_once(':').ok_or_else(|| GrammarError::Syntax {
                        line,
                        msg: "mnemonic declaration must be `id : member ...`".into(),
                    })?;
                let members: Vec<String> =
                    members.split_whitespace().map(|s| s.to_string()).collect();
                if members.is_empty() {
                    return Err(GrammarError::Syntax {
                        line,
                        msg: "mnemonic with no members".into(),
                    });
                }
                decls.mnemonics.push((id.trim().to_string(), members, line));
            }
            "rules" => decls.templates.push(parse_rule_line(content, line)?),
            _ => {
                return Err(GrammarError::Syntax {
                    line,
                    msg: "content outside any section".into(),
                })
            }
        }
    }
    Ok(decls)
}

fn parse_rule_line(content: &str, line: usize) -> Result<RuleTemplate, GrammarError> {
    let syntax = |msg: &str| GrammarError::Syntax { line, msg: msg.to_string() };
    let (rule_name, rest) = content.split_once(':').ok_or_else(|| syntax("missing `:` after rule id"))?;
    let rule_name = rule_name.trim().to_string();
    if rule_name.is_empty() {
        return Err(syntax("empty rule id"));
    }
    let (lhs_part, rest) = rest.split_once("->").ok_or_else(|| syntax("missing `->`"))?;
    let lhs_part = lhs_part.trim();
    let open = lhs_part.find('[').ok_or_else(|| syntax("LHS must carry `[syn,sem]`"))?;
    let close = lhs_part.rfind(']').ok_or_else(|| syntax("unclosed `[` on LHS"))?;
    let lhs_label = lhs_part[..open].trim().to_string();
    let cat = &lhs_part[open + 1..close];
    let (syn, sem) = cat.split_once(',').ok_or_else(|| syntax("category must be `[syn,sem]`"))?;
    let (rhs_part, trailer) = match rest.split_once(';') {
        Some((r, t)) => (r, Some(t)),
        None => (rest, None),
    };
    let rhs_labels: Vec<String> = rhs_part.split_whitespace().map(|s| s.to_string()).collect();
    if rhs_labels.is_empty() {
        return Err(syntax("empty right-hand side"));
    }
    let mut h1 = None;
    let mut h2 = None;
    if let Some(t) = trailer {
        for tok in t.split_whitespace() {
            let (key, val) = tok.split_once('=').ok_or_else(|| syntax("trailer must be `h1=<k> h2=<k|none>`"))?;
            match key {
                "h1" => {
                    let k: usize = val.parse().map_err(|_| syntax("h1 must be an index"))?;
                    if k == 0 || k > rhs_labels.len() {
                        return Err(GrammarError::BadHead { line, index: k, arity: rhs_labels.len() });
                    }
                    h1 = Some(k - 1);
                }
                "h2" => {
                    if val == "none" {
                        h2 = Some(None);
                    } else {
                        let k: usize = val.parse().map_err(|_| syntax("h2 must be an index or `none`"))?;
                        if k == 0 || k > rhs_labels.len() {
                            return Err(GrammarError::BadHead { line, index: k, arity: rhs_labels.len() });
                        }
                        h2 = Some(Some(k - 1));
                    }
                }
                other => return Err(syntax(&format!("unknown trailer key `{other}`"))),
            }
        }
    }
    Ok(RuleTemplate {
        rule_name,
        lhs_label,
        syn: syn.trim().to_string(),
        sem: sem.trim().to_string(),
        rhs_labels,
        h1,
        h2,
        line,
    })
}

fn template_vars(t: &RuleTemplate, features: &BTreeMap<String, Vec<String>>) -> Vec<String> {
    let mut vars = Vec::new();
    let mut push = |label: &str| {
        for v in extract_vars(label, features) {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
    };
    push(&t.lhs_label);
    for r in &t.rhs_labels {
        push(r);
    }
    vars
}

fn extract_vars(label: &str, features: &BTreeMap<String, Vec<String>>) -> Vec<String> {
    let mut vars = Vec::new();
    let bytes = label.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$' {
            let start = i + 1;
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            // Shrink a maximal identifier to the longest declared feature
            // name, so `$x_$y` reads as `$x` even though `_` is legal in
            // feature names. An unmatched identifier is kept whole and
            // reported as unbound by the caller.
            let mut cut = end;
            while cut > start && !features.contains_key(&label[start..cut]) {
                cut -= 1;
            }
            if cut > start {
                end = cut;
            }
            if end > start {
                vars.push(label[start..end].to_string());
            }
            i = end;
        } else {
            i += 1;
        }
    }
    vars
}

fn substitute(label: &str, assignment: &BTreeMap<String, String>) -> String {
    let mut out = label.to_string();
    // Longer names first so `$ab` is not clobbered by `$a`.
    let mut names: Vec<&String> = assignment.keys().collect();
    names.sort_by_key(|n| std::cmp::Reverse(n.len()));
    for name in names {
        out = out.replace(&format!("${name}"), &assignment[name]);
    }
    out
}

/// Cartesian expansion of templates over their feature variables.
///
/// Ground templates (no variables) pass through unchanged, so expansion is
/// idempotent. All instantiations of one template share its rule id.
pub fn expand_templates(
    features: &BTreeMap<String, Vec<String>>,
    templates: &[RuleTemplate],
) -> Result<Vec<GroundRule>, GrammarError> {
    let mut out = Vec::new();
    for t in templates {
        let vars = template_vars(t, features);
        for v in &vars {
            if !features.contains_key(v) {
                return Err(GrammarError::UnboundVariable { var: v.clone() });
            }
        }
        let mut assignments: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
        for v in &vars {
            let mut next = Vec::new();
            for a in &assignments {
                for val in &features[v] {
                    let mut a2 = a.clone();
                    a2.insert(v.clone(), val.clone());
                    next.push(a2);
                }
            }
            assignments = next;
        }
        for a in assignments {
            out.push(GroundRule {
                rule_name: t.rule_name.clone(),
                lhs_label: substitute(&t.lhs_label, &a),
                syn: t.syn.clone(),
                sem: t.sem.clone(),
                rhs_labels: t.rhs_labels.iter().map(|r| substitute(r, &a)).collect(),
                h1: t.h1,
                h2: t.h2,
                line: t.line,
                assignment: a,
            });
        }
    }
    Ok(out)
}

fn build_grammar(decls: Declarations) -> Result<Grammar, GrammarError> {
    if decls.templates.is_empty() {
        return Err(GrammarError::Empty);
    }
    let mut syn_names = vec!["*top*".to_string()];
    let mut syn_by_name = HashMap::from([("*top*".to_string(), TOP_ID)]);
    for (s, line) in &decls.syn {
        if syn_by_name.contains_key(s) {
            return Err(GrammarError::Syntax { line: *line, msg: format!("duplicate syn symbol `{s}`") });
        }
        syn_by_name.insert(s.clone(), syn_names.len());
        syn_names.push(s.clone());
    }
    if syn_names.len() - 1 > MAX_SYN {
        return Err(GrammarError::TooManySymbols { kind: "syn", count: syn_names.len() - 1, max: MAX_SYN });
    }
    let mut sem_names = vec!["*top*".to_string()];
    let mut sem_by_name = HashMap::from([("*top*".to_string(), TOP_ID)]);
    for (s, line) in &decls.sem {
        if sem_by_name.contains_key(s) {
            return Err(GrammarError::Syntax { line: *line, msg: format!("duplicate sem symbol `{s}`") });
        }
        sem_by_name.insert(s.clone(), sem_names.len());
        sem_names.push(s.clone());
    }
    if sem_names.len() - 1 > MAX_SEM {
        return Err(GrammarError::TooManySymbols { kind: "sem", count: sem_names.len() - 1, max: MAX_SEM });
    }

    let ground = expand_templates(&decls.features, &decls.templates)?;

    // First pass: which labels are NTs (appear as an LHS), and their categories.
    let mut nts: Vec<NonTerminal> = Vec::new();
    let mut nt_by_label: HashMap<String, NtId> = HashMap::new();
    for g in &ground {
        let syn = *syn_by_name
            .get(&g.syn)
            .ok_or_else(|| GrammarError::Undeclared { line: g.line, sym: g.syn.clone() })?;
        let sem = *sem_by_name
            .get(&g.sem)
            .ok_or_else(|| GrammarError::Undeclared { line: g.line, sym: g.sem.clone() })?;
        let cat = Category { syn, sem };
        match nt_by_label.get(&g.lhs_label) {
            Some(&id) => {
                if nts[id].cat != cat {
                    return Err(GrammarError::ConflictingCategory { line: g.line, label: g.lhs_label.clone() });
                }
            }
            None => {
                nt_by_label.insert(g.lhs_label.clone(), nts.len());
                nts.push(NonTerminal {
                    label: g.lhs_label.clone(),
                    cat,
                    features: if g.assignment.is_empty() { None } else { Some(g.assignment.clone()) },
                });
            }
        }
    }

    // Second pass: terminals are rhs symbols with no LHS occurrence.
    let mut terms = vec!["*top*".to_string(), "*none*".to_string(), "*unk*".to_string()];
    let mut term_by_name: HashMap<String, TermId> = HashMap::from([
        ("*top*".to_string(), TERM_TOP),
        ("*none*".to_string(), TERM_NONE),
        ("*unk*".to_string(), TERM_UNK),
    ]);
    let mut rule_names: Vec<String> = vec!["*top*".to_string()];
    let mut rule_by_name: HashMap<String, RuleId> =
        HashMap::from([("*top*".to_string(), TOP_ID)]);
    let mut productions: Vec<Production> = Vec::new();
    let mut seen: HashSet<Production> = HashSet::new();
    for g in &ground {
        let rule = *rule_by_name.entry(g.rule_name.clone()).or_insert_with(|| {
            rule_names.push(g.rule_name.clone());
            rule_names.len() - 1
        });
        let lhs = nt_by_label[&g.lhs_label];
        let mut rhs = Vec::with_capacity(g.rhs_labels.len());
        for r in &g.rhs_labels {
            match nt_by_label.get(r) {
                Some(&id) => rhs.push(Sym::Nt(id)),
                None => {
                    let t = *term_by_name.entry(r.clone()).or_insert_with(|| {
                        terms.push(r.clone());
                        terms.len() - 1
                    });
                    rhs.push(Sym::Term(t));
                }
            }
        }
        // Default h1: leftmost rhs non-terminal, or the first element for
        // purely lexical rules.
        let h1 = match g.h1 {
            Some(i) => i,
            None => rhs
                .iter()
                .position(|s| matches!(s, Sym::Nt(_)))
                .unwrap_or(0),
        };
        let h2 = g.h2.unwrap_or(None);
        let p = Production { lhs, rhs, rule, h1, h2 };
        if seen.insert(p.clone()) {
            productions.push(p);
        }
    }

    // Mnemonic partition: declared blocks first, then singletons.
    let mut mnemonics: Vec<Mnemonic> = Vec::new();
    let mut nt_mnemonic: Vec<Option<MnemId>> = vec![None; nts.len()];
    for (id, members, line) in &decls.mnemonics {
        let mut ids = Vec::new();
        for m in members {
            let nt = *nt_by_label
                .get(m)
                .ok_or_else(|| GrammarError::Undeclared { line: *line, sym: m.clone() })?;
            if nt_mnemonic[nt].is_some() {
                return Err(GrammarError::DuplicateMnemonicMember { label: m.clone() });
            }
            nt_mnemonic[nt] = Some(mnemonics.len());
            ids.push(nt);
        }
        mnemonics.push(Mnemonic { id: id.clone(), representative: ids[0], members: ids });
    }
    for nt in 0..nts.len() {
        if nt_mnemonic[nt].is_none() {
            nt_mnemonic[nt] = Some(mnemonics.len());
            mnemonics.push(Mnemonic {
                id: nts[nt].label.clone(),
                representative: nt,
                members: vec![nt],
            });
        }
    }
    let nt_mnemonic: Vec<MnemId> = nt_mnemonic.into_iter().map(|m| m.unwrap()).collect();

    // Start mnemonic: the #start symbol (NT label or mnemonic id), defaulting
    // to the first production's lhs.
    let start = match &decls.start {
        Some((sym, line)) => {
            if let Some(&nt) = nt_by_label.get(sym) {
                nt_mnemonic[nt]
            } else if let Some(pos) = mnemonics.iter().position(|m| &m.id == sym) {
                pos
            } else {
                return Err(GrammarError::Undeclared { line: *line, sym: sym.clone() });
            }
        }
        None => nt_mnemonic[productions[0].lhs],
    };

    let mut prods_by_lhs = vec![Vec::new(); nts.len()];
    for (i, p) in productions.iter().enumerate() {
        prods_by_lhs[p.lhs].push(i);
    }

    // Mnemonic-level productions.
    let mut mprods: Vec<MnemProduction> = Vec::new();
    let mut mp_index: HashMap<MnemProduction, MpId> = HashMap::new();
    let mut prod_mprod = Vec::with_capacity(productions.len());
    for p in &productions {
        let mp = MnemProduction {
            lhs: nt_mnemonic[p.lhs],
            rhs: p
                .rhs
                .iter()
                .map(|s| match *s {
                    Sym::Nt(n) => MSym::Mnem(nt_mnemonic[n]),
                    Sym::Term(t) => MSym::Term(t),
                })
                .collect(),
            rule: p.rule,
        };
        let id = *mp_index.entry(mp.clone()).or_insert_with(|| {
            mprods.push(mp);
            mprods.len() - 1
        });
        prod_mprod.push(id);
    }
    let mut mprods_by_lhs = vec![Vec::new(); mnemonics.len()];
    for (i, mp) in mprods.iter().enumerate() {
        mprods_by_lhs[mp.lhs].push(i);
    }

    let unary_order = unary_topo_order(&nts, &productions)?;

    Ok(Grammar {
        syn_names,
        sem_names,
        nts,
        terms,
        rule_names,
        mnemonics,
        nt_mnemonic,
        productions,
        prods_by_lhs,
        start,
        mprods,
        prod_mprod,
        mprods_by_lhs,
        unary_order,
        nt_by_label,
        term_by_name,
        syn_by_name,
        sem_by_name,
        rule_by_name,
    })
}

/// Topological order over NTs for the unit-production graph, children first.
/// A cycle would make parse counts infinite, so it is rejected at load time.
fn unary_topo_order(
    nts: &[NonTerminal],
    productions: &[Production],
) -> Result<Vec<NtId>, GrammarError> {
    let n = nts.len();
    // edge lhs -> child for unit productions
    let mut edges: Vec<Vec<NtId>> = vec![Vec::new(); n];
    for p in productions {
        if p.rhs.len() == 1 {
            if let Sym::Nt(c) = p.rhs[0] {
                edges[p.lhs].push(c);
            }
        }
    }
    let mut state = vec![0u8; n]; // 0 unvisited, 1 on stack, 2 done
    let mut order = Vec::with_capacity(n);
    fn visit(
        v: NtId,
        edges: &[Vec<NtId>],
        state: &mut [u8],
        order: &mut Vec<NtId>,
        nts: &[NonTerminal],
    ) -> Result<(), GrammarError> {
        match state[v] {
            1 => return Err(GrammarError::UnaryCycle { label: nts[v].label.clone() }),
            2 => return Ok(()),
            _ => {}
        }
        state[v] = 1;
        for &c in &edges[v] {
            if c != v {
                visit(c, edges, state, order, nts)?;
            } else {
                return Err(GrammarError::UnaryCycle { label: nts[v].label.clone() });
            }
        }
        state[v] = 2;
        order.push(v);
        Ok(())
    }
    for v in 0..n {
        visit(v, &edges, &mut state, &mut order, nts)?;
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn figure1_grammar_loads() {
        let g = Grammar::parse_str(FIG1).unwrap();
        assert_eq!(g.productions.len(), 4);
        assert_eq!(g.nts.len(), 3);
        assert_eq!(g.terms.len(), 3 + 2); // reserved + a, b
        let s = g.nt_id("S").unwrap();
        assert_eq!(g.mnemonic_of(s).id, "S");
        assert_eq!(g.start, g.nt_mnemonic[s]);
    }

    #[test]
    fn empty_grammar_rejected() {
        let err = Grammar::parse_str("#syn\ns\n#sem\nx\n").unwrap_err();
        assert!(matches!(err, GrammarError::Empty));
    }

    #[test]
    fn template_with_one_variable_expands_to_three() {
        let src = "\
#syn
np det n
#sem
x
#features
num = s p u
#rules
np1 : NP_$num[np,x] -> Det N_$num ; h1=2
det : Det[det,x] -> the
n1 : N_$num[n,x] -> dog
";
        let g = Grammar::parse_str(src).unwrap();
        let np1: Vec<_> = g
            .productions
            .iter()
            .filter(|p| g.rule_names[p.rule] == "np1")
            .collect();
        assert_eq!(np1.len(), 3);
        // all instantiations share the rule id
        let rid = np1[0].rule;
        assert!(np1.iter().all(|p| p.rule == rid));
        assert!(g.nt_id("NP_s").is_some());
        assert!(g.nt_id("NP_p").is_some());
        assert!(g.nt_id("NP_u").is_some());
    }

    #[test]
    fn template_with_two_independent_variables_expands_to_six() {
        let mut features = BTreeMap::new();
        features.insert("x".to_string(), vec!["1".into(), "2".into()]);
        features.insert("y".to_string(), vec!["a".into(), "b".into(), "c".into()]);
        let t = parse_rule_line("r : P_$x_$y[s,m] -> Q_$x R_$y", 1).unwrap();
        let ground = expand_templates(&features, &[t]).unwrap();
        assert_eq!(ground.len(), 6);
        let labels: HashSet<_> = ground.iter().map(|g| g.lhs_label.clone()).collect();
        assert_eq!(labels.len(), 6);
    }

    #[test]
    fn zero_variable_template_is_identity() {
        let features = BTreeMap::new();
        let t = parse_rule_line("r : S[s,x] -> A B ; h1=1", 1).unwrap();
        let ground = expand_templates(&features, &[t.clone()]).unwrap();
        assert_eq!(ground.len(), 1);
        assert_eq!(ground[0].lhs_label, t.lhs_label);
        assert_eq!(ground[0].rhs_labels, t.rhs_labels);
    }

    #[test]
    fn unbound_variable_rejected() {
        let features = BTreeMap::new();
        let t = parse_rule_line("r : S_$q[s,x] -> a", 1).unwrap();
        let err = expand_templates(&features, &[t]).unwrap_err();
        assert!(matches!(err, GrammarError::UnboundVariable { .. }));
    }

    #[test]
    fn mnemonic_partition_and_identity() {
        let src = "\
#syn
s n
#sem
x
#mnemonics
NX : N1 N2
#start S
#rules
r1 : S[s,x] -> N1 N2
r2 : N1[n,x] -> a
r3 : N2[n,x] -> b
";
        let g = Grammar::parse_str(src).unwrap();
        let n1 = g.nt_id("N1").unwrap();
        let n2 = g.nt_id("N2").unwrap();
        assert_eq!(g.mnemonic_of(n1).id, "NX");
        assert_eq!(g.mnemonic_of(n2).id, "NX");
        assert_eq!(g.mnemonic_of(n1).representative, n1);
        // partition property: every NT in exactly one mnemonic
        let total: usize = g.mnemonics.iter().map(|m| m.members.len()).sum();
        assert_eq!(total, g.nts.len());
        let mut seen = HashSet::new();
        for m in &g.mnemonics {
            for &nt in &m.members {
                assert!(seen.insert(nt), "NT in two mnemonics");
            }
        }
        // identity partition: singleton mnemonics have themselves as representative
        let s = g.nt_id("S").unwrap();
        assert_eq!(g.mnemonic_of(s).representative, s);
    }

    #[test]
    fn conflicting_category_rejected() {
        let src = "\
#syn
s n
#sem
x
#rules
r1 : S[s,x] -> a
r2 : S[n,x] -> b
";
        let err = Grammar::parse_str(src).unwrap_err();
        assert!(matches!(err, GrammarError::ConflictingCategory { .. }));
    }

    #[test]
    fn bad_head_index_rejected() {
        let src = "\
#syn
s
#sem
x
#rules
r1 : S[s,x] -> a b ; h1=3
";
        let err = Grammar::parse_str(src).unwrap_err();
        assert!(matches!(err, GrammarError::BadHead { index: 3, arity: 2, .. }));
    }

    #[test]
    fn default_heads() {
        let src = "\
#syn
s a
#sem
x
#rules
r1 : S[s,x] -> of A b
r2 : A[a,x] -> a
";
        let g = Grammar::parse_str(src).unwrap();
        let p = &g.productions[0];
        assert_eq!(p.h1, 1); // leftmost NT
        assert_eq!(p.h2, None);
        let lex = &g.productions[1];
        assert_eq!(lex.h1, 0); // the terminal
    }

    #[test]
    fn unary_cycle_rejected() {
        let src = "\
#syn
s
#sem
x
#rules
r1 : A[s,x] -> B
r2 : B[s,x] -> A
r3 : A[s,x] -> a
";
        let err = Grammar::parse_str(src).unwrap_err();
        assert!(matches!(err, GrammarError::UnaryCycle { .. }));
    }

    #[test]
    fn serialize_round_trip() {
        let g = Grammar::parse_str(FIG1).unwrap();
        let g2 = Grammar::parse_str(&g.serialize()).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn duplicate_productions_deduplicated() {
        let src = "\
#syn
s
#sem
x
#rules
r1 : S[s,x] -> a
r1 : S[s,x] -> a
";
        let g = Grammar::parse_str(src).unwrap();
        assert_eq!(g.productions.len(), 1);
    }
}
