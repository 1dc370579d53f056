//! Reference implementations by exhaustive generation. Deliberately naive:
//! these exist to cross-check the chart-based algorithms in tests, not for
//! production use.

use crate::chart::{Tree, TreeChild};
use crate::grammar::{Grammar, NtId, Sym};
use crate::treebank::Sentence;

/// Every parse of the sentence rooted in the start mnemonic, generated
/// top-down with a depth bound (depth = longest chain of constituents).
pub fn all_trees(grammar: &Grammar, sentence: &Sentence, max_depth: usize) -> Vec<Tree> {
    let tokens: Vec<_> = sentence.tokens.iter().map(|w| grammar.term_or_unk(w)).collect();
    let mut out = Vec::new();
    for &nt in &grammar.mnemonics[grammar.start].members {
        out.extend(gen(grammar, &tokens, nt, 0, tokens.len(), max_depth));
    }
    out
}

fn gen(grammar: &Grammar, tokens: &[usize], nt: NtId, i: usize, j: usize, depth: usize) -> Vec<Tree> {
    if depth == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for &pid in &grammar.prods_by_lhs[nt] {
        let p = &grammar.productions[pid];
        let mut partials: Vec<(usize, Vec<TreeChild>)> = vec![(i, Vec::new())];
        for sym in &p.rhs {
            let mut next = Vec::new();
            for (pos, kids) in partials {
                match *sym {
                    Sym::Term(t) => {
                        if pos < j && tokens[pos] == t {
                            let mut k2 = kids.clone();
                            k2.push(TreeChild::Leaf { word: t, pos });
                            next.push((pos + 1, k2));
                        }
                    }
                    Sym::Nt(a) => {
                        for end in (pos + 1)..=j {
                            for sub in gen(grammar, tokens, a, pos, end, depth - 1) {
                                let mut k2 = kids.clone();
                                k2.push(TreeChild::Node(Box::new(sub)));
                                next.push((end, k2));
                            }
                        }
                    }
                }
            }
            partials = next;
        }
        for (pos, kids) in partials {
            if pos == j {
                out.push(Tree::assemble(grammar, nt, pid, (i, j), kids));
            }
        }
    }
    out
}
