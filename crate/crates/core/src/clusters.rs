//! Word classes from distributional statistics: greedy agglomerative
//! clustering that minimizes the loss of average mutual information between
//! adjacent classes, yielding a binary hierarchy encoded as bitstrings.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use crate::treebank::Sentence;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("code for `{symbol}` needs {needed} bits but the table width is {width}")]
    WidthExceeded { symbol: String, needed: usize, width: usize },
    #[error("no words to cluster")]
    EmptyVocabulary,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A fixed-width binary code; bit 0 is the most significant (top of the
/// cluster hierarchy).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitstring {
    bits: Vec<u8>,
}

impl Bitstring {
    pub fn from_bits(bits: Vec<u8>) -> Bitstring {
        debug_assert!(bits.iter().all(|&b| b <= 1));
        Bitstring { bits }
    }

    pub fn parse(s: &str) -> Option<Bitstring> {
        let mut bits = Vec::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => bits.push(0),
                '1' => bits.push(1),
                _ => return None,
            }
        }
        Some(Bitstring { bits })
    }

    /// The binary expansion of `index`, MSB first, in exactly `width` bits.
    pub fn from_index(index: usize, width: usize) -> Bitstring {
        let bits = (0..width).map(|i| ((index >> (width - 1 - i)) & 1) as u8).collect();
        Bitstring { bits }
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn bit(&self, i: usize) -> u8 {
        self.bits[i]
    }

    /// Right-pad with zeros to `width`.
    pub fn padded(&self, width: usize) -> Bitstring {
        let mut bits = self.bits.clone();
        bits.resize(width, 0);
        Bitstring { bits }
    }

    pub fn common_prefix_len(&self, other: &Bitstring) -> usize {
        self.bits.iter().zip(&other.bits).take_while(|(a, b)| a == b).count()
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Adjacent-word counts over a corpus, with sentence-boundary symbols. The
/// boundary symbols enter the statistics but are never clustered.
#[derive(Debug, Clone, Default)]
pub struct BigramStats {
    pub counts: BTreeMap<(String, String), f64>,
}

pub fn collect_bigrams(sentences: &[Sentence]) -> BigramStats {
    let mut stats = BigramStats::default();
    for s in sentences {
        let mut prev = BOS.to_string();
        for w in &s.tokens {
            *stats.counts.entry((prev, w.clone())).or_insert(0.0) += 1.0;
            prev = w.clone();
        }
        *stats.counts.entry((prev, EOS.to_string())).or_insert(0.0) += 1.0;
    }
    stats
}

enum MergeTree {
    Leaf(usize),
    Node(Box<MergeTree>, Box<MergeTree>),
}

struct Cluster {
    name: String,
    tree: MergeTree,
}

pub struct ClusterResult {
    pub codes: BTreeMap<String, Bitstring>,
    /// Average mutual information after 0, 1, 2, ... merges (non-increasing).
    pub mi_trace: Vec<f64>,
}

fn term(c: f64, row: f64, col: f64, n: f64) -> f64 {
    if c > 0.0 {
        (c / n) * ((c * n) / (row * col)).ln()
    } else {
        0.0
    }
}

/// Greedy agglomerative clustering of the vocabulary down to `num_leaves`
/// classes, each merge chosen to minimize the loss of average mutual
/// information between adjacent classes. Ties prefer the lexicographically
/// smallest pair of class names (a class is named by its smallest member).
/// Each word's code is its class index (in class-name order) followed by its
/// path through the class's internal merge tree, zero-padded to `width`.
pub fn mi_cluster(
    stats: &BigramStats,
    num_leaves: usize,
    width: usize,
) -> Result<ClusterResult, ClusterError> {
    let mut vocab: Vec<String> = Vec::new();
    for (l, r) in stats.counts.keys() {
        for w in [l, r] {
            if w != BOS && w != EOS && !vocab.contains(w) {
                vocab.push(w.clone());
            }
        }
    }
    vocab.sort();
    if vocab.is_empty() {
        return Err(ClusterError::EmptyVocabulary);
    }

    // class 0..vocab.len() are words; the last two slots are <s> and </s>
    let n_all = vocab.len() + 2;
    let bos_i = vocab.len();
    let eos_i = vocab.len() + 1;
    let idx_of = |w: &str| {
        if w == BOS {
            bos_i
        } else if w == EOS {
            eos_i
        } else {
            vocab.binary_search_by(|v| v.as_str().cmp(w)).unwrap()
        }
    };
    let mut cnt = vec![vec![0.0f64; n_all]; n_all];
    let mut total = 0.0;
    for ((l, r), &c) in &stats.counts {
        cnt[idx_of(l)][idx_of(r)] += c;
        total += c;
    }
    let mut row: Vec<f64> = cnt.iter().map(|r| r.iter().sum()).collect();
    let mut col: Vec<f64> = (0..n_all).map(|j| cnt.iter().map(|r| r[j]).sum()).collect();

    let mut clusters: Vec<Option<Cluster>> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| Some(Cluster { name: w.clone(), tree: MergeTree::Leaf(i) }))
        .collect();
    clusters.push(None); // <s>
    clusters.push(None); // </s>

    let avg_mi = |cnt: &Vec<Vec<f64>>, row: &Vec<f64>, col: &Vec<f64>| -> f64 {
        let mut i = 0.0;
        for (a, r) in cnt.iter().enumerate() {
            for (b, &c) in r.iter().enumerate() {
                i += term(c, row[a], col[b], total);
            }
        }
        i
    };
    let mut mi_trace = vec![avg_mi(&cnt, &row, &col)];

    let mut live = vocab.len();
    while live > num_leaves {
        // contribution of all cells in rows/columns a or b, before the merge
        let affected_before = |a: usize, b: usize| -> f64 {
            let mut s = 0.0;
            for k in 0..n_all {
                s += term(cnt[a][k], row[a], col[k], total);
                s += term(cnt[b][k], row[b], col[k], total);
                s += term(cnt[k][a], row[k], col[a], total);
                s += term(cnt[k][b], row[k], col[b], total);
            }
            // the four intersection cells were counted twice
            s -= term(cnt[a][a], row[a], col[a], total);
            s -= term(cnt[a][b], row[a], col[b], total);
            s -= term(cnt[b][a], row[b], col[a], total);
            s -= term(cnt[b][b], row[b], col[b], total);
            s
        };
        let affected_after = |a: usize, b: usize| -> f64 {
            let rm = row[a] + row[b];
            let cm = col[a] + col[b];
            let mut s = 0.0;
            for k in 0..n_all {
                if k == a || k == b {
                    continue;
                }
                s += term(cnt[a][k] + cnt[b][k], rm, col[k], total);
                s += term(cnt[k][a] + cnt[k][b], row[k], cm, total);
            }
            s += term(cnt[a][a] + cnt[a][b] + cnt[b][a] + cnt[b][b], rm, cm, total);
            s
        };

        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..vocab.len() {
            if clusters[a].is_none() {
                continue;
            }
            for b in (a + 1)..vocab.len() {
                if clusters[b].is_none() {
                    continue;
                }
                let delta = affected_after(a, b) - affected_before(a, b);
                let better = match best {
                    None => true,
                    Some((d, ba, bb)) => {
                        delta > d + 1e-12
                            || ((delta - d).abs() <= 1e-12
                                && key(&clusters, a, b) < key(&clusters, ba, bb))
                    }
                };
                if better {
                    best = Some((delta, a, b));
                }
            }
        }
        let (delta, a, b) = best.expect("at least two clusters remain");

        // fold b into a
        for k in 0..n_all {
            cnt[a][k] += cnt[b][k];
            cnt[b][k] = 0.0;
        }
        for r in cnt.iter_mut() {
            r[a] += r[b];
            r[b] = 0.0;
        }
        row[a] += row[b];
        row[b] = 0.0;
        col[a] += col[b];
        col[b] = 0.0;
        let cb = clusters[b].take().unwrap();
        let ca = clusters[a].take().unwrap();
        let (left, right) =
            if ca.name <= cb.name { (ca, cb) } else { (cb, ca) };
        clusters[a] = Some(Cluster {
            name: left.name.clone(),
            tree: MergeTree::Node(Box::new(left.tree), Box::new(right.tree)),
        });
        live -= 1;
        mi_trace.push(mi_trace.last().unwrap() + delta);
    }

    // class order by name; prefix width covers the class count
    let mut finals: Vec<&Cluster> = clusters.iter().flatten().collect();
    finals.sort_by(|a, b| a.name.cmp(&b.name));
    let prefix_w = bits_for(finals.len());
    let mut codes: BTreeMap<String, Bitstring> = BTreeMap::new();
    for (ci, c) in finals.iter().enumerate() {
        let prefix = Bitstring::from_index(ci, prefix_w);
        let mut path = Vec::new();
        assign(&c.tree, &vocab, &prefix, &mut path, width, &mut codes)?;
    }
    Ok(ClusterResult { codes, mi_trace })
}

fn key<'a>(clusters: &'a [Option<Cluster>], a: usize, b: usize) -> (&'a str, &'a str) {
    let na = clusters[a].as_ref().unwrap().name.as_str();
    let nb = clusters[b].as_ref().unwrap().name.as_str();
    if na <= nb {
        (na, nb)
    } else {
        (nb, na)
    }
}

/// Bits needed to index `n` distinct values (0 when n <= 1).
pub fn bits_for(n: usize) -> usize {
    let mut w = 0;
    while (1usize << w) < n {
        w += 1;
    }
    w
}

fn assign(
    tree: &MergeTree,
    vocab: &[String],
    prefix: &Bitstring,
    path: &mut Vec<u8>,
    width: usize,
    codes: &mut BTreeMap<String, Bitstring>,
) -> Result<(), ClusterError> {
    match tree {
        MergeTree::Leaf(w) => {
            let needed = prefix.width() + path.len();
            if needed > width {
                return Err(ClusterError::WidthExceeded {
                    symbol: vocab[*w].clone(),
                    needed,
                    width,
                });
            }
            let mut bits: Vec<u8> = (0..prefix.width()).map(|i| prefix.bit(i)).collect();
            bits.extend_from_slice(path);
            codes.insert(vocab[*w].clone(), Bitstring::from_bits(bits).padded(width));
            Ok(())
        }
        MergeTree::Node(l, r) => {
            path.push(0);
            assign(l, vocab, prefix, path, width, codes)?;
            path.pop();
            path.push(1);
            assign(r, vocab, prefix, path, width, codes)?;
            path.pop();
            Ok(())
        }
    }
}

/// Write a bitstring table: one `namespace symbol bits` triple per line.
pub fn write_bitstrings<W: Write>(
    w: &mut W,
    tables: &BTreeMap<(String, String), Bitstring>,
) -> std::io::Result<()> {
    for ((ns, sym), code) in tables {
        writeln!(w, "{ns} {sym} {code}")?;
    }
    Ok(())
}

pub fn load_bitstrings(path: &Path) -> Result<BTreeMap<(String, String), Bitstring>, ClusterError> {
    let f = std::fs::File::open(path)?;
    let mut out = BTreeMap::new();
    for (ln, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| ClusterError::Format { line: ln + 1, msg: msg.to_string() };
        let mut parts = line.split_whitespace();
        let ns = parts.next().ok_or_else(|| bad("missing namespace"))?;
        let sym = parts.next().ok_or_else(|| bad("missing symbol"))?;
        let bits = parts.next().ok_or_else(|| bad("missing bits"))?;
        if parts.next().is_some() {
            return Err(bad("trailing fields"));
        }
        let code = Bitstring::parse(bits).ok_or_else(|| bad("bits must be 0/1"))?;
        out.insert((ns.to_string(), sym.to_string()), code);
    }
    Ok(out)
}

/// Human-readable sanity report: words sorted by code, so distributionally
/// similar words (sharing long code prefixes) appear adjacent.
pub fn code_report(codes: &BTreeMap<String, Bitstring>) -> String {
    let mut rows: Vec<(&Bitstring, &String)> = codes.iter().map(|(w, c)| (c, w)).collect();
    rows.sort_by(|a, b| a.0.to_string().cmp(&b.0.to_string()).then(a.1.cmp(b.1)));
    let mut out = String::new();
    for (c, w) in rows {
        out.push_str(&format!("{c} {w}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentences(src: &[&str]) -> Vec<Sentence> {
        src.iter()
            .map(|s| Sentence { tokens: s.split_whitespace().map(|w| w.to_string()).collect() })
            .collect()
    }

    // Two clean distributional classes: determiners precede nouns.
    fn det_noun_corpus() -> Vec<Sentence> {
        sentences(&[
            "the dog saw a cat",
            "a dog saw the bird",
            "the cat saw a bird",
            "a bird saw the dog",
            "the bird saw a dog",
            "a cat saw the cat",
        ])
    }

    #[test]
    fn bigram_counts_include_boundaries() {
        let stats = collect_bigrams(&sentences(&["a b", "a c"]));
        assert_eq!(stats.counts[&(BOS.to_string(), "a".to_string())], 2.0);
        assert_eq!(stats.counts[&("b".to_string(), EOS.to_string())], 1.0);
        assert_eq!(stats.counts[&("a".to_string(), "b".to_string())], 1.0);
    }

    #[test]
    fn mi_trace_non_increasing() {
        let stats = collect_bigrams(&det_noun_corpus());
        let r = mi_cluster(&stats, 2, 16).unwrap();
        for w in r.mi_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "average MI increased: {w:?}");
        }
    }

    #[test]
    fn similar_words_share_longer_prefixes() {
        let stats = collect_bigrams(&det_noun_corpus());
        let r = mi_cluster(&stats, 3, 16).unwrap();
        let c = &r.codes;
        let within = c["the"].common_prefix_len(&c["a"]);
        let across = c["the"].common_prefix_len(&c["dog"]);
        assert!(within > across, "within={within} across={across}\n{}", code_report(c));
        let nouns = ["dog", "cat", "bird"];
        for x in nouns {
            for y in nouns {
                if x != y {
                    assert!(c[x].common_prefix_len(&c[y]) > c[x].common_prefix_len(&c["saw"]));
                }
            }
        }
    }

    #[test]
    fn codes_unique_and_fixed_width() {
        let stats = collect_bigrams(&det_noun_corpus());
        let r = mi_cluster(&stats, 2, 16).unwrap();
        let mut seen = std::collections::HashSet::new();
        for code in r.codes.values() {
            assert_eq!(code.width(), 16);
            assert!(seen.insert(code.to_string()), "duplicate code {code}");
        }
        assert_eq!(r.codes.len(), 6);
        assert!(!r.codes.contains_key(BOS));
        assert!(!r.codes.contains_key(EOS));
    }

    #[test]
    fn clustering_is_deterministic() {
        let stats = collect_bigrams(&det_noun_corpus());
        let a = mi_cluster(&stats, 2, 16).unwrap();
        let b = mi_cluster(&stats, 2, 16).unwrap();
        assert_eq!(a.codes, b.codes);
    }

    #[test]
    fn width_overflow_is_an_error() {
        let stats = collect_bigrams(&det_noun_corpus());
        match mi_cluster(&stats, 1, 2) {
            Err(ClusterError::WidthExceeded { .. }) => {}
            other => panic!("expected width error, got {:?}", other.map(|r| r.codes)),
        }
    }

    #[test]
    fn table_round_trip() {
        let stats = collect_bigrams(&det_noun_corpus());
        let r = mi_cluster(&stats, 2, 8).unwrap();
        let mut table = BTreeMap::new();
        for (w, c) in &r.codes {
            table.insert(("word".to_string(), w.clone()), c.clone());
        }
        let mut buf = Vec::new();
        write_bitstrings(&mut buf, &table).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.tsv");
        std::fs::write(&path, &buf).unwrap();
        let back = load_bitstrings(&path).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn from_index_is_msb_first() {
        assert_eq!(Bitstring::from_index(5, 4).to_string(), "0101");
        assert_eq!(Bitstring::from_index(0, 0).to_string(), "");
        assert_eq!(bits_for(1), 0);
        assert_eq!(bits_for(2), 1);
        assert_eq!(bits_for(5), 3);
    }
}
