//! History-based grammar parsing toolkit.
//!
//! Training from bracketed corpora, a P-CFG baseline with Treebank-constrained
//! Inside-Outside reestimation, a five-factor history-based model with a
//! decision-tree rule component, Viterbi decoding over packed forests, and the
//! exact-match evaluation metrics (any-consistent rate, Viterbi rate, parse base).

pub mod chart;
pub mod clusters;
pub mod dtree;
pub mod grammar;
pub mod harness;
pub mod hbg;
pub mod history;
pub mod oracle;
pub mod pcfg;
pub mod treebank;
