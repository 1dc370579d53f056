//! Randomized invariants over the treebank format, derivations and codes.

use proptest::prelude::*;

use hbg_parser::chart::{enumerate_parses, parse_all};
use hbg_parser::clusters::Bitstring;
use hbg_parser::grammar::Grammar;
use hbg_parser::harness::{error_reduction, gen_synthetic, GenConfig};
use hbg_parser::history::{leftmost_derivation, replay};
use hbg_parser::treebank::{parse_corpus, write_corpus, Sentence};

const ANBN: &str = "\
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

proptest! {
    #[test]
    fn corpus_round_trips_through_text(seed in 0u64..1000, n in 1usize..30) {
        let syn = gen_synthetic(&GenConfig { seed, sentences: n, ..GenConfig::default() })
            .unwrap();
        let text = write_corpus(&syn.corpus);
        let back = parse_corpus(&text).unwrap();
        prop_assert_eq!(&back, &syn.corpus);
    }

    #[test]
    fn replay_inverts_leftmost_derivation(n in 1usize..6) {
        let g = Grammar::parse_str(ANBN).unwrap();
        let tokens: Vec<String> = std::iter::repeat("a".to_string())
            .take(n)
            .chain(std::iter::repeat("b".to_string()).take(n))
            .collect();
        let f = parse_all(&Sentence { tokens }, &g);
        let t = enumerate_parses(&f, &g, 2).remove(0);
        let deriv = leftmost_derivation(&t);
        prop_assert_eq!(replay(&g, &deriv), Some(t.leaf_terms()));
    }

    #[test]
    fn perfect_accuracy_means_full_error_reduction(b in 0.0f64..99.9) {
        prop_assert!((error_reduction(b, 100.0) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bitstring_text_round_trip(bits in proptest::collection::vec(0u8..2, 1..24)) {
        let code = Bitstring::from_bits(bits.clone());
        let back = Bitstring::parse(&code.to_string()).unwrap();
        prop_assert_eq!(&back, &code);
        for (i, b) in bits.iter().enumerate() {
            prop_assert_eq!(back.bit(i), *b);
        }
    }
}
