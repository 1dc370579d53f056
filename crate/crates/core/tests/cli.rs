//! End-to-end check of the command-line pipeline on a generated corpus.

use std::process::Command;

fn hbg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hbg")).args(args).output().expect("spawn hbg")
}

fn ok(args: &[&str]) -> String {
    let out = hbg(args);
    assert!(
        out.status.success(),
        "hbg {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let data = p("data");
    let grammar = p("data/grammar.hbg");
    let corpus = p("data/corpus.tb");

    ok(&["gen", "--out", &data, "--seed", "3", "--sentences", "80"]);
    assert!(dir.path().join("data/run-manifest.toml").exists());

    let pcfg = p("model.pcfg");
    let msg = ok(&["train-pcfg", "--grammar", &grammar, "--corpus", &corpus, "--out", &pcfg]);
    assert!(msg.contains("0 without a consistent parse"), "{msg}");

    ok(&[
        "io-train", "--grammar", &grammar, "--corpus", &corpus, "--init", &pcfg,
        "--iterations", "2", "--out", &p("model-io.pcfg"),
    ]);

    let events = p("events.tsv");
    ok(&[
        "extract-events", "--grammar", &grammar, "--corpus", &corpus, "--pcfg", &pcfg,
        "--out", &events, "--parent-mode", "functional",
    ]);

    let words = p("words.tsv");
    ok(&["cluster", "--corpus", &corpus, "--out", &words, "--leaves", "8", "--width", "8"]);

    ok(&[
        "grow-tree", "--grammar", &grammar, "--events", &events, "--out", &p("rule.dt"),
        "--word-codes", &words, "--width", "8",
    ]);

    let bundle = p("hbg-model");
    ok(&[
        "train-hbg", "--grammar", &grammar, "--events", &events, "--out", &bundle,
        "--kind", "hbg", "--word-codes", &words, "--width", "8",
        "--parent-mode", "functional",
    ]);

    let input = p("input.txt");
    std::fs::write(&input, "the svp0 vvp0 the obj0 with the obj1\n").unwrap();
    let parsed = ok(&["parse", "--grammar", &grammar, "--model", &bundle, "--input", &input]);
    assert!(parsed.contains("# logprob="), "{parsed}");
    assert!(parsed.contains("[S "), "{parsed}");

    let report = ok(&[
        "eval", "--grammar", &grammar, "--corpus", &corpus, "--model", &bundle,
        "--name", "HBG", "--baseline", "pcfg:50.0",
    ]);
    assert!(report.contains("viterbi_rate="), "{report}");
    assert!(report.contains("error_reduction="), "{report}");

    // coverage floor breach must exit with status 2
    let out = hbg(&[
        "eval", "--grammar", &grammar, "--corpus", &corpus, "--model", &pcfg,
        "--min-coverage", "100.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
