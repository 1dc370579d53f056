//! Command-line front end for the history-based grammar toolkit.

use std::collections::BTreeMap;
use std::io::{BufWriter, Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use hbg_parser::chart::{best_consistent, parse_all, viterbi, ParentMode, ScoringModel};
use hbg_parser::clusters::{collect_bigrams, code_report, load_bitstrings, mi_cluster, write_bitstrings};
use hbg_parser::dtree::{BitstringTables, DecisionTree, GrowConfig};
use hbg_parser::grammar::Grammar;
use hbg_parser::harness::{evaluate, gen_synthetic, write_manifest, GenConfig};
use hbg_parser::hbg::{FactorConfig, HbgConfig, HbgModel, SimpleHeadModel};
use hbg_parser::history::{extract_events, read_events, write_events};
use hbg_parser::pcfg::{estimate_rf, io_train, PcfgModel};
use hbg_parser::treebank::{parse_corpus, LabelMap, RefTree, Sentence};

#[derive(Parser)]
#[command(name = "hbg", version, about = "History-based grammar parsing toolkit")]
struct Cli {
    /// Optional TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the run manifest (defaults to a path derived from the
    /// output argument).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Immediate,
    Functional,
}

impl From<ModeArg> for ParentMode {
    fn from(m: ModeArg) -> ParentMode {
        match m {
            ModeArg::Immediate => ParentMode::Immediate,
            ModeArg::Functional => ParentMode::Functional,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Pcfg,
    Simple,
    Hbg,
}

#[derive(Args)]
struct CommonTrain {
    /// Grammar file.
    #[arg(long)]
    grammar: PathBuf,
    /// Bracketed treebank corpus (blank-line separated records).
    #[arg(long)]
    corpus: PathBuf,
    /// Optional label map file (`treebank-label mnemonic` pairs).
    #[arg(long)]
    label_map: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate a P-CFG by smoothed relative frequency over best consistent
    /// parses.
    TrainPcfg {
        #[command(flatten)]
        common: CommonTrain,
        #[arg(long)]
        out: PathBuf,
        /// Additive smoothing weight per production.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Re-estimate a P-CFG with treebank-constrained inside-outside EM.
    IoTrain {
        #[command(flatten)]
        common: CommonTrain,
        #[arg(long)]
        out: PathBuf,
        /// Initial model file (defaults to the uniform model).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Dump training events (history plus outcome) from best consistent
    /// parses under a P-CFG.
    ExtractEvents {
        #[command(flatten)]
        common: CommonTrain,
        /// P-CFG model used to pick the best consistent parse.
        #[arg(long)]
        pcfg: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        parent_mode: Option<ModeArg>,
    },
    /// Cluster the corpus vocabulary into binary codes by bigram mutual
    /// information.
    Cluster {
        /// Bracketed treebank corpus supplying the word sequences.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of leaf classes to keep before code assignment.
        #[arg(long)]
        leaves: Option<usize>,
        /// Code width in bits.
        #[arg(long)]
        width: Option<usize>,
    },
    /// Grow the rule decision tree from an event dump.
    GrowTree {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Word bitstring file from `cluster`; canonical index codes are used
        /// when absent.
        #[arg(long)]
        word_codes: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        min_events: Option<usize>,
        #[arg(long)]
        min_gain: Option<f64>,
        #[arg(long)]
        max_depth: Option<usize>,
        /// Fixed interpolation weight (fitted on held-out data when absent).
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train a history-based model bundle from an event dump.
    TrainHbg {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Output bundle directory.
        #[arg(long)]
        out: PathBuf,
        /// `hbg` for the five-factor model, `simple` for the head-driven one.
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long, value_enum)]
        parent_mode: Option<ModeArg>,
        #[arg(long)]
        word_codes: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Parse sentences (one per line; `-` for stdin) and print the best tree.
    Parse {
        #[arg(long)]
        grammar: PathBuf,
        /// Model file (P-CFG) or bundle directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Evaluate a model against a reference corpus.
    Eval {
        #[command(flatten)]
        common: CommonTrain,
        #[arg(long)]
        model: PathBuf,
        /// Display name for the report column.
        #[arg(long)]
        name: Option<String>,
        /// Baseline viterbi rate for the error-reduction line, as NAME:RATE.
        #[arg(long)]
        baseline: Option<String>,
        /// Exit with status 2 when the any-consistent rate falls below this
        /// percentage.
        #[arg(long)]
        min_coverage: Option<f64>,
    },
    /// Generate a synthetic grammar and corpus.
    Gen {
        /// Output directory for grammar.hbg and corpus.tb.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sentences: Option<usize>,
    },
}

/// Defaults that may come from the config file; flags win over these.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    alpha: Option<f64>,
    iterations: Option<usize>,
    parent_mode: Option<String>,
    leaves: Option<usize>,
    width: Option<usize>,
    min_events: Option<usize>,
    min_gain: Option<f64>,
    max_depth: Option<usize>,
    lambda: Option<f64>,
    min_coverage: Option<f64>,
    gen: Option<GenConfig>,
}

fn load_config(path: &Option<PathBuf>) -> Result<(FileConfig, String)> {
    match path {
        None => Ok((FileConfig::default(), String::new())),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            let cfg = toml::from_str(&text)
                .with_context(|| format!("parsing config {}", p.display()))?;
            Ok((cfg, text))
        }
    }
}

fn parse_mode_name(s: &str) -> Result<ParentMode> {
    match s {
        "immediate" => Ok(ParentMode::Immediate),
        "functional" => Ok(ParentMode::Functional),
        other => bail!("unknown parent mode {other:?} (expected immediate or functional)"),
    }
}

fn load_label_map(path: &Option<PathBuf>) -> Result<LabelMap> {
    match path {
        None => Ok(LabelMap::identity()),
        Some(p) => Ok(LabelMap::load(p)?),
    }
}

fn load_corpus(path: &Path) -> Result<Vec<(Sentence, RefTree)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading corpus {}", path.display()))?;
    Ok(parse_corpus(&text)?)
}

fn word_tables(
    grammar: &Grammar,
    codes: &Option<PathBuf>,
    width: usize,
) -> Result<BitstringTables> {
    match codes {
        None => Ok(BitstringTables::canonical(grammar, width)),
        Some(p) => {
            let table = load_bitstrings(p)?;
            let words: BTreeMap<String, _> = table
                .into_iter()
                .filter(|((ns, _), _)| ns == "word")
                .map(|((_, w), c)| (w, c))
                .collect();
            Ok(BitstringTables::with_word_codes(grammar, &words, width))
        }
    }
}

/// Model loaded for decoding: a P-CFG file or a bundle directory whose
/// manifest names the kind.
fn load_model(path: &Path, grammar: &Grammar) -> Result<Box<dyn ScoringModel>> {
    if path.is_dir() {
        let manifest = std::fs::read_to_string(path.join("manifest.toml"))
            .with_context(|| format!("reading {}/manifest.toml", path.display()))?;
        let value: toml::Value = toml::from_str(&manifest)?;
        match value.get("kind").and_then(|k| k.as_str()) {
            Some("hbg") => Ok(Box::new(HbgModel::load(path, grammar)?)),
            Some("simple") => Ok(Box::new(SimpleHeadModel::load(path)?)),
            other => bail!("unsupported bundle kind {other:?}"),
        }
    } else {
        Ok(Box::new(PcfgModel::load(path, grammar)?))
    }
}

fn manifest_path(explicit: &Option<PathBuf>, out: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.clone();
    }
    match out {
        Some(out) if out.extension().is_some() => {
            out.with_extension(format!("{}.manifest.toml", out.extension().unwrap().to_string_lossy()))
        }
        Some(out) => out.join("run-manifest.toml"),
        None => PathBuf::from("hbg-run-manifest.toml"),
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let (cfg, cfg_text) = load_config(&cli.config)?;
    let mut seed_for_manifest: Option<u64> = None;
    let mut out_for_manifest: Option<PathBuf> = None;

    let status = match &cli.cmd {
        Cmd::TrainPcfg { common, out, alpha } => {
            let grammar = Grammar::load(&common.grammar)?;
            let corpus = load_corpus(&common.corpus)?;
            let map = load_label_map(&common.label_map)?;
            let alpha = alpha.or(cfg.alpha).unwrap_or(0.01);
            let (model, skipped) = estimate_rf(&grammar, &corpus, &map, alpha)?;
            model.save(out, &grammar)?;
            println!(
                "trained on {} sentences ({} without a consistent parse), wrote {}",
                corpus.len(),
                skipped,
                out.display()
            );
            out_for_manifest = Some(out.clone());
            0
        }
        Cmd::IoTrain { common, out, init, iterations } => {
            let grammar = Grammar::load(&common.grammar)?;
            let corpus = load_corpus(&common.corpus)?;
            let map = load_label_map(&common.label_map)?;
            let init = match init {
                Some(p) => PcfgModel::load(p, &grammar)?,
                None => PcfgModel::uniform(&grammar),
            };
            let iterations = iterations.or(cfg.iterations).unwrap_or(10);
            let (model, lls) = io_train(&grammar, &corpus, &map, &init, iterations);
            for (i, ll) in lls.iter().enumerate() {
                println!("iteration {:>3}  log-likelihood {ll:.6}", i + 1);
            }
            model.save(out, &grammar)?;
            println!("wrote {}", out.display());
            out_for_manifest = Some(out.clone());
            0
        }
        Cmd::ExtractEvents { common, pcfg, out, parent_mode } => {
            let grammar = Grammar::load(&common.grammar)?;
            let corpus = load_corpus(&common.corpus)?;
            let map = load_label_map(&common.label_map)?;
            let model = PcfgModel::load(pcfg, &grammar)?;
            let mode: ParentMode = match parent_mode {
                Some(m) => (*m).into(),
                None => match &cfg.parent_mode {
                    Some(s) => parse_mode_name(s)?,
                    None => ParentMode::Functional,
                },
            };
            let mut events = Vec::new();
            let mut skipped = 0;
            for (s, r) in &corpus {
                let forest = parse_all(s, &grammar);
                match best_consistent(&forest, &grammar, &model, r, &map)? {
                    Some((tree, _)) => events.extend(extract_events(&grammar, &tree, mode)),
                    None => skipped += 1,
                }
            }
            let mut w = BufWriter::new(std::fs::File::create(out)?);
            write_events(&mut w, &grammar, &events)?;
            w.flush()?;
            println!(
                "wrote {} events from {} sentences ({} skipped) to {}",
                events.len(),
                corpus.len(),
                skipped,
                out.display()
            );
            out_for_manifest = Some(out.clone());
            0
        }
        Cmd::Cluster { corpus, out, leaves, width } => {
            let corpus = load_corpus(corpus)?;
            let sentences: Vec<Sentence> = corpus.into_iter().map(|(s, _)| s).collect();
            let stats = collect_bigrams(&sentences);
            let leaves = leaves.or(cfg.leaves).unwrap_or(16);
            let width = width.or(cfg.width).unwrap_or(8);
            let result = mi_cluster(&stats, leaves, width)?;
            let table: BTreeMap<(String, String), _> = result
                .codes
                .iter()
                .map(|(w, c)| (("word".to_string(), w.clone()), c.clone()))
                .collect();
            let mut w = BufWriter::new(std::fs::File::create(out)?);
            write_bitstrings(&mut w, &table)?;
            w.flush()?;
            print!("{}", code_report(&result.codes));
            println!("wrote {} codes to {}", result.codes.len(), out.display());
            out_for_manifest = Some(out.clone());
            0
        }
        Cmd::GrowTree {
            grammar,
            events,
            out,
            word_codes,
            width,
            min_events,
            min_gain,
            max_depth,
            lambda,
        } => {
            let grammar = Grammar::load(grammar)?;
            let events = read_events(events, &grammar)?;
            let width = width.or(cfg.width).unwrap_or(8);
            let tables = word_tables(&grammar, word_codes, width)?;
            let defaults = GrowConfig::default();
            let grow = GrowConfig {
                min_events: min_events.or(cfg.min_events).unwrap_or(defaults.min_events),
                min_gain: min_gain.or(cfg.min_gain).unwrap_or(defaults.min_gain),
                max_depth: max_depth.or(cfg.max_depth).unwrap_or(defaults.max_depth),
                lambda: lambda.or(cfg.lambda),
                em_iters: defaults.em_iters,
            };
            let tree = DecisionTree::grow(&grammar, &tables, &events, &grow)?;
            tree.save(out)?;
            println!(
                "grew tree with {} leaves over {} events, wrote {}",
                tree.leaf_count(),
                events.len(),
                out.display()
            );
            out_for_manifest = Some(out.clone());
            0
        }
        Cmd::TrainHbg { grammar, events, out, kind, parent_mode, word_codes, width, lambda } => {
            let grammar = Grammar::load(grammar)?;
            let events = read_events(events, &grammar)?;
            let mode: ParentMode = match parent_mode {
                Some(m) => (*m).into(),
                None => match &cfg.parent_mode {
                    Some(s) => parse_mode_name(s)?,
                    None => ParentMode::Functional,
                },
            };
            let factor = FactorConfig { lambda: lambda.or(cfg.lambda), ..FactorConfig::default() };
            std::fs::create_dir_all(out)?;
            match kind.unwrap_or(KindArg::Hbg) {
                KindArg::Simple => {
                    let model = SimpleHeadModel::train(&grammar, mode, &events, &factor);
                    model.save(out)?;
                }
                KindArg::Hbg => {
                    let width = width.or(cfg.width).unwrap_or(8);
                    let tables = word_tables(&grammar, word_codes, width)?;
                    let defaults = GrowConfig::default();
                    let grow = GrowConfig { lambda: lambda.or(cfg.lambda), ..defaults };
                    let hcfg = HbgConfig { factor, grow };
                    let model = HbgModel::train(&grammar, tables, mode, &events, &hcfg)?;
                    model.save(out, &grammar)?;
                }
                KindArg::Pcfg => bail!("use train-pcfg for the production model"),
            }
            println!("trained on {} events, wrote bundle {}", events.len(), out.display());
            out_for_manifest = Some(out.clone());
            0
        }
        Cmd::Parse { grammar, model, input } => {
            let grammar = Grammar::load(grammar)?;
            let model = load_model(model, &grammar)?;
            let text = if input.as_os_str() == "-" {
                let mut s = String::new();
                std::io::stdin().read_to_string(&mut s)?;
                s
            } else {
                std::fs::read_to_string(input)?
            };
            for line in text.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let s = Sentence { tokens: line.split_whitespace().map(String::from).collect() };
                let forest = parse_all(&s, &grammar);
                match viterbi(&forest, &grammar, model.as_ref())? {
                    Some((tree, score)) => {
                        println!("{}", tree.to_bracketed(&grammar));
                        println!("# logprob={score:.6}");
                    }
                    None => println!("# no parse: {line}"),
                }
            }
            0
        }
        Cmd::Eval { common, model, name, baseline, min_coverage } => {
            let grammar = Grammar::load(&common.grammar)?;
            let corpus = load_corpus(&common.corpus)?;
            let map = load_label_map(&common.label_map)?;
            let model = load_model(model, &grammar)?;
            let report = evaluate(&grammar, model.as_ref(), &corpus, &map)?;
            let baseline = match baseline {
                None => None,
                Some(arg) => {
                    let (n, r) = arg
                        .split_once(':')
                        .context("baseline must be NAME:RATE, e.g. pcfg:59.8")?;
                    Some((n.to_string(), r.parse::<f64>().context("baseline rate")?))
                }
            };
            let name = name.as_deref().unwrap_or("model");
            print!("{}", report.render(name, baseline.as_ref().map(|(n, r)| (n.as_str(), *r))));
            let floor = min_coverage.or(cfg.min_coverage).unwrap_or(0.0);
            if report.any_consistent_rate < floor {
                eprintln!(
                    "any-consistent rate {:.1}% below required {:.1}%",
                    report.any_consistent_rate, floor
                );
                2
            } else {
                0
            }
        }
        Cmd::Gen { out, seed, sentences } => {
            let mut gen = cfg.gen.clone().unwrap_or_default();
            if let Some(s) = seed {
                gen.seed = *s;
            }
            if let Some(n) = sentences {
                gen.sentences = *n;
            }
            let syn = gen_synthetic(&gen)?;
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("grammar.hbg"), &syn.grammar_text)?;
            std::fs::write(
                out.join("corpus.tb"),
                hbg_parser::treebank::write_corpus(&syn.corpus),
            )?;
            println!(
                "wrote grammar.hbg and corpus.tb ({} sentences, seed {}) under {}",
                syn.corpus.len(),
                gen.seed,
                out.display()
            );
            seed_for_manifest = Some(gen.seed);
            out_for_manifest = Some(out.clone());
            0
        }
    };

    let mpath = manifest_path(&cli.manifest, out_for_manifest.as_deref());
    let effective = format!("{cfg_text}\n# args: {:?}", std::env::args().collect::<Vec<_>>());
    write_manifest(&mpath, seed_for_manifest, &effective)?;
    Ok(status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
