use std::path::PathBuf;

use espsim::soc::SocConfig;
use espsim::verify::{load_corpus, run_litmus};

fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("litmus")
}

#[test]
fn corpus_parses_within_oracle_bound() {
    let tests = load_corpus(corpus()).unwrap();
    assert!(tests.len() >= 10);
    for t in &tests {
        assert!(t.total_ops() <= espsim::verify::oracle::MAX_ORACLE_OPS, "{}", t.name);
        assert!(!t.allowed(16).unwrap().is_empty());
    }
}

#[test]
fn corpus_passes_on_many_seeds() {
    let cfg = SocConfig::quad();
    for t in load_corpus(corpus()).unwrap() {
        let v = run_litmus(&t, &cfg, 0..100).unwrap();
        assert!(v.pass, "{}\n{:#?}", v.row(), v);
    }
}

#[test]
fn empty_corpus_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_corpus(dir.path()).is_err());
}
