//! Named model pairs committed to the repository, so every number in the
//! test suites is reproducible offline.
//!
//! `standard`: a 3-token, max-length-4 pair. The target is an order-1
//! Markov model trained on the committed corpus with additive smoothing
//! 0.5; the draft re-trains the same counts with heavier smoothing 1.5 and
//! applies token temperature 1.5, giving a flattened, strictly positive
//! proposal.
//!
//! `iid`: a 2-token, max-length-6 pair whose conditionals are the same at
//! every prefix with zero EOS mass below the cap: target (0.5, 0.5),
//! draft (0.25, 0.75). Draft blocks from the empty prefix are exact product
//! distributions, with per-position chi-square divergence 1/3.

use crate::error::{Error, Result};
use crate::lm::{parse_markov, parse_tabular, tabulate, temper, MarkovLM, TabularLM};

pub const STANDARD_CORPUS: &str = include_str!("../fixtures/standard_corpus.txt");
pub const STANDARD_TARGET_MODEL: &str = include_str!("../fixtures/standard_p.lm");
pub const STANDARD_DRAFT_BASE_MODEL: &str = include_str!("../fixtures/standard_q_base.lm");
pub const IID_TARGET_MODEL: &str = include_str!("../fixtures/iid_p.lm");
pub const IID_DRAFT_MODEL: &str = include_str!("../fixtures/iid_q.lm");
pub const HARDWARE_PROFILES: &str = include_str!("../fixtures/hardware_profiles.txt");

/// Temperature applied to the standard draft's base model.
pub const STANDARD_DRAFT_TEMPERATURE: f64 = 1.5;

/// A target/draft pair tabulated for exact enumeration.
#[derive(Clone, Debug)]
pub struct FixturePair {
    pub name: &'static str,
    pub target: TabularLM,
    pub draft: TabularLM,
}

/// The standard non-i.i.d. fixture.
pub fn standard() -> FixturePair {
    let target_markov = parse_markov(STANDARD_TARGET_MODEL).expect("committed model parses");
    let draft_base = parse_markov(STANDARD_DRAFT_BASE_MODEL).expect("committed model parses");
    let tempered = temper(&draft_base, STANDARD_DRAFT_TEMPERATURE).expect("positive temperature");
    FixturePair {
        name: "standard",
        target: tabulate(&target_markov).expect("fixture fits the enumeration budget"),
        draft: tabulate(&tempered).expect("fixture fits the enumeration budget"),
    }
}

/// The i.i.d. fixture with per-position chi-square 1/3.
pub fn iid() -> FixturePair {
    FixturePair {
        name: "iid",
        target: parse_tabular(IID_TARGET_MODEL).expect("committed model parses"),
        draft: parse_tabular(IID_DRAFT_MODEL).expect("committed model parses"),
    }
}

pub fn by_name(name: &str) -> Result<FixturePair> {
    match name {
        "standard" => Ok(standard()),
        "iid" => Ok(iid()),
        other => Err(Error::InvalidParameter(format!(
            "unknown fixture: {other} (available: standard, iid)"
        ))),
    }
}

/// The raw Markov models behind the standard fixture, for tests that need
/// count-level access.
pub fn standard_markov_models() -> (MarkovLM, MarkovLM) {
    (
        parse_markov(STANDARD_TARGET_MODEL).expect("committed model parses"),
        parse_markov(STANDARD_DRAFT_BASE_MODEL).expect("committed model parses"),
    )
}

/// Deterministic i.i.d. tabular pair behind the `iid` fixture files.
#[cfg(test)]
fn build_iid_pair() -> (TabularLM, TabularLM) {
    use crate::lm::{Alphabet, Categorical, TokenString};
    use std::collections::BTreeMap;

    let alphabet = Alphabet::new(2).expect("non-empty alphabet");
    let max_len = 6;
    let mut target_table = BTreeMap::new();
    let mut draft_table = BTreeMap::new();
    let mut frontier = vec![TokenString::empty()];
    while let Some(prefix) = frontier.pop() {
        if prefix.len() < max_len {
            if prefix.len() + 1 < max_len {
                for t in 0..2 {
                    frontier.push(prefix.child(t));
                }
            }
            target_table.insert(
                prefix.clone(),
                Categorical::new(vec![0.5, 0.5, 0.0]).expect("valid"),
            );
            draft_table.insert(
                prefix,
                Categorical::new(vec![0.25, 0.75, 0.0]).expect("valid"),
            );
        }
    }
    (
        TabularLM::new(alphabet, max_len, target_table).expect("dense table"),
        TabularLM::new(alphabet, max_len, draft_table).expect("dense table"),
    )
}
