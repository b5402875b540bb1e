//! Plain-text serialization for models and corpora.
//!
//! Corpus: one whitespace-separated token-id sequence per line.
//!
//! Markov model: header `markov <size> <order> <max_len> <alpha>` followed by
//! one count row per event, `<ctx_len> <ctx...> <sym> <count>`. Counts are
//! integers, so the round trip is bit-exact.
//!
//! Tabular model: header `tabular <size> <max_len>` followed by one row per
//! prefix, `<prefix_len> <prefix...> <p_0> ... <p_size>`. Probabilities use
//! the shortest round-trippable decimal representation.
//!
//! Lines starting with `#` and blank lines are ignored in all formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lm::{Alphabet, Categorical, LanguageModel, MarkovLM, TabularLM, TokenId, TokenString};

pub fn parse_corpus(text: &str) -> Result<Vec<TokenString>> {
    data_lines(text).map(|line| line.parse()).collect()
}

pub fn format_corpus(corpus: &[TokenString]) -> String {
    let mut out = String::new();
    for s in corpus {
        let _ = writeln!(out, "{s}");
    }
    out
}

pub fn write_markov(lm: &MarkovLM) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "markov {} {} {} {}",
        lm.alphabet().size(),
        lm.order(),
        lm.max_len(),
        lm.alpha()
    );
    for ((ctx, sym), count) in lm.counts() {
        let _ = write!(out, "{}", ctx.len());
        for t in ctx.tokens() {
            let _ = write!(out, " {t}");
        }
        let _ = writeln!(out, " {sym} {count}");
    }
    out
}

pub fn parse_markov(text: &str) -> Result<MarkovLM> {
    let mut lines = data_lines(text);
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty model file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "markov" {
        return Err(Error::Parse(format!("bad markov header: {header}")));
    }
    let size: u32 = parse_field(fields[1], "alphabet size")?;
    let order: usize = parse_field(fields[2], "order")?;
    let max_len: usize = parse_field(fields[3], "max_len")?;
    let alpha: f64 = parse_field(fields[4], "alpha")?;
    let mut counts = BTreeMap::new();
    for line in lines {
        let nums: Vec<&str> = line.split_whitespace().collect();
        if nums.len() < 3 {
            return Err(Error::Parse(format!("short count row: {line}")));
        }
        let ctx_len: usize = parse_field(nums[0], "context length")?;
        if nums.len() != ctx_len + 3 {
            return Err(Error::Parse(format!("count row width mismatch: {line}")));
        }
        let ctx: Vec<TokenId> = nums[1..1 + ctx_len]
            .iter()
            .map(|w| parse_field(w, "context token"))
            .collect::<Result<_>>()?;
        let sym: TokenId = parse_field(nums[1 + ctx_len], "symbol")?;
        let count: u64 = parse_field(nums[2 + ctx_len], "count")?;
        counts.insert((TokenString::new(ctx), sym), count);
    }
    MarkovLM::from_counts(Alphabet::new(size)?, order, max_len, alpha, counts)
}

pub fn write_tabular(lm: &TabularLM) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tabular {} {}", lm.alphabet().size(), lm.max_len());
    for (prefix, cond) in lm.table() {
        let _ = write!(out, "{}", prefix.len());
        for t in prefix.tokens() {
            let _ = write!(out, " {t}");
        }
        for p in cond.probs() {
            let _ = write!(out, " {p}");
        }
        let _ = writeln!(out);
    }
    out
}

pub fn parse_tabular(text: &str) -> Result<TabularLM> {
    let mut lines = data_lines(text);
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty model file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != "tabular" {
        return Err(Error::Parse(format!("bad tabular header: {header}")));
    }
    let size: u32 = parse_field(fields[1], "alphabet size")?;
    let max_len: usize = parse_field(fields[2], "max_len")?;
    let width = size as usize + 1;
    let mut table = BTreeMap::new();
    for line in lines {
        let nums: Vec<&str> = line.split_whitespace().collect();
        if nums.is_empty() {
            continue;
        }
        let prefix_len: usize = parse_field(nums[0], "prefix length")?;
        if nums.len() != 1 + prefix_len + width {
            return Err(Error::Parse(format!("row width mismatch: {line}")));
        }
        let prefix: Vec<TokenId> = nums[1..1 + prefix_len]
            .iter()
            .map(|w| parse_field(w, "prefix token"))
            .collect::<Result<_>>()?;
        let probs: Vec<f64> = nums[1 + prefix_len..]
            .iter()
            .map(|w| parse_field(w, "probability"))
            .collect::<Result<_>>()?;
        table.insert(TokenString::new(prefix), Categorical::new(probs)?);
    }
    TabularLM::new(Alphabet::new(size)?, max_len, table)
}

/// A model read from text, dispatched on the header keyword.
pub enum ParsedModel {
    Markov(MarkovLM),
    Tabular(TabularLM),
}

impl ParsedModel {
    pub fn into_tabular(self) -> Result<TabularLM> {
        match self {
            ParsedModel::Tabular(lm) => Ok(lm),
            ParsedModel::Markov(lm) => crate::lm::tabulate(&lm),
        }
    }
}

pub fn parse_model(text: &str) -> Result<ParsedModel> {
    let first = data_lines(text)
        .next()
        .ok_or_else(|| Error::Parse("empty model file".into()))?;
    let kind = first.split_whitespace().next().unwrap_or("");
    match kind {
        "markov" => Ok(ParsedModel::Markov(parse_markov(text)?)),
        "tabular" => Ok(ParsedModel::Tabular(parse_tabular(text)?)),
        other => Err(Error::Parse(format!("unknown model type: {other}"))),
    }
}

pub fn load_model(path: &Path) -> Result<ParsedModel> {
    parse_model(&std::fs::read_to_string(path)?)
}

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

fn parse_field<T: std::str::FromStr>(word: &str, what: &str) -> Result<T> {
    word.parse()
        .map_err(|_| Error::Parse(format!("bad {what}: {word}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::train_markov;

    #[test]
    fn corpus_roundtrip() {
        let text = "0 1 2\n\n# comment\n2 2\n";
        let corpus = parse_corpus(text).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0], TokenString::new(vec![0, 1, 2]));
        assert_eq!(format_corpus(&corpus), "0 1 2\n2 2\n");
    }

    #[test]
    fn markov_roundtrip_is_bit_exact_for_counts() {
        let alphabet = Alphabet::new(3).unwrap();
        let corpus = parse_corpus("0 1 2\n2 2\n1 0 0 1\n").unwrap();
        let lm = train_markov(&corpus, alphabet, 1, 0.5, 4).unwrap();
        let text = write_markov(&lm);
        let back = parse_markov(&text).unwrap();
        assert_eq!(back.counts(), lm.counts());
        assert_eq!(back.alpha(), lm.alpha());
        assert_eq!(back.order(), lm.order());
        assert_eq!(back.max_len(), lm.max_len());
    }

    #[test]
    fn tabular_roundtrip_preserves_probabilities() {
        let alphabet = Alphabet::new(2).unwrap();
        let base = TabularLM::uniform(alphabet, 2).unwrap();
        let tempered = crate::lm::temper(&base, 1.7).unwrap();
        let lm = crate::lm::tabulate(&tempered).unwrap();
        let back = parse_tabular(&write_tabular(&lm)).unwrap();
        assert_eq!(back.table().len(), lm.table().len());
        for (prefix, cond) in lm.table() {
            let other = &back.table()[prefix];
            assert_eq!(cond.probs(), other.probs());
        }
    }

    #[test]
    fn parse_model_dispatches_on_header() {
        let alphabet = Alphabet::new(2).unwrap();
        let lm = train_markov(&[], alphabet, 0, 1.0, 2).unwrap();
        match parse_model(&write_markov(&lm)).unwrap() {
            ParsedModel::Markov(_) => {}
            _ => panic!("expected markov"),
        }
        let tab = TabularLM::uniform(alphabet, 2).unwrap();
        match parse_model(&write_tabular(&tab)).unwrap() {
            ParsedModel::Tabular(_) => {}
            _ => panic!("expected tabular"),
        }
        assert!(parse_model("fancy 1 2\n").is_err());
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_markov("markov 2 1 4 0.5\n1 0 0\n").is_err());
        assert!(parse_tabular("tabular 2 2\n0 0.5 0.5\n").is_err());
        assert!(parse_markov("").is_err());
    }
}
