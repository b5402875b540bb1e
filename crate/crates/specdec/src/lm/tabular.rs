use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lm::{check_prefix, Alphabet, Categorical, LanguageModel, TokenString};

/// Default cap on the number of prefix-tree states visited by enumeration.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 10_000_000;

/// Number of prefix-tree states for a full walk: `sum_{l=0}^{max_len} size^l`.
pub fn enumeration_states(alphabet_size: u32, max_len: usize) -> u128 {
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=max_len {
        total = total.saturating_add(level);
        level = level.saturating_mul(alphabet_size as u128);
    }
    total
}

fn check_budget(alphabet_size: u32, max_len: usize, budget: u64) -> Result<()> {
    let states = enumeration_states(alphabet_size, max_len);
    if states > budget as u128 {
        return Err(Error::EnumerationTooLarge { states, budget });
    }
    Ok(())
}

/// A language model stored as an explicit prefix-to-conditional table.
///
/// The table holds one [`Categorical`] per covered prefix of length below
/// `max_len`; at `max_len` the conditional is the forced EOS distribution.
#[derive(Clone, Debug)]
pub struct TabularLM {
    alphabet: Alphabet,
    max_len: usize,
    table: BTreeMap<TokenString, Categorical>,
}

impl TabularLM {
    /// Build a tabular model, verifying that every prefix reachable with
    /// positive probability (and shorter than `max_len`) is covered.
    pub fn new(
        alphabet: Alphabet,
        max_len: usize,
        table: BTreeMap<TokenString, Categorical>,
    ) -> Result<Self> {
        check_budget(alphabet.size(), max_len, DEFAULT_ENUMERATION_BUDGET)?;
        for (prefix, cond) in &table {
            prefix.validate(alphabet)?;
            if prefix.len() >= max_len {
                return Err(Error::InvalidParameter(format!(
                    "table entry at prefix of length {} >= max_len {}",
                    prefix.len(),
                    max_len
                )));
            }
            if cond.alphabet_size() != alphabet.size() {
                return Err(Error::InvalidCategorical(format!(
                    "conditional at \"{prefix}\" has wrong width"
                )));
            }
        }
        let lm = TabularLM {
            alphabet,
            max_len,
            table,
        };
        lm.check_reachable_coverage()?;
        Ok(lm)
    }

    /// Uniform over the alphabet plus EOS at every prefix.
    pub fn uniform(alphabet: Alphabet, max_len: usize) -> Result<Self> {
        let width = alphabet.size() as usize + 1;
        let probs = vec![1.0 / width as f64; width];
        let cond = Categorical::new(probs)?;
        let mut table = BTreeMap::new();
        let mut frontier = vec![TokenString::empty()];
        while let Some(prefix) = frontier.pop() {
            if prefix.len() < max_len {
                if prefix.len() + 1 < max_len {
                    for t in 0..alphabet.size() {
                        frontier.push(prefix.child(t));
                    }
                }
                table.insert(prefix, cond.clone());
            }
        }
        TabularLM::new(alphabet, max_len, table)
    }

    pub fn table(&self) -> &BTreeMap<TokenString, Categorical> {
        &self.table
    }

    fn check_reachable_coverage(&self) -> Result<()> {
        let mut stack = vec![TokenString::empty()];
        while let Some(prefix) = stack.pop() {
            if prefix.len() >= self.max_len {
                continue;
            }
            let cond = self
                .table
                .get(&prefix)
                .ok_or_else(|| Error::PrefixNotCovered(prefix.to_string()))?;
            for t in 0..self.alphabet.size() {
                if cond.prob(t) > 0.0 && prefix.len() + 1 < self.max_len {
                    stack.push(prefix.child(t));
                }
            }
        }
        Ok(())
    }
}

impl LanguageModel for TabularLM {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn conditional(&self, prefix: &TokenString) -> Result<Categorical> {
        check_prefix(self.alphabet, self.max_len, prefix)?;
        if prefix.len() == self.max_len {
            return Ok(Categorical::eos_only(self.alphabet.size()));
        }
        self.table
            .get(prefix)
            .cloned()
            .ok_or_else(|| Error::PrefixNotCovered(prefix.to_string()))
    }
}

/// Materialize any model into a [`TabularLM`] by querying every reachable
/// prefix, subject to the enumeration budget.
pub fn tabulate<M: LanguageModel + ?Sized>(model: &M) -> Result<TabularLM> {
    let alphabet = model.alphabet();
    let max_len = model.max_len();
    check_budget(alphabet.size(), max_len, DEFAULT_ENUMERATION_BUDGET)?;
    let mut table = BTreeMap::new();
    let mut stack = vec![TokenString::empty()];
    while let Some(prefix) = stack.pop() {
        if prefix.len() >= max_len {
            continue;
        }
        let cond = model.conditional(&prefix)?;
        for t in 0..alphabet.size() {
            if cond.prob(t) > 0.0 && prefix.len() + 1 < max_len {
                stack.push(prefix.child(t));
            }
        }
        table.insert(prefix, cond);
    }
    TabularLM::new(alphabet, max_len, table)
}

/// Exact distribution over all complete strings, by depth-first walk of the
/// prefix tree. Strings with zero probability are omitted; the returned
/// probabilities sum to one.
pub fn enumerate_distribution<M: LanguageModel + ?Sized>(
    model: &M,
) -> Result<Vec<(TokenString, f64)>> {
    enumerate_distribution_with_budget(model, DEFAULT_ENUMERATION_BUDGET)
}

pub fn enumerate_distribution_with_budget<M: LanguageModel + ?Sized>(
    model: &M,
    budget: u64,
) -> Result<Vec<(TokenString, f64)>> {
    check_budget(model.alphabet().size(), model.max_len(), budget)?;
    let mut out = Vec::new();
    let mut prefix = TokenString::empty();
    walk(model, &mut prefix, 1.0, &mut out)?;
    Ok(out)
}

fn walk<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &mut TokenString,
    mass: f64,
    out: &mut Vec<(TokenString, f64)>,
) -> Result<()> {
    let cond = model.conditional(prefix)?;
    let eos = cond.eos_prob();
    if eos > 0.0 {
        out.push((prefix.clone(), mass * eos));
    }
    if prefix.len() < model.max_len() {
        for t in 0..model.alphabet().size() {
            let p = cond.prob(t);
            if p > 0.0 {
                prefix.push(t);
                walk(model, prefix, mass * p, out)?;
                prefix.pop();
            }
        }
    }
    Ok(())
}

/// Verify `p` is absolutely continuous with respect to `q` on complete
/// strings: every `p`-positive string must be `q`-positive. The error names
/// the first offending string.
pub fn check_absolute_continuity<P, Q>(p: &P, q: &Q) -> Result<()>
where
    P: LanguageModel + ?Sized,
    Q: LanguageModel + ?Sized,
{
    for (s, _) in enumerate_distribution(p)? {
        let lq = crate::lm::string_log_prob(q, &s)?;
        if lq == f64::NEG_INFINITY {
            return Err(Error::SupportViolation(s.to_string()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::string_log_prob;

    fn single_token_model() -> TabularLM {
        // |alphabet|=1, max_len=1, conditional at the empty prefix splits
        // mass evenly between the token and EOS.
        let alphabet = Alphabet::new(1).unwrap();
        let mut table = BTreeMap::new();
        table.insert(
            TokenString::empty(),
            Categorical::new(vec![0.5, 0.5]).unwrap(),
        );
        TabularLM::new(alphabet, 1, table).unwrap()
    }

    #[test]
    fn conditional_reads_back_table() {
        let alphabet = Alphabet::new(2).unwrap();
        let third = 1.0 / 3.0;
        let mut table = BTreeMap::new();
        table.insert(
            TokenString::empty(),
            Categorical::new(vec![third, third, third]).unwrap(),
        );
        table.insert(
            TokenString::new(vec![0]),
            Categorical::new(vec![third, third, third]).unwrap(),
        );
        table.insert(
            TokenString::new(vec![1]),
            Categorical::new(vec![third, third, third]).unwrap(),
        );
        let lm = TabularLM::new(alphabet, 2, table).unwrap();
        let c = lm.conditional(&TokenString::empty()).unwrap();
        assert_eq!(c.probs(), &[third, third, third]);
    }

    #[test]
    fn conditional_at_max_len_is_forced_eos() {
        let lm = single_token_model();
        let c = lm.conditional(&TokenString::new(vec![0])).unwrap();
        assert_eq!(c.eos_prob(), 1.0);
        assert_eq!(c.prob(0), 0.0);
    }

    #[test]
    fn conditional_rejects_long_prefix() {
        let lm = single_token_model();
        let err = lm.conditional(&TokenString::new(vec![0, 0])).unwrap_err();
        assert!(matches!(err, Error::PrefixTooLong { .. }));
    }

    #[test]
    fn missing_reachable_prefix_is_rejected() {
        let alphabet = Alphabet::new(1).unwrap();
        let mut table = BTreeMap::new();
        table.insert(
            TokenString::empty(),
            Categorical::new(vec![0.5, 0.5]).unwrap(),
        );
        // Prefix "0" is reachable (prob 0.5) but uncovered at max_len 2.
        let err = TabularLM::new(alphabet, 2, table).unwrap_err();
        assert!(matches!(err, Error::PrefixNotCovered(_)));
    }

    #[test]
    fn enumerate_two_leaf_tree() {
        let lm = single_token_model();
        let dist = enumerate_distribution(&lm).unwrap();
        assert_eq!(dist.len(), 2);
        let as_map: BTreeMap<_, _> = dist.into_iter().collect();
        assert_eq!(as_map[&TokenString::empty()], 0.5);
        assert_eq!(as_map[&TokenString::new(vec![0])], 0.5);
    }

    #[test]
    fn enumerate_eos_only_model() {
        let alphabet = Alphabet::new(2).unwrap();
        let mut table = BTreeMap::new();
        table.insert(TokenString::empty(), Categorical::eos_only(2));
        let lm = TabularLM::new(alphabet, 3, table).unwrap();
        let dist = enumerate_distribution(&lm).unwrap();
        assert_eq!(dist, vec![(TokenString::empty(), 1.0)]);
    }

    #[test]
    fn enumerate_sums_to_one_and_matches_log_probs() {
        let alphabet = Alphabet::new(3).unwrap();
        let lm = TabularLM::uniform(alphabet, 3).unwrap();
        let dist = enumerate_distribution(&lm).unwrap();
        let total: f64 = dist.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
        for (s, p) in &dist {
            let lp = string_log_prob(&lm, s).unwrap();
            assert!((lp.exp() - p).abs() < 1e-9, "mismatch at \"{s}\"");
        }
    }

    #[test]
    fn enumeration_budget_is_enforced() {
        let alphabet = Alphabet::new(10).unwrap();
        let lm = TabularLM::uniform(alphabet, 3).unwrap();
        let err = enumerate_distribution_with_budget(&lm, 100).unwrap_err();
        assert!(matches!(err, Error::EnumerationTooLarge { .. }));
    }

    #[test]
    fn string_log_prob_multiplies_conditionals() {
        // i.i.d. model: p(a)=p(b)=0.4, p(EOS)=0.2 at every prefix below the
        // cap, so "01" picks up three table entries.
        let alphabet = Alphabet::new(2).unwrap();
        let cond = Categorical::new(vec![0.4, 0.4, 0.2]).unwrap();
        let mut table = BTreeMap::new();
        let mut frontier = vec![TokenString::empty()];
        while let Some(prefix) = frontier.pop() {
            if prefix.len() < 3 {
                if prefix.len() + 1 < 3 {
                    for t in 0..2 {
                        frontier.push(prefix.child(t));
                    }
                }
                table.insert(prefix, cond.clone());
            }
        }
        let lm = TabularLM::new(alphabet, 3, table).unwrap();
        let lp = string_log_prob(&lm, &TokenString::new(vec![0, 1])).unwrap();
        assert!((lp - (0.4f64 * 0.4 * 0.2).ln()).abs() < 1e-12);
    }

    #[test]
    fn string_log_prob_zero_token_is_neg_infinity() {
        let alphabet = Alphabet::new(2).unwrap();
        let mut table = BTreeMap::new();
        table.insert(
            TokenString::empty(),
            Categorical::new(vec![0.5, 0.0, 0.5]).unwrap(),
        );
        table.insert(
            TokenString::new(vec![0]),
            Categorical::new(vec![0.0, 0.0, 1.0]).unwrap(),
        );
        let lm = TabularLM::new(alphabet, 2, table).unwrap();
        let lp = string_log_prob(&lm, &TokenString::new(vec![1])).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn string_log_prob_empty_string_under_eos_only_model() {
        let alphabet = Alphabet::new(1).unwrap();
        let mut table = BTreeMap::new();
        table.insert(TokenString::empty(), Categorical::eos_only(1));
        let lm = TabularLM::new(alphabet, 1, table).unwrap();
        let lp = string_log_prob(&lm, &TokenString::empty()).unwrap();
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn absolute_continuity_check_names_offender() {
        let alphabet = Alphabet::new(1).unwrap();
        let p = single_token_model();
        let mut table = BTreeMap::new();
        table.insert(TokenString::empty(), Categorical::eos_only(1));
        let q = TabularLM::new(alphabet, 1, table).unwrap();
        // q never emits token 0, but p does.
        let err = check_absolute_continuity(&p, &q).unwrap_err();
        match err {
            Error::SupportViolation(s) => assert_eq!(s, "0"),
            other => panic!("expected support violation, got {other:?}"),
        }
        assert!(check_absolute_continuity(&q, &p).is_ok());
    }

    #[test]
    fn tabulate_preserves_conditionals() {
        let alphabet = Alphabet::new(2).unwrap();
        let base = TabularLM::uniform(alphabet, 3).unwrap();
        let tempered = crate::lm::temper(&base, 2.0).unwrap();
        let tab = tabulate(&tempered).unwrap();
        for prefix in [TokenString::empty(), TokenString::new(vec![1, 0])] {
            let a = tempered.conditional(&prefix).unwrap();
            let b = tab.conditional(&prefix).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }
}
