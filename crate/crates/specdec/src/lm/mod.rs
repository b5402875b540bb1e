//! Language-model abstraction and enumerable toy models.
//!
//! A model here is a proper distribution over strings of ordinary tokens with
//! a hard cap `max_len`: at every shorter prefix `conditional` returns a
//! distribution over the alphabet plus EOS, and at `max_len` it returns the
//! EOS-only distribution, so every string terminates and brute-force
//! enumeration is exact. Scoring is done in log space throughout; probability
//! vectors appear only at interfaces.

mod markov;
mod tabular;
mod text_format;

pub use markov::{train_markov, MarkovLM};
pub use tabular::{
    check_absolute_continuity, enumerate_distribution, enumerate_distribution_with_budget,
    enumeration_states, tabulate, TabularLM, DEFAULT_ENUMERATION_BUDGET,
};
pub use text_format::{
    format_corpus, load_model, parse_corpus, parse_markov, parse_model, parse_tabular,
    write_markov, write_tabular, ParsedModel,
};

use std::fmt;
use std::str::FromStr;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::rng::{categorical_index, uniform_f64};

/// Token identifier. Ordinary tokens are `0..size`; the reserved id `size`
/// denotes EOS and never appears inside a [`TokenString`].
pub type TokenId = u32;

/// Sum tolerance for probability vectors.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// A finite alphabet of `size` ordinary tokens plus the distinguished EOS
/// symbol, which is not an ordinary token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alphabet {
    size: u32,
}

impl Alphabet {
    pub fn new(size: u32) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("alphabet size must be >= 1".into()));
        }
        Ok(Alphabet { size })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// The reserved EOS identifier.
    pub fn eos(&self) -> TokenId {
        self.size
    }

    pub fn contains(&self, token: TokenId) -> bool {
        token < self.size
    }
}

/// A probability vector over the alphabet plus EOS (last entry).
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates non-negativity and unit sum (within [`PROB_SUM_TOL`]).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidCategorical(format!(
                "need at least one token plus EOS, got length {}",
                probs.len()
            )));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(Error::InvalidCategorical(format!(
                    "entry {i} is {p}, must be non-negative"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidCategorical(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Categorical { probs })
    }

    /// The forced-termination distribution: EOS with probability one.
    pub fn eos_only(alphabet_size: u32) -> Self {
        let mut probs = vec![0.0; alphabet_size as usize + 1];
        *probs.last_mut().expect("non-empty") = 1.0;
        Categorical { probs }
    }

    pub fn alphabet_size(&self) -> u32 {
        (self.probs.len() - 1) as u32
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of a symbol (ordinary token or the EOS id).
    pub fn prob(&self, sym: TokenId) -> f64 {
        self.probs[sym as usize]
    }

    pub fn eos_prob(&self) -> f64 {
        *self.probs.last().expect("non-empty")
    }

    /// Symbol at quantile `u` under the inverse CDF in ascending id order.
    pub fn quantile(&self, u: f64) -> TokenId {
        categorical_index(&self.probs, u) as TokenId
    }

    /// Draw one symbol from a single uniform variate.
    pub fn sample<R: RngCore>(&self, rng: &mut R) -> TokenId {
        self.quantile(uniform_f64(rng))
    }

    /// Entrywise power `1/t`, renormalized.
    pub fn tempered(&self, t: f64) -> Result<Categorical> {
        if !(t > 0.0) {
            return Err(Error::InvalidTemperature(t));
        }
        let inv = 1.0 / t;
        let powered: Vec<f64> = self.probs.iter().map(|&p| p.powf(inv)).collect();
        let z: f64 = powered.iter().sum();
        if !(z > 0.0) {
            return Err(Error::Internal(
                "tempered distribution has zero mass".into(),
            ));
        }
        Ok(Categorical {
            probs: powered.iter().map(|&v| v / z).collect(),
        })
    }

    /// Entrywise power `alpha`, renormalized; also returns `ln Z` where
    /// `Z = sum_i p_i^alpha`.
    pub fn powered(&self, alpha: f64) -> Result<(Categorical, f64)> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "power exponent must be positive, got {alpha}"
            )));
        }
        let powered: Vec<f64> = self.probs.iter().map(|&p| p.powf(alpha)).collect();
        let z: f64 = powered.iter().sum();
        if !(z > 0.0) {
            return Err(Error::Internal("powered distribution has zero mass".into()));
        }
        Ok((
            Categorical {
                probs: powered.iter().map(|&v| v / z).collect(),
            },
            z.ln(),
        ))
    }

    /// Normalized positive part of `p - q`, the distribution a rejection
    /// falls back to. `Z = 0` means `p = q` entrywise, in which case a
    /// rejection cannot have occurred; reported as an internal error.
    pub fn residual(p: &Categorical, q: &Categorical) -> Result<Categorical> {
        let resid: Vec<f64> = p
            .probs
            .iter()
            .zip(&q.probs)
            .map(|(&pp, &qq)| (pp - qq).max(0.0))
            .collect();
        let z: f64 = resid.iter().sum();
        if !(z > 0.0) {
            return Err(Error::Internal(
                "residual normalizer is zero after a rejection".into(),
            ));
        }
        Ok(Categorical {
            probs: resid.iter().map(|&v| v / z).collect(),
        })
    }
}

/// A string of ordinary tokens. EOS never appears inside; termination is
/// tracked externally by a terminal flag.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenString(Vec<TokenId>);

impl TokenString {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        TokenString(tokens)
    }

    pub fn empty() -> Self {
        TokenString(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn push(&mut self, token: TokenId) {
        self.0.push(token);
    }

    pub fn pop(&mut self) -> Option<TokenId> {
        self.0.pop()
    }

    /// The string extended by one token.
    pub fn child(&self, token: TokenId) -> TokenString {
        let mut t = self.0.clone();
        t.push(token);
        TokenString(t)
    }

    pub fn validate(&self, alphabet: Alphabet) -> Result<()> {
        for &t in &self.0 {
            if !alphabet.contains(t) {
                return Err(Error::InvalidToken {
                    token: t,
                    alphabet_size: alphabet.size(),
                });
            }
        }
        Ok(())
    }
}

impl From<Vec<TokenId>> for TokenString {
    fn from(tokens: Vec<TokenId>) -> Self {
        TokenString(tokens)
    }
}

impl From<&[TokenId]> for TokenString {
    fn from(tokens: &[TokenId]) -> Self {
        TokenString(tokens.to_vec())
    }
}

impl fmt::Display for TokenString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for TokenString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens = s
            .split_whitespace()
            .map(|w| {
                w.parse::<TokenId>()
                    .map_err(|_| Error::Parse(format!("bad token id: {w}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenString(tokens))
    }
}

/// An autoregressive language model over strings of bounded length.
///
/// Models are immutable after construction and safe to read concurrently.
pub trait LanguageModel {
    fn alphabet(&self) -> Alphabet;

    /// Hard length cap: `conditional` at a prefix of this length is forced
    /// to EOS, so the model is a proper distribution over bounded strings.
    fn max_len(&self) -> usize;

    /// Next-symbol distribution over the alphabet plus EOS.
    fn conditional(&self, prefix: &TokenString) -> Result<Categorical>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn alphabet(&self) -> Alphabet {
        (**self).alphabet()
    }

    fn max_len(&self) -> usize {
        (**self).max_len()
    }

    fn conditional(&self, prefix: &TokenString) -> Result<Categorical> {
        (**self).conditional(prefix)
    }
}

/// Shared prefix precondition check for `conditional` implementations.
pub(crate) fn check_prefix(alphabet: Alphabet, max_len: usize, prefix: &TokenString) -> Result<()> {
    if prefix.len() > max_len {
        return Err(Error::PrefixTooLong {
            len: prefix.len(),
            max_len,
        });
    }
    prefix.validate(alphabet)
}

/// Log probability of a complete string:
/// `sum_t ln cond(s_{<t})[s_t] + ln cond(s)[EOS]`. A zero-probability token
/// absorbs: the walk stops and returns `-inf` without consulting the
/// (possibly uncovered) continuation.
pub fn string_log_prob<M: LanguageModel + ?Sized>(model: &M, s: &TokenString) -> Result<f64> {
    check_prefix(model.alphabet(), model.max_len(), s)?;
    let mut log_prob = 0.0;
    let mut prefix = TokenString::empty();
    for &tok in s.tokens() {
        log_prob += model.conditional(&prefix)?.prob(tok).ln();
        if log_prob == f64::NEG_INFINITY {
            return Ok(log_prob);
        }
        prefix.push(tok);
    }
    log_prob += model.conditional(&prefix)?.eos_prob().ln();
    Ok(log_prob)
}

/// A model whose every conditional is the base model's raised to `1/t` and
/// renormalized.
#[derive(Clone, Debug)]
pub struct Tempered<M> {
    base: M,
    temperature: f64,
}

impl<M: LanguageModel> Tempered<M> {
    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn base(&self) -> &M {
        &self.base
    }
}

impl<M: LanguageModel> LanguageModel for Tempered<M> {
    fn alphabet(&self) -> Alphabet {
        self.base.alphabet()
    }

    fn max_len(&self) -> usize {
        self.base.max_len()
    }

    fn conditional(&self, prefix: &TokenString) -> Result<Categorical> {
        self.base.conditional(prefix)?.tempered(self.temperature)
    }
}

/// Wrap a model with token-level temperature `t > 0`.
pub fn temper<M: LanguageModel>(model: M, t: f64) -> Result<Tempered<M>> {
    if !(t > 0.0) {
        return Err(Error::InvalidTemperature(t));
    }
    Ok(Tempered {
        base: model,
        temperature: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_rejects_zero_size() {
        assert!(Alphabet::new(0).is_err());
        let a = Alphabet::new(3).unwrap();
        assert_eq!(a.size(), 3);
        assert_eq!(a.eos(), 3);
        assert!(a.contains(2));
        assert!(!a.contains(3));
    }

    #[test]
    fn categorical_validation() {
        assert!(Categorical::new(vec![0.5, 0.5]).is_ok());
        assert!(Categorical::new(vec![0.5, 0.6]).is_err());
        assert!(Categorical::new(vec![-0.1, 1.1]).is_err());
        assert!(Categorical::new(vec![1.0]).is_err());
        let nan = f64::NAN;
        assert!(Categorical::new(vec![nan, 1.0]).is_err());
    }

    #[test]
    fn eos_only_is_forced_termination() {
        let c = Categorical::eos_only(3);
        assert_eq!(c.probs(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(c.eos_prob(), 1.0);
    }

    #[test]
    fn quantile_walks_ascending_ids() {
        let c = Categorical::new(vec![0.2, 0.0, 0.3, 0.5]).unwrap();
        assert_eq!(c.quantile(0.1), 0);
        assert_eq!(c.quantile(0.2), 2); // id 1 has zero mass
        assert_eq!(c.quantile(0.49), 2);
        assert_eq!(c.quantile(0.6), 3);
    }

    #[test]
    fn tempered_squares_and_renormalizes_at_half() {
        let c = Categorical::new(vec![0.6, 0.3, 0.1]).unwrap();
        let t = c.tempered(0.5).unwrap();
        let z = 0.36 + 0.09 + 0.01;
        assert!((t.prob(0) - 0.36 / z).abs() < 1e-12);
        assert!((t.prob(1) - 0.09 / z).abs() < 1e-12);
        assert!((t.prob(2) - 0.01 / z).abs() < 1e-12);
    }

    #[test]
    fn tempered_identity_at_one() {
        let c = Categorical::new(vec![0.6, 0.3, 0.1]).unwrap();
        let t = c.tempered(1.0).unwrap();
        for (a, b) in c.probs().iter().zip(t.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tempered_near_zero_concentrates_on_argmax() {
        let c = Categorical::new(vec![0.6, 0.3, 0.1]).unwrap();
        let t = c.tempered(0.01).unwrap();
        assert!((t.prob(0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tempered_rejects_nonpositive_temperature() {
        let c = Categorical::new(vec![0.6, 0.4]).unwrap();
        assert!(c.tempered(0.0).is_err());
        assert!(c.tempered(-1.0).is_err());
    }

    #[test]
    fn residual_is_normalized_positive_part() {
        let p = Categorical::new(vec![0.5, 0.3, 0.2]).unwrap();
        let q = Categorical::new(vec![0.2, 0.5, 0.3]).unwrap();
        let r = Categorical::residual(&p, &q).unwrap();
        assert!((r.prob(0) - 1.0).abs() < 1e-12);
        assert_eq!(r.prob(1), 0.0);
        assert_eq!(r.prob(2), 0.0);
    }

    #[test]
    fn residual_zero_normalizer_is_internal_error() {
        let p = Categorical::new(vec![0.5, 0.5]).unwrap();
        let r = Categorical::residual(&p, &p);
        assert!(matches!(r, Err(Error::Internal(_))));
    }

    #[test]
    fn token_string_display_roundtrip() {
        let s = TokenString::new(vec![0, 2, 1]);
        assert_eq!(s.to_string(), "0 2 1");
        let parsed: TokenString = "0 2 1".parse().unwrap();
        assert_eq!(parsed, s);
        let empty: TokenString = "".parse().unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.to_string(), "");
    }

    #[test]
    fn token_string_validate_checks_alphabet() {
        let a = Alphabet::new(2).unwrap();
        assert!(TokenString::new(vec![0, 1]).validate(a).is_ok());
        assert!(TokenString::new(vec![0, 2]).validate(a).is_err());
    }
}
