use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lm::{check_prefix, Alphabet, Categorical, LanguageModel, TokenId, TokenString};

/// An order-`k` Markov model with additive smoothing.
///
/// Conditionals are `(count(ctx, sym) + alpha) / (total(ctx) + alpha * (size+1))`
/// over the alphabet plus EOS, where `ctx` is the last `k` tokens of the
/// prefix (fewer near the start). Additive smoothing with `alpha > 0` keeps
/// every conditional strictly positive, so a smoothed Markov model dominates
/// any model on the same alphabet.
#[derive(Clone, Debug)]
pub struct MarkovLM {
    alphabet: Alphabet,
    order: usize,
    max_len: usize,
    alpha: f64,
    counts: BTreeMap<(TokenString, TokenId), u64>,
}

impl MarkovLM {
    pub fn from_counts(
        alphabet: Alphabet,
        order: usize,
        max_len: usize,
        alpha: f64,
        counts: BTreeMap<(TokenString, TokenId), u64>,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "smoothing constant must be positive, got {alpha}"
            )));
        }
        if max_len == 0 {
            return Err(Error::InvalidParameter("max_len must be >= 1".into()));
        }
        for (ctx, sym) in counts.keys() {
            ctx.validate(alphabet)?;
            if ctx.len() > order {
                return Err(Error::InvalidParameter(format!(
                    "context \"{ctx}\" longer than order {order}"
                )));
            }
            if *sym > alphabet.eos() {
                return Err(Error::InvalidToken {
                    token: *sym,
                    alphabet_size: alphabet.size(),
                });
            }
        }
        Ok(MarkovLM {
            alphabet,
            order,
            max_len,
            alpha,
            counts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn count(&self, context: &TokenString, sym: TokenId) -> u64 {
        self.counts
            .get(&(context.clone(), sym))
            .copied()
            .unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<(TokenString, TokenId), u64> {
        &self.counts
    }

    fn context_of(&self, prefix: &TokenString) -> TokenString {
        let toks = prefix.tokens();
        let start = toks.len().saturating_sub(self.order);
        TokenString::new(toks[start..].to_vec())
    }
}

impl LanguageModel for MarkovLM {
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
        let ctx = self.context_of(prefix);
        let width = self.alphabet.size() as usize + 1;
        let mut raw = Vec::with_capacity(width);
        let mut total = 0.0;
        for sym in 0..=self.alphabet.eos() {
            let c = self.count(&ctx, sym) as f64 + self.alpha;
            raw.push(c);
            total += c;
        }
        Categorical::new(raw.into_iter().map(|c| c / total).collect())
    }
}

/// Count n-gram events in a corpus, one event per token plus one EOS event
/// per string. Deterministic for a given corpus ordering.
pub fn train_markov(
    corpus: &[TokenString],
    alphabet: Alphabet,
    order: usize,
    alpha: f64,
    max_len: usize,
) -> Result<MarkovLM> {
    let mut counts: BTreeMap<(TokenString, TokenId), u64> = BTreeMap::new();
    for s in corpus {
        s.validate(alphabet)?;
        let toks = s.tokens();
        for (t, &tok) in toks.iter().enumerate() {
            let start = t.saturating_sub(order);
            let ctx = TokenString::new(toks[start..t].to_vec());
            *counts.entry((ctx, tok)).or_insert(0) += 1;
        }
        let start = toks.len().saturating_sub(order);
        let ctx = TokenString::new(toks[start..].to_vec());
        *counts.entry((ctx, alphabet.eos())).or_insert(0) += 1;
    }
    MarkovLM::from_counts(alphabet, order, max_len, alpha, counts)
}
