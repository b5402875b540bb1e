//! Exact divergences on enumerable models and empirical verification of the
//! single-round importance-resampling error rates and ESS limits.
//!
//! Everything here is measured against brute-force enumeration: the chi^2
//! divergence is an exact sum over complete strings (or K-token blocks), and
//! the bias/variance/MSE sweep compares weighted empirical measures to the
//! enumerated target. Multi-round end-to-end error carries no asserted rate;
//! only single-round quantities do.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lm::{
    enumerate_distribution, string_log_prob, LanguageModel, TabularLM, TokenId, TokenString,
};
use crate::rng::stream_rng;
use crate::samplers::{ess, generate_ar, streams};

/// Exact chi-square divergence and its Renyi-2 form `ln(1 + chi2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceReport {
    pub chi2: f64,
    pub renyi2_log: f64,
}

impl DivergenceReport {
    fn from_chi2(chi2: f64) -> Self {
        DivergenceReport {
            chi2,
            renyi2_log: chi2.ln_1p(),
        }
    }
}

/// Exact `chi^2(p || q) = sum_s p(s)^2 / q(s) - 1` over complete strings.
/// Errors name the first string where `p` escapes `q`'s support.
pub fn chi2_divergence(p: &TabularLM, q: &TabularLM) -> Result<DivergenceReport> {
    if p.alphabet() != q.alphabet() {
        return Err(Error::InvalidParameter(
            "divergence needs a shared alphabet".into(),
        ));
    }
    if p.max_len() != q.max_len() {
        return Err(Error::InvalidParameter(
            "divergence needs matching max_len".into(),
        ));
    }
    let q_map: BTreeMap<TokenString, f64> = enumerate_distribution(q)?.into_iter().collect();
    let mut sum = 0.0;
    for (s, p_prob) in enumerate_distribution(p)? {
        match q_map.get(&s) {
            Some(&q_prob) if q_prob > 0.0 => sum += p_prob * p_prob / q_prob,
            _ => return Err(Error::SupportViolation(s.to_string())),
        }
    }
    Ok(DivergenceReport::from_chi2((sum - 1.0).max(0.0)))
}

/// Distribution over K-token draft blocks continuing from `prefix`. A block
/// is either `block_len` ordinary tokens or fewer tokens closed by the EOS
/// id; together these leaves partition the continuation space, so block
/// probabilities sum to one.
pub fn block_distribution<M: LanguageModel + ?Sized>(
    model: &M,
    prefix: &TokenString,
    block_len: usize,
) -> Result<Vec<(Vec<TokenId>, f64)>> {
    if block_len == 0 {
        return Err(Error::InvalidParameter("block length must be >= 1".into()));
    }
    let states = crate::lm::enumeration_states(model.alphabet().size(), block_len);
    if states > crate::lm::DEFAULT_ENUMERATION_BUDGET as u128 {
        return Err(Error::EnumerationTooLarge {
            states,
            budget: crate::lm::DEFAULT_ENUMERATION_BUDGET,
        });
    }
    let mut out = Vec::new();
    let mut current = prefix.clone();
    let mut block = Vec::new();
    block_walk(model, &mut current, &mut block, 1.0, block_len, &mut out)?;
    Ok(out)
}

fn block_walk<M: LanguageModel + ?Sized>(
    model: &M,
    current: &mut TokenString,
    block: &mut Vec<TokenId>,
    mass: f64,
    block_len: usize,
    out: &mut Vec<(Vec<TokenId>, f64)>,
) -> Result<()> {
    if block.len() == block_len {
        out.push((block.clone(), mass));
        return Ok(());
    }
    let cond = model.conditional(current)?;
    let eos_prob = cond.eos_prob();
    if eos_prob > 0.0 {
        let mut closed = block.clone();
        closed.push(model.alphabet().eos());
        out.push((closed, mass * eos_prob));
    }
    for t in 0..model.alphabet().size() {
        let p = cond.prob(t);
        if p > 0.0 {
            current.push(t);
            block.push(t);
            block_walk(model, current, block, mass * p, block_len, out)?;
            block.pop();
            current.pop();
        }
    }
    Ok(())
}

/// Exact chi-square divergence between the K-token block distributions of
/// `p` and `q` from a common prefix.
pub fn chi2_blocks<P, Q>(
    p: &P,
    q: &Q,
    prefix: &TokenString,
    block_len: usize,
) -> Result<DivergenceReport>
where
    P: LanguageModel + ?Sized,
    Q: LanguageModel + ?Sized,
{
    let q_blocks: BTreeMap<Vec<TokenId>, f64> = block_distribution(q, prefix, block_len)?
        .into_iter()
        .collect();
    let mut sum = 0.0;
    for (block, p_prob) in block_distribution(p, prefix, block_len)? {
        match q_blocks.get(&block) {
            Some(&q_prob) if q_prob > 0.0 => sum += p_prob * p_prob / q_prob,
            _ => {
                let ids: Vec<String> = block.iter().map(|t| t.to_string()).collect();
                return Err(Error::SupportViolation(ids.join(" ")));
            }
        }
    }
    Ok(DivergenceReport::from_chi2((sum - 1.0).max(0.0)))
}

/// Total variation distance `1/2 sum |d1 - d2|` over the union support.
pub fn tv_distance(d1: &BTreeMap<TokenString, f64>, d2: &BTreeMap<TokenString, f64>) -> f64 {
    let mut total = 0.0;
    for (s, &a) in d1 {
        total += (a - d2.get(s).copied().unwrap_or(0.0)).abs();
    }
    for (s, &b) in d2 {
        if !d1.contains_key(s) {
            total += b.abs();
        }
    }
    total / 2.0
}

/// Normalized counts of sampled strings.
pub fn empirical_distribution<I>(samples: I) -> BTreeMap<TokenString, f64>
where
    I: IntoIterator<Item = TokenString>,
{
    let mut counts: BTreeMap<TokenString, usize> = BTreeMap::new();
    let mut total = 0usize;
    for s in samples {
        *counts.entry(s).or_insert(0) += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|(s, c)| (s, c as f64 / total as f64))
        .collect()
}

/// Enumeration output as a lookup map.
pub fn distribution_map(pairs: Vec<(TokenString, f64)>) -> BTreeMap<TokenString, f64> {
    pairs.into_iter().collect()
}

/// One realization of the single-round importance resampling distribution:
/// N complete strings drawn i.i.d. from `q`, self-normalized by `p/q`.
pub fn empirical_resampling_dist<Q, P, R>(
    q: &Q,
    p: &P,
    n: usize,
    rng: &mut R,
) -> Result<BTreeMap<TokenString, f64>>
where
    Q: LanguageModel + ?Sized,
    P: LanguageModel + ?Sized,
    R: rand_core::RngCore,
{
    if n == 0 {
        return Err(Error::InvalidParameter("need n >= 1 draws".into()));
    }
    let mut draws = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    for _ in 0..n {
        let s = generate_ar(q, q.max_len(), rng)?;
        let lw = string_log_prob(p, &s)? - string_log_prob(q, &s)?;
        draws.push(s);
        log_weights.push(lw);
    }
    let normalized = crate::samplers::normalized_weights(&log_weights)?;
    let mut dist = BTreeMap::new();
    for (s, w) in draws.into_iter().zip(normalized) {
        *dist.entry(s).or_insert(0.0) += w;
    }
    Ok(dist)
}

/// One row of an error sweep at a fixed particle count.
#[derive(Clone, Copy, Debug)]
pub struct SweepRow {
    pub n: usize,
    pub l1_bias: f64,
    pub l2_bias_sq: f64,
    pub var_l2: f64,
    /// Reported alongside the rated quantities; no decay rate is asserted
    /// for it.
    pub var_l1: f64,
    pub mse: f64,
    /// Standard error of the MSE estimate across replications.
    pub mse_stderr: f64,
    pub reps: usize,
}

#[derive(Clone, Debug)]
pub struct ErrorSweep {
    pub rows: Vec<SweepRow>,
    pub seed: u64,
}

impl ErrorSweep {
    /// Tab-separated table, 12 significant digits, one row per N.
    pub fn to_table(&self) -> String {
        let mut out = String::from("N\tl1_bias\tl2_bias_sq\tvar_l2\tmse\treps\tseed\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.11e}\t{:.11e}\t{:.11e}\t{:.11e}\t{}\t{}",
                row.n, row.l1_bias, row.l2_bias_sq, row.var_l2, row.mse, row.reps, self.seed
            );
        }
        out
    }
}

/// Estimate bias, variance, and MSE of the importance resampling
/// distribution at each particle count in `ns`, from `reps` independent
/// realizations against the enumerated target.
///
/// All four statistics come from the same replications and the same sample
/// mean, so the bias-variance identity `mse = var_l2 + l2_bias_sq` holds
/// algebraically up to rounding.
pub fn error_sweep<Q, P>(q: &Q, p: &P, ns: &[usize], reps: usize, seed: u64) -> Result<ErrorSweep>
where
    Q: LanguageModel + ?Sized,
    P: LanguageModel + ?Sized,
{
    if reps < 2 {
        return Err(Error::NeedReplications(reps));
    }
    if ns.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one N".into()));
    }
    let support: Vec<TokenString> = enumerate_distribution(q)?
        .into_iter()
        .map(|(s, _)| s)
        .collect();
    let index: BTreeMap<&TokenString, usize> =
        support.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut target = vec![0.0; support.len()];
    for (s, prob) in enumerate_distribution(p)? {
        match index.get(&s) {
            Some(&i) => target[i] = prob,
            None => return Err(Error::SupportViolation(s.to_string())),
        }
    }

    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        if n == 0 {
            return Err(Error::InvalidParameter("sweep N must be >= 1".into()));
        }
        let mut realizations = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = stream_rng(seed, &[streams::SWEEP, n as u64, r as u64]);
            let dist = empirical_resampling_dist(q, p, n, &mut rng)?;
            let mut vec = vec![0.0; support.len()];
            for (s, w) in dist {
                let i = *index
                    .get(&s)
                    .ok_or_else(|| Error::SupportViolation(s.to_string()))?;
                vec[i] += w;
            }
            realizations.push(vec);
        }
        let mut mean = vec![0.0; support.len()];
        for real in &realizations {
            for (m, &x) in mean.iter_mut().zip(real) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= reps as f64;
        }
        let l1_bias: f64 = mean.iter().zip(&target).map(|(m, t)| (m - t).abs()).sum();
        let l2_bias_sq: f64 = mean
            .iter()
            .zip(&target)
            .map(|(m, t)| (m - t) * (m - t))
            .sum();
        let mut var_l2 = 0.0;
        let mut var_l1 = 0.0;
        let mut mse_samples = Vec::with_capacity(reps);
        for real in &realizations {
            let dev_sq: f64 = real.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum();
            let dev_abs: f64 = real.iter().zip(&mean).map(|(x, m)| (x - m).abs()).sum();
            let err_sq: f64 = real
                .iter()
                .zip(&target)
                .map(|(x, t)| (x - t) * (x - t))
                .sum();
            var_l2 += dev_sq;
            var_l1 += dev_abs;
            mse_samples.push(err_sq);
        }
        var_l2 /= reps as f64;
        var_l1 /= reps as f64;
        let mse: f64 = mse_samples.iter().sum::<f64>() / reps as f64;
        let mse_var: f64 = mse_samples
            .iter()
            .map(|x| (x - mse) * (x - mse))
            .sum::<f64>()
            / (reps as f64 - 1.0);
        rows.push(SweepRow {
            n,
            l1_bias,
            l2_bias_sq,
            var_l2,
            var_l1,
            mse,
            mse_stderr: (mse_var / reps as f64).sqrt(),
            reps,
        });
    }
    Ok(ErrorSweep { rows, seed })
}

/// Predicted versus measured ESS fraction for one draft-and-reweight pass
/// over `particles` fresh particles from the empty prefix.
#[derive(Clone, Copy, Debug)]
pub struct EssReport {
    pub draft_len: usize,
    pub particles: usize,
    pub empirical_fraction: f64,
    /// `1 / (1 + chi2(p_J || q_J))` from block enumeration, with `J = K`
    /// when the bonus token is on (its weight cancels) and `J = K + 1` when
    /// the extra token is drafted instead.
    pub predicted_fraction: f64,
    pub with_bonus: bool,
}

/// Run one round's draft and reweight on `particles` particles and compare
/// the ESS fraction against the block-enumeration prediction. With
/// `with_bonus` the weight covers the K drafted tokens only; without it,
/// K+1 tokens are drafted from `q` and all K+1 ratios enter the weight.
pub fn ess_rate_check<Q, P>(
    q: &Q,
    p: &P,
    draft_len: usize,
    particles: usize,
    seed: u64,
    with_bonus: bool,
) -> Result<EssReport>
where
    Q: LanguageModel + ?Sized,
    P: LanguageModel + ?Sized,
{
    if draft_len == 0 || particles == 0 {
        return Err(Error::InvalidParameter(
            "ess check needs draft_len >= 1 and particles >= 1".into(),
        ));
    }
    let weighted_len = if with_bonus { draft_len } else { draft_len + 1 };
    let eos = q.alphabet().eos();
    let mut log_weights = Vec::with_capacity(particles);
    for i in 0..particles {
        let mut rng = stream_rng(seed, &[streams::ESS_CHECK, i as u64]);
        let mut s = TokenString::empty();
        let mut lw = 0.0;
        for _ in 0..weighted_len {
            let cond_q = q.conditional(&s)?;
            let cond_p = p.conditional(&s)?;
            let sym = cond_q.sample(&mut rng);
            lw += cond_p.prob(sym).ln() - cond_q.prob(sym).ln();
            if sym == eos {
                break;
            }
            s.push(sym);
        }
        log_weights.push(lw);
    }
    let empirical_fraction = ess(&log_weights)? / particles as f64;
    let chi2 = chi2_blocks(p, q, &TokenString::empty(), weighted_len)?.chi2;
    Ok(EssReport {
        draft_len,
        particles,
        empirical_fraction,
        predicted_fraction: 1.0 / (1.0 + chi2),
        with_bonus,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}
