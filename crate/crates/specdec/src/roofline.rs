//! Closed-form performance model for particle speculative decoding.
//!
//! Pure arithmetic on hardware and model constants: arithmetic intensities
//! per forward pass and per full draft-and-verify cycle, the memory-bound
//! and compute-bound speed-up factors over autoregressive decoding, regime
//! classification against the hardware ridge point, and the classic optimal
//! speed-up of exact speculative decoding as a function of the acceptance
//! rate.
//!
//! The model charges `2P` FLOPs per token for a forward pass through `P`
//! parameters and one weight load per pass; attention FLOPs and activation
//! traffic are ignored. The ridge point is expressed as a batch size in
//! tokens: `R = peak_flops / bandwidth * b / 2`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Whether a forward pass is limited by weight loads or by arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    MemoryBound,
    ComputeBound,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::MemoryBound => "memory-bound",
            Regime::ComputeBound => "compute-bound",
        }
    }
}

/// Constants feeding the speed-up model.
#[derive(Clone, Copy, Debug)]
pub struct RooflineParams {
    /// Draft-to-target parameter ratio, in (0, 1].
    pub rho: f64,
    /// Draft-to-target decoding-time ratio; defaults to `rho`, the
    /// memory-bound proportionality.
    pub c: f64,
    /// Bytes per parameter (2 for FP16, 1 for INT8).
    pub bytes_per_param: f64,
    /// Ridge-point batch size in tokens.
    pub ridge_tokens: f64,
    /// Concurrent user requests B.
    pub requests: u64,
    /// Particles per request N.
    pub particles: u64,
    /// Draft length K.
    pub draft_len: u64,
}

impl RooflineParams {
    pub fn new(
        rho: f64,
        bytes_per_param: f64,
        ridge_tokens: f64,
        requests: u64,
        particles: u64,
        draft_len: u64,
    ) -> Result<Self> {
        let params = RooflineParams {
            rho,
            c: rho,
            bytes_per_param,
            ridge_tokens,
            requests,
            particles,
            draft_len,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_time_ratio(mut self, c: f64) -> Result<Self> {
        self.c = c;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "time ratio c must be positive, got {}",
                self.c
            )));
        }
        if !(self.bytes_per_param > 0.0) {
            return Err(Error::InvalidParameter(
                "bytes per parameter must be positive".into(),
            ));
        }
        if !(self.ridge_tokens > 0.0) {
            return Err(Error::InvalidParameter(
                "ridge point must be positive".into(),
            ));
        }
        if self.requests == 0 || self.particles == 0 || self.draft_len == 0 {
            return Err(Error::InvalidParameter(
                "B, N, and K must all be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Tokens the target pass scores per cycle: `B * N * (K + 1)`.
    pub fn effective_tokens(&self) -> f64 {
        (self.requests * self.particles * (self.draft_len + 1)) as f64
    }

    pub fn regime(&self) -> Regime {
        if self.effective_tokens() > self.ridge_tokens {
            Regime::ComputeBound
        } else {
            Regime::MemoryBound
        }
    }
}

/// Arithmetic intensity of batched autoregressive decoding: `2B / b`.
pub fn ai_autoregressive(bytes_per_param: f64, requests: u64) -> f64 {
    2.0 * requests as f64 / bytes_per_param
}

/// Arithmetic intensity of the target verification pass: `2BN(K+1) / b`.
pub fn ai_target(requests: u64, particles: u64, draft_len: u64, bytes_per_param: f64) -> f64 {
    2.0 * (requests * particles) as f64 * (draft_len + 1) as f64 / bytes_per_param
}

/// Arithmetic intensity of a full cycle including the K draft passes:
/// `2BN(rho K + K + 1) / (b (rho K + 1))`. Approaches [`ai_target`] as
/// `rho -> 0` and stays strictly below it for `rho > 0`.
pub fn ai_cycle(
    requests: u64,
    particles: u64,
    draft_len: u64,
    bytes_per_param: f64,
    rho: f64,
) -> f64 {
    let bn = (requests * particles) as f64;
    let k = draft_len as f64;
    2.0 * bn * (rho * k + k + 1.0) / (bytes_per_param * (rho * k + 1.0))
}

/// Memory-bound speed-up over autoregressive decoding: `(K+1) / (cK + 1)`,
/// independent of the effective batch size.
pub fn speedup_mem(draft_len: u64, c: f64) -> f64 {
    let k = draft_len as f64;
    (k + 1.0) / (c * k + 1.0)
}

/// Compute-bound speed-up: `(K+1) / (c_hat K + BN(K+1)/R)` with
/// `c_hat = max(c, c BN / R)`.
pub fn speedup_comp(
    draft_len: u64,
    c: f64,
    requests: u64,
    particles: u64,
    ridge_tokens: f64,
) -> f64 {
    let k = draft_len as f64;
    let bn = (requests * particles) as f64;
    let c_hat = (c * bn / ridge_tokens).max(c);
    (k + 1.0) / (c_hat * k + bn * (k + 1.0) / ridge_tokens)
}

/// Regime-dispatched speed-up at the given operating point.
pub fn speedup(params: &RooflineParams) -> (f64, Regime) {
    let regime = params.regime();
    let s = match regime {
        Regime::MemoryBound => speedup_mem(params.draft_len, params.c),
        Regime::ComputeBound => speedup_comp(
            params.draft_len,
            params.c,
            params.requests,
            params.particles,
            params.ridge_tokens,
        ),
    };
    (s, regime)
}

/// Classic optimal speed-up of exact speculative decoding:
/// `(1 - a^(g+1)) / ((1 - a)(g c + 1))` for acceptance rate `a` and draft
/// length `g`.
pub fn sd_optimal_speedup(alpha_acc: f64, gamma: u64, c: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha_acc) {
        return Err(Error::InvalidParameter(format!(
            "acceptance rate must lie in [0, 1), got {alpha_acc}"
        )));
    }
    if gamma == 0 {
        return Err(Error::InvalidParameter("gamma must be >= 1".into()));
    }
    if !(c >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cost ratio must be non-negative, got {c}"
        )));
    }
    let g = gamma as f64;
    Ok((1.0 - alpha_acc.powf(g + 1.0)) / ((1.0 - alpha_acc) * (g * c + 1.0)))
}

/// Scan integer draft lengths `1..=64` for the best classic speed-up.
pub fn sd_optimal_speedup_max(alpha_acc: f64, c: f64) -> Result<(u64, f64)> {
    let mut best = (1, sd_optimal_speedup(alpha_acc, 1, c)?);
    for gamma in 2..=64 {
        let s = sd_optimal_speedup(alpha_acc, gamma, c)?;
        if s > best.1 {
            best = (gamma, s);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    DraftLen,
    Particles,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::DraftLen => "k",
            SweepAxis::Particles => "n",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CurvePoint {
    pub axis_value: u64,
    pub speedup: f64,
    pub regime: Regime,
    /// Set on the first compute-bound point: the ridge crossing.
    pub at_ridge: bool,
}

/// Speed-up as a function of K or N with everything else held fixed.
#[derive(Clone, Debug)]
pub struct SpeedupCurve {
    pub axis: SweepAxis,
    pub points: Vec<CurvePoint>,
}

impl SpeedupCurve {
    /// Tab-separated `(axis, speedup, regime, ridge_flag)` rows.
    pub fn to_table(&self) -> String {
        let mut out = format!("{}\tspeedup\tregime\tridge\n", self.axis.label());
        for p in &self.points {
            let _ = writeln!(
                out,
                "{}\t{:.11e}\t{}\t{}",
                p.axis_value,
                p.speedup,
                p.regime.label(),
                u8::from(p.at_ridge)
            );
        }
        out
    }
}

/// Evaluate the regime-dispatched speed-up over an inclusive axis range.
pub fn sweep_curves(
    params: &RooflineParams,
    axis: SweepAxis,
    range: (u64, u64),
) -> Result<SpeedupCurve> {
    params.validate()?;
    let (lo, hi) = range;
    if lo == 0 || hi < lo {
        return Err(Error::InvalidParameter(format!(
            "sweep range must satisfy 1 <= lo <= hi, got {lo}..={hi}"
        )));
    }
    let mut points = Vec::with_capacity((hi - lo + 1) as usize);
    let mut crossed = false;
    for v in lo..=hi {
        let mut at = *params;
        match axis {
            SweepAxis::DraftLen => at.draft_len = v,
            SweepAxis::Particles => at.particles = v,
        }
        let (s, regime) = speedup(&at);
        let at_ridge = regime == Regime::ComputeBound && !crossed;
        crossed = crossed || regime == Regime::ComputeBound;
        points.push(CurvePoint {
            axis_value: v,
            speedup: s,
            regime,
            at_ridge,
        });
    }
    Ok(SpeedupCurve { axis, points })
}

/// One row of the hardware profile file: peak arithmetic throughput and
/// memory bandwidth, from which the ridge point follows.
#[derive(Clone, Debug, PartialEq)]
pub struct HardwareProfile {
    pub name: String,
    pub peak_flops: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl HardwareProfile {
    pub fn ridge_flops_per_byte(&self) -> f64 {
        self.peak_flops / self.bandwidth_bytes_per_s
    }

    /// Ridge point converted to a batch size in tokens:
    /// `ridge * b / 2`.
    pub fn ridge_tokens(&self, bytes_per_param: f64) -> f64 {
        self.ridge_flops_per_byte() * bytes_per_param / 2.0
    }
}

/// Parse the profile file: one profile per line as `key=value` fields
/// (`name`, `peak_flops`, `bandwidth_bytes_per_s`); `#` comments allowed.
pub fn parse_profiles(text: &str) -> Result<Vec<HardwareProfile>> {
    let mut profiles = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut name = None;
        let mut peak = None;
        let mut bandwidth = None;
        for field in line.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad profile field: {field}")))?;
            match key {
                "name" => name = Some(value.to_string()),
                "peak_flops" => {
                    peak = Some(
                        value
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad peak_flops: {value}")))?,
                    );
                }
                "bandwidth_bytes_per_s" => {
                    bandwidth = Some(
                        value
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad bandwidth: {value}")))?,
                    );
                }
                other => return Err(Error::Parse(format!("unknown profile key: {other}"))),
            }
        }
        match (name, peak, bandwidth) {
            (Some(name), Some(peak_flops), Some(bandwidth_bytes_per_s))
                if peak_flops > 0.0 && bandwidth_bytes_per_s > 0.0 =>
            {
                profiles.push(HardwareProfile {
                    name,
                    peak_flops,
                    bandwidth_bytes_per_s,
                });
            }
            _ => return Err(Error::Parse(format!("incomplete profile row: {line}"))),
        }
    }
    Ok(profiles)
}
