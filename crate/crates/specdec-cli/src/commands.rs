use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;

use specdec::analysis::{chi2_divergence, error_sweep, ess_rate_check};
use specdec::fixtures;
use specdec::kvcache::{replay_workload, PageTable, PageTableConfig};
use specdec::lm::{load_model, tabulate, temper, LanguageModel, TabularLM};
use specdec::rng::stream_rng;
use specdec::roofline::{
    parse_profiles, sd_optimal_speedup_max, sweep_curves, RooflineParams, SweepAxis,
};
use specdec::samplers::{
    format_round, generate_ar, generate_power_with, generate_powersmc_with, generate_sd,
    generate_smc_with, RoundRecord, SmcConfig,
};
use specdec::{Error, Result};

use crate::config::Defaults;

/// Stream namespace for per-run CLI seeds, disjoint from the library's.
const STREAM_CLI_RUN: u64 = 100;

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Load the draft/target pair from a named fixture or a pair of model files.
fn load_pair(
    fixture: Option<&str>,
    draft: Option<&Path>,
    target: Option<&Path>,
) -> Result<(TabularLM, TabularLM, String)> {
    match (fixture, draft, target) {
        (Some(name), None, None) => {
            let pair = fixtures::by_name(name)?;
            Ok((pair.draft, pair.target, format!("fixture={name}")))
        }
        (None, Some(draft_path), Some(target_path)) => {
            let draft = load_model(draft_path)?.into_tabular()?;
            let target = load_model(target_path)?.into_tabular()?;
            Ok((
                draft,
                target,
                format!(
                    "draft={} target={}",
                    draft_path.display(),
                    target_path.display()
                ),
            ))
        }
        (None, None, None) => Err(Error::InvalidParameter(
            "model source missing: pass --fixture or both --draft and --target".into(),
        )),
        _ => Err(Error::InvalidParameter(
            "pass either --fixture or both --draft and --target, not a mix".into(),
        )),
    }
}

#[derive(Args)]
pub struct SampleArgs {
    /// Decoding algorithm: ar, sd, smc, power, or powersmc.
    #[arg(long)]
    pub algo: String,
    /// Named committed model pair (standard, iid).
    #[arg(long)]
    pub fixture: Option<String>,
    /// Draft model file (with --target).
    #[arg(long)]
    pub draft: Option<PathBuf>,
    /// Target model file (with --draft).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Draft length K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Particle count N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Resample when ESS falls below this; defaults to N/2.
    #[arg(long)]
    pub ess_threshold: Option<f64>,
    /// Power-sampling exponent.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Token temperature applied to the draft model (to the model itself
    /// for --algo ar).
    #[arg(long)]
    pub temp: Option<f64>,
    /// Number of independent generations.
    #[arg(long)]
    pub runs: Option<u64>,
    #[arg(long)]
    pub max_rounds: Option<u64>,
    /// Length cap for ar/sd; defaults to the model's own cap.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Round-trace output file (smc/power/powersmc only).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

pub fn run_sample(args: &SampleArgs, defaults: &Defaults) -> Result<()> {
    let seed = defaults.seed();
    let k = defaults.resolve("k", args.k, 2)?;
    let n = defaults.resolve("n", args.n, 16)?;
    let eta = defaults.resolve("ess-threshold", args.ess_threshold, n as f64 / 2.0)?;
    let alpha = defaults.resolve("alpha", args.alpha, 1.0)?;
    let temp = defaults.resolve("temp", args.temp, 1.0)?;
    let runs = defaults.resolve("runs", args.runs, 1)?;
    let max_rounds = defaults.resolve("max-rounds", args.max_rounds, 256)?;

    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be >= 1".into()));
    }
    if temp.is_nan() || temp <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "temp must be positive, got {temp}"
        )));
    }
    let (draft_base, target, source) = load_pair(
        args.fixture.as_deref(),
        args.draft.as_deref(),
        args.target.as_deref(),
    )?;
    let max_len = defaults.resolve("max-len", args.max_len, target.max_len())?;
    let draft = tabulate(&temper(&draft_base, temp)?)?;

    let algo = args.algo.as_str();
    let needs_particles = matches!(algo, "smc" | "power" | "powersmc");
    if matches!(algo, "sd" | "smc" | "power") && k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if algo == "powersmc" && temp != 1.0 {
        return Err(Error::InvalidParameter(
            "powersmc derives its proposal from the target; temp must stay 1".into(),
        ));
    }

    let mut lines = Vec::with_capacity(runs as usize);
    let mut truncated = 0u64;
    let mut trace_text = String::new();
    for i in 0..runs {
        let tokens = match algo {
            "ar" => {
                // ar samples the (tempered) target directly.
                let model = tabulate(&temper(&target, temp)?)?;
                let mut rng = stream_rng(seed, &[STREAM_CLI_RUN, i]);
                generate_ar(&model, max_len.min(model.max_len()), &mut rng)?
            }
            "sd" => {
                let mut rng = stream_rng(seed, &[STREAM_CLI_RUN, i]);
                generate_sd(&draft, &target, k, max_len.min(target.max_len()), &mut rng)?
            }
            "smc" | "power" | "powersmc" => {
                let cfg = SmcConfig {
                    draft_len: k,
                    particles: n,
                    ess_threshold: eta,
                    max_rounds,
                    seed: seed.wrapping_add(i),
                    bonus_token: algo != "powersmc",
                };
                let mut records: Vec<RoundRecord> = Vec::new();
                let trace_sink = args.trace.as_ref().map(|_| &mut records);
                let result = match algo {
                    "smc" => generate_smc_with(&draft, &target, &cfg, None, trace_sink)?,
                    "power" => generate_power_with(&draft, &target, alpha, &cfg, None, trace_sink)?,
                    _ => generate_powersmc_with(&target, alpha, &cfg, None, trace_sink)?,
                };
                if args.trace.is_some() {
                    let _ = writeln!(trace_text, "# run {i}");
                    for record in &records {
                        let _ = writeln!(trace_text, "{}", format_round(record));
                    }
                }
                if result.truncated {
                    truncated += 1;
                }
                result.tokens
            }
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown algo: {other} (expected ar, sd, smc, power, powersmc)"
                )));
            }
        };
        lines.push(tokens.to_string());
    }

    let mut text = format!(
        "# specdec sample algo={algo} {source} k={k} n={} ess_threshold={} alpha={alpha} temp={temp} max_len={max_len} max_rounds={max_rounds} seed={seed} runs={runs} truncated={truncated}\n",
        if needs_particles { n.to_string() } else { "-".into() },
        if needs_particles { eta.to_string() } else { "-".into() },
    );
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    write_output(args.out.as_deref(), &text)?;
    if let Some(trace_path) = &args.trace {
        if !needs_particles {
            return Err(Error::InvalidParameter(
                "trace output applies to smc, power, and powersmc only".into(),
            ));
        }
        std::fs::write(trace_path, trace_text)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// bias-sweep, ess-rate, or chi2.
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub fixture: Option<String>,
    #[arg(long)]
    pub draft: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Comma-separated particle counts for the bias sweep.
    #[arg(long)]
    pub ns: Option<String>,
    /// Replications per sweep row.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Draft length for the ESS-rate check.
    #[arg(long)]
    pub k: Option<usize>,
    /// Particle count for the ESS-rate check.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_analyze(args: &AnalyzeArgs, defaults: &Defaults) -> Result<()> {
    let seed = defaults.seed();
    let (draft, target, source) = load_pair(
        args.fixture.as_deref(),
        args.draft.as_deref(),
        args.target.as_deref(),
    )?;
    let text = match args.task.as_str() {
        "bias-sweep" => {
            let ns_raw = defaults.resolve("ns", args.ns.clone(), "4,8,16,32,64,128".to_string())?;
            let ns = parse_ns(&ns_raw)?;
            let reps = defaults.resolve("reps", args.reps, 2000)?;
            let sweep = error_sweep(&draft, &target, &ns, reps, seed)?;
            format!(
                "# specdec analyze task=bias-sweep {source} ns={ns_raw} reps={reps} seed={seed}\n{}",
                sweep.to_table()
            )
        }
        "ess-rate" => {
            let k = defaults.resolve("k", args.k, 2)?;
            let n = defaults.resolve("n", args.n, 10_000)?;
            let mut out = format!(
                "# specdec analyze task=ess-rate {source} k={k} n={n} seed={seed}\nvariant\tk\tn\tempirical\tpredicted\n"
            );
            for with_bonus in [true, false] {
                let report = ess_rate_check(&draft, &target, k, n, seed, with_bonus)?;
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{:.11e}\t{:.11e}",
                    if with_bonus {
                        "with_bonus"
                    } else {
                        "without_bonus"
                    },
                    report.draft_len,
                    report.particles,
                    report.empirical_fraction,
                    report.predicted_fraction
                );
            }
            out
        }
        "chi2" => {
            let report = chi2_divergence(&target, &draft)?;
            format!(
                "# specdec analyze task=chi2 {source} seed={seed}\nchi2={}\nrenyi2_log={}\n",
                report.chi2, report.renyi2_log
            )
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown task: {other} (expected bias-sweep, ess-rate, chi2)"
            )));
        }
    };
    write_output(args.out.as_deref(), &text)
}

fn parse_ns(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad ns entry: {w}")))
        })
        .collect()
}

#[derive(Args)]
pub struct RooflineArgs {
    /// sweep (speed-up curve) or optimal (classic speed-up over acceptance).
    #[arg(long, default_value = "sweep")]
    pub task: String,
    /// Draft-to-target parameter ratio.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Draft-to-target time ratio; defaults to rho.
    #[arg(long)]
    pub c: Option<f64>,
    /// Bytes per parameter.
    #[arg(long)]
    pub b: Option<f64>,
    /// Ridge-point batch size in tokens; or derive via --profile/--hw.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Hardware profile file (key=value rows).
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Profile name to select from the file.
    #[arg(long)]
    pub hw: Option<String>,
    /// Concurrent requests B.
    #[arg(long)]
    pub batch: Option<u64>,
    /// Particles N.
    #[arg(long)]
    pub n: Option<u64>,
    /// Draft length K.
    #[arg(long)]
    pub k: Option<u64>,
    /// Sweep axis: k or n.
    #[arg(long, default_value = "k")]
    pub axis: String,
    #[arg(long)]
    pub min: Option<u64>,
    #[arg(long)]
    pub max: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_roofline(args: &RooflineArgs, defaults: &Defaults) -> Result<()> {
    let rho = defaults.resolve("rho", args.rho, 0.125)?;
    let b = defaults.resolve("b", args.b, 2.0)?;
    let batch = defaults.resolve("batch", args.batch, 1)?;
    let n = defaults.resolve("n", args.n, 8)?;
    let k = defaults.resolve("k", args.k, 16)?;

    let (ridge, ridge_source) = match (args.ridge, &args.profile) {
        (Some(r), _) => (r, "ridge=flag".to_string()),
        (None, Some(path)) => {
            let profiles = parse_profiles(&std::fs::read_to_string(path)?)?;
            let name = args.hw.as_deref().ok_or_else(|| {
                Error::InvalidParameter("--profile needs --hw to pick a row".into())
            })?;
            let profile = profiles
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| Error::InvalidParameter(format!("no profile named {name}")))?;
            (profile.ridge_tokens(b), format!("ridge=profile:{name}"))
        }
        (None, None) => (295.0, "ridge=default".to_string()),
    };

    let text = match args.task.as_str() {
        "sweep" => {
            let mut params = RooflineParams::new(rho, b, ridge, batch, n, k)?;
            if let Some(c) = args.c {
                params = params.with_time_ratio(c)?;
            }
            let axis = match args.axis.as_str() {
                "k" => SweepAxis::DraftLen,
                "n" => SweepAxis::Particles,
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown axis: {other} (expected k or n)"
                    )));
                }
            };
            let lo = defaults.resolve("min", args.min, 1)?;
            let hi = defaults.resolve("max", args.max, 64)?;
            let curve = sweep_curves(&params, axis, (lo, hi))?;
            format!(
                "# specdec roofline task=sweep rho={rho} c={} b={b} ridge_tokens={ridge} {ridge_source} batch={batch} n={n} k={k} axis={} range={lo}..={hi}\n# ridge condition: B*N*(K+1) > {ridge}\n{}",
                params.c,
                args.axis,
                curve.to_table()
            )
        }
        "optimal" => {
            let c = args.c.unwrap_or(rho);
            let mut out = format!(
                "# specdec roofline task=optimal c={c} gamma=1..=64\nalpha_acc\tgamma\tspeedup\n"
            );
            for i in 0..100 {
                let alpha_acc = i as f64 / 100.0;
                let (gamma, s) = sd_optimal_speedup_max(alpha_acc, c)?;
                let _ = writeln!(out, "{alpha_acc}\t{gamma}\t{s:.11e}");
            }
            out
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown task: {other} (expected sweep, optimal)"
            )));
        }
    };
    write_output(args.out.as_deref(), &text)
}

#[derive(Args)]
pub struct KvsimArgs {
    /// Workload file to replay; otherwise a synthetic workload is run.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Particles for the synthetic workload.
    #[arg(long)]
    pub n: Option<usize>,
    /// Tokens appended per particle per round is K+1.
    #[arg(long)]
    pub k: Option<usize>,
    /// Rounds of append-then-collapse.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub page_capacity: Option<usize>,
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub bytes_per_token: Option<u64>,
    /// Shared prompt tokens seeded before the rounds.
    #[arg(long)]
    pub prompt_tokens: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_kvsim(args: &KvsimArgs, defaults: &Defaults) -> Result<()> {
    let (table, manifest) = match &args.replay {
        Some(path) => {
            let table = replay_workload(&std::fs::read_to_string(path)?)?;
            (table, format!("replay={}", path.display()))
        }
        None => {
            let n = defaults.resolve("n", args.n, 8)?;
            let k = defaults.resolve("k", args.k, 16)?;
            let rounds = defaults.resolve("rounds", args.rounds, 8)?;
            let capacity = defaults.resolve("page-capacity", args.page_capacity, 16)?;
            let pool = defaults.resolve("pool", args.pool, 4096)?;
            let bytes = defaults.resolve("bytes-per-token", args.bytes_per_token, 1)?;
            let prompt = defaults.resolve("prompt-tokens", args.prompt_tokens, 0)?;
            if n == 0 {
                return Err(Error::InvalidParameter("n must be >= 1".into()));
            }
            let cfg = PageTableConfig {
                page_capacity: capacity,
                pool_pages: pool,
                bytes_per_token: bytes,
            };
            let mut table = PageTable::new(cfg, n)?;
            if prompt > 0 {
                table.seed_shared_prompt(prompt)?;
            }
            // Synthetic population cycle: every particle gains K+1 tokens,
            // then the population collapses onto particle 0.
            for _ in 0..rounds {
                for particle in 0..n {
                    table.append_tokens(particle, k + 1)?;
                }
                table.resample_pages(&vec![0; n])?;
            }
            (
                table,
                format!(
                    "synthetic n={n} k={k} rounds={rounds} page_capacity={capacity} pool={pool} bytes_per_token={bytes} prompt_tokens={prompt}"
                ),
            )
        }
    };
    table.check_invariants()?;
    let text = format!(
        "# specdec kvsim {manifest}\n{}",
        table.usage_stats().to_key_values()
    );
    write_output(args.out.as_deref(), &text)
}
