//! Monte Carlo MSE estimation and experiment sweeps.
//!
//! Trials run in parallel, each with the substream seed `stream ⊕ t`, and
//! per-trial results are reduced sequentially in trial order, so tables are
//! bit-for-bit reproducible regardless of thread count.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{input_perturb_mse, log2_floored, optimality_ratio, spec_lb};
use crate::error::{Error, Result};
use crate::marginals::{wdnf_to_sequence, WDnf};
use crate::mechanisms::{Mechanism, Neighbor, Privatize, PrivacyParams};
use crate::noise::Seed;
use crate::transforms::{convolve_direct, inverse_transform, Group, RealSequence, Spectrum};

/// Offset separating data-generation streams from mechanism-noise streams.
const DATA_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Trials per reduction block in [`output_moments`].
const MOMENT_BLOCK: usize = 1000;

/// Filters the harness knows how to build.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterFamily {
    /// `h = e_0`.
    Impulse,
    /// All ones.
    Constant,
    /// `N/2` ones followed by `N/2` zeros.
    RunningSum,
    /// Real filter whose spectrum is exactly on the `(c, p)` boundary:
    /// `ĥ_0 = √c` and `ĥ_k = ĥ_{N-k} = √(c / (2k+1)^p)`, zero phase.
    Compressible { c: f64, p: f64 },
    /// Independent ±1 entries. The variant number selects the draw.
    RandomSign(u64),
    Wdnf(WDnf),
    File(PathBuf),
}

impl FilterFamily {
    /// The filter at length `n`. A w-DNF fixes its own length `2^d`, and
    /// `n` must match it.
    pub fn instance(&self, n: usize, seed: Seed) -> Result<RealSequence> {
        if n == 0 {
            return Err(Error::validation("filter length must be positive"));
        }
        match self {
            FilterFamily::Impulse => {
                let mut v = vec![0.0; n];
                v[0] = 1.0;
                RealSequence::cyclic(v)
            }
            FilterFamily::Constant => RealSequence::cyclic(vec![1.0; n]),
            FilterFamily::RunningSum => {
                if !n.is_multiple_of(2) {
                    return Err(Error::validation("running-sum filter needs an even length"));
                }
                RealSequence::cyclic((0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect())
            }
            FilterFamily::Compressible { c, p } => compressible_filter(n, *c, *p),
            FilterFamily::RandomSign(variant) => {
                let mut rng = Seed::new(seed.base ^ DATA_SEED_OFFSET)
                    .with_stream(*variant)
                    .substream((n as u64) << 32)
                    .rng();
                RealSequence::cyclic((0..n).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect())
            }
            FilterFamily::Wdnf(f) => {
                let h = wdnf_to_sequence(f)?;
                if h.len() != n {
                    return Err(Error::validation(format!(
                        "w-DNF over d = {} has length {}, not {n}",
                        f.d(),
                        h.len()
                    )));
                }
                Ok(h)
            }
            FilterFamily::File(path) => {
                let h = crate::io::read_sequence(path)?;
                if h.len() != n {
                    return Err(Error::validation(format!(
                        "{} has length {}, not {n}",
                        path.display(),
                        h.len()
                    )));
                }
                Ok(h)
            }
        }
    }

    /// Lengths this filter can be built at, for families with a fixed size.
    pub fn fixed_len(&self) -> Option<usize> {
        match self {
            FilterFamily::Wdnf(f) => Some(1usize << f.d()),
            _ => None,
        }
    }
}

fn compressible_filter(n: usize, c: f64, p: f64) -> Result<RealSequence> {
    if !(c > 0.0 && c.is_finite()) || !(p > 1.0 && p.is_finite()) {
        return Err(Error::validation("compressible filter needs c > 0 and p > 1"));
    }
    let mut coeffs = vec![0.0; n];
    coeffs[0] = c.sqrt();
    for k in 1..=n / 2 {
        let m = (c / ((2 * k + 1) as f64).powf(p)).sqrt();
        coeffs[k] = m;
        coeffs[n - k] = m;
    }
    Ok(inverse_transform(&Spectrum::from_real(coeffs, Group::cyclic(n))?))
}

impl fmt::Display for FilterFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterFamily::Impulse => f.write_str("impulse"),
            FilterFamily::Constant => f.write_str("constant"),
            FilterFamily::RunningSum => f.write_str("running-sum"),
            FilterFamily::Compressible { c, p } => write!(f, "compressible:{c},{p}"),
            FilterFamily::RandomSign(0) => f.write_str("random-sign"),
            FilterFamily::RandomSign(v) => write!(f, "random-sign:{v}"),
            FilterFamily::Wdnf(w) => write!(f, "wdnf:d={},w={}", w.d(), w.width()),
            FilterFamily::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for FilterFamily {
    type Err = Error;

    /// `impulse`, `constant`, `running-sum`, `compressible:c,p`,
    /// `random-sign[:k]`, `file:path` or `wdnf:path`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::validation(format!("unknown filter `{s}`"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        Ok(match (name, arg) {
            ("impulse", None) => FilterFamily::Impulse,
            ("constant", None) => FilterFamily::Constant,
            ("running-sum", None) => FilterFamily::RunningSum,
            ("random-sign", None) => FilterFamily::RandomSign(0),
            ("random-sign", Some(k)) => FilterFamily::RandomSign(k.parse().map_err(|_| bad())?),
            ("compressible", Some(args)) => {
                let (c, p) = args.split_once(',').ok_or_else(bad)?;
                let c: f64 = c.trim().parse().map_err(|_| bad())?;
                let p: f64 = p.trim().parse().map_err(|_| bad())?;
                if !(c > 0.0) || !(p > 1.0) {
                    return Err(Error::validation("compressible filter needs c > 0 and p > 1"));
                }
                FilterFamily::Compressible { c, p }
            }
            ("file", Some(path)) => FilterFamily::File(path.into()),
            ("wdnf", Some(path)) => FilterFamily::Wdnf(crate::io::read_wdnf(path.as_ref())?),
            _ => return Err(bad()),
        })
    }
}

impl Serialize for FilterFamily {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct WdnfRepr<'a> {
            wdnf: &'a WDnf,
        }
        match self {
            FilterFamily::Wdnf(w) => WdnfRepr { wdnf: w }.serialize(s),
            other => s.collect_str(other),
        }
    }
}

impl<'de> Deserialize<'de> for FilterFamily {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Wdnf { wdnf: WDnf },
            File { file: PathBuf },
        }
        match Repr::deserialize(d)? {
            Repr::Name(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Wdnf { wdnf } => Ok(FilterFamily::Wdnf(wdnf)),
            Repr::File { file } => Ok(FilterFamily::File(file)),
        }
    }
}

/// How the fixed input `x` is chosen. Every implemented mechanism adds
/// input-independent noise, so any `x` attains the worst case; `Random`
/// exists to cross-check that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputStrategy {
    #[default]
    Zero,
    Random,
}

impl InputStrategy {
    pub fn input(self, group: Group, seed: Seed) -> RealSequence {
        match self {
            InputStrategy::Zero => RealSequence::zeros(group),
            InputStrategy::Random => {
                let mut rng = Seed::new(seed.base ^ DATA_SEED_OFFSET).with_stream(u64::MAX).rng();
                let values = (0..group.len()).map(|_| rng.gen_range(0..100) as f64).collect();
                RealSequence::new(values, group).expect("length matches group")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mechanisms: Vec<Mechanism>,
    pub filters: Vec<FilterFamily>,
    /// Sequence lengths `N` (for w-DNF filters, `2^d`).
    pub sizes: Vec<usize>,
    pub privacy: PrivacyParams,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub worst_case_inputs: InputStrategy,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mechanisms.is_empty() {
            return Err(Error::validation("experiment needs at least one mechanism"));
        }
        if self.filters.is_empty() {
            return Err(Error::validation("experiment needs at least one filter"));
        }
        if self.sizes.is_empty() {
            return Err(Error::validation("experiment needs at least one size"));
        }
        if self.trials == 0 {
            return Err(Error::validation("trials must be at least 1"));
        }
        Ok(())
    }

    /// The suite `bench` runs without a config file.
    pub fn default_suite() -> Self {
        Self {
            mechanisms: vec![
                Mechanism::Fourier,
                Mechanism::SpectralPartition,
                Mechanism::InputPerturb,
                Mechanism::OutputTime(Neighbor::L1),
                Mechanism::OutputFreq(Neighbor::L1),
            ],
            filters: vec![
                FilterFamily::Impulse,
                FilterFamily::Constant,
                FilterFamily::RunningSum,
                FilterFamily::Compressible { c: 1.0, p: 3.0 },
                FilterFamily::RandomSign(0),
            ],
            sizes: vec![64, 256],
            privacy: PrivacyParams::from_ln_inv_delta(1.0, 1.0).expect("valid constants"),
            trials: 1000,
            seed: 0,
            worst_case_inputs: InputStrategy::Zero,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseEstimate {
    pub empirical_mse: f64,
    pub std_error: f64,
    pub theoretical_mse: f64,
    /// Expected MSE of the noise actually added.
    pub expected_mse: f64,
    pub trials: usize,
}

impl MseEstimate {
    /// `|empirical - expected| <= max(5% of expected, 4 standard errors)`.
    pub fn within_tolerance(&self) -> bool {
        (self.empirical_mse - self.expected_mse).abs()
            <= (0.05 * self.expected_mse).max(4.0 * self.std_error)
    }
}

fn mean_squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64
}

/// Mean and standard error of the mean, summed in slice order.
fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical MSE `(1/N)‖A(x) - h * x‖²` over `trials` runs, trial `t`
/// seeded with `seed.substream(t)`.
pub fn estimate_mse<M: Privatize + ?Sized>(
    mechanism: &M,
    h: &RealSequence,
    x: &RealSequence,
    privacy: &PrivacyParams,
    trials: usize,
    seed: Seed,
) -> Result<MseEstimate> {
    if trials == 0 {
        return Err(Error::validation("trials must be at least 1"));
    }
    let exact = convolve_direct(h, x)?;
    let first = mechanism.privatize(x, h, privacy, seed.substream(0))?;
    let errors: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let out = mechanism.privatize(x, h, privacy, seed.substream(t))?;
            Ok(mean_squared_distance(out.output.values(), exact.values()))
        })
        .collect::<Result<_>>()?;
    let (empirical_mse, std_error) = mean_and_std_error(&errors);
    Ok(MseEstimate {
        empirical_mse,
        std_error,
        theoretical_mse: first.theoretical_mse,
        expected_mse: first.expected_mse,
        trials,
    })
}

/// Per-coordinate mean of a mechanism's output over many trials, with its
/// standard error, next to the exact convolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputMoments {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub exact: Vec<f64>,
    pub trials: usize,
}

impl OutputMoments {
    /// Largest `|mean - exact| / std_error` over coordinates with nonzero
    /// spread; coordinates without noise must match exactly to 1e-9.
    pub fn max_z_score(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.exact)
            .zip(&self.std_error)
            .map(|((m, e), se)| {
                if *se > 0.0 {
                    (m - e).abs() / se
                } else if (m - e).abs() <= 1e-9 * e.abs().max(1.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn output_moments<M: Privatize + ?Sized>(
    mechanism: &M,
    h: &RealSequence,
    x: &RealSequence,
    privacy: &PrivacyParams,
    trials: usize,
    seed: Seed,
) -> Result<OutputMoments> {
    if trials < 2 {
        return Err(Error::validation("output moments need at least 2 trials"));
    }
    let exact = convolve_direct(h, x)?;
    let n = exact.len();
    let blocks = trials.div_ceil(MOMENT_BLOCK);
    // Moments are accumulated around the exact value to limit cancellation.
    let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut sum = vec![0.0; n];
            let mut sum_sq = vec![0.0; n];
            for t in b * MOMENT_BLOCK..((b + 1) * MOMENT_BLOCK).min(trials) {
                let out = mechanism.privatize(x, h, privacy, seed.substream(t as u64))?;
                for (i, (o, e)) in out.output.values().iter().zip(exact.values()).enumerate() {
                    let dev = o - e;
                    sum[i] += dev;
                    sum_sq[i] += dev * dev;
                }
            }
            Ok((sum, sum_sq))
        })
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for (s, q) in &partial {
        for i in 0..n {
            sum[i] += s[i];
            sum_sq[i] += q[i];
        }
    }
    let t = trials as f64;
    let mut mean = Vec::with_capacity(n);
    let mut std_error = Vec::with_capacity(n);
    for i in 0..n {
        let dev_mean = sum[i] / t;
        let var = ((sum_sq[i] - t * dev_mean * dev_mean) / (t - 1.0)).max(0.0);
        mean.push(exact.values()[i] + dev_mean);
        std_error.push((var / t).sqrt());
    }
    Ok(OutputMoments { mean, std_error, exact: exact.into_values(), trials })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunningSumRow {
    /// Number of stream elements; the convolution has length `2N`.
    pub n: usize,
    pub empirical_mse: f64,
    pub std_error: f64,
    pub theoretical_mse: f64,
    pub expected_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunningSumTable {
    pub rows: Vec<RunningSumRow>,
    /// Least-squares slope of `ln MSE` against `ln N`.
    pub slope_vs_n: f64,
    /// Least-squares slope of `ln MSE` against `ln log2(2N)`: the exponent
    /// of polylogarithmic growth.
    pub slope_vs_log_n: f64,
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Running sums of a length-`N` stream as a cyclic convolution of length
/// `2N`: `N` ones then `N` zeros, applied to the zero-padded stream.
pub fn running_sum_experiment(
    n_values: &[usize],
    privacy: &PrivacyParams,
    trials: usize,
    seed: Seed,
) -> Result<RunningSumTable> {
    if n_values.is_empty() {
        return Err(Error::validation("running-sum experiment needs at least one size"));
    }
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        if !n.is_power_of_two() {
            return Err(Error::validation(format!("running-sum size {n} is not a power of two")));
        }
        let h = FilterFamily::RunningSum.instance(2 * n, seed)?;
        let x = RealSequence::zeros(h.group());
        let est = estimate_mse(&Mechanism::Fourier, &h, &x, privacy, trials, seed)?;
        rows.push(RunningSumRow {
            n,
            empirical_mse: est.empirical_mse,
            std_error: est.std_error,
            theoretical_mse: est.theoretical_mse,
            expected_mse: est.expected_mse,
        });
    }
    let ln_mse: Vec<f64> = rows.iter().map(|r| r.empirical_mse.ln()).collect();
    let ln_n: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ln_log: Vec<f64> = rows.iter().map(|r| (2.0 * r.n as f64).log2().ln()).collect();
    Ok(RunningSumTable {
        slope_vs_n: least_squares_slope(&ln_n, &ln_mse),
        slope_vs_log_n: least_squares_slope(&ln_log, &ln_mse),
        rows,
    })
}

/// One row of a bench table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub mechanism: String,
    pub filter: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub trials: usize,
    pub theoretical_mse: f64,
    pub empirical_mse: f64,
    pub std_error: f64,
    pub spec_lb: f64,
    pub optimality_ratio: Option<f64>,
    pub expected_mse: f64,
}

impl BenchRow {
    pub fn estimate(&self) -> MseEstimate {
        MseEstimate {
            empirical_mse: self.empirical_mse,
            std_error: self.std_error,
            theoretical_mse: self.theoretical_mse,
            expected_mse: self.expected_mse,
            trials: self.trials,
        }
    }
}

/// Fourier Mechanism against input perturbation on a compressible filter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressibleCheck {
    pub filter: String,
    pub n: usize,
    /// Expected MSE of the Fourier Mechanism as run.
    pub fourier_mse: f64,
    pub input_perturb_mse: f64,
    /// `N / log²N`: the factor the Fourier Mechanism must win by.
    pub required_factor: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<BenchRow>,
    pub compressible_checks: Vec<CompressibleCheck>,
}

/// Runs every (filter, N, mechanism) combination of the config.
pub fn mechanism_comparison(config: &ExperimentConfig) -> Result<ComparisonTable> {
    config.validate()?;
    let seed = Seed::new(config.seed);
    let privacy = &config.privacy;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for filter in &config.filters {
        let sizes: Vec<usize> = match filter.fixed_len() {
            Some(len) => vec![len],
            None => config.sizes.clone(),
        };
        for n in sizes {
            let h = filter.instance(n, seed)?;
            let x = config.worst_case_inputs.input(h.group(), seed);
            let lb = spec_lb(&h);
            let ratio = optimality_ratio(&h, privacy).ok();
            for mechanism in &config.mechanisms {
                let est = estimate_mse(mechanism, &h, &x, privacy, config.trials, seed)?;
                rows.push(BenchRow {
                    mechanism: mechanism.to_string(),
                    filter: filter.to_string(),
                    n,
                    epsilon: privacy.epsilon(),
                    delta: privacy.delta(),
                    trials: config.trials,
                    theoretical_mse: est.theoretical_mse,
                    empirical_mse: est.empirical_mse,
                    std_error: est.std_error,
                    spec_lb: lb,
                    optimality_ratio: ratio,
                    expected_mse: est.expected_mse,
                });
            }
            if let FilterFamily::Compressible { p, .. } = filter {
                if *p > 2.0 {
                    checks.push(compressible_check(filter, &h, privacy, seed)?);
                }
            }
        }
    }
    Ok(ComparisonTable { rows, compressible_checks: checks })
}

fn compressible_check(
    filter: &FilterFamily,
    h: &RealSequence,
    privacy: &PrivacyParams,
    seed: Seed,
) -> Result<CompressibleCheck> {
    let n = h.len();
    let fourier_mse = Mechanism::Fourier
        .run(&RealSequence::zeros(h.group()), h, privacy, seed)?
        .expected_mse;
    let input_mse = input_perturb_mse(h, privacy);
    let log_n = log2_floored(n);
    let required_factor = n as f64 / (log_n * log_n);
    Ok(CompressibleCheck {
        filter: filter.to_string(),
        n,
        fourier_mse,
        input_perturb_mse: input_mse,
        required_factor,
        holds: fourier_mse * required_factor <= input_mse,
    })
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(rows: &[BenchRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_json<W: Write>(rows: &[BenchRow], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    writeln!(out)?;
    Ok(())
}
