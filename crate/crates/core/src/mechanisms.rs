//! (ε, δ)-differentially private convolution mechanisms.
//!
//! All mechanisms privatize `y = h * x` with respect to ℓ₁ neighbors of `x`
//! (or ℓ_p neighbors for the output-perturbation baselines), and all of
//! them add noise that does not depend on `x`.
//!
//! # Complex coefficients
//!
//! On the cyclic group the Fourier coefficients of a real `x` are complex
//! and come in conjugate pairs `(k, N-k)`. Noise is drawn so the noised
//! spectrum stays conjugate-symmetric and the output stays real:
//! self-conjugate coefficients (`k = 0` and `k = N/2`) get one real Laplace
//! draw, and each pair gets independent real draws on its real and
//! imaginary parts that are mirrored onto the partner. The real and
//! imaginary parts each have ℓ₁ sensitivity at most `1/√N`, so a pair noised
//! at scale `b` costs `2/(N b²)` of the squared-epsilon budget: exactly what
//! the per-coefficient accounting charges for `k` and `N-k` together. When
//! the two members of a pair were planned with different scales, the pair
//! uses the scale with the same combined cost. The price is that a paired
//! coefficient carries `E|z|² = 4b²` instead of `2b²`; every
//! [`MechanismResult`] reports both the closed-form MSE and the exact
//! expected MSE of what was actually run.
//!
//! On the Boolean cube the spectrum is real and each coefficient gets a
//! single real draw, so the two figures coincide.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::error::{Error, Result};
use crate::noise::{laplace_vector, LaplaceScale, Seed};
use crate::transforms::{
    convolve_fast, dft_row, inverse_transform, transform, wht_row, Group, RealSequence, Spectrum,
};

/// Coefficients with `|ĥ_i| <= ZERO_THRESHOLD_REL * max_j |ĥ_j|` are
/// treated as exact zeros.
pub const ZERO_THRESHOLD_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
    #[serde(skip)]
    ln_inv_delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Privacy(format!("delta must lie in (0, 1), got {delta}")));
        }
        Self::build(epsilon, delta, -delta.ln())
    }

    /// Parameters given `ln(1/δ)` directly.
    pub fn from_ln_inv_delta(epsilon: f64, ln_inv_delta: f64) -> Result<Self> {
        if !(ln_inv_delta > 0.0 && ln_inv_delta.is_finite()) {
            return Err(Error::Privacy(format!("ln(1/delta) must be positive, got {ln_inv_delta}")));
        }
        Self::build(epsilon, (-ln_inv_delta).exp(), ln_inv_delta)
    }

    fn build(epsilon: f64, delta: f64, ln_inv_delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Privacy(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        if !(delta > 0.0) {
            return Err(Error::Privacy("delta underflows to zero".into()));
        }
        Ok(Self { epsilon, delta, ln_inv_delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn ln_inv_delta(&self) -> f64 {
        self.ln_inv_delta
    }

    /// `ε² / (2 ln(1/δ))`: the allowed sum of squared per-coefficient
    /// epsilons under advanced composition.
    pub fn squared_budget(&self) -> f64 {
        self.epsilon * self.epsilon / (2.0 * self.ln_inv_delta)
    }

    /// Per-query epsilon `ε / √(2M ln(1/δ))` when composing `m` queries.
    pub fn per_query_epsilon(&self, m: usize) -> f64 {
        self.epsilon / (2.0 * m as f64 * self.ln_inv_delta).sqrt()
    }
}

impl<'de> Deserialize<'de> for PrivacyParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            epsilon: f64,
            delta: Option<f64>,
            ln_inv_delta: Option<f64>,
        }
        let raw = Raw::deserialize(d)?;
        match (raw.delta, raw.ln_inv_delta) {
            (Some(delta), None) => PrivacyParams::new(raw.epsilon, delta),
            (None, Some(l)) => PrivacyParams::from_ln_inv_delta(raw.epsilon, l),
            _ => Err(Error::Privacy("give exactly one of delta, ln_inv_delta".into())),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Neighbor relation for the output-perturbation baselines: inputs at
/// ℓ_p distance at most one. The sensitivity of a linear query `⟨r, x⟩` is
/// the dual norm of `r` (ℓ∞ for p = 1, ℓ₂ for p = 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Neighbor {
    #[default]
    #[serde(rename = "1")]
    L1,
    #[serde(rename = "2")]
    L2,
}

impl Neighbor {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(Neighbor::L1),
            2 => Ok(Neighbor::L2),
            _ => Err(Error::validation(format!("neighbor p must be 1 or 2, got {p}"))),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            Neighbor::L1 => 1,
            Neighbor::L2 => 2,
        }
    }

    /// Sensitivity of `⟨row, x⟩` under this neighbor relation.
    pub fn dual_norm(self, row: impl IntoIterator<Item = f64>) -> f64 {
        match self {
            Neighbor::L1 => row.into_iter().fold(0.0, |m, v| m.max(v.abs())),
            Neighbor::L2 => row.into_iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    Fourier,
    SpectralPartition,
    InputPerturb,
    OutputTime(Neighbor),
    OutputFreq(Neighbor),
}

impl Mechanism {
    pub const NAMES: [&'static str; 5] =
        ["fourier", "spectral-partition", "input-perturb", "output-time", "output-freq"];

    pub fn base_name(&self) -> &'static str {
        match self {
            Mechanism::Fourier => "fourier",
            Mechanism::SpectralPartition => "spectral-partition",
            Mechanism::InputPerturb => "input-perturb",
            Mechanism::OutputTime(_) => "output-time",
            Mechanism::OutputFreq(_) => "output-freq",
        }
    }

    /// Parses a base name and applies `neighbor` to the output baselines.
    pub fn parse_with_neighbor(name: &str, neighbor: Neighbor) -> Result<Self> {
        Ok(match name.parse::<Mechanism>()? {
            Mechanism::OutputTime(_) => Mechanism::OutputTime(neighbor),
            Mechanism::OutputFreq(_) => Mechanism::OutputFreq(neighbor),
            m => m,
        })
    }

    pub fn run(
        &self,
        x: &RealSequence,
        h: &RealSequence,
        privacy: &PrivacyParams,
        seed: Seed,
    ) -> Result<MechanismResult> {
        match *self {
            Mechanism::Fourier => fourier_mechanism(x, h, privacy, seed),
            Mechanism::SpectralPartition => spectral_partition(x, h, privacy, seed),
            Mechanism::InputPerturb => baseline_input_perturb(x, h, privacy, seed),
            Mechanism::OutputTime(p) => baseline_output_perturb_time(x, h, privacy, p, seed),
            Mechanism::OutputFreq(p) => baseline_output_perturb_freq(x, h, privacy, p, seed),
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mechanism::OutputTime(Neighbor::L2) | Mechanism::OutputFreq(Neighbor::L2) => {
                write!(f, "{}:2", self.base_name())
            }
            _ => f.write_str(self.base_name()),
        }
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    /// Accepts the base names, with an optional `:1` / `:2` neighbor suffix
    /// on the output-perturbation baselines.
    fn from_str(s: &str) -> Result<Self> {
        let (name, p) = match s.split_once(':') {
            Some((name, p)) => {
                let p = p.parse::<u32>().map_err(|_| Error::UnknownMechanism(s.to_string()))?;
                (name, Some(Neighbor::from_p(p)?))
            }
            None => (s, None),
        };
        let neighbor = p.unwrap_or_default();
        match (name, p) {
            ("fourier", None) => Ok(Mechanism::Fourier),
            ("spectral-partition", None) => Ok(Mechanism::SpectralPartition),
            ("input-perturb", None) => Ok(Mechanism::InputPerturb),
            ("output-time", _) => Ok(Mechanism::OutputTime(neighbor)),
            ("output-freq", _) => Ok(Mechanism::OutputFreq(neighbor)),
            _ => Err(Error::UnknownMechanism(s.to_string())),
        }
    }
}

impl Serialize for Mechanism {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mechanism {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Anything that privatizes a convolution; lets the harness drive test
/// doubles as well as the real mechanisms.
pub trait Privatize: Sync {
    fn label(&self) -> String;

    fn privatize(
        &self,
        x: &RealSequence,
        h: &RealSequence,
        privacy: &PrivacyParams,
        seed: Seed,
    ) -> Result<MechanismResult>;
}

impl Privatize for Mechanism {
    fn label(&self) -> String {
        self.to_string()
    }

    fn privatize(
        &self,
        x: &RealSequence,
        h: &RealSequence,
        privacy: &PrivacyParams,
        seed: Seed,
    ) -> Result<MechanismResult> {
        self.run(x, h, privacy, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismResult {
    pub output: RealSequence,
    pub mechanism: String,
    /// Closed-form MSE of the mechanism as analyzed.
    pub theoretical_mse: f64,
    /// Exact expected MSE of the noise this implementation adds.
    pub expected_mse: f64,
    pub seed: Seed,
    pub privacy: PrivacyParams,
}

impl MechanismResult {
    /// `expected_mse / theoretical_mse`, the real/complex bookkeeping
    /// constant (1 when both are zero).
    pub fn noise_constant(&self) -> f64 {
        if self.theoretical_mse == 0.0 {
            1.0
        } else {
            self.expected_mse / self.theoretical_mse
        }
    }
}

impl Serialize for MechanismResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            mechanism: &'a str,
            n: usize,
            epsilon: f64,
            delta: f64,
            seed: u64,
            #[serde(skip_serializing_if = "is_zero")]
            seed_stream: u64,
            theoretical_mse: f64,
            expected_mse: f64,
            output: &'a [f64],
        }
        fn is_zero(v: &u64) -> bool {
            *v == 0
        }
        Repr {
            mechanism: &self.mechanism,
            n: self.output.len(),
            epsilon: self.privacy.epsilon(),
            delta: self.privacy.delta(),
            seed: self.seed.base,
            seed_stream: self.seed.stream,
            theoretical_mse: self.theoretical_mse,
            expected_mse: self.expected_mse,
            output: self.output.values(),
        }
        .serialize(s)
    }
}

/// Per-coefficient Laplace scales for the Fourier Mechanism.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisePlan {
    scales: Vec<LaplaceScale>,
    support: Vec<usize>,
    budget_check: f64,
}

impl NoisePlan {
    /// Plan over `support` with all scales zero. Releases the exact
    /// convolution; only for testing the noiseless path.
    pub fn noiseless(h_hat: &Spectrum) -> Self {
        Self {
            scales: vec![LaplaceScale::ZERO; h_hat.len()],
            support: support(h_hat),
            budget_check: f64::INFINITY,
        }
    }

    pub fn scales(&self) -> &[LaplaceScale] {
        &self.scales
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// `Σ_{i∈I} 1/(N b_i²)`.
    pub fn budget_check(&self) -> f64 {
        self.budget_check
    }

    /// Per-coefficient epsilons `1/(√N b_i)` over the support.
    pub fn epsilons(&self) -> Vec<f64> {
        let root_n = (self.scales.len() as f64).sqrt();
        self.support
            .iter()
            .map(|&i| 1.0 / (root_n * self.scales[i].value()))
            .collect()
    }

    /// The convex program's objective `Σ_{i∈I} b_i² |ĥ_i|²`.
    pub fn objective(&self, h_hat: &Spectrum) -> f64 {
        self.support
            .iter()
            .map(|&i| self.scales[i].value().powi(2) * h_hat.coeffs()[i].norm_sqr())
            .sum()
    }
}

/// Indices of the coefficients above the zero threshold.
pub fn support(h_hat: &Spectrum) -> Vec<usize> {
    let cutoff = ZERO_THRESHOLD_REL * h_hat.max_magnitude();
    h_hat
        .coeffs()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm() > cutoff && c.norm() > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// `‖ĥ‖₁` restricted to the support.
pub fn support_l1(h_hat: &Spectrum) -> f64 {
    support(h_hat).iter().map(|&i| h_hat.coeffs()[i].norm()).sum()
}

/// Closed-form minimizer of `Σ b_i²|ĥ_i|²` subject to
/// `Σ 1/(N b_i²) = ε²/(2 ln(1/δ))`:
/// `b_i = √(2 ln(1/δ) ‖ĥ‖₁ / (N ε² |ĥ_i|))` on the support, zero elsewhere.
pub fn optimal_noise_plan(h_hat: &Spectrum, privacy: &PrivacyParams) -> NoisePlan {
    let n = h_hat.len() as f64;
    let support = support(h_hat);
    let l1: f64 = support.iter().map(|&i| h_hat.coeffs()[i].norm()).sum();
    let gamma = 2.0 * privacy.ln_inv_delta() * l1 / (privacy.epsilon().powi(2) * n);
    let mut scales = vec![LaplaceScale::ZERO; h_hat.len()];
    let mut budget_check = 0.0;
    for &i in &support {
        let b = (gamma / h_hat.coeffs()[i].norm()).sqrt();
        scales[i] = LaplaceScale::new(b).expect("finite positive scale");
        budget_check += 1.0 / (n * b * b);
    }
    NoisePlan { scales, support, budget_check }
}

/// Fourier Mechanism: noise each Fourier coefficient of `x` with the
/// optimal plan, multiply by the filter's eigenvalues, transform back.
/// O(N log N) for power-of-two N and on the cube.
pub fn fourier_mechanism(
    x: &RealSequence,
    h: &RealSequence,
    privacy: &PrivacyParams,
    seed: Seed,
) -> Result<MechanismResult> {
    x.check_same_group(h)?;
    let h_hat = transform(h);
    let plan = optimal_noise_plan(&h_hat, privacy);
    let (output, expected_mse) = run_noise_plan(x, &h_hat, &plan, seed);
    Ok(MechanismResult {
        output,
        mechanism: Mechanism::Fourier.to_string(),
        theoretical_mse: bounds::fourier_mse(&h_hat, privacy),
        expected_mse,
        seed,
        privacy: *privacy,
    })
}

/// Runs the Fourier Mechanism's release step with an arbitrary plan.
pub fn apply_noise_plan(
    x: &RealSequence,
    h: &RealSequence,
    plan: &NoisePlan,
    seed: Seed,
) -> Result<RealSequence> {
    x.check_same_group(h)?;
    if plan.scales.len() != x.len() {
        return Err(Error::validation("noise plan length does not match input"));
    }
    Ok(run_noise_plan(x, &transform(h), plan, seed).0)
}

fn run_noise_plan(x: &RealSequence, h_hat: &Spectrum, plan: &NoisePlan, seed: Seed) -> (RealSequence, f64) {
    let group = x.group();
    let root_n = (x.len() as f64).sqrt();
    let scales: Vec<f64> = plan.scales.iter().map(|s| s.value()).collect();
    let noise = SpectralNoise::draw(group, &scales, seed);
    let x_hat = transform(x);
    let mut y_bar = vec![Complex64::new(0.0, 0.0); x.len()];
    let mut gains = vec![0.0; x.len()];
    for &i in &plan.support {
        let eig = h_hat.coeffs()[i] * root_n;
        y_bar[i] = eig * (x_hat.coeffs()[i] + noise.values[i]);
        gains[i] = eig.norm_sqr();
    }
    let output = inverse_transform(&Spectrum::new(y_bar, group).expect("finite"));
    (output, noise.expected_mse(&gains))
}

/// Noise added to a spectrum, plus the second moment `E|z_i|²` of each
/// coefficient.
struct SpectralNoise {
    values: Vec<Complex64>,
    second_moments: Vec<f64>,
}

impl SpectralNoise {
    /// Draws noise with nominal per-coefficient scales, keeping the result
    /// conjugate-symmetric on the cyclic group (see the module docs).
    fn draw(group: Group, scales: &[f64], seed: Seed) -> Self {
        let n = scales.len();
        let mut slot_scales = vec![LaplaceScale::ZERO; n];
        let mut second_moments = vec![0.0; n];
        for k in 0..n {
            let j = group.negate(k);
            if j == k {
                slot_scales[k] = LaplaceScale::new(scales[k]).expect("validated scale");
                second_moments[k] = slot_scales[k].variance();
            } else if k < j {
                let b = LaplaceScale::new(pair_scale(scales[k], scales[j])).expect("validated scale");
                slot_scales[k] = b;
                slot_scales[j] = b;
                second_moments[k] = 2.0 * b.variance();
                second_moments[j] = 2.0 * b.variance();
            }
        }
        let draws = laplace_vector(&slot_scales, seed);
        let values = (0..n)
            .map(|k| {
                let j = group.negate(k);
                match k.cmp(&j) {
                    std::cmp::Ordering::Equal => Complex64::new(draws[k], 0.0),
                    std::cmp::Ordering::Less => Complex64::new(draws[k], draws[j]),
                    std::cmp::Ordering::Greater => Complex64::new(draws[j], -draws[k]),
                }
            })
            .collect();
        Self { values, second_moments }
    }

    /// MSE of `F^H (g ⊙ z)` given `|g_i|²`: `(1/N) Σ |g_i|² E|z_i|²`.
    fn expected_mse(&self, gains_sq: &[f64]) -> f64 {
        let n = gains_sq.len() as f64;
        gains_sq
            .iter()
            .zip(&self.second_moments)
            .map(|(g, m)| g * m)
            .sum::<f64>()
            / n
    }
}

/// Common scale for a conjugate pair planned at `a` and `b`: the scale whose
/// two draws cost `1/a² + 1/b²`. A zero scale stands for an unreleased
/// coefficient and costs nothing.
fn pair_scale(a: f64, b: f64) -> f64 {
    let inv = |s: f64| if s > 0.0 { 1.0 / (s * s) } else { 0.0 };
    let total = inv(a) + inv(b);
    if total == 0.0 {
        0.0
    } else {
        (2.0 / total).sqrt()
    }
}

/// Noise scales of the spectral-partition mechanism.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionPlan {
    eta: f64,
    /// Coefficient indices by descending `|ĥ|`, ties by index.
    order: Vec<usize>,
    /// Group number of each coefficient index (0 for the top coefficient).
    groups: Vec<u32>,
    scales: Vec<LaplaceScale>,
}

impl PartitionPlan {
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    pub fn scales(&self) -> &[LaplaceScale] {
        &self.scales
    }

    /// The composition sum as charged by the analysis, with the top
    /// coefficient charged `1/η²` and group `k` charged `2^k/(N η²)` per
    /// member: `(1 + log N)/η²`.
    pub fn budget_accounted(&self) -> f64 {
        let n = self.scales.len() as f64;
        let eta2 = self.eta * self.eta;
        self.groups
            .iter()
            .map(|&k| if k == 0 { 1.0 / eta2 } else { 2f64.powi(k as i32) / (n * eta2) })
            .sum()
    }

    /// `Σ_i 1/(N b_i²)` with the true sensitivity `1/√N` of every
    /// coefficient. At most [`Self::budget_accounted`].
    pub fn budget_exact(&self) -> f64 {
        let n = self.scales.len() as f64;
        self.scales.iter().map(|b| 1.0 / (n * b.value().powi(2))).sum()
    }

    /// `Σ_i |ĥ_i|² · 2η² 2^{-k(i)}`.
    pub fn theoretical_mse(&self, h_hat: &Spectrum) -> f64 {
        h_hat
            .coeffs()
            .iter()
            .zip(&self.scales)
            .map(|(c, b)| c.norm_sqr() * b.variance())
            .sum()
    }
}

/// Plans spectral partitioning: the top coefficient gets `Lap(η)`, and
/// sorted ranks `[N/2^k, N/2^{k-1})` get `Lap(η 2^{-k/2})` for
/// `k = 1..log N`, with `η = √(2(1 + log N) ln(1/δ))/ε`.
pub fn spectral_partition_plan(h_hat: &Spectrum, privacy: &PrivacyParams) -> Result<PartitionPlan> {
    let n = h_hat.len();
    if !n.is_power_of_two() {
        return Err(Error::validation(format!(
            "spectral partition requires a power-of-two length, got {n}"
        )));
    }
    let log_n = n.trailing_zeros();
    let eta = (2.0 * (1.0 + log_n as f64) * privacy.ln_inv_delta()).sqrt() / privacy.epsilon();
    let mags = h_hat.magnitudes();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    let mut groups = vec![0u32; n];
    let mut scales = vec![LaplaceScale::ZERO; n];
    for (rank, &i) in order.iter().enumerate() {
        let k = if rank == 0 { 0 } else { log_n - rank.ilog2() };
        groups[i] = k;
        scales[i] = LaplaceScale::new(eta * 2f64.powf(-(k as f64) / 2.0)).expect("finite scale");
    }
    Ok(PartitionPlan { eta, order, groups, scales })
}

/// Spectral-partition mechanism. Requires a power-of-two length.
pub fn spectral_partition(
    x: &RealSequence,
    h: &RealSequence,
    privacy: &PrivacyParams,
    seed: Seed,
) -> Result<MechanismResult> {
    x.check_same_group(h)?;
    let group = x.group();
    let h_hat = transform(h);
    let plan = spectral_partition_plan(&h_hat, privacy)?;
    let root_n = (x.len() as f64).sqrt();
    let scales: Vec<f64> = plan.scales.iter().map(|s| s.value()).collect();
    let noise = SpectralNoise::draw(group, &scales, seed);
    let x_hat = transform(x);
    let mut gains = vec![0.0; x.len()];
    let y_bar: Vec<Complex64> = (0..x.len())
        .map(|i| {
            let eig = h_hat.coeffs()[i] * root_n;
            gains[i] = eig.norm_sqr();
            eig * (x_hat.coeffs()[i] + noise.values[i])
        })
        .collect();
    let output = inverse_transform(&Spectrum::new(y_bar, group)?);
    Ok(MechanismResult {
        output,
        mechanism: Mechanism::SpectralPartition.to_string(),
        theoretical_mse: plan.theoretical_mse(&h_hat),
        expected_mse: noise.expected_mse(&gains),
        seed,
        privacy: *privacy,
    })
}

/// Input perturbation: `H (x + z)` with `z_i ~ Lap(√(2N ln(1/δ))/ε)`.
pub fn baseline_input_perturb(
    x: &RealSequence,
    h: &RealSequence,
    privacy: &PrivacyParams,
    seed: Seed,
) -> Result<MechanismResult> {
    x.check_same_group(h)?;
    let n = x.len();
    let scale = LaplaceScale::new(1.0 / privacy.per_query_epsilon(n))?;
    let noise = laplace_vector(&vec![scale; n], seed);
    let noisy: Vec<f64> = x.values().iter().zip(&noise).map(|(a, z)| a + z).collect();
    let output = convolve_fast(h, &RealSequence::new(noisy, x.group())?)?;
    let mse = bounds::input_perturb_mse(h, privacy);
    Ok(MechanismResult {
        output,
        mechanism: Mechanism::InputPerturb.to_string(),
        theoretical_mse: mse,
        expected_mse: mse,
        seed,
        privacy: *privacy,
    })
}

/// Output perturbation in the time domain: `Hx + z` with
/// `z_m ~ Lap(sens(H_m)/ε_m)`, `ε_m = ε/√(2N ln(1/δ))`. Every row of a
/// group convolution matrix is a permutation of `h`, so the row
/// sensitivity is `‖h‖∞` (p = 1) or `‖h‖₂` (p = 2).
pub fn baseline_output_perturb_time(
    x: &RealSequence,
    h: &RealSequence,
    privacy: &PrivacyParams,
    neighbor: Neighbor,
    seed: Seed,
) -> Result<MechanismResult> {
    x.check_same_group(h)?;
    let n = x.len();
    let sensitivity = neighbor.dual_norm(h.values().iter().copied());
    let scale = LaplaceScale::new(sensitivity / privacy.per_query_epsilon(n))?;
    let noise = laplace_vector(&vec![scale; n], seed);
    let y = convolve_fast(h, x)?;
    let noisy: Vec<f64> = y.values().iter().zip(&noise).map(|(a, z)| a + z).collect();
    let mse = bounds::output_time_mse(h, privacy, neighbor);
    Ok(MechanismResult {
        output: RealSequence::new(noisy, x.group())?,
        mechanism: Mechanism::OutputTime(neighbor).to_string(),
        theoretical_mse: mse,
        expected_mse: mse,
        seed,
        privacy: *privacy,
    })
}

/// Sensitivity of a single transform coefficient, computed from an actual
/// row of the unitary transform matrix. All rows have the same norms.
pub fn transform_row_sensitivity(group: Group, neighbor: Neighbor) -> f64 {
    match group {
        Group::Cyclic { n } => {
            let row = dft_row(1 % n, n);
            match neighbor {
                Neighbor::L1 => row.iter().fold(0.0, |m, c| m.max(c.norm())),
                Neighbor::L2 => row.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt(),
            }
        }
        Group::BooleanCube { d } => neighbor.dual_norm(wht_row(1 % (1 << d), d)),
    }
}

/// Output perturbation in the frequency domain: noise
/// `z_m ~ Lap(|√N ĥ_m| · sens(F_m) / ε_m)` on `F y`, then invert.
pub fn baseline_output_perturb_freq(
    x: &RealSequence,
    h: &RealSequence,
    privacy: &PrivacyParams,
    neighbor: Neighbor,
    seed: Seed,
) -> Result<MechanismResult> {
    x.check_same_group(h)?;
    let group = x.group();
    let n = x.len();
    let root_n = (n as f64).sqrt();
    let h_hat = transform(h);
    let row_sens = transform_row_sensitivity(group, neighbor);
    let eps_m = privacy.per_query_epsilon(n);
    let mut scales = vec![0.0; n];
    for i in support(&h_hat) {
        scales[i] = root_n * h_hat.coeffs()[i].norm() * row_sens / eps_m;
    }
    let noise = SpectralNoise::draw(group, &scales, seed);
    let x_hat = transform(x);
    let y_check: Vec<Complex64> = (0..n)
        .map(|i| h_hat.coeffs()[i] * root_n * x_hat.coeffs()[i] + noise.values[i])
        .collect();
    let output = inverse_transform(&Spectrum::new(y_check, group)?);
    Ok(MechanismResult {
        output,
        mechanism: Mechanism::OutputFreq(neighbor).to_string(),
        theoretical_mse: bounds::output_freq_mse(h, privacy, neighbor),
        expected_mse: noise.expected_mse(&vec![1.0; n]),
        seed,
        privacy: *privacy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub support_size: usize,
    /// With fewer than two support coefficients the budget constraint
    /// admits exactly one point.
    pub trivially_optimal: bool,
    /// `Σ b_i² |ĥ_i|²` at the closed-form optimum.
    pub objective: f64,
    /// `4 ln(1/δ) ‖ĥ‖₁² / (ε² N)`, which should equal twice the objective.
    pub closed_form_mse: f64,
    /// Relative violation of the budget constraint at the optimum.
    pub constraint_residual: f64,
    pub perturbations: usize,
    /// Perturbations that lowered the objective by more than 1e-9 relative.
    pub improvements: usize,
    /// Smallest `(objective' - objective) / objective` seen; negative
    /// values are improvements.
    pub worst_relative_change: f64,
}

/// Searches random budget-feasible perturbations of the closed-form plan
/// for a lower objective.
pub fn kkt_optimality_check(
    h_hat: &Spectrum,
    privacy: &PrivacyParams,
    trials: usize,
    seed: Seed,
) -> KktReport {
    let n = h_hat.len() as f64;
    let plan = optimal_noise_plan(h_hat, privacy);
    let target = privacy.squared_budget();
    let objective = plan.objective(h_hat);
    let weights: Vec<f64> = plan.support.iter().map(|&i| h_hat.coeffs()[i].norm_sqr()).collect();
    // Work in a_i = 1/b_i², where the program is convex.
    let a_opt: Vec<f64> = plan.support.iter().map(|&i| plan.scales[i].value().powi(-2)).collect();
    let mut report = KktReport {
        support_size: plan.support.len(),
        trivially_optimal: plan.support.len() < 2,
        objective,
        closed_form_mse: bounds::fourier_mse(h_hat, privacy),
        constraint_residual: if plan.support.is_empty() {
            0.0
        } else {
            (plan.budget_check - target).abs() / target
        },
        perturbations: 0,
        improvements: 0,
        worst_relative_change: 0.0,
    };
    if report.trivially_optimal {
        return report;
    }
    let mut rng = seed.rng();
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let sigma = 10f64.powf(-rng.gen_range(0.0..6.0));
        let mut a: Vec<f64> = a_opt
            .iter()
            .map(|v| v * (sigma * rng.gen_range(-1.0..1.0)).exp())
            .collect();
        let used: f64 = a.iter().sum::<f64>() / n;
        a.iter_mut().for_each(|v| *v *= target / used);
        let perturbed: f64 = weights.iter().zip(&a).map(|(w, v)| w / v).sum();
        let change = (perturbed - objective) / objective;
        worst = worst.min(change);
        if change < -1e-9 {
            report.improvements += 1;
        }
        report.perturbations += 1;
    }
    report.worst_relative_change = if worst.is_finite() { worst } else { 0.0 };
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{convolve_direct, dft};
    use std::f64::consts::SQRT_2;

    fn params() -> PrivacyParams {
        PrivacyParams::from_ln_inv_delta(1.0, 1.0).unwrap()
    }

    fn impulse(n: usize) -> RealSequence {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        RealSequence::cyclic(v).unwrap()
    }

    fn random_seq(n: usize, seed: u64) -> RealSequence {
        let mut rng = Seed::new(seed).rng();
        RealSequence::cyclic((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn privacy_params_validation() {
        assert!(PrivacyParams::new(0.0, 0.5).is_err());
        assert!(PrivacyParams::new(-1.0, 0.5).is_err());
        assert!(PrivacyParams::new(1.0, 0.0).is_err());
        assert!(PrivacyParams::new(1.0, 1.0).is_err());
        assert!(PrivacyParams::new(f64::NAN, 0.5).is_err());
        assert!(PrivacyParams::from_ln_inv_delta(1.0, 0.0).is_err());
        let p = PrivacyParams::new(2.0, (-1.0f64).exp()).unwrap();
        assert!(close(p.ln_inv_delta(), 1.0, 1e-15));
        let q: PrivacyParams = serde_json::from_str(r#"{"epsilon":1,"ln_inv_delta":2}"#).unwrap();
        assert_eq!(q.ln_inv_delta(), 2.0);
        assert!(serde_json::from_str::<PrivacyParams>(r#"{"epsilon":1,"delta":0.1,"ln_inv_delta":2}"#).is_err());
    }

    #[test]
    fn mechanism_names_round_trip() {
        for name in Mechanism::NAMES {
            let m: Mechanism = name.parse().unwrap();
            assert_eq!(m.to_string(), name);
        }
        assert_eq!("output-time:2".parse::<Mechanism>().unwrap(), Mechanism::OutputTime(Neighbor::L2));
        assert!("output-time:3".parse::<Mechanism>().is_err());
        assert!("fourier:2".parse::<Mechanism>().is_err());
        assert!(matches!("laplace".parse::<Mechanism>(), Err(Error::UnknownMechanism(_))));
    }

    #[test]
    fn impulse_plan_is_sqrt_two() {
        for n in [4, 16, 64] {
            let plan = optimal_noise_plan(&dft(&impulse(n)).unwrap(), &params());
            for b in plan.scales() {
                assert!(close(b.value(), SQRT_2, 1e-12));
            }
        }
    }

    #[test]
    fn constant_filter_plan_has_single_support() {
        let n = 16;
        let h = RealSequence::cyclic(vec![1.0; n]).unwrap();
        let plan = optimal_noise_plan(&dft(&h).unwrap(), &params());
        assert_eq!(plan.support(), &[0]);
        assert!(close(plan.scales()[0].value(), (2.0 / n as f64).sqrt(), 1e-12));
        assert!(plan.scales()[1..].iter().all(|b| b.is_zero()));
    }

    #[test]
    fn zero_coefficients_get_zero_scale() {
        // h = (1, 1, 0, 0) has ĥ_2 = 0.
        let h = RealSequence::cyclic(vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let h_hat = dft(&h).unwrap();
        let plan = optimal_noise_plan(&h_hat, &params());
        assert_eq!(plan.support(), &[0, 1, 3]);
        assert!(plan.scales()[2].is_zero());
    }

    #[test]
    fn plan_budget_and_objective_closed_forms() {
        let p = PrivacyParams::new(0.7, 1e-3).unwrap();
        for seed in 0..20 {
            let h_hat = dft(&random_seq(64, seed)).unwrap();
            let plan = optimal_noise_plan(&h_hat, &p);
            assert!(close(plan.budget_check(), p.squared_budget(), 1e-9));
            let eps_sq: f64 = plan.epsilons().iter().map(|e| e * e).sum();
            assert!(close(eps_sq, p.squared_budget(), 1e-9));
            assert!(close(2.0 * plan.objective(&h_hat), bounds::fourier_mse(&h_hat, &p), 1e-9));
        }
    }

    #[test]
    fn impulse_theoretical_mse_is_four() {
        for n in [8, 64, 256] {
            let r = fourier_mechanism(&impulse(n), &impulse(n), &params(), Seed::new(1)).unwrap();
            assert!(close(r.theoretical_mse, 4.0, 1e-12));
        }
    }

    #[test]
    fn impulse_expected_mse_constant() {
        // Two self-conjugate coefficients with E|z|² = 2b², N-2 paired with 4b².
        let n = 256;
        let r = fourier_mechanism(&impulse(n), &impulse(n), &params(), Seed::new(1)).unwrap();
        let expected = 4.0 * (2.0 + 2.0 * (n as f64 - 2.0)) / n as f64;
        assert!(close(r.expected_mse, expected, 1e-12));
    }

    #[test]
    fn zero_filter_gives_zero_output() {
        let x = random_seq(32, 3);
        let h = RealSequence::cyclic(vec![0.0; 32]).unwrap();
        let r = fourier_mechanism(&x, &h, &params(), Seed::new(2)).unwrap();
        assert!(r.output.is_zero());
        assert_eq!(r.theoretical_mse, 0.0);
        assert_eq!(r.expected_mse, 0.0);
        for m in [Mechanism::InputPerturb, Mechanism::OutputTime(Neighbor::L1), Mechanism::OutputFreq(Neighbor::L2)] {
            let r = m.run(&x, &h, &params(), Seed::new(2)).unwrap();
            assert!(r.output.values().iter().all(|v| v.abs() < 1e-12), "{m}");
            assert_eq!(r.theoretical_mse, 0.0);
        }
    }

    #[test]
    fn noiseless_plan_reproduces_convolution() {
        let x = random_seq(64, 4);
        let h = random_seq(64, 5);
        let plan = NoisePlan::noiseless(&transform(&h));
        let y = apply_noise_plan(&x, &h, &plan, Seed::new(0)).unwrap();
        let exact = convolve_direct(&h, &x).unwrap();
        for (a, b) in y.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn output_is_real_and_deterministic() {
        let x = random_seq(128, 6);
        let h = random_seq(128, 7);
        for name in Mechanism::NAMES {
            let m: Mechanism = name.parse().unwrap();
            let a = m.run(&x, &h, &params(), Seed::new(9)).unwrap();
            let b = m.run(&x, &h, &params(), Seed::new(9)).unwrap();
            assert_eq!(a, b, "{name}");
            let c = m.run(&x, &h, &params(), Seed::new(10)).unwrap();
            assert_ne!(a.output, c.output, "{name}");
            assert_eq!(a.output.len(), 128);
            assert!(a.theoretical_mse >= 0.0);
        }
    }

    #[test]
    fn group_mismatch_and_bad_lengths() {
        let x = random_seq(12, 1);
        let h = random_seq(16, 1);
        assert!(fourier_mechanism(&x, &h, &params(), Seed::default()).is_err());
        let h12 = random_seq(12, 2);
        assert!(spectral_partition(&x, &h12, &params(), Seed::default()).is_err());
        // Non-power-of-two lengths still work for the Fourier Mechanism.
        assert!(fourier_mechanism(&x, &h12, &params(), Seed::default()).is_ok());
        assert!(Neighbor::from_p(3).is_err());
    }

    #[test]
    fn spectral_partition_eta_and_budget() {
        let n = 256;
        let h_hat = dft(&random_seq(n, 8)).unwrap();
        let plan = spectral_partition_plan(&h_hat, &params()).unwrap();
        assert!(close(plan.eta(), 18f64.sqrt(), 1e-12));
        let log_n = 8.0;
        let eta2 = plan.eta() * plan.eta();
        assert!(close(plan.budget_accounted(), (1.0 + log_n) / eta2, 1e-12));
        assert!(close(plan.budget_accounted() * 2.0, 1.0, 1e-12));
        assert!(plan.budget_exact() <= plan.budget_accounted());
        // Group sizes: 1 for the top coefficient, then N/2^k.
        for k in 1..=8u32 {
            let size = plan.groups().iter().filter(|&&g| g == k).count();
            assert_eq!(size, n >> k);
        }
        assert_eq!(plan.groups().iter().filter(|&&g| g == 0).count(), 1);
        let mags = h_hat.magnitudes();
        assert!(plan.order().windows(2).all(|w| mags[w[0]] >= mags[w[1]]));
    }

    #[test]
    fn pair_scale_preserves_cost() {
        for (a, b) in [(1.0, 1.0), (0.5, 2.0), (3.0, 0.0)] {
            let s: f64 = pair_scale(a, b);
            let inv = |v: f64| if v > 0.0 { v.powi(-2) } else { 0.0 };
            assert!(close(2.0 * inv(s), inv(a) + inv(b), 1e-12));
        }
        assert_eq!(pair_scale(0.0, 0.0), 0.0);
    }

    #[test]
    fn output_freq_scales_use_row_sensitivity() {
        let n = 64;
        assert!(close(transform_row_sensitivity(Group::cyclic(n), Neighbor::L1), 0.125, 1e-12));
        assert!(close(transform_row_sensitivity(Group::cyclic(n), Neighbor::L2), 1.0, 1e-12));
        assert!(close(transform_row_sensitivity(Group::cube(6), Neighbor::L1), 0.125, 1e-12));
        let h = random_seq(n, 3);
        let r1 = baseline_output_perturb_freq(&h, &h, &params(), Neighbor::L1, Seed::new(1)).unwrap();
        let r2 = baseline_output_perturb_freq(&h, &h, &params(), Neighbor::L2, Seed::new(1)).unwrap();
        assert!(close(r1.theoretical_mse, 4.0 * h.norm_l2().powi(2), 1e-9));
        assert!(close(r2.theoretical_mse, 4.0 * n as f64 * h.norm_l2().powi(2), 1e-9));
    }

    #[test]
    fn kkt_trivial_and_random() {
        let h = RealSequence::cyclic(vec![1.0; 8]).unwrap();
        let r = kkt_optimality_check(&dft(&h).unwrap(), &params(), 10, Seed::new(1));
        assert!(r.trivially_optimal);
        assert!(close(2.0 * r.objective, r.closed_form_mse, 1e-12));

        let h_hat = dft(&random_seq(32, 11)).unwrap();
        let r = kkt_optimality_check(&h_hat, &params(), 1000, Seed::new(2));
        assert_eq!(r.perturbations, 1000);
        assert_eq!(r.improvements, 0);
        assert!(r.constraint_residual < 1e-9);
    }

    #[test]
    fn result_json_fields() {
        let r = fourier_mechanism(&impulse(4), &impulse(4), &params(), Seed::new(7)).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["mechanism", "n", "epsilon", "delta", "seed", "theoretical_mse", "output"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["mechanism"], "fourier");
        assert_eq!(v["seed"], 7);
        assert_eq!(v["n"], 4);
    }
}
