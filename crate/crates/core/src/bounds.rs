//! Computable optimality yardsticks and closed-form MSEs.
//!
//! `log` is base 2 throughout; `ln` is only used for `ln(1/δ)` and in the
//! compressibility integral bound. Logarithms of 1 (a length-1 sequence, a
//! single-coefficient support) are floored at 1 so that ratios stay finite.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::{
    spectral_partition_plan, support, support_l1, transform_row_sensitivity, Mechanism, Neighbor,
    PrivacyParams,
};
use crate::transforms::{transform, RealSequence, Spectrum};

/// Base-2 log floored at 1.
pub fn log2_floored(m: usize) -> f64 {
    if m <= 2 {
        1.0
    } else {
        (m as f64).log2()
    }
}

/// `H_m = Σ_{i=1}^m 1/i`, with `H_0 = 0`.
pub fn harmonic_number(m: usize) -> f64 {
    (1..=m).rev().map(|i| 1.0 / i as f64).sum()
}

/// Fourier magnitudes of a filter in descending order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralProfile {
    sorted_magnitudes: Vec<f64>,
    n: usize,
    support_size: usize,
}

impl SpectralProfile {
    pub fn from_spectrum(h_hat: &Spectrum) -> Self {
        let mut sorted_magnitudes = h_hat.magnitudes();
        sorted_magnitudes.sort_by(|a, b| b.total_cmp(a));
        Self {
            n: h_hat.len(),
            support_size: support(h_hat).len(),
            sorted_magnitudes,
        }
    }

    pub fn of(h: &RealSequence) -> Self {
        Self::from_spectrum(&transform(h))
    }

    pub fn sorted_magnitudes(&self) -> &[f64] {
        &self.sorted_magnitudes
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn support_size(&self) -> usize {
        self.support_size
    }

    /// `‖ĥ‖₁` over the support.
    pub fn l1(&self) -> f64 {
        // Smallest first, for a more accurate sum.
        self.sorted_magnitudes[..self.support_size].iter().rev().sum()
    }

    /// `max_K K² ĥ²_{K-1} / (N log² N)` over the sorted magnitudes.
    pub fn spec_lb(&self) -> f64 {
        let denom = self.n as f64 * log2_floored(self.n).powi(2);
        self.sorted_magnitudes
            .iter()
            .enumerate()
            .map(|(i, m)| ((i + 1) as f64 * m).powi(2))
            .fold(0.0, f64::max)
            / denom
    }
}

/// Spectral lower bound of `h`, without its Ω-constant.
pub fn spec_lb(h: &RealSequence) -> f64 {
    SpectralProfile::of(h).spec_lb()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonicReport {
    /// `‖ĥ‖₁`
    pub lhs: f64,
    /// `H_{|I|} √N log N √specLB`
    pub rhs: f64,
    /// `lhs / rhs`, or 0 for the zero filter.
    pub ratio: f64,
    pub support_size: usize,
    pub holds: bool,
}

/// Checks `‖ĥ‖₁ ≤ H_{|I|} √N log N √specLB(h)`.
pub fn harmonic_bound_check(h: &RealSequence) -> HarmonicReport {
    harmonic_bound_from_profile(&SpectralProfile::of(h))
}

pub fn harmonic_bound_from_profile(profile: &SpectralProfile) -> HarmonicReport {
    let lhs = profile.l1();
    let rhs = harmonic_number(profile.support_size)
        * (profile.n as f64).sqrt()
        * log2_floored(profile.n)
        * profile.spec_lb().sqrt();
    HarmonicReport {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        support_size: profile.support_size,
        holds: lhs <= rhs * (1.0 + 1e-12),
    }
}

/// Fourier-Mechanism MSE over the polylog-scaled lower bound,
/// `[4 ln(1/δ)‖ĥ‖₁²/(ε²N)] / [specLB · log²N · log²|I| · ln(1/δ)/ε²]`.
pub fn optimality_ratio(h: &RealSequence, privacy: &PrivacyParams) -> Result<f64> {
    let h_hat = transform(h);
    let profile = SpectralProfile::from_spectrum(&h_hat);
    if profile.support_size == 0 {
        return Err(Error::validation("optimality ratio is undefined for the zero filter"));
    }
    let lower = profile.spec_lb()
        * log2_floored(profile.n).powi(2)
        * log2_floored(profile.support_size).powi(2)
        * privacy.ln_inv_delta()
        / privacy.epsilon().powi(2);
    Ok(fourier_mse(&h_hat, privacy) / lower)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressibilityReport {
    pub c: f64,
    pub p: f64,
    /// Every sorted `|ĥ_i|² ≤ c/(i+1)^p` (relative slack 1e-12).
    pub compressible: bool,
    pub first_violation: Option<usize>,
    pub l1_fourier_norm: f64,
    /// Integral-comparison bound on `‖ĥ‖₁` derived from `|ĥ_i| ≤ √c/(i+1)^{p/2}`.
    pub l1_bound: f64,
    pub l1_bound_holds: bool,
    /// The same bound with `c` in place of `√c`.
    pub l1_bound_c: f64,
    pub l1_bound_c_holds: bool,
    /// Fourier-Mechanism MSE in units of `ln(1/δ)/ε²`: `4‖ĥ‖₁²/N`.
    pub fourier_mse_factor: f64,
    /// `4 l1_bound² / N`, the MSE consequence of the bound.
    pub fourier_mse_factor_bound: f64,
}

/// `Σ_{i=1}^N i^{-p/2} ≤ 1 + ∫_1^N t^{-p/2} dt`.
fn compressible_sum_bound(p: f64, n: usize) -> f64 {
    let n = n as f64;
    if p == 2.0 {
        1.0 + n.ln()
    } else if p > 2.0 {
        // The integral to infinity; uniform in N.
        p / (p - 2.0)
    } else {
        let q = 1.0 - p / 2.0;
        1.0 + (n.powf(q) - 1.0) / q
    }
}

pub fn compressibility_bounds(h: &RealSequence, c: f64, p: f64) -> Result<CompressibilityReport> {
    compressibility_from_profile(&SpectralProfile::of(h), c, p)
}

pub fn compressibility_from_profile(profile: &SpectralProfile, c: f64, p: f64) -> Result<CompressibilityReport> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::validation(format!("compressibility constant c must be positive, got {c}")));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::validation(format!("compressibility exponent p must exceed 1, got {p}")));
    }
    let first_violation = profile
        .sorted_magnitudes
        .iter()
        .enumerate()
        .position(|(i, m)| m * m > c / ((i + 1) as f64).powf(p) * (1.0 + 1e-12));
    let l1 = profile.sorted_magnitudes.iter().rev().sum::<f64>();
    let sum_bound = compressible_sum_bound(p, profile.n);
    let l1_bound = c.sqrt() * sum_bound;
    let l1_bound_c = c * sum_bound;
    let n = profile.n as f64;
    Ok(CompressibilityReport {
        c,
        p,
        compressible: first_violation.is_none(),
        first_violation,
        l1_fourier_norm: l1,
        l1_bound,
        l1_bound_holds: l1 <= l1_bound,
        l1_bound_c,
        l1_bound_c_holds: l1 <= l1_bound_c,
        fourier_mse_factor: 4.0 * l1 * l1 / n,
        fourier_mse_factor_bound: 4.0 * l1_bound * l1_bound / n,
    })
}

/// `4 ln(1/δ) ‖ĥ‖₁² / (ε² N)`.
pub fn fourier_mse(h_hat: &Spectrum, privacy: &PrivacyParams) -> f64 {
    let l1 = support_l1(h_hat);
    4.0 * privacy.ln_inv_delta() * l1 * l1 / (privacy.epsilon().powi(2) * h_hat.len() as f64)
}

/// `4 N ‖h‖₂² ln(1/δ) / ε²`.
pub fn input_perturb_mse(h: &RealSequence, privacy: &PrivacyParams) -> f64 {
    4.0 * h.len() as f64 * h.norm_l2().powi(2) * privacy.ln_inv_delta() / privacy.epsilon().powi(2)
}

/// `4 N ‖h‖_q² ln(1/δ) / ε²` with `‖·‖_q` the sensitivity norm of a row.
pub fn output_time_mse(h: &RealSequence, privacy: &PrivacyParams, neighbor: Neighbor) -> f64 {
    let s = neighbor.dual_norm(h.values().iter().copied());
    4.0 * h.len() as f64 * s * s * privacy.ln_inv_delta() / privacy.epsilon().powi(2)
}

/// Average per-entry MSE of frequency-domain output perturbation,
/// `(1/N) Σ_m 2 (√N |ĥ_m| s_F · √(2N ln(1/δ))/ε)²` with `s_F` the row
/// sensitivity of the unitary transform. Equals `4‖h‖₂² ln(1/δ)/ε²` for
/// p = 1 and `4N‖h‖₂² ln(1/δ)/ε²` for p = 2.
pub fn output_freq_mse(h: &RealSequence, privacy: &PrivacyParams, neighbor: Neighbor) -> f64 {
    let n = h.len() as f64;
    let s = transform_row_sensitivity(h.group(), neighbor);
    4.0 * n * s * s * h.norm_l2().powi(2) * privacy.ln_inv_delta() / privacy.epsilon().powi(2)
}

/// Closed-form MSE of `mechanism` on filter `h`; the same value the
/// mechanism reports as `theoretical_mse`.
pub fn theoretical_mse(mechanism: Mechanism, h: &RealSequence, privacy: &PrivacyParams) -> Result<f64> {
    Ok(match mechanism {
        Mechanism::Fourier => fourier_mse(&transform(h), privacy),
        Mechanism::SpectralPartition => {
            let h_hat = transform(h);
            spectral_partition_plan(&h_hat, privacy)?.theoretical_mse(&h_hat)
        }
        Mechanism::InputPerturb => input_perturb_mse(h, privacy),
        Mechanism::OutputTime(p) => output_time_mse(h, privacy, p),
        Mechanism::OutputFreq(p) => output_freq_mse(h, privacy, p),
    })
}

pub fn theoretical_mse_by_name(name: &str, h: &RealSequence, privacy: &PrivacyParams) -> Result<f64> {
    theoretical_mse(name.parse()?, h, privacy)
}

/// Everything the `bounds` command reports for one filter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub n: usize,
    #[serde(rename = "specLB")]
    pub spec_lb: f64,
    pub l1_fourier_norm: f64,
    pub support_size: usize,
    pub harmonic_lhs: f64,
    pub harmonic_rhs: f64,
    pub harmonic_holds: bool,
    pub optimality_ratio: Option<f64>,
    pub theoretical_mse: BTreeMap<String, f64>,
}

pub fn bounds_report(h: &RealSequence, privacy: &PrivacyParams) -> BoundsReport {
    let profile = SpectralProfile::of(h);
    let harmonic = harmonic_bound_from_profile(&profile);
    let mut mses = BTreeMap::new();
    let mechanisms = [
        Mechanism::Fourier,
        Mechanism::SpectralPartition,
        Mechanism::InputPerturb,
        Mechanism::OutputTime(Neighbor::L1),
        Mechanism::OutputTime(Neighbor::L2),
        Mechanism::OutputFreq(Neighbor::L1),
        Mechanism::OutputFreq(Neighbor::L2),
    ];
    for m in mechanisms {
        if let Ok(v) = theoretical_mse(m, h, privacy) {
            mses.insert(m.to_string(), v);
        }
    }
    BoundsReport {
        n: profile.n,
        spec_lb: profile.spec_lb(),
        l1_fourier_norm: profile.l1(),
        support_size: profile.support_size,
        harmonic_lhs: harmonic.lhs,
        harmonic_rhs: harmonic.rhs,
        harmonic_holds: harmonic.holds,
        optimality_ratio: optimality_ratio(h, privacy).ok(),
        theoretical_mse: mses,
    }
}
