//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line, in order, even under output capture.
//! Exits nonzero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;

use privconv::bounds::{
    fourier_mse, harmonic_bound_check, input_perturb_mse, optimality_ratio,
};
use privconv::harness::{
    estimate_mse, mechanism_comparison, output_moments, running_sum_experiment, to_csv_string,
    ExperimentConfig, FilterFamily, MseEstimate,
};
use privconv::marginals::{
    generalized_marginal_direct, marginal_query, private_marginals, spectral_tail,
    wdnf_to_sequence, wht_support_size, CubeHistogram, Literal, WDnf,
};
use privconv::mechanisms::{
    apply_noise_plan, fourier_mechanism, kkt_optimality_check, optimal_noise_plan,
    spectral_partition_plan, Mechanism, MechanismResult, Neighbor, NoisePlan, PrivacyParams,
    Privatize,
};
use privconv::transforms::{
    convolve_direct, convolve_fast, dft, idft, transform, Group, RealSequence, Spectrum,
};
use privconv::Seed;

/// Outcome of one criterion: pass flag and a one-line summary.
type Outcome = (bool, String);

fn unit_privacy() -> PrivacyParams {
    // ε = 1, δ = e^{-1}.
    PrivacyParams::from_ln_inv_delta(1.0, 1.0).unwrap()
}

fn random_values(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_histogram(d: u32, seed: u64) -> CubeHistogram {
    let mut rng = Seed::new(seed).rng();
    CubeHistogram::from_dense((0..1usize << d).map(|_| rng.gen_range(0..50) as f64).collect()).unwrap()
}

fn random_wdnf(d: u32, w: usize, clauses: usize, rng: &mut impl Rng) -> WDnf {
    let clauses = (0..clauses)
        .map(|_| {
            let mut vars: Vec<u32> = (1..=d).collect();
            for i in 0..w {
                let j = rng.gen_range(i..vars.len());
                vars.swap(i, j);
            }
            vars[..w].iter().map(|&var| Literal { var, neg: rng.gen() }).collect()
        })
        .collect();
    WDnf::new(d, clauses).unwrap()
}

/// `max(5% of expected, 4 standard errors)` acceptance band.
fn band_ok(est: &MseEstimate) -> bool {
    est.within_tolerance()
}

fn rel_err(est: &MseEstimate) -> f64 {
    (est.empirical_mse - est.expected_mse).abs() / est.expected_mse
}

fn c1_transforms() -> Outcome {
    let start = Instant::now();
    let mut rng = Seed::new(101).rng();
    let mut worst_conv = 0.0f64;
    let mut worst_round = 0.0f64;
    for n in [16, 64, 256, 512] {
        for _ in 0..100 {
            let h = RealSequence::cyclic(random_values(n, &mut rng)).unwrap();
            let x = RealSequence::cyclic(random_values(n, &mut rng)).unwrap();
            let fast = convolve_fast(&h, &x).unwrap();
            let direct = convolve_direct(&h, &x).unwrap();
            let scale = direct.norm_inf();
            let err = fast
                .values()
                .iter()
                .zip(direct.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_conv = worst_conv.max(err / scale);
            let back = idft(&dft(&x).unwrap()).unwrap();
            let err = back
                .values()
                .iter()
                .zip(x.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_round = worst_round.max(err);
        }
    }
    let elapsed = start.elapsed();
    (
        worst_conv <= 1e-9 && worst_round <= 1e-10 && elapsed < Duration::from_secs(5),
        format!(
            "fast vs direct rel l-inf {worst_conv:.2e} (<= 1e-9), round trip {worst_round:.2e} (<= 1e-10), {:.2}s (< 5s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_fourier_mse() -> Outcome {
    let start = Instant::now();
    let privacy = unit_privacy();
    let n = 256;
    let mut ok = true;
    let mut parts = Vec::new();
    let filters = [
        FilterFamily::Impulse,
        FilterFamily::Constant,
        FilterFamily::RunningSum,
        FilterFamily::RandomSign(0),
    ];
    for (i, family) in filters.iter().enumerate() {
        let h = family.instance(n, Seed::new(0)).unwrap();
        let x = RealSequence::zeros(h.group());
        let est = estimate_mse(&Mechanism::Fourier, &h, &x, &privacy, 10_000, Seed::new(200 + i as u64)).unwrap();
        let closed = 4.0 * privacy.ln_inv_delta() * transform(&h).norm_l1().powi(2)
            / (privacy.epsilon().powi(2) * n as f64);
        let constant = est.expected_mse / est.theoretical_mse;
        ok &= band_ok(&est) && (est.theoretical_mse - closed).abs() <= 1e-9 * closed;
        ok &= (1.0..=2.0).contains(&constant);
        parts.push(format!(
            "{family}: emp {:.4} vs {:.4} (= {:.4} x {constant:.4}), dev {:.2}%",
            est.empirical_mse,
            est.expected_mse,
            est.theoretical_mse,
            100.0 * rel_err(&est)
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    parts.push(format!("{:.1}s (< 60s)", elapsed.as_secs_f64()));
    (ok, parts.join("; "))
}

fn random_conjugate_spectrum(n: usize, rng: &mut impl Rng, sparsity: f64) -> Spectrum {
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..=n / 2 {
        if rng.gen::<f64>() < sparsity {
            continue;
        }
        let self_conj = k == 0 || k == n / 2;
        let c = if self_conj {
            Complex64::new(rng.gen_range(-2.0..2.0), 0.0)
        } else {
            Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
        };
        coeffs[k] = c;
        coeffs[(n - k) % n] = c.conj();
    }
    coeffs[1] = Complex64::new(1.0, 0.5);
    coeffs[n - 1] = coeffs[1].conj();
    Spectrum::new(coeffs, Group::cyclic(n)).unwrap()
}

fn c3_kkt() -> Outcome {
    let mut rng = Seed::new(301).rng();
    let privacy = PrivacyParams::new(0.7, 1e-5).unwrap();
    let mut improvements = 0;
    let mut worst_change = f64::INFINITY;
    let mut worst_residual = 0.0f64;
    for i in 0..20 {
        let h_hat = if i % 2 == 0 {
            transform(&RealSequence::cyclic(random_values(64, &mut rng)).unwrap())
        } else {
            random_conjugate_spectrum(64, &mut rng, 0.3)
        };
        let report = kkt_optimality_check(&h_hat, &privacy, 1000, Seed::new(310 + i));
        assert_eq!(report.perturbations, 1000);
        improvements += report.improvements;
        worst_change = worst_change.min(report.worst_relative_change);
        worst_residual = worst_residual.max(report.constraint_residual);
    }
    (
        improvements == 0 && worst_residual <= 1e-9,
        format!(
            "20 spectra x 1000 perturbations: {improvements} improvements, smallest relative change {worst_change:.3e}, constraint residual {worst_residual:.2e}"
        ),
    )
}

fn c4_budget() -> Outcome {
    let mut rng = Seed::new(401).rng();
    let mut worst_fourier = 0.0f64;
    let mut worst_partition = 0.0f64;
    let mut exact_within = true;
    for (eps, delta) in [(1.0, (-1.0f64).exp()), (0.1, 1e-6), (2.5, 1e-9)] {
        let privacy = PrivacyParams::new(eps, delta).unwrap();
        let target = privacy.squared_budget();
        for n in [16usize, 64, 256, 1024] {
            for family in ["impulse", "constant", "running-sum", "compressible:1,3", "random-sign:4"] {
                let h = family.parse::<FilterFamily>().unwrap().instance(n, Seed::new(0)).unwrap();
                let h_hat = transform(&h);
                let plan = optimal_noise_plan(&h_hat, &privacy);
                let sum_sq: f64 = plan.epsilons().iter().map(|e| e * e).sum();
                worst_fourier = worst_fourier
                    .max((sum_sq - target).abs() / target)
                    .max((plan.budget_check() - target).abs() / target);
            }
            let h_hat = transform(&RealSequence::cyclic(random_values(n, &mut rng)).unwrap());
            let partition = spectral_partition_plan(&h_hat, &privacy).unwrap();
            let accounted = partition.budget_accounted();
            let log_n = n.trailing_zeros() as f64;
            let identity = (1.0 + log_n) / partition.eta().powi(2);
            worst_partition = worst_partition
                .max((accounted - identity).abs() / identity)
                .max((identity - target).abs() / target);
            exact_within &= partition.budget_exact() <= accounted * (1.0 + 1e-12);
        }
    }
    (
        worst_fourier <= 1e-9 && worst_partition <= 1e-9 && exact_within,
        format!(
            "sum eps_i^2 vs eps^2/(2 ln 1/delta): rel {worst_fourier:.2e}; (1+log N)/eta^2: rel {worst_partition:.2e}; exact spend <= accounted: {exact_within}"
        ),
    )
}

fn c5_unbiased() -> Outcome {
    let n = 64;
    let privacy = unit_privacy();
    let h = FilterFamily::RandomSign(5).instance(n, Seed::new(0)).unwrap();
    let mut rng = Seed::new(501).rng();
    let x = RealSequence::cyclic((0..n).map(|_| rng.gen_range(0..20) as f64).collect()).unwrap();
    let mechanisms = [
        Mechanism::Fourier,
        Mechanism::SpectralPartition,
        Mechanism::InputPerturb,
        Mechanism::OutputTime(Neighbor::L1),
        Mechanism::OutputTime(Neighbor::L2),
        Mechanism::OutputFreq(Neighbor::L1),
        Mechanism::OutputFreq(Neighbor::L2),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, m) in mechanisms.iter().enumerate() {
        let moments = output_moments(m, &h, &x, &privacy, 100_000, Seed::new(510 + i as u64)).unwrap();
        let z = moments.max_z_score();
        ok &= z < 4.0;
        parts.push(format!("{m} max|z| {z:.2}"));
    }
    (ok, format!("1e5 trials, N = 64: {}", parts.join(", ")))
}

fn c6_baselines() -> Outcome {
    let n = 64;
    let privacy = unit_privacy();
    let mechanisms = [
        Mechanism::InputPerturb,
        Mechanism::OutputTime(Neighbor::L1),
        Mechanism::OutputTime(Neighbor::L2),
        Mechanism::OutputFreq(Neighbor::L1),
        Mechanism::OutputFreq(Neighbor::L2),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (fi, family) in [FilterFamily::RandomSign(6), FilterFamily::RunningSum].iter().enumerate() {
        let h = family.instance(n, Seed::new(0)).unwrap();
        let x = RealSequence::zeros(h.group());
        for (mi, m) in mechanisms.iter().enumerate() {
            let seed = Seed::new(600 + 10 * fi as u64 + mi as u64);
            let est = estimate_mse(m, &h, &x, &privacy, 10_000, seed).unwrap();
            let closed = privconv::bounds::theoretical_mse(*m, &h, &privacy).unwrap();
            let dev = rel_err(&est);
            ok &= dev <= 0.05 && (est.theoretical_mse - closed).abs() <= 1e-9 * closed;
            parts.push(format!("{family}/{m} {:.2}%", 100.0 * dev));
        }
    }
    (ok, format!("deviation from closed form (x recorded constant): {}", parts.join(", ")))
}

fn c7_near_optimality() -> Outcome {
    let privacy = unit_privacy();
    let mut worst_ratio = 0.0f64;
    let mut worst_name = String::new();
    let mut harmonic_failures = 0;
    let mut instances = 0;
    for n in [64usize, 256, 1024] {
        let mut families: Vec<FilterFamily> = vec![
            FilterFamily::Impulse,
            FilterFamily::Constant,
            FilterFamily::RunningSum,
            FilterFamily::Compressible { c: 1.0, p: 2.0 },
            FilterFamily::Compressible { c: 1.0, p: 3.0 },
            FilterFamily::Compressible { c: 1.0, p: 4.0 },
        ];
        families.extend((0..100).map(FilterFamily::RandomSign));
        for family in &families {
            let h = family.instance(n, Seed::new(700)).unwrap();
            let ratio = optimality_ratio(&h, &privacy).unwrap();
            if ratio > worst_ratio {
                worst_ratio = ratio;
                worst_name = format!("{family} at N={n}");
            }
            if !harmonic_bound_check(&h).holds {
                harmonic_failures += 1;
            }
            instances += 1;
        }
    }
    (
        worst_ratio < 50.0 && harmonic_failures == 0,
        format!(
            "{instances} instances: max optimality ratio {worst_ratio:.3} ({worst_name}) < 50; harmonic bound violations {harmonic_failures}"
        ),
    )
}

fn c8_compressible_gain() -> Outcome {
    let privacy = unit_privacy();
    let h = FilterFamily::Compressible { c: 1.0, p: 3.0 }.instance(1024, Seed::new(0)).unwrap();
    let h_hat = transform(&h);
    let report = privconv::bounds::compressibility_bounds(&h, 1.0, 3.0).unwrap();
    let fourier = fourier_mse(&h_hat, &privacy);
    let input = input_perturb_mse(&h, &privacy);
    let run = fourier_mechanism(&RealSequence::zeros(h.group()), &h, &privacy, Seed::new(0)).unwrap();
    (
        report.compressible && fourier <= input / 100.0 && run.expected_mse <= input / 100.0,
        format!(
            "N = 1024: fourier {fourier:.4e} (as run {:.4e}), input perturbation {input:.4e}, gain {:.0}x (>= 100)",
            run.expected_mse,
            input / fourier
        ),
    )
}

fn c9_running_sums() -> Outcome {
    let privacy = unit_privacy();
    let sizes: Vec<usize> = (6..=12).map(|k| 1usize << k).collect();
    let table = running_sum_experiment(&sizes, &privacy, 2000, Seed::new(900)).unwrap();
    let first = &table.rows[0];
    let last = table.rows.last().unwrap();
    let growth = last.empirical_mse / first.empirical_mse;
    let cap = ((2.0 * last.n as f64).ln() / (2.0 * first.n as f64).ln()).powi(3);
    let within: bool = table.rows.iter().all(|r| {
        let est = MseEstimate {
            empirical_mse: r.empirical_mse,
            std_error: r.std_error,
            theoretical_mse: r.theoretical_mse,
            expected_mse: r.expected_mse,
            trials: 2000,
        };
        band_ok(&est)
    });
    (
        table.slope_vs_log_n <= 3.0 && growth <= cap && within,
        format!(
            "N = 64..4096: MSE {:.3} -> {:.3}, growth {growth:.3} <= (log 8192 / log 128)^3 = {cap:.3}; slope vs log(2N) {:.3} (<= 3), slope vs N {:.3}",
            first.empirical_mse, last.empirical_mse, table.slope_vs_log_n, table.slope_vs_n
        ),
    )
}

/// `private_marginals` behind the harness interface.
struct Marginals;

impl Privatize for Marginals {
    fn label(&self) -> String {
        "private-marginals".into()
    }

    fn privatize(
        &self,
        x: &RealSequence,
        h: &RealSequence,
        privacy: &PrivacyParams,
        seed: Seed,
    ) -> privconv::Result<MechanismResult> {
        let d = h.len().trailing_zeros();
        // Recover the formula from its truth table: one clause per true point.
        let clauses = (0..h.len())
            .filter(|&a| h.values()[a] != 0.0)
            .map(|a| (1..=d).map(|v| Literal { var: v, neg: (a >> (v - 1)) & 1 == 0 }).collect())
            .collect();
        let f = WDnf::new(d, clauses)?;
        private_marginals(&CubeHistogram::new(x.clone())?, &f, privacy, seed)
    }
}

fn c10_marginals() -> Outcome {
    let mut rng = Seed::new(1001).rng();
    let privacy = unit_privacy();

    let mut noiseless_ok = true;
    for d in 1..=8u32 {
        for rep in 0..5 {
            let x = random_histogram(d, 1010 + 10 * d as u64 + rep);
            let w = rng.gen_range(1..=d.min(3)) as usize;
            let f = random_wdnf(d, w, rng.gen_range(1..=4), &mut rng);
            let h = wdnf_to_sequence(&f).unwrap();
            let plan = NoisePlan::noiseless(&transform(&h));
            let y = apply_noise_plan(x.counts(), &h, &plan, Seed::new(0)).unwrap();
            let direct = generalized_marginal_direct(&x, &f).unwrap();
            noiseless_ok &= y
                .values()
                .iter()
                .zip(&direct)
                .all(|(a, b)| a.round() == *b && (a - b).abs() <= 1e-9);
        }
    }

    let mut counts_ok = true;
    for w in 1..=8usize {
        let attrs: Vec<u32> = (1..=w as u32).collect();
        counts_ok &= wht_support_size(&marginal_query(&attrs, 8).unwrap()).unwrap() == 1 << w;
    }

    let d = 8;
    let f = random_wdnf(d, 2, 3, &mut rng);
    let h = wdnf_to_sequence(&f).unwrap();
    let x = random_histogram(d, 1099);
    let est = estimate_mse(&Marginals, &h, x.counts(), &privacy, 10_000, Seed::new(1050)).unwrap();
    let closed = 4.0 * privacy.ln_inv_delta() * transform(&h).norm_l1().powi(2) / 256.0;
    let dev = (est.empirical_mse - closed).abs() / closed;
    let mse_ok = dev <= 0.05 && (est.theoretical_mse - closed).abs() <= 1e-9 * closed;

    let f10 = random_wdnf(10, 2, 5, &mut rng);
    let tails: Vec<f64> = (0..=10).map(|k| spectral_tail(&f10, k).unwrap()).collect();
    // k grows as the kept count 2^{d-k} shrinks: the tail is nonincreasing in
    // the kept count.
    let tail_ok = tails[0] == 0.0 && tails.windows(2).all(|w| w[0] <= w[1]);

    (
        noiseless_ok && counts_ok && mse_ok && tail_ok,
        format!(
            "noiseless = brute force (d <= 8): {noiseless_ok}; 2^w coefficients (w = 1..8): {counts_ok}; d = 8 MSE {:.4} vs {closed:.4} ({:.2}%); tail trend: {tail_ok}",
            est.empirical_mse,
            100.0 * dev
        ),
    )
}

fn time_fourier(n: usize, reps: usize) -> f64 {
    let mut rng = Seed::new(n as u64).rng();
    let x = RealSequence::cyclic((0..n).map(|_| rng.gen_range(0..10) as f64).collect()).unwrap();
    let h = RealSequence::cyclic(random_values(n, &mut rng)).unwrap();
    let privacy = unit_privacy();
    (0..reps)
        .map(|r| {
            let start = Instant::now();
            let out = fourier_mechanism(&x, &h, &privacy, Seed::new(r as u64)).unwrap();
            let t = start.elapsed().as_secs_f64();
            assert_eq!(out.output.len(), n);
            t
        })
        .fold(f64::INFINITY, f64::min)
}

fn c11_performance() -> Outcome {
    let t20 = time_fourier(1 << 20, 3);
    let sizes: Vec<u32> = (16..=22).collect();
    let times: Vec<f64> = sizes.iter().map(|&k| time_fourier(1 << k, 3)).collect();
    let model = |k: u32| (1u64 << k) as f64 * k as f64;
    let mut worst = 1.0f64;
    for i in 1..sizes.len() {
        let measured = times[i] / times[i - 1];
        let predicted = model(sizes[i]) / model(sizes[i - 1]);
        let r = measured / predicted;
        worst = worst.max(r).max(1.0 / r);
    }
    let per_unit: Vec<String> = sizes
        .iter()
        .zip(&times)
        .map(|(&k, t)| format!("2^{k}: {:.0}ms", t * 1e3))
        .collect();
    (
        t20 < 2.0 && worst <= 2.0,
        format!(
            "N = 2^20 in {:.3}s (< 2s); doubling ratios within {worst:.2}x of N log N (<= 2x); {}",
            t20,
            per_unit.join(", ")
        ),
    )
}

fn c12_reproducible() -> Outcome {
    let config = ExperimentConfig::default_suite();
    let a = to_csv_string(&mechanism_comparison(&config).unwrap().rows).unwrap();
    let b = to_csv_string(&mechanism_comparison(&config).unwrap().rows).unwrap();
    (
        a == b && a.lines().count() > 1,
        format!("default suite, {} rows, {} bytes, identical: {}", a.lines().count() - 1, a.len(), a == b),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("transform correctness", c1_transforms),
        ("Fourier Mechanism MSE", c2_fourier_mse),
        ("KKT optimality", c3_kkt),
        ("budget accounting", c4_budget),
        ("unbiasedness", c5_unbiased),
        ("baseline formulas", c6_baselines),
        ("near-optimality", c7_near_optimality),
        ("compressible gain", c8_compressible_gain),
        ("running sums", c9_running_sums),
        ("marginals", c10_marginals),
        ("performance", c11_performance),
        ("reproducibility", c12_reproducible),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("criterion {:>2}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || id.ends_with(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match panic::catch_unwind(AssertUnwindSafe(run)) {
            Ok(outcome) => outcome,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {id} {name} [{:.1}s]: {detail}",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
