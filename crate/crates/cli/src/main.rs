use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use privconv::bounds::{bounds_report, compressibility_bounds};
use privconv::harness::{self, ExperimentConfig, FilterFamily};
use privconv::io::{read_file, read_histogram, read_sequence, read_wdnf, SpectrumJson};
use privconv::marginals::{marginal_query, private_marginals, wdnf_to_sequence_with_limit, DEFAULT_MAX_DIM};
use privconv::transforms::{convolve_direct, convolve_fast, inverse_transform, transform};
use privconv::{Complex64, Error, Group, Mechanism, MechanismResult, Neighbor, PrivacyParams, RealSequence, Seed};

#[derive(Parser)]
#[command(name = "privconv", version, about = "Differentially private convolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unitary DFT (cyclic) or normalized Walsh-Hadamard transform (cube).
    Transform(TransformArgs),
    /// Exact convolution h * x.
    Convolve(ConvolveArgs),
    /// Release h * x under (ε, δ)-differential privacy.
    Privatize(PrivatizeArgs),
    /// Lower bounds and closed-form MSEs for a filter.
    Bounds(BoundsArgs),
    /// Private generalized marginals of a histogram over {0,1}^d.
    Marginals(MarginalsArgs),
    /// Monte Carlo experiment suite.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct OutputArgs {
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct FilterArgs {
    /// Filter sequence file.
    #[arg(long, conflicts_with = "filter")]
    h: Option<PathBuf>,
    /// Built-in filter: impulse, constant, running-sum, compressible:c,p,
    /// random-sign[:k], wdnf:path.
    #[arg(long)]
    filter: Option<FilterFamily>,
    /// Length of a built-in filter.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct PrivacyArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, conflicts_with = "ln_inv_delta")]
    delta: Option<f64>,
    /// ln(1/δ), instead of --delta.
    #[arg(long)]
    ln_inv_delta: Option<f64>,
}

#[derive(Args)]
struct TransformArgs {
    /// Sequence file.
    #[arg(long)]
    x: PathBuf,
    /// Treat the input as a spectrum ({"re": [...], "im": [...]}) and invert.
    #[arg(long)]
    inverse: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ConvolveArgs {
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    x: PathBuf,
    /// Use the O(N²) definition instead of the fast transform.
    #[arg(long)]
    direct: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct PrivatizeArgs {
    #[arg(long, default_value = "fourier")]
    mechanism: String,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    x: PathBuf,
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[arg(long, default_value_t = privconv::DEFAULT_SEED)]
    seed: u64,
    /// Neighbor norm p ∈ {1, 2} for the output-perturbation baselines.
    #[arg(long)]
    neighbor: Option<u32>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    privacy: PrivacyArgs,
    /// Also check (c, p)-compressibility, given as `c,p`.
    #[arg(long)]
    compressible: Option<String>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct MarginalsArgs {
    /// Histogram: dense array of 2^d counts or [bitstring, count] pairs.
    #[arg(long)]
    x: PathBuf,
    /// w-DNF formula file.
    #[arg(long, conflicts_with = "attrs")]
    wdnf: Option<PathBuf>,
    /// Attribute set of a conjunction marginal, e.g. `1,3`.
    #[arg(long, value_delimiter = ',')]
    attrs: Option<Vec<u32>>,
    /// Number of attributes.
    #[arg(long)]
    d: Option<u32>,
    /// Largest cube dimension to materialize.
    #[arg(long, default_value_t = DEFAULT_MAX_DIM)]
    max_d: u32,
    #[command(flatten)]
    privacy: PrivacyArgs,
    #[arg(long, default_value_t = privconv::DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment config JSON; the default suite when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

type CliResult<T> = Result<T, Error>;

fn usage(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl PrivacyArgs {
    fn resolve(&self, default: bool) -> CliResult<PrivacyParams> {
        let epsilon = match (self.epsilon, default) {
            (Some(e), _) => e,
            (None, true) => 1.0,
            (None, false) => return Err(usage("--epsilon is required")),
        };
        match (self.delta, self.ln_inv_delta) {
            (Some(d), None) => PrivacyParams::new(epsilon, d),
            (None, Some(l)) => PrivacyParams::from_ln_inv_delta(epsilon, l),
            (None, None) if default => PrivacyParams::from_ln_inv_delta(epsilon, 1.0),
            _ => Err(usage("one of --delta or --ln-inv-delta is required")),
        }
    }
}

impl FilterArgs {
    /// The filter, sized to `like` when it is built in and no --n is given.
    fn resolve(&self, like: Option<&RealSequence>) -> CliResult<RealSequence> {
        match (&self.h, &self.filter) {
            (Some(path), _) => read_sequence(path),
            (None, Some(family)) => {
                let n = self
                    .n
                    .or(family.fixed_len())
                    .or(like.map(RealSequence::len))
                    .ok_or_else(|| usage("--n is required with --filter"))?;
                let h = family.instance(n, Seed::new(privconv::DEFAULT_SEED))?;
                match like {
                    Some(x) if x.group() != h.group() && x.len() == h.len() => {
                        RealSequence::new(h.into_values(), x.group())
                    }
                    _ => Ok(h),
                }
            }
            (None, None) => Err(usage("one of --h or --filter is required")),
        }
    }
}

fn emit(output: &OutputArgs, json: &impl Serialize, csv: impl FnOnce() -> String) -> CliResult<()> {
    let text = match output.format {
        Format::Json => serde_json::to_string_pretty(json)? + "\n",
        Format::Csv => csv(),
    };
    write_text(output.out.as_deref(), &text)
}

fn write_text(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn values_csv(header: &str, values: &[f64]) -> String {
    let mut s = format!("index,{header}\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{i},{v}\n"));
    }
    s
}

#[derive(Serialize)]
struct SequenceJson<'a> {
    #[serde(flatten)]
    group: Group,
    values: &'a [f64],
}

fn sequence_json(x: &RealSequence) -> SequenceJson<'_> {
    SequenceJson { group: x.group(), values: x.values() }
}

fn result_output(output: &OutputArgs, result: &MechanismResult) -> CliResult<()> {
    emit(output, result, || values_csv("value", result.output.values()))
}

fn run_transform(args: &TransformArgs) -> CliResult<()> {
    if args.inverse {
        let parsed: SpectrumJson = serde_json::from_str(&read_file(&args.x)?)?;
        if parsed.re.len() != parsed.im.len() {
            return Err(usage("spectrum re and im lengths differ"));
        }
        let coeffs = parsed.re.iter().zip(&parsed.im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        let x = inverse_transform(&privconv::Spectrum::new(coeffs, parsed.group)?);
        return emit(&args.output, &sequence_json(&x), || values_csv("value", x.values()));
    }
    let x = read_sequence(&args.x)?;
    let spectrum = transform(&x);
    let json = SpectrumJson::from(&spectrum);
    emit(&args.output, &json, || {
        let mut s = String::from("index,re,im\n");
        for (i, (re, im)) in json.re.iter().zip(&json.im).enumerate() {
            s.push_str(&format!("{i},{re},{im}\n"));
        }
        s
    })
}

fn run_convolve(args: &ConvolveArgs) -> CliResult<()> {
    let x = read_sequence(&args.x)?;
    let h = args.filter.resolve(Some(&x))?;
    let y = if args.direct { convolve_direct(&h, &x)? } else { convolve_fast(&h, &x)? };
    emit(&args.output, &sequence_json(&y), || values_csv("value", y.values()))
}

fn run_privatize(args: &PrivatizeArgs) -> CliResult<()> {
    let privacy = args.privacy.resolve(false)?;
    let x = read_sequence(&args.x)?;
    let h = args.filter.resolve(Some(&x))?;
    let mechanism = match args.neighbor {
        Some(p) => Mechanism::parse_with_neighbor(&args.mechanism, Neighbor::from_p(p)?)?,
        None => args.mechanism.parse()?,
    };
    let result = mechanism.run(&x, &h, &privacy, Seed::new(args.seed))?;
    result_output(&args.output, &result)
}

fn run_bounds(args: &BoundsArgs) -> CliResult<()> {
    let privacy = args.privacy.resolve(true)?;
    let h = args.filter.resolve(None)?;
    let report = bounds_report(&h, &privacy);
    let compress = match &args.compressible {
        Some(arg) => {
            let (c, p) = arg
                .split_once(',')
                .and_then(|(c, p)| Some((c.trim().parse::<f64>().ok()?, p.trim().parse::<f64>().ok()?)))
                .ok_or_else(|| usage(format!("--compressible expects `c,p`, got `{arg}`")))?;
            Some(compressibility_bounds(&h, c, p)?)
        }
        None => None,
    };

    #[derive(Serialize)]
    struct Full<'a> {
        #[serde(flatten)]
        report: &'a privconv::BoundsReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        compressibility: Option<&'a privconv::bounds::CompressibilityReport>,
    }
    let full = Full { report: &report, compressibility: compress.as_ref() };
    emit(&args.output, &full, || {
        let mut s = String::from("quantity,value\n");
        let ratio = report.optimality_ratio.map(|r| r.to_string()).unwrap_or_default();
        for (k, v) in [
            ("n", report.n.to_string()),
            ("specLB", report.spec_lb.to_string()),
            ("l1_fourier_norm", report.l1_fourier_norm.to_string()),
            ("support_size", report.support_size.to_string()),
            ("harmonic_lhs", report.harmonic_lhs.to_string()),
            ("harmonic_rhs", report.harmonic_rhs.to_string()),
            ("harmonic_holds", report.harmonic_holds.to_string()),
            ("optimality_ratio", ratio),
        ] {
            s.push_str(&format!("{k},{v}\n"));
        }
        for (m, v) in &report.theoretical_mse {
            s.push_str(&format!("theoretical_mse:{m},{v}\n"));
        }
        s
    })
}

fn run_marginals(args: &MarginalsArgs) -> CliResult<()> {
    let privacy = args.privacy.resolve(false)?;
    let hist = read_histogram(&args.x, args.d)?;
    let f = match (&args.wdnf, &args.attrs) {
        (Some(path), _) => read_wdnf(path)?,
        (None, Some(attrs)) => marginal_query(attrs, hist.d())?,
        (None, None) => return Err(usage("one of --wdnf or --attrs is required")),
    };
    // Enforce the dimension guard before anything is materialized.
    if f.d() > args.max_d {
        wdnf_to_sequence_with_limit(&f, args.max_d)?;
    }
    let result = private_marginals(&hist, &f, &privacy, Seed::new(args.seed))?;
    result_output(&args.output, &result)
}

fn run_bench(args: &BenchArgs) -> CliResult<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_json(&read_file(path)?)?,
        None => ExperimentConfig::default_suite(),
    };
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let table = harness::mechanism_comparison(&config)?;
    let mut buf = Vec::new();
    match args.format {
        Format::Csv => harness::write_csv(&table.rows, &mut buf)?,
        Format::Json => harness::write_json(&table.rows, &mut buf)?,
    }
    write_text(args.out.as_deref(), &String::from_utf8_lossy(&buf))?;
    for check in table.compressible_checks.iter().filter(|c| !c.holds) {
        eprintln!(
            "warning: {} at N={}: fourier MSE {} does not beat input perturbation {} by {}",
            check.filter, check.n, check.fourier_mse, check.input_perturb_mse, check.required_factor
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Transform(a) => run_transform(a),
        Command::Convolve(a) => run_convolve(a),
        Command::Privatize(a) => run_privatize(a),
        Command::Bounds(a) => run_bounds(a),
        Command::Marginals(a) => run_marginals(a),
        Command::Bench(a) => run_bench(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
