//! Generalized marginal queries as convolutions over (Z/2Z)^d.
//!
//! A database of `d`-bit rows is held as a histogram over the cube. For a
//! w-DNF `f`, the generalized marginal `(x * f)(a) = Σ_b x(b) f(a ⊕ b)`
//! counts the rows `b` whose XOR-difference from `a` satisfies `f`. The
//! single-clause DNF `⋀_{i∈S} ¬c_i` gives the ordinary marginal on `S`,
//! evaluated at every setting `a` at once.
//!
//! Attribute `i` (1-based) is bit `i - 1` of a point's index, so attribute 1
//! is the least significant bit. Bitstrings are written attribute 1 first:
//! `"10"` is the point with `c_1 = 1, c_2 = 0`, index 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{fourier_mechanism, support, MechanismResult, PrivacyParams};
use crate::noise::Seed;
use crate::transforms::{wht, Group, RealSequence};

/// Largest cube dimension materialized by default (2^24 doubles, 128 MiB).
pub const DEFAULT_MAX_DIM: u32 = 24;

/// Hard limit: points are indexed by `usize` and parsed from bitstrings.
const HARD_MAX_DIM: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    /// 1-based attribute index.
    pub var: u32,
    /// True for `¬c_var`.
    #[serde(default)]
    pub neg: bool,
}

impl Literal {
    pub fn pos(var: u32) -> Self {
        Self { var, neg: false }
    }

    pub fn neg(var: u32) -> Self {
        Self { var, neg: true }
    }

    fn eval(&self, point: usize) -> bool {
        let bit = (point >> (self.var - 1)) & 1 == 1;
        bit != self.neg
    }
}

/// A DNF over `d` Boolean attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WDnfRepr")]
pub struct WDnf {
    d: u32,
    clauses: Vec<Vec<Literal>>,
}

#[derive(Deserialize)]
struct WDnfRepr {
    d: u32,
    clauses: Vec<Vec<Literal>>,
}

impl TryFrom<WDnfRepr> for WDnf {
    type Error = Error;

    fn try_from(r: WDnfRepr) -> Result<Self> {
        WDnf::new(r.d, r.clauses)
    }
}

impl WDnf {
    pub fn new(d: u32, clauses: Vec<Vec<Literal>>) -> Result<Self> {
        if d > HARD_MAX_DIM {
            return Err(Error::validation(format!("dimension {d} exceeds {HARD_MAX_DIM}")));
        }
        if clauses.is_empty() {
            return Err(Error::validation("DNF must have at least one clause"));
        }
        for (ci, clause) in clauses.iter().enumerate() {
            if clause.is_empty() {
                return Err(Error::validation(format!("clause {ci} is empty")));
            }
            for (li, lit) in clause.iter().enumerate() {
                if lit.var == 0 || lit.var > d {
                    return Err(Error::validation(format!(
                        "clause {ci}: attribute {} outside 1..={d}",
                        lit.var
                    )));
                }
                if clause[..li].iter().any(|other| other.var == lit.var) {
                    return Err(Error::validation(format!(
                        "clause {ci}: attribute {} appears twice",
                        lit.var
                    )));
                }
            }
        }
        Ok(Self { d, clauses })
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn clauses(&self) -> &[Vec<Literal>] {
        &self.clauses
    }

    /// Longest clause length.
    pub fn width(&self) -> usize {
        self.clauses.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Value of the formula at the point with index `point`.
    pub fn eval(&self, point: usize) -> bool {
        self.clauses
            .iter()
            .any(|clause| clause.iter().all(|lit| lit.eval(point)))
    }
}

/// 0/1 truth table of `f` over `BooleanCube(d)`, refusing `d` above
/// [`DEFAULT_MAX_DIM`].
pub fn wdnf_to_sequence(f: &WDnf) -> Result<RealSequence> {
    wdnf_to_sequence_with_limit(f, DEFAULT_MAX_DIM)
}

pub fn wdnf_to_sequence_with_limit(f: &WDnf, max_d: u32) -> Result<RealSequence> {
    if f.d > max_d {
        return Err(Error::validation(format!(
            "cube dimension {} exceeds the limit {max_d}",
            f.d
        )));
    }
    let values = (0..1usize << f.d)
        .map(|a| if f.eval(a) { 1.0 } else { 0.0 })
        .collect();
    RealSequence::new(values, Group::cube(f.d))
}

/// The conjunction `⋀_{i∈S} ¬c_i`. Convolving a histogram with it yields
/// every |S|-way marginal on `S`.
pub fn marginal_query(attributes: &[u32], d: u32) -> Result<WDnf> {
    if attributes.is_empty() {
        return Err(Error::validation("marginal attribute set must be nonempty"));
    }
    WDnf::new(d, vec![attributes.iter().map(|&v| Literal::neg(v)).collect()])
}

/// Nonnegative counts over the cube.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeHistogram {
    counts: RealSequence,
}

impl CubeHistogram {
    pub fn new(counts: RealSequence) -> Result<Self> {
        if !counts.group().is_cube() {
            return Err(Error::validation("histogram must be over a Boolean cube"));
        }
        if let Some(i) = counts.values().iter().position(|&c| c < 0.0) {
            return Err(Error::validation(format!("negative count at point {i}")));
        }
        Ok(Self { counts })
    }

    pub fn from_dense(counts: Vec<f64>) -> Result<Self> {
        Self::new(RealSequence::cube(counts)?)
    }

    /// Histogram from `(bitstring, count)` pairs; repeated points add up.
    pub fn from_pairs<S: AsRef<str>>(d: u32, pairs: &[(S, f64)]) -> Result<Self> {
        if d > DEFAULT_MAX_DIM {
            return Err(Error::validation(format!("cube dimension {d} exceeds the limit {DEFAULT_MAX_DIM}")));
        }
        let mut counts = vec![0.0; 1usize << d];
        for (bits, count) in pairs {
            counts[parse_bitstring(bits.as_ref(), d)?] += count;
        }
        Self::new(RealSequence::new(counts, Group::cube(d))?)
    }

    /// Histogram of a list of rows given as point indices.
    pub fn from_rows(d: u32, rows: &[usize]) -> Result<Self> {
        let mut counts = vec![0.0; 1usize << d];
        for &r in rows {
            *counts
                .get_mut(r)
                .ok_or_else(|| Error::validation(format!("row {r} outside the {d}-cube")))? += 1.0;
        }
        Self::new(RealSequence::new(counts, Group::cube(d))?)
    }

    pub fn counts(&self) -> &RealSequence {
        &self.counts
    }

    pub fn d(&self) -> u32 {
        match self.counts.group() {
            Group::BooleanCube { d } => d,
            Group::Cyclic { .. } => unreachable!("validated at construction"),
        }
    }

    /// Number of rows `n`.
    pub fn database_size(&self) -> f64 {
        self.counts.values().iter().sum()
    }

    /// The neighboring histogram with one more row at `point`.
    pub fn with_row_added(&self, point: usize) -> Result<Self> {
        let mut counts = self.counts.values().to_vec();
        *counts
            .get_mut(point)
            .ok_or_else(|| Error::validation(format!("row {point} outside the cube")))? += 1.0;
        Self::new(RealSequence::new(counts, self.counts.group())?)
    }
}

/// Parses a `d`-character 0/1 string, attribute 1 first, into a point index.
pub fn parse_bitstring(bits: &str, d: u32) -> Result<usize> {
    if bits.len() != d as usize {
        return Err(Error::validation(format!("bitstring `{bits}` does not have {d} bits")));
    }
    bits.chars().enumerate().try_fold(0usize, |acc, (i, ch)| match ch {
        '0' => Ok(acc),
        '1' => Ok(acc | 1 << i),
        _ => Err(Error::validation(format!("bitstring `{bits}` has a non-binary character"))),
    })
}

/// Fourier Mechanism on the cube with the WHT in place of the DFT.
/// Theoretical MSE `4 ln(1/δ)‖ĥ‖₁²/(ε² 2^d)`.
pub fn private_marginals(
    x: &CubeHistogram,
    f: &WDnf,
    privacy: &PrivacyParams,
    seed: Seed,
) -> Result<MechanismResult> {
    if x.d() != f.d() {
        return Err(Error::validation(format!(
            "dimension mismatch: histogram has d = {}, formula has d = {}",
            x.d(),
            f.d()
        )));
    }
    let h = wdnf_to_sequence(f)?;
    fourier_mechanism(x.counts(), &h, privacy, seed)
}

/// Brute-force generalized marginal `Σ_b x(b) f(a ⊕ b)` for every `a`,
/// evaluating the formula directly.
pub fn generalized_marginal_direct(x: &CubeHistogram, f: &WDnf) -> Result<Vec<f64>> {
    if x.d() != f.d() {
        return Err(Error::validation("dimension mismatch"));
    }
    let counts = x.counts().values();
    Ok((0..counts.len())
        .map(|a| {
            counts
                .iter()
                .enumerate()
                .filter(|&(b, _)| f.eval(a ^ b))
                .map(|(_, c)| c)
                .sum()
        })
        .collect())
}

/// Number of Walsh-Hadamard coefficients of `f` above the zero threshold.
pub fn wht_support_size(f: &WDnf) -> Result<usize> {
    Ok(support(&wht(&wdnf_to_sequence(f)?)?).len())
}

/// `Σ_{S∉F} ĥ(S)²` where `F` holds the `2^{d-k}` largest-magnitude
/// coefficients.
pub fn spectral_tail(f: &WDnf, k: u32) -> Result<f64> {
    if k > f.d() {
        return Err(Error::validation(format!("k = {k} exceeds d = {}", f.d())));
    }
    let mut squares: Vec<f64> = wht(&wdnf_to_sequence(f)?)?
        .coeffs()
        .iter()
        .map(|c| c.re * c.re)
        .collect();
    squares.sort_by(|a, b| b.total_cmp(a));
    let keep = 1usize << (f.d() - k);
    Ok(squares[keep..].iter().rev().sum())
}
