//! Unitary transforms and exact convolution over the two supported groups.
//!
//! Cyclic sequences live on Z/NZ and use the normalized DFT
//! `x̂_m = N^{-1/2} Σ_n x_n e^{-2πi mn/N}`. Boolean-cube sequences live on
//! (Z/2Z)^d and use the normalized Walsh-Hadamard transform with characters
//! `χ_S(a) = 2^{-d/2} (-1)^{|S ∩ a|}`. Points of the cube and subsets of
//! attributes share one integer encoding: attribute `i` (1-based) is bit
//! `i - 1`, so attribute 1 is the least significant bit.
//!
//! With either transform, convolution is diagonal with eigenvalues
//! `√N · ĥ_m`: `transform(h * x) = √N · ĥ ⊙ x̂`.
//!
//! Power-of-two cyclic lengths use an iterative radix-2 FFT. Other lengths
//! fall back to an O(N²) direct transform, which is fine for the filter
//! sizes used in experiments but slow beyond a few thousand points.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The abelian group a sequence is indexed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "group")]
pub enum Group {
    #[serde(rename = "cyclic")]
    Cyclic { n: usize },
    #[serde(rename = "cube")]
    BooleanCube { d: u32 },
}

impl Group {
    pub fn cyclic(n: usize) -> Self {
        Group::Cyclic { n }
    }

    pub fn cube(d: u32) -> Self {
        Group::BooleanCube { d }
    }

    /// Number of group elements.
    pub fn len(&self) -> usize {
        match *self {
            Group::Cyclic { n } => n,
            Group::BooleanCube { d } => 1usize << d,
        }
    }

    pub fn is_cube(&self) -> bool {
        matches!(self, Group::BooleanCube { .. })
    }

    /// Index of the group inverse of `k`; pairs `k` with its conjugate
    /// Fourier coefficient. Every cube element is its own inverse.
    pub fn negate(&self, k: usize) -> usize {
        match *self {
            Group::Cyclic { n } => (n - k) % n,
            Group::BooleanCube { .. } => k,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Cyclic { n } => write!(f, "cyclic({n})"),
            Group::BooleanCube { d } => write!(f, "cube({d})"),
        }
    }
}

/// A finite real sequence over a [`Group`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealSequence {
    values: Vec<f64>,
    group: Group,
}

impl RealSequence {
    pub fn new(values: Vec<f64>, group: Group) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("sequence must have at least one element"));
        }
        if let Group::BooleanCube { d } = group {
            if d >= usize::BITS - 1 {
                return Err(Error::validation(format!("cube dimension {d} is too large")));
            }
        }
        if values.len() != group.len() {
            return Err(Error::validation(format!(
                "length {} does not match group {group}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite value at index {i}")));
        }
        Ok(Self { values, group })
    }

    pub fn cyclic(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, Group::cyclic(n))
    }

    /// Sequence over the cube; the length must be a power of two.
    pub fn cube(values: Vec<f64>) -> Result<Self> {
        if !values.len().is_power_of_two() {
            return Err(Error::validation(format!(
                "cube sequence length {} is not a power of two",
                values.len()
            )));
        }
        let d = values.len().trailing_zeros();
        Self::new(values, Group::cube(d))
    }

    pub fn zeros(group: Group) -> Self {
        Self {
            values: vec![0.0; group.len()],
            group,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub(crate) fn check_same_group(&self, other: &RealSequence) -> Result<()> {
        if self.group != other.group {
            return Err(Error::GroupMismatch(self.group, other.group));
        }
        Ok(())
    }
}

/// Unitary Fourier coefficients of a sequence. Cube spectra are real and
/// stored with zero imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Vec<Complex64>,
    group: Group,
}

impl Spectrum {
    pub fn new(coeffs: Vec<Complex64>, group: Group) -> Result<Self> {
        if coeffs.len() != group.len() {
            return Err(Error::validation(format!(
                "spectrum length {} does not match group {group}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::validation("non-finite spectrum coefficient"));
        }
        Ok(Self { coeffs, group })
    }

    /// Spectrum with the given real coefficients (a cube spectrum, or a
    /// cyclic spectrum of a symmetric real sequence).
    pub fn from_real(coeffs: Vec<f64>, group: Group) -> Result<Self> {
        Self::new(coeffs.into_iter().map(|c| Complex64::new(c, 0.0)).collect(), group)
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm()).collect()
    }

    pub fn norm_l1(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.norm()))
    }
}

/// Unitary DFT of a real cyclic sequence. The output is exactly
/// conjugate-symmetric: `coeffs[k] == conj(coeffs[N-k])`.
pub fn dft(x: &RealSequence) -> Result<Spectrum> {
    let Group::Cyclic { n } = x.group() else {
        return Err(Error::validation(format!("dft requires a cyclic sequence, got {}", x.group())));
    };
    let mut buf: Vec<Complex64> = x.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    unitary_dft_in_place(&mut buf, false);
    // Real input: enforce Hermitian symmetry exactly.
    for k in 0..=n / 2 {
        let j = (n - k) % n;
        if j == k {
            buf[k].im = 0.0;
        } else {
            let avg = (buf[k] + buf[j].conj()) * 0.5;
            buf[k] = avg;
            buf[j] = avg.conj();
        }
    }
    Ok(Spectrum { coeffs: buf, group: x.group() })
}

/// Unitary DFT of an arbitrary complex vector.
pub fn dft_complex(x: &[Complex64]) -> Result<Vec<Complex64>> {
    check_complex_input(x)?;
    let mut buf = x.to_vec();
    unitary_dft_in_place(&mut buf, false);
    Ok(buf)
}

/// Inverse unitary DFT of an arbitrary complex vector.
pub fn idft_complex(x: &[Complex64]) -> Result<Vec<Complex64>> {
    check_complex_input(x)?;
    let mut buf = x.to_vec();
    unitary_dft_in_place(&mut buf, true);
    Ok(buf)
}

/// Inverse DFT of a cyclic spectrum, keeping the real part.
pub fn idft(spectrum: &Spectrum) -> Result<RealSequence> {
    let Group::Cyclic { .. } = spectrum.group() else {
        return Err(Error::validation("idft requires a cyclic spectrum"));
    };
    let mut buf = spectrum.coeffs().to_vec();
    unitary_dft_in_place(&mut buf, true);
    RealSequence::new(buf.into_iter().map(|c| c.re).collect(), spectrum.group())
}

/// Normalized Walsh-Hadamard transform of a cube sequence. Self-inverse.
pub fn wht(x: &RealSequence) -> Result<Spectrum> {
    if !x.group().is_cube() {
        return Err(Error::validation(format!("wht requires a cube sequence, got {}", x.group())));
    }
    let mut buf = x.values().to_vec();
    wht_in_place(&mut buf);
    Spectrum::from_real(buf, x.group())
}

/// In-place normalized WHT. Panics if the length is not a power of two.
pub fn wht_in_place(buf: &mut [f64]) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "WHT length {n} is not a power of two");
    let mut half = 1;
    while half < n {
        for start in (0..n).step_by(2 * half) {
            for i in start..start + half {
                let (a, b) = (buf[i], buf[i + half]);
                buf[i] = a + b;
                buf[i + half] = a - b;
            }
        }
        half *= 2;
    }
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= scale);
}

/// Forward transform matching the sequence's group.
pub fn transform(x: &RealSequence) -> Spectrum {
    match x.group() {
        Group::Cyclic { .. } => dft(x),
        Group::BooleanCube { .. } => wht(x),
    }
    .expect("group checked by dispatch")
}

/// Inverse of [`transform`]. Imaginary residue (nonzero only when the
/// spectrum is not conjugate-symmetric) is discarded.
pub fn inverse_transform(spectrum: &Spectrum) -> RealSequence {
    match spectrum.group() {
        Group::Cyclic { .. } => idft(spectrum).expect("group checked by dispatch"),
        Group::BooleanCube { .. } => {
            let mut buf: Vec<f64> = spectrum.coeffs().iter().map(|c| c.re).collect();
            wht_in_place(&mut buf);
            RealSequence::new(buf, spectrum.group()).expect("finite spectrum")
        }
    }
}

/// Convolution via the diagonalizing transform, O(N log N).
pub fn convolve_fast(h: &RealSequence, x: &RealSequence) -> Result<RealSequence> {
    h.check_same_group(x)?;
    let root_n = (x.len() as f64).sqrt();
    let h_hat = transform(h);
    let x_hat = transform(x);
    let y_hat: Vec<Complex64> = h_hat
        .coeffs()
        .iter()
        .zip(x_hat.coeffs())
        .map(|(hc, xc)| hc * xc * root_n)
        .collect();
    Ok(inverse_transform(&Spectrum { coeffs: y_hat, group: x.group() }))
}

/// Literal O(N²) evaluation of the group convolution `y_k = Σ_n x_n h_{k-n}`
/// (index XOR on the cube).
pub fn convolve_direct(h: &RealSequence, x: &RealSequence) -> Result<RealSequence> {
    h.check_same_group(x)?;
    let n = x.len();
    let (hv, xv) = (h.values(), x.values());
    let y = match x.group() {
        Group::Cyclic { .. } => (0..n)
            .map(|k| (0..n).map(|j| xv[j] * hv[(k + n - j) % n]).sum())
            .collect(),
        Group::BooleanCube { .. } => (0..n)
            .map(|a| (0..n).map(|b| xv[b] * hv[a ^ b]).sum())
            .collect(),
    };
    RealSequence::new(y, x.group())
}

/// Row `m` of the unitary DFT matrix of size `n`.
pub fn dft_row(m: usize, n: usize) -> Vec<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|j| {
            let angle = -2.0 * PI * ((m * j) % n) as f64 / n as f64;
            Complex64::from_polar(scale, angle)
        })
        .collect()
}

/// Row `s` of the unitary Walsh-Hadamard matrix on the `d`-cube.
pub fn wht_row(s: usize, d: u32) -> Vec<f64> {
    let n = 1usize << d;
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|a| if (s & a).count_ones().is_multiple_of(2) { scale } else { -scale })
        .collect()
}

fn check_complex_input(x: &[Complex64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::validation("transform input must be nonempty"));
    }
    if let Some(i) = x.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::validation(format!("non-finite value at index {i}")));
    }
    Ok(())
}

fn unitary_dft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n.is_power_of_two() {
        fft_radix2(buf, inverse);
    } else {
        let out = dft_naive(buf, inverse);
        buf.copy_from_slice(&out);
    }
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|c| *c *= scale);
}

/// Unnormalized iterative Cooley-Tukey, decimation in time.
fn fft_radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|k| {
            let (s, c) = (2.0 * PI * k as f64 / n as f64).sin_cos();
            Complex64::new(c, sign * s)
        })
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for chunk in buf.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for (j, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let t = *b * twiddles[j * stride];
                *b = *a - t;
                *a += t;
            }
        }
        len *= 2;
    }
}

fn dft_naive(buf: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = buf.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let roots: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / n as f64))
        .collect();
    (0..n)
        .map(|m| {
            buf.iter()
                .enumerate()
                .map(|(j, v)| v * roots[(m * j) % n])
                .sum()
        })
        .collect()
}
