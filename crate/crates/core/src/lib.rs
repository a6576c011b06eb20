//! Differentially private convolution.
//!
//! Releases `h * x` for a public filter `h` and a private histogram or
//! signal `x` under (ε, δ)-differential privacy. The main mechanism adds
//! Laplace noise to the Fourier coefficients of `x` with scales chosen to
//! minimize mean squared error; baselines, lower bounds and a Monte Carlo
//! harness sit alongside it. Everything works over the cyclic group `Z_N`
//! (DFT) and the Boolean cube `(Z/2Z)^d` (Walsh-Hadamard transform).
//!
//! ```
//! use privconv::{fourier_mechanism, PrivacyParams, RealSequence, Seed};
//!
//! let x = RealSequence::cyclic(vec![3.0, 0.0, 1.0, 2.0]).unwrap();
//! let h = RealSequence::cyclic(vec![1.0, 1.0, 0.0, 0.0]).unwrap();
//! let privacy = PrivacyParams::new(1.0, 1e-6).unwrap();
//! let result = fourier_mechanism(&x, &h, &privacy, Seed::new(7)).unwrap();
//! assert_eq!(result.output.len(), 4);
//! ```

pub mod bounds;
pub mod error;
pub mod harness;
pub mod io;
pub mod marginals;
pub mod mechanisms;
pub mod noise;
pub mod transforms;

pub use bounds::{bounds_report, optimality_ratio, spec_lb, theoretical_mse, BoundsReport};
pub use error::{Error, Result};
pub use harness::{estimate_mse, ExperimentConfig, FilterFamily, MseEstimate};
pub use marginals::{private_marginals, CubeHistogram, Literal, WDnf};
pub use mechanisms::{
    fourier_mechanism, Mechanism, MechanismResult, Neighbor, PrivacyParams, Privatize,
};
pub use num_complex::Complex64;
pub use noise::{LaplaceScale, Seed, DEFAULT_SEED};
pub use transforms::{convolve_direct, convolve_fast, transform, Group, RealSequence, Spectrum};
