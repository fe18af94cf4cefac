//! Grey-box nonlinear state-space identification of vibrating systems with
//! localized nonlinearities.
//!
//! The pipeline has two steps. A frequency-domain nonlinear subspace method
//! ([`fnsi`]) treats the nonlinear basis signals, evaluated on the measured
//! outputs, as extra inputs and returns an initial discrete-time model
//! `x(t+1) = A x(t) + [B E] [u; g(y)]`, `y(t) = C x(t) + [D F] [u; g(y)]`.
//! The model is then refined by Levenberg-Marquardt on a frequency-domain
//! output-error cost with analytically propagated sensitivities
//! ([`optimize`]). [`physical`] turns the result back into modal parameters
//! and nonlinear stiffness coefficients, and [`stats`] repeats the whole
//! procedure over random-phase realizations.

pub mod error;
pub mod experiment;
pub mod fnsi;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod physical;
pub mod signals;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use model::{BasisSet, BasisTerm, Derivative, Dimensions, GreyBoxModel, ParameterMask};
pub use signals::{ExcitedBand, SpectrumSet, TimeRecord};
