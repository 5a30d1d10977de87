//! Predictive coding and variational autoencoders in one toolkit.
//!
//! - [`tensor`]: dense tensors, Cholesky / spectral kernels, seeded RNG, binary tensor files
//! - [`nn`]: feed-forward networks with exact reverse-mode gradients
//! - [`distributions`]: Gaussian densities, reparameterized sampling, KL
//! - [`flows`]: affine flows, ZCA / Cholesky whitening, temporal normalization
//! - [`models`]: linear-Gaussian and hierarchical deep latent models
//! - [`inference`]: ELBO, gradient-based (predictive coding) inference,
//!   direct and iterative amortization, variational EM
//! - [`harness`]: data generators, experiment runner, PGM / CSV outputs

pub mod checkpoint;
pub mod distributions;
pub mod error;
pub mod flows;
pub mod harness;
pub mod inference;
pub mod models;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Rng, Tensor};
