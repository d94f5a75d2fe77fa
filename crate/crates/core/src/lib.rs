//! Brand-topic model: Poisson factorization with per-brand polarity scores,
//! trained by stochastic variational inference with a sentiment adversary.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod gumbel;
pub mod io;
pub mod model;
pub mod objective;
pub mod pf;
pub mod scalar;
pub mod sentiment;
pub mod synthetic;
pub mod trainer;
#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default working precision.
pub type Real = f64;
pub type Params = model::VariationalParams<Real>;
pub type Params32 = model::VariationalParams<f32>;
pub type Classifier = sentiment::SentimentClassifier<Real>;
pub type ModelCheckpoint = trainer::Checkpoint<Real>;
pub type PfFit = pf::PFParams<Real>;
