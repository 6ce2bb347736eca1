//! Text-to-SPARQL translation with a masked-KB copy mechanism: dataset
//! annotation, vocabularies, the copy layer and its training harness,
//! endpoint access, metrics and token-level error analysis.

pub mod copynet;
pub mod corpus;
pub mod endpoint;
pub mod error;
pub mod erroranalysis;
pub mod metrics;
pub mod scalar;
pub mod sparqltok;
pub mod vocab;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ModelF64 = copynet::Model<f64>;
pub type ModelF32 = copynet::Model<f32>;
pub type CopyDistributionF64 = copynet::CopyDistribution<f64>;
pub type CopyDistributionF32 = copynet::CopyDistribution<f32>;
