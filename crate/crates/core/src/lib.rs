//! Bivariate Poisson common spatial factor model.
//!
//! Death and treatment-admission counts per areal unit are modeled as
//! Poisson with population-based offsets. Both log relative risks share an
//! intrinsic-CAR latent factor; the death outcome carries spatially varying
//! loadings. Treatment counts may be interval-censored. Inference runs an
//! adaptive Metropolis-within-Gibbs sampler.

pub mod checks;
pub mod conditionals;
pub mod data;
pub mod diagnostics;
pub mod graph;
pub mod likelihood;
pub mod sampler;
pub mod simulate;
pub mod state;

pub use conditionals::{Model, Priors, VariancePrior};
pub use data::Dataset;
pub use graph::AdjacencyGraph;
pub use likelihood::LinkState;
pub use sampler::{run_chain, ChainOutput, SamplerConfig};
pub use state::{ChainState, ParameterLayout};
