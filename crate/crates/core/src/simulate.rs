//! Forward simulation from the generative model: centered ICAR draws,
//! Poisson counts on fixed offsets, and interval censoring of the
//! treatment counts.

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditionals::{draw_inverse_gamma, ConditionalError, Priors, VariancePrior};
use crate::data::{standardize_covariates, DataError, Dataset, CENSOR_WIDTH};
use crate::graph::{AdjacencyGraph, GraphError};
use crate::state::{recenter, ChainState};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Conditional(#[from] ConditionalError),
    #[error("invalid simulation spec: {0}")]
    Spec(String),
    #[error("cannot read graph file {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("Poisson mean {0} is not finite and positive")]
    BadMean(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSpec {
    Lattice { rows: usize, cols: usize },
    EdgeList { path: PathBuf, n: usize },
}

impl GraphSpec {
    pub fn build(&self) -> Result<AdjacencyGraph, SimulationError> {
        match self {
            GraphSpec::Lattice { rows, cols } => Ok(AdjacencyGraph::lattice(*rows, *cols)?),
            GraphSpec::EdgeList { path, n } => {
                let file = std::fs::File::open(path).map_err(|e| SimulationError::Io {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                Ok(AdjacencyGraph::load_adjacency(std::io::BufReader::new(file), *n)?)
            }
        }
    }
}

/// How the observed treatment record is coarsened.
///
/// Censored units report `lower = 10 * floor(Y / 10)` and the true count lies
/// in `[lower, lower + 9]`. Under `Threshold` a unit is censored when its true
/// count is below `threshold`, which must be a multiple of ten so that the
/// decision depends only on the reported interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CensoringRule {
    None,
    Threshold { threshold: u64 },
    Explicit { units: Vec<usize> },
}

impl Default for CensoringRule {
    fn default() -> Self {
        CensoringRule::Threshold { threshold: 10 }
    }
}

/// Interval lower bound reported for a censored count.
pub fn censor_lower(count: u64) -> u64 {
    (count / (CENSOR_WIDTH + 1)) * (CENSOR_WIDTH + 1)
}

impl CensoringRule {
    fn validate(&self, n: usize) -> Result<(), SimulationError> {
        match self {
            CensoringRule::Threshold { threshold } if threshold % (CENSOR_WIDTH + 1) != 0 => Err(
                SimulationError::Spec(format!("censoring threshold {threshold} must be a multiple of 10")),
            ),
            CensoringRule::Explicit { units } => match units.iter().find(|&&u| u >= n) {
                Some(u) => Err(SimulationError::Spec(format!("censored unit {u} out of range for n = {n}"))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Observation record `(lower, censored)` for true counts.
    pub fn apply(&self, counts: &[u64]) -> (Vec<u64>, Vec<bool>) {
        let flags: Vec<bool> = match self {
            CensoringRule::None => vec![false; counts.len()],
            CensoringRule::Threshold { threshold } => counts.iter().map(|&y| y < *threshold).collect(),
            CensoringRule::Explicit { units } => {
                let mut f = vec![false; counts.len()];
                for &u in units {
                    f[u] = true;
                }
                f
            }
        };
        let lower = counts
            .iter()
            .zip(&flags)
            .map(|(&y, &c)| if c { censor_lower(y) } else { y })
            .collect();
        (lower, flags)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    pub beta0_death: f64,
    pub beta0_treatment: f64,
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub tau2_death: f64,
    pub sigma2_death: f64,
    pub sigma2_treatment: f64,
}

impl Default for TrueParameters {
    fn default() -> Self {
        Self {
            beta0_death: 0.0,
            beta0_treatment: 0.0,
            beta: vec![0.3, -0.1],
            tau2: 0.38,
            tau2_death: 0.05,
            sigma2_death: 0.03,
            sigma2_treatment: 0.09,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub graph: GraphSpec,
    pub truth: TrueParameters,
    pub population_min: u64,
    pub population_max: u64,
    /// Reference death rate per person; offsets are `population * rate`.
    pub death_rate: f64,
    pub treatment_rate: f64,
    pub censoring: CensoringRule,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            graph: GraphSpec::Lattice { rows: 10, cols: 10 },
            truth: TrueParameters::default(),
            population_min: 20_000,
            population_max: 200_000,
            death_rate: 57e-5,
            treatment_rate: 563e-5,
            censoring: CensoringRule::default(),
            seed: 1,
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let fail = |m: String| Err(SimulationError::Spec(m));
        if self.population_min == 0 || self.population_min > self.population_max {
            return fail(format!(
                "population range [{}, {}] must be positive and ordered",
                self.population_min, self.population_max
            ));
        }
        for (name, rate) in [("death_rate", self.death_rate), ("treatment_rate", self.treatment_rate)] {
            if !(rate.is_finite() && rate > 0.0) {
                return fail(format!("{name} must be positive"));
            }
        }
        let t = &self.truth;
        for (name, v) in [
            ("tau2", t.tau2),
            ("tau2_death", t.tau2_death),
            ("sigma2_death", t.sigma2_death),
            ("sigma2_treatment", t.sigma2_treatment),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if ![t.beta0_death, t.beta0_treatment].iter().chain(&t.beta).all(|b| b.is_finite()) {
            return fail("coefficients must be finite".into());
        }
        Ok(())
    }
}

/// Draws from the centered intrinsic CAR distribution with precision
/// `Q / τ²` restricted to the sum-zero subspace. `Q` is diagonalized once;
/// a draw is `Σ_k z_k sqrt(τ² / λ_k) v_k` over the nonzero eigenpairs.
#[derive(Debug, Clone)]
pub struct IcarSampler {
    /// Columns are eigenvectors with nonzero eigenvalue, pre-scaled by `λ^{-1/2}`.
    basis: DMatrix<f64>,
}

impl IcarSampler {
    pub fn new(graph: &AdjacencyGraph) -> Result<Self, SimulationError> {
        graph.require_connected()?;
        let n = graph.n();
        let eig = graph.dense_precision().symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        // connected: exactly one zero eigenvalue, the constant vector
        let keep = &order[1..];
        let mut basis = DMatrix::zeros(n, keep.len());
        for (c, &k) in keep.iter().enumerate() {
            let scale = eig.eigenvalues[k].sqrt().recip();
            basis.set_column(c, &(eig.eigenvectors.column(k) * scale));
        }
        Ok(Self { basis })
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    /// One draw with variance parameter `tau2`, centered to mean zero exactly.
    pub fn draw<R: Rng + ?Sized>(&self, tau2: f64, rng: &mut R) -> Vec<f64> {
        let k = self.basis.ncols();
        let sd = tau2.sqrt();
        let z = nalgebra::DVector::from_fn(k, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let mut out: Vec<f64> = (&self.basis * z).iter().copied().collect();
        recenter(&mut out, 0.0);
        out
    }
}

/// Draws a full parameter state given the variances, intercepts and β:
/// `ν = Xβ + u` with `u` centered ICAR, `α^D = 1 + a` with `a` centered ICAR,
/// and i.i.d. normal errors.
pub fn draw_effects<R: Rng + ?Sized>(
    state: &mut ChainState,
    icar: &IcarSampler,
    covariates: &DMatrix<f64>,
    rng: &mut R,
) {
    let n = icar.n();
    let u = icar.draw(state.tau2, rng);
    let a = icar.draw(state.tau2_death, rng);
    for i in 0..n {
        let xb: f64 = (0..state.beta.len()).map(|k| covariates[(i, k)] * state.beta[k]).sum();
        state.nu[i] = xb + u[i];
        state.alpha_death[i] = 1.0 + a[i];
    }
    recenter(&mut state.nu, 0.0);
    recenter(&mut state.alpha_death, 1.0);
    let sd_d = state.sigma2_death.sqrt();
    let sd_t = state.sigma2_treatment.sqrt();
    for i in 0..n {
        state.eps_death[i] = sd_d * rng.sample::<f64, _>(StandardNormal);
    }
    for i in 0..n {
        state.eps_treatment[i] = sd_t * rng.sample::<f64, _>(StandardNormal);
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64, SimulationError> {
    if !(mean.is_finite() && mean > 0.0) {
        return Err(SimulationError::BadMean(mean));
    }
    let d = Poisson::new(mean).map_err(|_| SimulationError::BadMean(mean))?;
    Ok(d.sample(rng) as u64)
}

/// True death and treatment counts `Y ~ Poisson(E λ)` at the state's rates.
pub fn draw_counts<R: Rng + ?Sized>(
    state: &ChainState,
    offsets_death: &[f64],
    offsets_treatment: &[f64],
    rng: &mut R,
) -> Result<(Vec<u64>, Vec<u64>), SimulationError> {
    let n = state.n();
    let mut deaths = Vec::with_capacity(n);
    let mut treatments = Vec::with_capacity(n);
    for i in 0..n {
        deaths.push(poisson(offsets_death[i] * state.log_lambda_death_at(i).exp(), rng)?);
        treatments.push(poisson(offsets_treatment[i] * state.log_lambda_treatment_at(i).exp(), rng)?);
    }
    Ok((deaths, treatments))
}

/// Draws every parameter from proper priors: inverse-gamma variances,
/// normal intercepts and β, then the effects via [`draw_effects`].
pub fn draw_prior_state<R: Rng + ?Sized>(
    priors: &Priors,
    icar: &IcarSampler,
    covariates: &DMatrix<f64>,
    rng: &mut R,
) -> Result<ChainState, SimulationError> {
    let n = icar.n();
    let p = covariates.ncols();
    let iv = priors
        .intercept_variance
        .ok_or_else(|| SimulationError::Spec("prior draws need a proper intercept prior".into()))?;
    let ig = |prior: VariancePrior, rng: &mut R| draw_inverse_gamma(prior.shape, prior.rate, rng);
    let mut s = ChainState::neutral(n, p);
    s.tau2 = ig(priors.tau2, rng)?;
    s.tau2_death = ig(priors.tau2_death, rng)?;
    s.sigma2_death = ig(priors.sigma2_death, rng)?;
    s.sigma2_treatment = ig(priors.sigma2_treatment, rng)?;
    let intercept = Normal::new(0.0, iv.sqrt()).map_err(|e| SimulationError::Spec(e.to_string()))?;
    s.beta0_death = intercept.sample(rng);
    s.beta0_treatment = intercept.sample(rng);
    let bsd = priors.beta_variance.sqrt();
    for b in s.beta.iter_mut() {
        *b = bsd * rng.sample::<f64, _>(StandardNormal);
    }
    draw_effects(&mut s, icar, covariates, rng);
    Ok(s)
}

/// A simulated dataset together with everything needed to score a fit.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub graph: AdjacencyGraph,
    pub data: Dataset,
    pub truth: ChainState,
    /// Treatment counts before censoring.
    pub true_treatments: Vec<u64>,
    /// Covariates before standardization.
    pub raw_covariates: DMatrix<f64>,
}

/// Runs the generative model forward. Covariates are i.i.d. standard normal,
/// standardized before use; offsets are `population * rate` with the spec's
/// reference rates so that the intercepts keep their true meaning.
pub fn simulate_dataset<R: Rng + ?Sized>(spec: &SimulationSpec, rng: &mut R) -> Result<Simulation, SimulationError> {
    spec.validate()?;
    let graph = spec.graph.build()?;
    graph.require_connected()?;
    let n = graph.n();
    spec.censoring.validate(n)?;
    let icar = IcarSampler::new(&graph)?;
    let t = &spec.truth;
    let p = t.beta.len();

    let populations: Vec<u64> = (0..n)
        .map(|_| rng.random_range(spec.population_min..=spec.population_max))
        .collect();
    let raw = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let names: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
    let covariates = if p > 0 && n > 1 {
        standardize_covariates(&raw, &names)?.0
    } else {
        raw.clone()
    };

    let mut truth = ChainState::neutral(n, p);
    truth.beta0_death = t.beta0_death;
    truth.beta0_treatment = t.beta0_treatment;
    truth.beta = t.beta.clone();
    truth.tau2 = t.tau2;
    truth.tau2_death = t.tau2_death;
    truth.sigma2_death = t.sigma2_death;
    truth.sigma2_treatment = t.sigma2_treatment;
    draw_effects(&mut truth, &icar, &covariates, rng);

    let offsets_death: Vec<f64> = populations.iter().map(|&p| p as f64 * spec.death_rate).collect();
    let offsets_treatment: Vec<f64> = populations.iter().map(|&p| p as f64 * spec.treatment_rate).collect();
    let (deaths, treatments) = draw_counts(&truth, &offsets_death, &offsets_treatment, rng)?;
    let (lower, censored) = spec.censoring.apply(&treatments);
    let data = Dataset::new(
        deaths,
        lower,
        censored,
        populations,
        covariates,
        names,
        offsets_death,
        offsets_treatment,
    )?;
    Ok(Simulation {
        graph,
        data,
        truth,
        true_treatments: treatments,
        raw_covariates: raw,
    })
}
