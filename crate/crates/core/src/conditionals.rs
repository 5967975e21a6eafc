//! Full conditionals: conjugate Gibbs draws for the regression coefficients
//! and the four variances, and unnormalized log-density kernels for the
//! Metropolis-Hastings blocks.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::graph::AdjacencyGraph;
use crate::likelihood::{self, LikelihoodError};
use crate::state::ChainState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditionalError {
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("graph has {graph} units but dataset has {data}")]
    SizeMismatch { graph: usize, data: usize },
    #[error("beta precision matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("inverse-gamma update needs positive shape and rate (shape {shape}, rate {rate})")]
    ImproperVariance { shape: f64, rate: f64 },
    #[error("quadratic form must be finite and non-negative, got {0}")]
    BadQuadform(f64),
}

/// Inverse-gamma prior kernel `V^{-shape-1} exp(-rate / V)` on a variance.
///
/// A uniform prior on the standard deviation corresponds to `shape = -1/2`,
/// `rate = 0` (improper).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePrior {
    pub shape: f64,
    pub rate: f64,
}

impl VariancePrior {
    pub const UNIFORM_SD: Self = Self { shape: -0.5, rate: 0.0 };

    pub fn inverse_gamma(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn is_proper(&self) -> bool {
        self.shape > 0.0 && self.rate > 0.0
    }
}

impl Default for VariancePrior {
    fn default() -> Self {
        Self::UNIFORM_SD
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// Prior variance of each latent-factor regression coefficient.
    pub beta_variance: f64,
    /// Normal prior variance for both intercepts; `None` is the flat prior.
    pub intercept_variance: Option<f64>,
    pub tau2: VariancePrior,
    pub tau2_death: VariancePrior,
    pub sigma2_death: VariancePrior,
    pub sigma2_treatment: VariancePrior,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            beta_variance: 4.0,
            intercept_variance: None,
            tau2: VariancePrior::UNIFORM_SD,
            tau2_death: VariancePrior::UNIFORM_SD,
            sigma2_death: VariancePrior::UNIFORM_SD,
            sigma2_treatment: VariancePrior::UNIFORM_SD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Death,
    Treatment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceBlock {
    Tau2,
    Tau2Death,
    Sigma2Death,
    Sigma2Treatment,
}

impl VarianceBlock {
    pub const ALL: [VarianceBlock; 4] = [
        VarianceBlock::Tau2,
        VarianceBlock::Tau2Death,
        VarianceBlock::Sigma2Death,
        VarianceBlock::Sigma2Treatment,
    ];
}

/// Graph, data and priors for one fit.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub graph: &'a AdjacencyGraph,
    pub data: &'a Dataset,
    pub priors: Priors,
    /// When false every likelihood term is dropped and the chain targets the prior.
    pub use_likelihood: bool,
    xtqx: DMatrix<f64>,
}

impl<'a> Model<'a> {
    pub fn new(
        graph: &'a AdjacencyGraph,
        data: &'a Dataset,
        priors: Priors,
    ) -> Result<Self, ConditionalError> {
        if graph.n() != data.n() {
            return Err(ConditionalError::SizeMismatch {
                graph: graph.n(),
                data: data.n(),
            });
        }
        let x = data.covariates();
        let xtqx = graph.cross_precision(x, x);
        Ok(Self {
            graph,
            data,
            priors,
            use_likelihood: true,
            xtqx,
        })
    }

    pub fn prior_only(mut self) -> Self {
        self.use_likelihood = false;
        self
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    /// `Xᵀ Q X`, fixed for the lifetime of the model.
    pub fn xtqx(&self) -> &DMatrix<f64> {
        &self.xtqx
    }

    pub fn loglik(&self, state: &ChainState) -> Result<f64, LikelihoodError> {
        if !self.use_likelihood {
            return Ok(0.0);
        }
        likelihood::joint_loglik(self.data, &state.link())
    }

    pub fn unit_loglik(&self, i: usize, log_death: f64, log_treatment: f64) -> Result<f64, LikelihoodError> {
        if !self.use_likelihood {
            return Ok(0.0);
        }
        likelihood::unit_loglik(self.data, i, log_death, log_treatment)
    }

    pub fn unit_outcome_loglik(&self, outcome: Outcome, i: usize, eta: f64) -> Result<f64, LikelihoodError> {
        if !self.use_likelihood {
            return Ok(0.0);
        }
        match outcome {
            Outcome::Death => likelihood::unit_death_loglik(self.data, i, eta),
            Outcome::Treatment => likelihood::unit_treatment_loglik(self.data, i, eta),
        }
    }

    /// `(ν - Xβ)ᵀ Q (ν - Xβ)`.
    pub fn nu_quadform(&self, state: &ChainState) -> f64 {
        let mean = self.data.linear_predictor(&state.beta);
        let r: Vec<f64> = state.nu.iter().zip(&mean).map(|(v, m)| v - m).collect();
        self.graph.residual_quadform(&r)
    }

    /// `(α^D - 1)ᵀ Q (α^D - 1)`; the constant center drops out of Q.
    pub fn alpha_quadform(&self, state: &ChainState) -> f64 {
        self.graph.residual_quadform(&state.alpha_death)
    }

    pub fn variance_quadform(&self, block: VarianceBlock, state: &ChainState) -> f64 {
        match block {
            VarianceBlock::Tau2 => self.nu_quadform(state),
            VarianceBlock::Tau2Death => self.alpha_quadform(state),
            VarianceBlock::Sigma2Death => state.eps_death.iter().map(|e| e * e).sum(),
            VarianceBlock::Sigma2Treatment => state.eps_treatment.iter().map(|e| e * e).sum(),
        }
    }

    /// Dimension contributed by the block's Gaussian kernel: the rank of the
    /// ICAR precision for the spatial blocks, n for the i.i.d. errors.
    pub fn variance_dim(&self, block: VarianceBlock) -> usize {
        match block {
            VarianceBlock::Tau2 | VarianceBlock::Tau2Death => self.graph.precision_rank(),
            VarianceBlock::Sigma2Death | VarianceBlock::Sigma2Treatment => self.n(),
        }
    }

    pub fn variance_prior(&self, block: VarianceBlock) -> VariancePrior {
        match block {
            VarianceBlock::Tau2 => self.priors.tau2,
            VarianceBlock::Tau2Death => self.priors.tau2_death,
            VarianceBlock::Sigma2Death => self.priors.sigma2_death,
            VarianceBlock::Sigma2Treatment => self.priors.sigma2_treatment,
        }
    }

    fn intercept_log_prior(&self, value: f64) -> f64 {
        match self.priors.intercept_variance {
            Some(v) => -0.5 * value * value / v,
            None => 0.0,
        }
    }
}

/// `π(ν | …)` up to a constant: likelihood plus ICAR kernel centered at `Xβ`.
pub fn logdensity_nu(state: &ChainState, model: &Model) -> Result<f64, ConditionalError> {
    Ok(model.loglik(state)? - model.nu_quadform(state) / (2.0 * state.tau2))
}

/// `π(α^D | …)` up to a constant: likelihood plus ICAR kernel centered at one.
pub fn logdensity_alpha(state: &ChainState, model: &Model) -> Result<f64, ConditionalError> {
    Ok(model.loglik(state)? - model.alpha_quadform(state) / (2.0 * state.tau2_death))
}

/// `π(ε_i^D, ε_i^T | …)` up to a constant.
pub fn logdensity_eps_pair(state: &ChainState, model: &Model, i: usize) -> Result<f64, ConditionalError> {
    if i >= model.n() {
        return Err(LikelihoodError::IndexOutOfRange { index: i, n: model.n() }.into());
    }
    let ed = state.eps_death[i];
    let et = state.eps_treatment[i];
    let ll = model.unit_loglik(i, state.log_lambda_death_at(i), state.log_lambda_treatment_at(i))?;
    Ok(ll - ed * ed / (2.0 * state.sigma2_death) - et * et / (2.0 * state.sigma2_treatment))
}

/// `π(β₀ | …)` for one outcome: that outcome's likelihood factor plus the
/// intercept prior (a constant under the flat prior).
pub fn logdensity_intercept(
    state: &ChainState,
    model: &Model,
    which: Outcome,
) -> Result<f64, ConditionalError> {
    let mut total = 0.0;
    let value = match which {
        Outcome::Death => state.beta0_death,
        Outcome::Treatment => state.beta0_treatment,
    };
    if model.use_likelihood {
        let link = state.link();
        total += match which {
            Outcome::Death => likelihood::death_loglik(model.data, &link)?,
            Outcome::Treatment => likelihood::treatment_loglik(model.data, &link)?,
        };
    }
    Ok(total + model.intercept_log_prior(value))
}

/// Mean and covariance of the Gaussian full conditional of β:
/// `Σ = (XᵀQX / τ² + I / v)⁻¹`, `m = Σ XᵀQν / τ²`.
pub fn beta_conditional(
    state: &ChainState,
    model: &Model,
) -> Result<(DVector<f64>, DMatrix<f64>), ConditionalError> {
    let (chol, rhs) = beta_system(state, model)?;
    let mean = chol.solve(&rhs);
    Ok((mean, chol.inverse()))
}

fn beta_system(
    state: &ChainState,
    model: &Model,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, DVector<f64>), ConditionalError> {
    let p = model.data.p();
    let precision = model.xtqx() / state.tau2
        + DMatrix::<f64>::identity(p, p) / model.priors.beta_variance;
    let nu = DMatrix::from_column_slice(model.n(), 1, &state.nu);
    let rhs = model.graph.cross_precision(model.data.covariates(), &nu) / state.tau2;
    let chol = precision.cholesky().ok_or(ConditionalError::NotPositiveDefinite)?;
    Ok((chol, rhs.column(0).into_owned()))
}

/// Exact draw of β from its Gaussian full conditional via the Cholesky factor
/// `L Lᵀ` of the conditional precision: `β = m + L⁻ᵀ z`.
pub fn gibbs_beta<R: Rng + ?Sized>(
    state: &ChainState,
    model: &Model,
    rng: &mut R,
) -> Result<Vec<f64>, ConditionalError> {
    let p = model.data.p();
    if p == 0 {
        return Ok(Vec::new());
    }
    let (chol, rhs) = beta_system(state, model)?;
    let mean = chol.solve(&rhs);
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or(ConditionalError::NotPositiveDefinite)?;
    Ok((mean + noise).iter().copied().collect())
}

/// Draws `V` with `1/V ~ Gamma(shape, rate)`.
pub fn draw_inverse_gamma<R: Rng + ?Sized>(
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> Result<f64, ConditionalError> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(ConditionalError::ImproperVariance { shape, rate });
    }
    let gamma = Gamma::new(shape, 1.0).map_err(|_| ConditionalError::ImproperVariance { shape, rate })?;
    let g: f64 = gamma.sample(rng);
    Ok(rate / g)
}

static WARNED_HEAVY_TAIL: AtomicBool = AtomicBool::new(false);

/// Conjugate variance draw for a zero-mean Gaussian kernel of dimension `dim`
/// with quadratic form `quadform`: inverse-gamma with
/// `shape = prior.shape + dim / 2` and `rate = prior.rate + quadform / 2`.
/// Under the uniform-sd prior this is shape `dim/2 - 1/2`, scale `quadform/2`.
pub fn gibbs_variance<R: Rng + ?Sized>(
    quadform: f64,
    dim: usize,
    prior: VariancePrior,
    rng: &mut R,
) -> Result<f64, ConditionalError> {
    if !(quadform.is_finite() && quadform >= 0.0) {
        return Err(ConditionalError::BadQuadform(quadform));
    }
    let shape = prior.shape + 0.5 * dim as f64;
    let rate = prior.rate + 0.5 * quadform;
    if shape <= 1.0 && !WARNED_HEAVY_TAIL.swap(true, Ordering::Relaxed) {
        log::warn!("inverse-gamma shape {shape} <= 1: conditional mean of the variance is undefined");
    }
    draw_inverse_gamma(shape, rate, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model_parts() -> (AdjacencyGraph, Dataset) {
        let g = AdjacencyGraph::lattice(2, 3).unwrap();
        let x = DMatrix::from_column_slice(6, 1, &[-1.2, 0.4, 0.9, -0.3, 1.1, -0.9]);
        let data = Dataset::new(
            vec![3, 0, 7, 2, 5, 1],
            vec![14, 9, 30, 10, 22, 6],
            vec![false, false, false, true, false, false],
            vec![1000; 6],
            x,
            vec!["x".into()],
            vec![2.0, 1.0, 5.5, 2.5, 4.0, 1.5],
            vec![15.0, 8.0, 25.0, 12.0, 20.0, 7.0],
        )
        .unwrap();
        (g, data)
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, p: usize) -> ChainState {
        let mut s = ChainState::neutral(n, p);
        for i in 0..n {
            s.nu[i] = rng.random_range(-0.5..0.5);
            s.alpha_death[i] = rng.random_range(0.5..1.5);
            s.eps_death[i] = rng.random_range(-0.3..0.3);
            s.eps_treatment[i] = rng.random_range(-0.3..0.3);
        }
        crate::state::recenter(&mut s.nu, 0.0);
        crate::state::recenter(&mut s.alpha_death, 1.0);
        s.beta = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        s.beta0_death = rng.random_range(-0.3..0.3);
        s.beta0_treatment = rng.random_range(-0.3..0.3);
        s.tau2 = rng.random_range(0.1..2.0);
        s.tau2_death = rng.random_range(0.1..2.0);
        s.sigma2_death = rng.random_range(0.05..1.0);
        s.sigma2_treatment = rng.random_range(0.05..1.0);
        s
    }

    /// Oracle log-likelihood of unit `i`, composed from the pmf functions directly.
    fn composed_unit(state: &ChainState, data: &Dataset, i: usize) -> f64 {
        let ld = state.beta0_death + state.alpha_death[i] * state.nu[i] + state.eps_death[i];
        let lt = state.beta0_treatment + state.nu[i] + state.eps_treatment[i];
        let md = data.offsets_death()[i] * ld.exp();
        let mt = data.offsets_treatment()[i] * lt.exp();
        let t = if data.censored()[i] {
            likelihood::censored_interval_logprob(data.treatments_lower()[i], 9, mt).unwrap()
        } else {
            likelihood::poisson_logpmf(data.treatments_lower()[i], mt).unwrap()
        };
        likelihood::poisson_logpmf(data.deaths()[i], md).unwrap() + t
    }

    fn composed_loglik(state: &ChainState, data: &Dataset) -> f64 {
        (0..data.n()).map(|i| composed_unit(state, data, i)).sum()
    }

    fn dense_qf(g: &AdjacencyGraph, r: &[f64]) -> f64 {
        let v = DVector::from_column_slice(r);
        (v.transpose() * g.dense_precision() * &v)[(0, 0)]
    }

    #[test]
    fn kernels_match_composition_oracle() {
        let (g, data) = small_model_parts();
        let model = Model::new(&g, &data, Priors::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = random_state(&mut rng, 6, 1);
            let ll = composed_loglik(&s, &data);
            let xb: Vec<f64> = (0..6).map(|i| data.covariates()[(i, 0)] * s.beta[0]).collect();
            let r: Vec<f64> = s.nu.iter().zip(&xb).map(|(a, b)| a - b).collect();
            let nu_oracle = ll - dense_qf(&g, &r) / (2.0 * s.tau2);
            assert!((logdensity_nu(&s, &model).unwrap() - nu_oracle).abs() < 1e-10);

            let a1: Vec<f64> = s.alpha_death.iter().map(|a| a - 1.0).collect();
            let alpha_oracle = ll - dense_qf(&g, &a1) / (2.0 * s.tau2_death);
            assert!((logdensity_alpha(&s, &model).unwrap() - alpha_oracle).abs() < 1e-10);

            for i in 0..6 {
                let oracle = composed_unit(&s, &data, i)
                    - s.eps_death[i].powi(2) / (2.0 * s.sigma2_death)
                    - s.eps_treatment[i].powi(2) / (2.0 * s.sigma2_treatment);
                assert!((logdensity_eps_pair(&s, &model, i).unwrap() - oracle).abs() < 1e-10);
            }

            let link = s.link();
            let d = likelihood::death_loglik(&data, &link).unwrap();
            let t = likelihood::treatment_loglik(&data, &link).unwrap();
            assert!((d + t - ll).abs() < 1e-10);
            assert!((logdensity_intercept(&s, &model, Outcome::Death).unwrap() - d).abs() < 1e-10);
            assert!((logdensity_intercept(&s, &model, Outcome::Treatment).unwrap() - t).abs() < 1e-10);
        }
    }

    #[test]
    fn prior_kernels_vanish_at_center() {
        let (g, data) = small_model_parts();
        let model = Model::new(&g, &data, Priors::default()).unwrap();
        let mut s = ChainState::neutral(6, 1);
        s.beta = vec![0.7];
        s.nu = data.linear_predictor(&s.beta);
        let ll = model.loglik(&s).unwrap();
        assert_eq!(logdensity_nu(&s, &model).unwrap(), ll);
        assert_eq!(logdensity_alpha(&s, &model).unwrap(), ll);
        let ll0 = model.unit_loglik(2, s.log_lambda_death_at(2), s.log_lambda_treatment_at(2)).unwrap();
        assert_eq!(logdensity_eps_pair(&s, &model, 2).unwrap(), ll0);
    }

    #[test]
    fn shifting_nu_or_alpha_leaves_prior_kernel_unchanged() {
        let (g, data) = small_model_parts();
        let model = Model::new(&g, &data, Priors::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_state(&mut rng, 6, 1);
        let mut shifted = s.clone();
        shifted.nu.iter_mut().for_each(|v| *v += 0.8);
        shifted.alpha_death.iter_mut().for_each(|v| *v -= 0.4);
        assert!((model.nu_quadform(&s) - model.nu_quadform(&shifted)).abs() < 1e-12);
        assert!((model.alpha_quadform(&s) - model.alpha_quadform(&shifted)).abs() < 1e-12);
        let dll = model.loglik(&shifted).unwrap() - model.loglik(&s).unwrap();
        let dnu = logdensity_nu(&shifted, &model).unwrap() - logdensity_nu(&s, &model).unwrap();
        assert!((dnu - dll).abs() < 1e-9);
    }

    #[test]
    fn intercept_shift_equals_likelihood_change() {
        let (g, data) = small_model_parts();
        let model = Model::new(&g, &data, Priors::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng, 6, 1);
        let mut moved = s.clone();
        moved.beta0_death += 0.25;
        for i in 0..6 {
            assert!((moved.log_lambda_death_at(i) - s.log_lambda_death_at(i) - 0.25).abs() < 1e-15);
        }
        let dd = logdensity_intercept(&moved, &model, Outcome::Death).unwrap()
            - logdensity_intercept(&s, &model, Outcome::Death).unwrap();
        let dl = model.loglik(&moved).unwrap() - model.loglik(&s).unwrap();
        assert!((dd - dl).abs() < 1e-10);
        // treatment factor ignores death parameters
        let mut other = s.clone();
        other.beta0_death = 3.0;
        other.eps_death = vec![0.9; 6];
        other.alpha_death = vec![2.0; 6];
        assert_eq!(
            logdensity_intercept(&other, &model, Outcome::Treatment).unwrap(),
            logdensity_intercept(&s, &model, Outcome::Treatment).unwrap()
        );
    }

    #[test]
    fn eps_kernel_flattens_with_variance() {
        let (g, data) = small_model_parts();
        let model = Model::new(&g, &data, Priors::default()).unwrap();
        let mut s = ChainState::neutral(6, 1);
        s.eps_death[1] = 0.4;
        s.eps_treatment[1] = -0.3;
        let mut last = f64::NEG_INFINITY;
        for v in [0.01, 0.1, 1.0, 10.0] {
            s.sigma2_death = v;
            s.sigma2_treatment = v;
            let val = logdensity_eps_pair(&s, &model, 1).unwrap();
            assert!(val > last);
            last = val;
        }
        assert!(logdensity_eps_pair(&s, &model, 6).is_err());
    }

    #[test]
    fn beta_conditional_matches_dense_oracle() {
        // path graph n=3, X = (-1, 0, 1)ᵀ, ν = (-1, 0, 1), τ² = 1.
        // XᵀQX = 2, XᵀQν = 2, so precision = 2 + 1/4, mean = 2 / 2.25.
        let g = AdjacencyGraph::path(3).unwrap();
        let x = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 1.0]);
        let data = Dataset::new(
            vec![1; 3], vec![1; 3], vec![false; 3], vec![10; 3], x.clone(), vec!["x".into()],
            vec![1.0; 3], vec![1.0; 3],
        )
        .unwrap();
        let model = Model::new(&g, &data, Priors::default()).unwrap();
        let mut s = ChainState::neutral(3, 1);
        s.nu = vec![-1.0, 0.0, 1.0];
        let (mean, cov) = beta_conditional(&s, &model).unwrap();
        let q = g.dense_precision();
        let xtqx = (x.transpose() * &q * &x)[(0, 0)];
        let xtqnu = (x.transpose() * &q * DVector::from_column_slice(&s.nu))[(0, 0)];
        let var = 1.0 / (xtqx + 0.25);
        assert!((cov[(0, 0)] - var).abs() < 1e-10);
        assert!((mean[0] - var * xtqnu).abs() < 1e-10);
        assert!((mean[0] - 2.0 / 2.25).abs() < 1e-10);
    }

    #[test]
    fn beta_prior_limit_and_zero_signal() {
        let (g, data) = small_model_parts();
        let model = Model::new(&g, &data, Priors::default()).unwrap();
        let mut s = ChainState::neutral(6, 1);
        s.tau2 = 1e12;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws: Vec<f64> = (0..100_000).map(|_| gibbs_beta(&s, &model, &mut rng).unwrap()[0]).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((v / 4.0 - 1.0).abs() < 0.05, "variance {v}");

        s.tau2 = 0.5;
        let (mean, _) = beta_conditional(&s, &model).unwrap();
        assert_eq!(mean[0], 0.0);
    }

    #[test]
    fn beta_invariant_to_constant_shift_of_nu() {
        let (g, data) = small_model_parts();
        let model = Model::new(&g, &data, Priors::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_state(&mut rng, 6, 1);
        let mut shifted = s.clone();
        shifted.nu.iter_mut().for_each(|v| *v += 2.5);
        let (m1, c1) = beta_conditional(&s, &model).unwrap();
        let (m2, c2) = beta_conditional(&shifted, &model).unwrap();
        assert!((m1[0] - m2[0]).abs() < 1e-12);
        assert_eq!(c1, c2);
    }

    #[test]
    fn variance_draws_scale_with_quadform() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let v1 = gibbs_variance(2.0, 5, VariancePrior::UNIFORM_SD, &mut a).unwrap();
            let v3 = gibbs_variance(6.0, 5, VariancePrior::UNIFORM_SD, &mut b).unwrap();
            assert!((v3 / v1 - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(gibbs_variance(-1.0, 5, VariancePrior::UNIFORM_SD, &mut rng).is_err());
        assert!(gibbs_variance(0.0, 5, VariancePrior::UNIFORM_SD, &mut rng).is_err());
        assert!(gibbs_variance(f64::NAN, 5, VariancePrior::UNIFORM_SD, &mut rng).is_err());
        assert!(gibbs_variance(1.0, 1, VariancePrior::UNIFORM_SD, &mut rng).is_err());
        // proper prior tolerates a zero quadratic form
        assert!(gibbs_variance(0.0, 5, VariancePrior::inverse_gamma(2.0, 1.0), &mut rng).unwrap() > 0.0);
    }

    #[test]
    fn model_rejects_size_mismatch() {
        let (_, data) = small_model_parts();
        let g = AdjacencyGraph::path(4).unwrap();
        assert!(matches!(
            Model::new(&g, &data, Priors::default()),
            Err(ConditionalError::SizeMismatch { .. })
        ));
    }
}
