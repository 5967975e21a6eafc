//! Browser bindings: lattice simulation, the censored-interval probability
//! curve, and a short in-browser fit.

use wasm_bindgen::prelude::*;

use spatial_factor::likelihood::censored_interval_logprob;
use spatial_factor::sampler::{run_chain, stream_rng, SamplerConfig};
use spatial_factor::simulate::{simulate_dataset, CensoringRule, GraphSpec, SimulationSpec, TrueParameters};
use spatial_factor::{data::CENSOR_WIDTH, Model};

fn spec(rows: usize, cols: usize, tau2: f64, seed: u64) -> SimulationSpec {
    SimulationSpec {
        graph: GraphSpec::Lattice { rows, cols },
        truth: TrueParameters { tau2, beta: vec![0.3], ..TrueParameters::default() },
        censoring: CensoringRule::Threshold { threshold: 10 },
        seed,
        ..SimulationSpec::default()
    }
}

/// Simulated lattice, row-major per unit.
#[wasm_bindgen]
pub struct LatticeMaps {
    nu: Vec<f64>,
    log_smr: Vec<f64>,
    log_treatment_ratio: Vec<f64>,
    censored: Vec<u8>,
}

#[wasm_bindgen]
impl LatticeMaps {
    /// True latent factor.
    pub fn nu(&self) -> Vec<f64> {
        self.nu.clone()
    }

    /// Observed log(deaths / expected).
    pub fn log_smr(&self) -> Vec<f64> {
        self.log_smr.clone()
    }

    /// Observed log(treatment lower bound / expected).
    pub fn log_treatment_ratio(&self) -> Vec<f64> {
        self.log_treatment_ratio.clone()
    }

    pub fn censored(&self) -> Vec<u8> {
        self.censored.clone()
    }
}

fn log_ratio(count: u64, expected: f64) -> f64 {
    // half-count keeps empty units finite on the map
    ((count as f64).max(0.5) / expected).ln()
}

#[wasm_bindgen]
pub fn simulate_lattice(rows: usize, cols: usize, tau2: f64, seed: u64) -> Result<LatticeMaps, JsError> {
    let mut rng = stream_rng(seed, 0);
    let sim = simulate_dataset(&spec(rows, cols, tau2, seed), &mut rng).map_err(|e| JsError::new(&e.to_string()))?;
    let d = &sim.data;
    Ok(LatticeMaps {
        nu: sim.truth.nu.clone(),
        log_smr: d.deaths().iter().zip(d.offsets_death()).map(|(&y, &e)| log_ratio(y, e)).collect(),
        log_treatment_ratio: d
            .treatments_lower()
            .iter()
            .zip(d.offsets_treatment())
            .map(|(&y, &e)| log_ratio(y, e))
            .collect(),
        censored: d.censored().iter().map(|&c| u8::from(c)).collect(),
    })
}

/// `P(lower <= Y <= lower + 9)` for Poisson means evenly spaced on `(0, max_mean]`.
#[wasm_bindgen]
pub fn censored_curve(lower: u32, max_mean: f64, points: usize) -> Result<Vec<f64>, JsError> {
    (1..=points)
        .map(|k| {
            let mean = max_mean * k as f64 / points as f64;
            censored_interval_logprob(u64::from(lower), CENSOR_WIDTH, mean)
                .map(f64::exp)
                .map_err(|e| JsError::new(&e.to_string()))
        })
        .collect()
}

#[wasm_bindgen]
pub struct FitResult {
    truth: Vec<f64>,
    posterior_mean: Vec<f64>,
    nu_acceptance: f64,
    beta_mean: f64,
}

#[wasm_bindgen]
impl FitResult {
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        self.posterior_mean.clone()
    }

    pub fn nu_acceptance(&self) -> f64 {
        self.nu_acceptance
    }

    /// Posterior mean of the covariate coefficient (truth 0.3).
    pub fn beta_mean(&self) -> f64 {
        self.beta_mean
    }
}

/// Simulates a lattice and runs one short chain on it.
#[wasm_bindgen]
pub fn quick_fit(rows: usize, cols: usize, iterations: usize, seed: u64) -> Result<FitResult, JsError> {
    let err = |e: &dyn std::fmt::Display| JsError::new(&e.to_string());
    let mut rng = stream_rng(seed, 0);
    let sim = simulate_dataset(&spec(rows, cols, 0.38, seed), &mut rng).map_err(|e| err(&e))?;
    let config = SamplerConfig {
        iterations,
        burn_in: iterations / 2,
        thin: 1,
        seed,
        ..SamplerConfig::default()
    };
    let model = Model::new(&sim.graph, &sim.data, config.priors()).map_err(|e| err(&e))?;
    let out = run_chain(&config, &model, 1).map_err(|e| err(&e))?;
    let n = sim.data.n();
    let draws = out.samples.len() as f64;
    let mut posterior_mean = vec![0.0; n];
    let mut beta_mean = 0.0;
    for s in &out.samples {
        for (m, v) in posterior_mean.iter_mut().zip(&s.nu) {
            *m += v / draws;
        }
        beta_mean += s.beta[0] / draws;
    }
    Ok(FitResult {
        truth: sim.truth.nu,
        posterior_mean,
        nu_acceptance: out.report.sampling.nu.rate(),
        beta_mean,
    })
}
