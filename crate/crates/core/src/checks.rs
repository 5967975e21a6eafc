//! Correctness harnesses: the Geweke joint-distribution test and
//! posterior-recovery studies on simulated data.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditionals::{ConditionalError, Model, Priors, VariancePrior};
use crate::data::{standardize_covariates, DataError, Dataset};
use crate::diagnostics::{effective_sample_size, summarize, ChainTable, DiagnosticsError};
use crate::graph::{AdjacencyGraph, GraphError};
use crate::sampler::{run_chain, stream_rng, Kernel, SamplerConfig, SamplerError, UpdatePlan};
use crate::simulate::{
    draw_counts, draw_prior_state, simulate_dataset, CensoringRule, IcarSampler, SimulationError,
    SimulationSpec,
};
use crate::state::{ChainState, ParameterLayout};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Conditional(#[from] ConditionalError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("invalid check config: {0}")]
    Config(String),
}

/// Geweke test setup. Every prior must be proper, so the defaults replace the
/// flat and uniform-sd priors with inverse-gamma and normal ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GewekeConfig {
    pub rows: usize,
    pub cols: usize,
    /// Raw covariate values, one column, standardized before use. Empty for p = 0.
    pub covariate: Vec<f64>,
    pub censored_units: Vec<usize>,
    pub offsets_death: Vec<f64>,
    pub offsets_treatment: Vec<f64>,
    pub priors: Priors,
    /// Independent draws in the forward branch.
    pub forward_draws: usize,
    /// Recorded states in the successive-conditional branch.
    pub successive_draws: usize,
    /// Iterations between recorded successive states.
    pub thin: usize,
    /// Adaptive pilot iterations, discarded; the step sizes are then frozen.
    pub pilot: usize,
    /// Kernel sweeps between data redraws. Zero replays the forward simulator.
    pub kernel_steps: usize,
    pub seed: u64,
    pub z_threshold: f64,
    /// Minimum effective sample size of every successive-branch statistic.
    pub min_effective: f64,
    /// Added to every inverse-gamma shape in the kernel. Non-zero only for mutation runs.
    pub variance_shape_bias: f64,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        let ig = VariancePrior::inverse_gamma(6.0, 2.5);
        Self {
            rows: 2,
            cols: 3,
            covariate: vec![-1.2, 0.4, 0.9, -0.3, 1.1, -0.9],
            censored_units: vec![3],
            offsets_death: vec![3.0, 2.0, 4.5, 2.5, 3.5, 1.5],
            offsets_treatment: vec![12.0, 8.0, 15.0, 24.0, 10.0, 6.0],
            priors: Priors {
                beta_variance: 0.5,
                intercept_variance: Some(0.5),
                tau2: ig,
                tau2_death: ig,
                sigma2_death: ig,
                sigma2_treatment: ig,
            },
            forward_draws: 200_000,
            successive_draws: 1_200_000,
            thin: 2,
            pilot: 5_000,
            kernel_steps: 2,
            seed: 20_240_601,
            z_threshold: 4.0,
            min_effective: 5_000.0,
            variance_shape_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeStatistic {
    pub name: String,
    pub forward_mean: f64,
    pub successive_mean: f64,
    pub successive_ess: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeReport {
    pub statistics: Vec<GewekeStatistic>,
    pub max_abs_z: f64,
    pub min_ess: f64,
    /// Set when some statistic has fewer effective draws than required.
    pub too_short: bool,
    pub passed: bool,
}

impl GewekeReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("statistic,forward_mean,successive_mean,successive_ess,z\n");
        for s in &self.statistics {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.name, s.forward_mean, s.successive_mean, s.successive_ess, s.z
            ));
        }
        out
    }
}

struct GewekeSetup {
    graph: AdjacencyGraph,
    data: Dataset,
    icar: IcarSampler,
    rule: CensoringRule,
    names: Vec<String>,
}

impl GewekeConfig {
    fn validate(&self) -> Result<(), CheckError> {
        let n = self.rows * self.cols;
        let fail = |m: String| Err(CheckError::Config(m));
        if self.offsets_death.len() != n || self.offsets_treatment.len() != n {
            return fail(format!("offsets must have {n} entries"));
        }
        if !self.covariate.is_empty() && self.covariate.len() != n {
            return fail(format!("covariate must have {n} entries"));
        }
        if self.forward_draws < 2 || self.successive_draws < 2 || self.thin == 0 {
            return fail("need at least two draws per branch and thin >= 1".into());
        }
        let p = &self.priors;
        if p.intercept_variance.is_none()
            || ![p.tau2, p.tau2_death, p.sigma2_death, p.sigma2_treatment].iter().all(|v| v.is_proper())
        {
            return fail("every prior must be proper".into());
        }
        Ok(())
    }

    fn setup(&self) -> Result<GewekeSetup, CheckError> {
        self.validate()?;
        let n = self.rows * self.cols;
        let graph = AdjacencyGraph::lattice(self.rows, self.cols)?;
        let (x, names) = if self.covariate.is_empty() {
            (DMatrix::zeros(n, 0), vec![])
        } else {
            let names = vec!["x".to_string()];
            let raw = DMatrix::from_column_slice(n, 1, &self.covariate);
            (standardize_covariates(&raw, &names)?.0, names)
        };
        let data = Dataset::new(
            vec![0; n],
            vec![0; n],
            vec![false; n],
            vec![1_000; n],
            x,
            names,
            self.offsets_death.clone(),
            self.offsets_treatment.clone(),
        )?;
        let icar = IcarSampler::new(&graph)?;
        let rule = CensoringRule::Explicit { units: self.censored_units.clone() };
        let layout = ParameterLayout::for_dataset(&data);
        let mut names = Vec::new();
        for name in layout.names() {
            names.push(format!("E[{name}]"));
            names.push(format!("E[{name}^2]"));
        }
        names.push("nu_quadform".into());
        names.push("loglik".into());
        Ok(GewekeSetup { graph, data, icar, rule, names })
    }
}

impl GewekeSetup {
    fn redraw_data<R: Rng + ?Sized>(&mut self, state: &ChainState, rng: &mut R) -> Result<(), CheckError> {
        let (deaths, treatments) =
            draw_counts(state, self.data.offsets_death(), self.data.offsets_treatment(), rng)?;
        let (lower, flags) = self.rule.apply(&treatments);
        self.data.set_counts(deaths, lower, flags);
        Ok(())
    }

    fn forward<R: Rng + ?Sized>(&mut self, priors: &Priors, rng: &mut R) -> Result<ChainState, CheckError> {
        let state = draw_prior_state(priors, &self.icar, self.data.covariates(), rng)?;
        self.redraw_data(&state, rng)?;
        Ok(state)
    }

    /// Battery: every parameter and its square, the ν quadratic form and
    /// the log-likelihood of the current data.
    fn statistics(&self, model: &Model, state: &ChainState, out: &mut [Vec<f64>]) -> Result<(), CheckError> {
        let mut k = 0;
        for v in state.to_row() {
            out[k].push(v);
            out[k + 1].push(v * v);
            k += 2;
        }
        out[k].push(model.nu_quadform(state));
        out[k + 1].push(model.loglik(state).map_err(ConditionalError::from)?);
        Ok(())
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Compares the forward (prior then data) simulator with the
/// successive-conditional simulator that alternates kernel sweeps and data
/// redraws. z-scores use the forward variance over its draw count and the
/// successive variance over its effective sample size.
pub fn geweke_test(config: &GewekeConfig) -> Result<GewekeReport, CheckError> {
    let mut setup = config.setup()?;
    let k = setup.names.len();
    let priors = config.priors.clone();
    let graph = setup.graph.clone();

    let mut forward_stats = vec![Vec::with_capacity(config.forward_draws); k];
    let mut rng = stream_rng(config.seed, 0);
    for _ in 0..config.forward_draws {
        let state = setup.forward(&priors, &mut rng)?;
        let model = Model::new(&graph, &setup.data, priors.clone())?;
        setup.statistics(&model, &state, &mut forward_stats)?;
    }

    let mut succ_stats = vec![Vec::with_capacity(config.successive_draws); k];
    if config.kernel_steps == 0 {
        // identity kernel: each redraw of (θ, y) is the forward simulator itself
        let mut rng = stream_rng(config.seed, 0);
        for _ in 0..config.successive_draws {
            let state = setup.forward(&priors, &mut rng)?;
            let model = Model::new(&graph, &setup.data, priors.clone())?;
            setup.statistics(&model, &state, &mut succ_stats)?;
        }
    } else {
        let mut rng = stream_rng(config.seed, 1);
        let sampler = SamplerConfig {
            beta_prior_variance: priors.beta_variance,
            ..SamplerConfig::default()
        };
        let plan = UpdatePlan {
            variance_shape_bias: config.variance_shape_bias,
            ..UpdatePlan::default()
        };
        let mut kernel = Kernel::new(setup.data.n(), &sampler, plan);
        let mut state = setup.forward(&priors, &mut rng)?;
        let total = config.pilot + config.successive_draws * config.thin;
        for t in 0..total {
            let adapting = t < config.pilot;
            {
                let model = Model::new(&graph, &setup.data, priors.clone())?;
                for _ in 0..config.kernel_steps {
                    kernel.sweep(&mut state, &model, &mut rng, adapting)?;
                }
            }
            setup.redraw_data(&state, &mut rng)?;
            if t >= config.pilot && (t - config.pilot).is_multiple_of(config.thin) {
                let model = Model::new(&graph, &setup.data, priors.clone())?;
                setup.statistics(&model, &state, &mut succ_stats)?;
            }
        }
    }

    let mut statistics = Vec::with_capacity(k);
    for (j, name) in setup.names.iter().enumerate() {
        let (mf, vf) = mean_var(&forward_stats[j]);
        let (ms, vs) = mean_var(&succ_stats[j]);
        let ess = effective_sample_size(&succ_stats[j]).unwrap_or(0.0);
        let denom = (vf / forward_stats[j].len() as f64 + if ess > 0.0 { vs / ess } else { 0.0 }).sqrt();
        let diff = mf - ms;
        let z = if diff == 0.0 { 0.0 } else { diff / denom };
        statistics.push(GewekeStatistic {
            name: name.clone(),
            forward_mean: mf,
            successive_mean: ms,
            successive_ess: ess,
            z,
        });
    }
    let max_abs_z = statistics.iter().map(|s| s.z.abs()).fold(0.0, f64::max);
    let min_ess = statistics.iter().map(|s| s.successive_ess).fold(f64::INFINITY, f64::min);
    let too_short = min_ess < config.min_effective;
    if too_short {
        log::warn!("Geweke successive branch too short: min ESS {min_ess:.0} < {}", config.min_effective);
    }
    Ok(GewekeReport {
        passed: !too_short && max_abs_z < config.z_threshold,
        statistics,
        max_abs_z,
        min_ess,
        too_short,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub spec: SimulationSpec,
    pub sampler: SamplerConfig,
    pub replicates: usize,
    pub level: f64,
    pub threads: usize,
    /// Minimum fraction of replicates whose interval covers each β component.
    pub min_coverage: f64,
    /// Minimum fraction of replicates recovering the sign of each β component.
    pub min_sign_rate: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            spec: SimulationSpec::default(),
            sampler: SamplerConfig {
                iterations: 12_000,
                burn_in: 4_000,
                thin: 4,
                ..SamplerConfig::default()
            },
            replicates: 20,
            level: 0.95,
            threads: 4,
            min_coverage: 0.75,
            min_sign_rate: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub replicate: usize,
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    pub sign_recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub parameter: String,
    pub truth: f64,
    pub replicates: usize,
    pub covered: usize,
    pub sign_recovered: usize,
    pub mean_bias: f64,
}

impl CoverageSummary {
    pub fn coverage(&self) -> f64 {
        self.covered as f64 / self.replicates as f64
    }

    pub fn sign_rate(&self) -> f64 {
        self.sign_recovered as f64 / self.replicates as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
    pub table: Vec<CoverageSummary>,
    pub passed: bool,
}

impl RecoveryReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,truth,replicates,coverage,sign_rate,mean_bias\n");
        for s in &self.table {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.parameter,
                s.truth,
                s.replicates,
                s.coverage(),
                s.sign_rate(),
                s.mean_bias
            ));
        }
        out
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("replicate,parameter,truth,mean,lower,upper,covered,sign_recovered\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.replicate, r.parameter, r.truth, r.mean, r.lower, r.upper, r.covered, r.sign_recovered
            ));
        }
        out
    }
}

fn tracked(truth: &ChainState, names: &[String]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = names
        .iter()
        .zip(&truth.beta)
        .map(|(n, &b)| (format!("beta[{n}]"), b))
        .collect();
    out.extend([
        ("beta0_death".to_string(), truth.beta0_death),
        ("beta0_treatment".to_string(), truth.beta0_treatment),
        ("tau2".to_string(), truth.tau2),
        ("tau2_death".to_string(), truth.tau2_death),
        ("sigma2_death".to_string(), truth.sigma2_death),
        ("sigma2_treatment".to_string(), truth.sigma2_treatment),
    ]);
    out
}

/// Simulates and fits one replicate. Data use stream `1000 + r` of the spec
/// seed; the chain uses stream `2000 + r` of the sampler seed.
pub fn recovery_replicate(config: &RecoveryConfig, replicate: usize) -> Result<Vec<RecoveryRow>, CheckError> {
    let mut rng = stream_rng(config.spec.seed, 1000 + replicate as u64);
    let sim = simulate_dataset(&config.spec, &mut rng)?;
    let model = Model::new(&sim.graph, &sim.data, config.sampler.priors())?;
    let out = run_chain(&config.sampler, &model, 2000 + replicate as u64)?;
    let summary = summarize(&[ChainTable::from_output(&out)], config.level)?;
    Ok(tracked(&sim.truth, sim.data.covariate_names())
        .into_iter()
        .map(|(name, truth)| {
            let p = summary.get(&name).expect("tracked parameter is in the layout");
            RecoveryRow {
                replicate,
                truth,
                mean: p.mean,
                lower: p.lower,
                upper: p.upper,
                covered: p.lower <= truth && truth <= p.upper,
                sign_recovered: p.mean.signum() == truth.signum(),
                parameter: name,
            }
        })
        .collect())
}

/// Runs every replicate on a pool of `threads` workers and tabulates
/// coverage, sign recovery and mean bias per parameter. Pass/fail applies
/// to the β components only.
pub fn recovery_study(config: &RecoveryConfig) -> Result<RecoveryReport, CheckError> {
    use rayon::prelude::*;
    if config.replicates == 0 {
        return Err(CheckError::Config("replicates must be positive".into()));
    }
    config.sampler.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| CheckError::Config(e.to_string()))?;
    let per_rep: Vec<Vec<RecoveryRow>> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| recovery_replicate(config, r))
            .collect::<Result<_, _>>()
    })?;
    let rows: Vec<RecoveryRow> = per_rep.into_iter().flatten().collect();

    let mut table: Vec<CoverageSummary> = Vec::new();
    for row in &rows {
        let entry = match table.iter_mut().find(|s| s.parameter == row.parameter) {
            Some(e) => e,
            None => {
                table.push(CoverageSummary {
                    parameter: row.parameter.clone(),
                    truth: row.truth,
                    replicates: 0,
                    covered: 0,
                    sign_recovered: 0,
                    mean_bias: 0.0,
                });
                table.last_mut().expect("just pushed")
            }
        };
        entry.replicates += 1;
        entry.covered += usize::from(row.covered);
        entry.sign_recovered += usize::from(row.sign_recovered);
        entry.mean_bias += row.mean - row.truth;
    }
    for s in &mut table {
        s.mean_bias /= s.replicates as f64;
    }
    let passed = table
        .iter()
        .filter(|s| s.parameter.starts_with("beta["))
        .all(|s| s.coverage() >= config.min_coverage && s.sign_rate() >= config.min_sign_rate);
    Ok(RecoveryReport { rows, table, passed })
}
