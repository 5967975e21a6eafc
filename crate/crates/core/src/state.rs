//! Parameter vector of the spatial factor model and its flat column layout.

use crate::data::Dataset;
use crate::likelihood::LinkState;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    /// Latent factor, mean zero.
    pub nu: Vec<f64>,
    /// Death loadings, mean one. Treatment loadings are fixed at one.
    pub alpha_death: Vec<f64>,
    pub eps_death: Vec<f64>,
    pub eps_treatment: Vec<f64>,
    pub beta0_death: f64,
    pub beta0_treatment: f64,
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub tau2_death: f64,
    pub sigma2_death: f64,
    pub sigma2_treatment: f64,
}

impl ChainState {
    /// Zero effects, unit loadings and unit variances.
    pub fn neutral(n: usize, p: usize) -> Self {
        Self {
            nu: vec![0.0; n],
            alpha_death: vec![1.0; n],
            eps_death: vec![0.0; n],
            eps_treatment: vec![0.0; n],
            beta0_death: 0.0,
            beta0_treatment: 0.0,
            beta: vec![0.0; p],
            tau2: 1.0,
            tau2_death: 1.0,
            sigma2_death: 1.0,
            sigma2_treatment: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.nu.len()
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    #[inline]
    pub fn log_lambda_death_at(&self, i: usize) -> f64 {
        self.beta0_death + self.alpha_death[i] * self.nu[i] + self.eps_death[i]
    }

    #[inline]
    pub fn log_lambda_treatment_at(&self, i: usize) -> f64 {
        self.beta0_treatment + self.nu[i] + self.eps_treatment[i]
    }

    /// Log relative risks on the canonical link.
    pub fn link(&self) -> LinkState {
        let n = self.n();
        LinkState {
            log_lambda_death: (0..n).map(|i| self.log_lambda_death_at(i)).collect(),
            log_lambda_treatment: (0..n).map(|i| self.log_lambda_treatment_at(i)).collect(),
        }
    }

    pub fn nu_mean(&self) -> f64 {
        mean(&self.nu)
    }

    pub fn alpha_mean(&self) -> f64 {
        mean(&self.alpha_death)
    }

    pub fn variances(&self) -> [f64; 4] {
        [self.tau2, self.tau2_death, self.sigma2_death, self.sigma2_treatment]
    }

    /// Values in the order of [`ParameterLayout::names`].
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(6 + self.p() + 4 * self.n());
        row.push(self.beta0_death);
        row.push(self.beta0_treatment);
        row.extend_from_slice(&self.beta);
        row.extend_from_slice(&self.variances());
        row.extend_from_slice(&self.nu);
        row.extend_from_slice(&self.alpha_death);
        row.extend_from_slice(&self.eps_death);
        row.extend_from_slice(&self.eps_treatment);
        row
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Subtracts the sample mean and adds `target`.
pub(crate) fn recenter(xs: &mut [f64], target: f64) {
    let m = mean(xs);
    for x in xs.iter_mut() {
        *x = *x - m + target;
    }
}

/// Fixed column order of chain output: `beta0_death, beta0_treatment,
/// beta[<name>]..., tau2, tau2_death, sigma2_death, sigma2_treatment,
/// nu[i]..., alpha_death[i]..., eps_death[i]..., eps_treatment[i]...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    pub n: usize,
    pub covariate_names: Vec<String>,
}

impl ParameterLayout {
    pub fn new(n: usize, covariate_names: Vec<String>) -> Self {
        Self { n, covariate_names }
    }

    pub fn for_dataset(data: &Dataset) -> Self {
        Self::new(data.n(), data.covariate_names().to_vec())
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn len(&self) -> usize {
        6 + self.p() + 4 * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["beta0_death".to_string(), "beta0_treatment".to_string()];
        names.extend(self.covariate_names.iter().map(|c| format!("beta[{c}]")));
        names.extend(
            ["tau2", "tau2_death", "sigma2_death", "sigma2_treatment"]
                .iter()
                .map(|s| s.to_string()),
        );
        for block in ["nu", "alpha_death", "eps_death", "eps_treatment"] {
            names.extend((0..self.n).map(|i| format!("{block}[{i}]")));
        }
        names
    }

    /// Rebuilds a state from a row produced by [`ChainState::to_row`].
    pub fn state_from_row(&self, row: &[f64]) -> Option<ChainState> {
        if row.len() != self.len() {
            return None;
        }
        let (n, p) = (self.n, self.p());
        let mut at = 2 + p;
        let take = |at: &mut usize, len: usize| {
            let out = row[*at..*at + len].to_vec();
            *at += len;
            out
        };
        let v = take(&mut at, 4);
        Some(ChainState {
            beta0_death: row[0],
            beta0_treatment: row[1],
            beta: row[2..2 + p].to_vec(),
            tau2: v[0],
            tau2_death: v[1],
            sigma2_death: v[2],
            sigma2_treatment: v[3],
            nu: take(&mut at, n),
            alpha_death: take(&mut at, n),
            eps_death: take(&mut at, n),
            eps_treatment: take(&mut at, n),
        })
    }

    /// Recovers the layout from chain column names (without the iteration column).
    pub fn from_names(names: &[String]) -> Option<Self> {
        let covariates: Vec<String> = names
            .iter()
            .filter_map(|s| s.strip_prefix("beta[")?.strip_suffix(']').map(str::to_string))
            .collect();
        let n = names.iter().filter(|s| s.starts_with("nu[")).count();
        let layout = Self::new(n, covariates);
        (layout.names() == names).then_some(layout)
    }
}
