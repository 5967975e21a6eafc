//! Poisson and interval-censored Poisson log-likelihoods on the log link.

use std::sync::OnceLock;

use thiserror::Error;

use crate::data::{Dataset, CENSOR_WIDTH};

/// Poisson means below this are treated as underflow, not as zero.
pub const MIN_MEAN: f64 = 1e-290;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("Poisson mean must be positive and finite, got {0}")]
    BadMean(f64),
    #[error("Poisson mean {0:e} underflows (minimum {MIN_MEAN:e})")]
    Underflow(f64),
    #[error("unit index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("link has {got} units, dataset has {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Relative risks on the log scale for both outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub log_lambda_death: Vec<f64>,
    pub log_lambda_treatment: Vec<f64>,
}

impl LinkState {
    pub fn n(&self) -> usize {
        self.log_lambda_death.len()
    }
}

const EXACT_FACTORIALS: usize = 21;

fn small_log_factorials() -> &'static [f64; EXACT_FACTORIALS] {
    static TABLE: OnceLock<[f64; EXACT_FACTORIALS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0.0; EXACT_FACTORIALS];
        let mut fact: u64 = 1;
        for (k, slot) in table.iter_mut().enumerate().skip(1) {
            fact *= k as u64;
            *slot = (fact as f64).ln();
        }
        table
    })
}

/// `ln(k!)`. Exact integer factorials up to 20!, Stirling series above
/// (truncation error below 2e-15 for k > 20).
pub fn ln_factorial(k: u64) -> f64 {
    if (k as usize) < EXACT_FACTORIALS {
        return small_log_factorials()[k as usize];
    }
    const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;
    let x = k as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0))));
    (x - 0.5) * x.ln() - x + HALF_LN_TWO_PI + series
}

fn check_mean(mean: f64) -> Result<(), LikelihoodError> {
    if !(mean.is_finite() && mean > 0.0) {
        return Err(LikelihoodError::BadMean(mean));
    }
    if mean < MIN_MEAN {
        return Err(LikelihoodError::Underflow(mean));
    }
    Ok(())
}

/// `y ln(mean) - mean - ln(y!)`.
pub fn poisson_logpmf(y: u64, mean: f64) -> Result<f64, LikelihoodError> {
    check_mean(mean)?;
    let yf = y as f64;
    let term = if y == 0 { 0.0 } else { yf * mean.ln() };
    Ok(term - mean - ln_factorial(y))
}

/// `ln P(lower <= Y <= lower + width)` for `Y ~ Poisson(mean)`, as a
/// log-sum-exp over the pmf terms of the interval.
pub fn censored_interval_logprob(lower: u64, width: u64, mean: f64) -> Result<f64, LikelihoodError> {
    check_mean(mean)?;
    let ln_mean = mean.ln();
    let term = |k: u64| k as f64 * ln_mean - mean - ln_factorial(k);
    let upper = lower.saturating_add(width);
    let max = (lower..=upper).map(term).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = (lower..=upper).map(|k| (term(k) - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Death log-likelihood contribution of unit `i` at log relative risk `log_lambda`.
pub fn unit_death_loglik(data: &Dataset, i: usize, log_lambda: f64) -> Result<f64, LikelihoodError> {
    poisson_logpmf(data.deaths()[i], data.offsets_death()[i] * log_lambda.exp())
}

/// Treatment contribution of unit `i`; censored units use the width-9 interval.
pub fn unit_treatment_loglik(
    data: &Dataset,
    i: usize,
    log_lambda: f64,
) -> Result<f64, LikelihoodError> {
    let mean = data.offsets_treatment()[i] * log_lambda.exp();
    let y = data.treatments_lower()[i];
    if data.censored()[i] {
        censored_interval_logprob(y, CENSOR_WIDTH, mean)
    } else {
        poisson_logpmf(y, mean)
    }
}

pub fn unit_loglik(
    data: &Dataset,
    i: usize,
    log_lambda_death: f64,
    log_lambda_treatment: f64,
) -> Result<f64, LikelihoodError> {
    Ok(unit_death_loglik(data, i, log_lambda_death)?
        + unit_treatment_loglik(data, i, log_lambda_treatment)?)
}

fn check_link(data: &Dataset, link: &LinkState) -> Result<(), LikelihoodError> {
    for got in [link.log_lambda_death.len(), link.log_lambda_treatment.len()] {
        if got != data.n() {
            return Err(LikelihoodError::LengthMismatch {
                expected: data.n(),
                got,
            });
        }
    }
    Ok(())
}

pub fn death_loglik(data: &Dataset, link: &LinkState) -> Result<f64, LikelihoodError> {
    check_link(data, link)?;
    let mut total = 0.0;
    for (i, &eta) in link.log_lambda_death.iter().enumerate() {
        total += unit_death_loglik(data, i, eta)?;
    }
    Ok(total)
}

pub fn treatment_loglik(data: &Dataset, link: &LinkState) -> Result<f64, LikelihoodError> {
    check_link(data, link)?;
    let mut total = 0.0;
    for (i, &eta) in link.log_lambda_treatment.iter().enumerate() {
        total += unit_treatment_loglik(data, i, eta)?;
    }
    Ok(total)
}

/// Joint log-likelihood of both outcomes, summed over units in ascending order.
pub fn joint_loglik(data: &Dataset, link: &LinkState) -> Result<f64, LikelihoodError> {
    check_link(data, link)?;
    let mut total = 0.0;
    for i in 0..data.n() {
        total += unit_loglik(
            data,
            i,
            link.log_lambda_death[i],
            link.log_lambda_treatment[i],
        )?;
    }
    Ok(total)
}

/// Change in [`joint_loglik`] when only unit `i`'s link values move to `proposed`.
pub fn unit_loglik_delta(
    data: &Dataset,
    link: &LinkState,
    i: usize,
    proposed: (f64, f64),
) -> Result<f64, LikelihoodError> {
    check_link(data, link)?;
    if i >= data.n() {
        return Err(LikelihoodError::IndexOutOfRange { index: i, n: data.n() });
    }
    let current = unit_loglik(
        data,
        i,
        link.log_lambda_death[i],
        link.log_lambda_treatment[i],
    )?;
    Ok(unit_loglik(data, i, proposed.0, proposed.1)? - current)
}
