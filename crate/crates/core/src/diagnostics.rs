//! Posterior summaries, convergence diagnostics and per-unit derived series.

use std::io::Read;

use thiserror::Error;

use crate::sampler::ChainOutput;
use crate::state::{ChainState, ParameterLayout};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("chain has no draws")]
    Empty,
    #[error("need at least {min} draws per chain, got {got}")]
    TooFewDraws { min: usize, got: usize },
    #[error("credible level must lie in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("chains disagree on columns")]
    ColumnMismatch,
    #[error("chain file: {0}")]
    Parse(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub const MIN_DRAWS: usize = 10;

/// `α / (α + 1) - 1/2`: the death loading's share of the summed loadings
/// (treatment loading is one), shifted so equal influence maps to zero.
/// `None` at the singularity `α = -1`.
pub fn rescale_loading(alpha: f64) -> Option<f64> {
    let denom = alpha + 1.0;
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    Some(alpha / denom - 0.5)
}

pub fn rescale_loadings(alpha_death: &[f64]) -> Vec<Option<f64>> {
    alpha_death.iter().map(|&a| rescale_loading(a)).collect()
}

/// Linear interpolation between order statistics at `h = (N - 1) p`
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Effective sample size from Geyer's initial positive sequence: the
/// autocorrelation sum is truncated at the first non-positive sum of
/// adjacent lag pairs. `None` for a constant chain. Never exceeds `N`.
pub fn effective_sample_size(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let gamma0 = autocov(0);
    if !(gamma0 > 0.0) || gamma0 <= 1e-300 {
        return None;
    }
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / gamma0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    let ess = n as f64 / tau.max(1e-12);
    Some(ess.min(n as f64))
}

/// Split-R̂: each chain is halved and the classic between/within variance
/// ratio is formed over the halves. `None` with fewer than two chains or
/// zero within-chain variance.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let len = chains.iter().map(|c| c.len()).min()?;
    let half = len / 2;
    if half < 2 {
        return None;
    }
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        halves.push(&c[..half]);
        halves.push(&c[len - half..len]);
    }
    let m = halves.len() as f64;
    let nf = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let between = nf * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let within = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if !(within > 0.0) {
        return None;
    }
    let var_plus = (nf - 1.0) / nf * within + between / nf;
    Some((var_plus / within).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// `None` when the draws are constant.
    pub ess: Option<f64>,
    /// `None` with a single chain.
    pub rhat: Option<f64>,
}

/// Summary of pooled draws from one or more chains of one quantity.
pub fn summarize_series(name: &str, chains: &[&[f64]], level: f64) -> ParameterSummary {
    let pooled: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let sorted = sorted_copy(&pooled);
    let tail = (1.0 - level) / 2.0;
    let ess = chains
        .iter()
        .map(|c| effective_sample_size(c))
        .try_fold(0.0, |acc, e| e.map(|v| acc + v))
        .map(|e| e.min(pooled.len() as f64));
    ParameterSummary {
        name: name.to_string(),
        mean: pooled.iter().sum::<f64>() / pooled.len() as f64,
        lower: quantile_sorted(&sorted, tail),
        upper: quantile_sorted(&sorted, 1.0 - tail),
        ess,
        rhat: split_rhat(chains),
    }
}

/// Parsed chain records: an iteration column plus named parameter columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTable {
    pub names: Vec<String>,
    pub iterations: Vec<usize>,
    /// Column-major draws: `columns[k][t]`.
    pub columns: Vec<Vec<f64>>,
}

impl ChainTable {
    pub fn from_output(out: &ChainOutput) -> Self {
        let names = out.layout.names();
        let mut columns = vec![Vec::with_capacity(out.samples.len()); names.len()];
        for s in &out.samples {
            for (col, v) in columns.iter_mut().zip(s.to_row()) {
                col.push(v);
            }
        }
        Self {
            names,
            iterations: out.iterations.clone(),
            columns,
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DiagnosticsError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("iteration") {
            return Err(DiagnosticsError::Parse("first column must be `iteration`".into()));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut columns = vec![Vec::new(); names.len()];
        let mut iterations = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| DiagnosticsError::Parse(format!("row {}: {what}", row + 1));
            iterations.push(rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("iteration"))?);
            for (k, col) in columns.iter_mut().enumerate() {
                let v: f64 = rec
                    .get(k + 1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(&names[k]))?;
                col.push(v);
            }
        }
        Ok(Self { names, iterations, columns })
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    /// States in saved order, when the columns follow [`ParameterLayout`].
    pub fn states(&self) -> Option<Vec<ChainState>> {
        let layout = ParameterLayout::from_names(&self.names)?;
        (0..self.len())
            .map(|t| {
                let row: Vec<f64> = self.columns.iter().map(|c| c[t]).collect();
                layout.state_from_row(&row)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub level: f64,
    pub parameters: Vec<ParameterSummary>,
}

fn check_chains(chains: &[ChainTable], level: f64) -> Result<(), DiagnosticsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(DiagnosticsError::BadLevel(level));
    }
    let first = chains.first().ok_or(DiagnosticsError::Empty)?;
    for c in chains {
        if c.is_empty() {
            return Err(DiagnosticsError::Empty);
        }
        if c.len() < MIN_DRAWS {
            return Err(DiagnosticsError::TooFewDraws { min: MIN_DRAWS, got: c.len() });
        }
        if c.names != first.names {
            return Err(DiagnosticsError::ColumnMismatch);
        }
    }
    Ok(())
}

/// Per-parameter mean, equal-tailed interval at `level`, ESS and split-R̂.
pub fn summarize(chains: &[ChainTable], level: f64) -> Result<PosteriorSummary, DiagnosticsError> {
    check_chains(chains, level)?;
    let parameters = chains[0]
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let series: Vec<&[f64]> = chains.iter().map(|c| c.columns[k].as_slice()).collect();
            summarize_series(name, &series, level)
        })
        .collect();
    Ok(PosteriorSummary { level, parameters })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl PosteriorSummary {
    /// `name,mean,q025,q975,ess,rhat`; the interval columns hold the
    /// bounds at the summary's level. Unavailable values are `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,mean,q025,q975,ess,rhat\n");
        for p in &self.parameters {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.name,
                p.mean,
                p.lower,
                p.upper,
                fmt_opt(p.ess),
                fmt_opt(p.rhat)
            ));
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Per-draw derived series for each unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSeries {
    /// `log_smr[i][t]` = log λ_i^D at draw t.
    pub log_smr: Vec<Vec<f64>>,
    /// Log standardized treatment ratio, log λ_i^T.
    pub log_treatment_ratio: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    /// Rescaled death loading; `None` at the α = -1 singularity.
    pub rescaled_loading: Vec<Vec<Option<f64>>>,
}

/// Rebuilds log λ^D and log λ^T from each saved state on the log link.
pub fn per_unit_rates(states: &[ChainState], n: usize) -> UnitSeries {
    let mut series = UnitSeries {
        log_smr: vec![Vec::with_capacity(states.len()); n],
        log_treatment_ratio: vec![Vec::with_capacity(states.len()); n],
        nu: vec![Vec::with_capacity(states.len()); n],
        rescaled_loading: vec![Vec::with_capacity(states.len()); n],
    };
    for s in states {
        for i in 0..n {
            series.log_smr[i].push(s.log_lambda_death_at(i));
            series.log_treatment_ratio[i].push(s.log_lambda_treatment_at(i));
            series.nu[i].push(s.nu[i]);
            series.rescaled_loading[i].push(rescale_loading(s.alpha_death[i]));
        }
    }
    series
}

fn interval(xs: &[f64], level: f64) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let sorted = sorted_copy(xs);
    let tail = (1.0 - level) / 2.0;
    (
        xs.iter().sum::<f64>() / xs.len() as f64,
        quantile_sorted(&sorted, tail),
        quantile_sorted(&sorted, 1.0 - tail),
    )
}

/// Per-unit CSV keyed by `unit_id`, natural-log scale throughout.
pub fn per_unit_csv(chains: &[Vec<ChainState>], n: usize, level: f64) -> String {
    let pooled: Vec<ChainState> = chains.iter().flatten().cloned().collect();
    let series = per_unit_rates(&pooled, n);
    let mut out = String::from("unit_id");
    for q in ["log_smr", "log_treatment_ratio", "nu", "rescaled_loading"] {
        out.push_str(&format!(",{q}_mean,{q}_q025,{q}_q975"));
    }
    out.push('\n');
    let cell = |v: f64| if v.is_nan() { "NA".to_string() } else { v.to_string() };
    for i in 0..n {
        out.push_str(&i.to_string());
        let loadings: Vec<f64> = series.rescaled_loading[i].iter().flatten().copied().collect();
        for xs in [&series.log_smr[i], &series.log_treatment_ratio[i], &series.nu[i], &loadings] {
            let (m, lo, hi) = interval(xs, level);
            out.push_str(&format!(",{},{},{}", cell(m), cell(lo), cell(hi)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn table(name: &str, xs: Vec<f64>) -> ChainTable {
        ChainTable {
            names: vec![name.to_string()],
            iterations: (0..xs.len()).collect(),
            columns: vec![xs],
        }
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_loading(1.0), Some(0.0));
        assert_eq!(rescale_loading(3.0), Some(0.25));
        assert_eq!(rescale_loading(1.0 / 3.0), Some(-0.25));
        assert_eq!(rescale_loading(-1.0), None);
        assert_eq!(rescale_loadings(&[1.0, -1.0]), vec![Some(0.0), None]);
    }

    #[test]
    fn quantile_matches_sort_oracle() {
        let xs = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0, 5.0];
        let sorted = sorted_copy(&xs);
        assert_eq!(quantile_sorted(&sorted, 0.0), 1.0);
        assert_eq!(quantile_sorted(&sorted, 1.0), 9.0);
        assert_eq!(quantile_sorted(&sorted, 0.5), 4.0);
        // h = 10 * 0.025 = 0.25 -> 1 + 0.25 * (1 - 1); h = 9.75 -> 6 + 0.75 * 3
        assert_eq!(quantile_sorted(&sorted, 0.025), 1.0);
        assert!((quantile_sorted(&sorted, 0.975) - 8.25).abs() < 1e-12);
    }

    #[test]
    fn constant_chain() {
        let s = summarize(&[table("c", vec![2.5; 50])], 0.95).unwrap();
        let p = &s.parameters[0];
        assert_eq!(p.mean, 2.5);
        assert_eq!(p.lower, p.upper);
        assert_eq!(p.ess, None);
        assert_eq!(p.rhat, None);
    }

    #[test]
    fn iid_normal_known_distribution() {
        let mut rng = stream_rng(123, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let s = summarize(&[table("z", xs)], 0.95).unwrap();
        let p = &s.parameters[0];
        assert!(p.mean.abs() < 0.02);
        assert!((p.lower + 1.96).abs() < 0.03, "{}", p.lower);
        assert!((p.upper - 1.96).abs() < 0.03, "{}", p.upper);
        let ess = p.ess.unwrap();
        assert!((ess / 100_000.0 - 1.0).abs() < 0.1, "ess {ess}");
    }

    #[test]
    fn ess_of_ar1_chain() {
        // AR(1) with φ = 0.9 has ESS ≈ N (1 - φ) / (1 + φ)
        let mut rng = stream_rng(7, 0);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                x = 0.9 * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let ess = effective_sample_size(&xs).unwrap();
        let expected = 200_000.0 * 0.1 / 1.9;
        assert!((ess / expected - 1.0).abs() < 0.15, "ess {ess}");
    }

    #[test]
    fn rhat_flags_disagreeing_chains() {
        let mut rng = stream_rng(9, 0);
        let a: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let c: Vec<f64> = b.iter().map(|x| x + 3.0).collect();
        let good = split_rhat(&[&a, &b]).unwrap();
        assert!((good - 1.0).abs() < 0.01);
        assert!(split_rhat(&[&a, &c]).unwrap() > 1.5);
        assert_eq!(split_rhat(&[&a]), None);
    }

    #[test]
    fn errors() {
        assert!(matches!(summarize(&[], 0.95), Err(DiagnosticsError::Empty)));
        assert!(matches!(summarize(&[table("x", vec![])], 0.95), Err(DiagnosticsError::Empty)));
        assert!(matches!(
            summarize(&[table("x", vec![1.0; 5])], 0.95),
            Err(DiagnosticsError::TooFewDraws { .. })
        ));
        assert!(matches!(
            summarize(&[table("x", vec![1.0; 20])], 1.5),
            Err(DiagnosticsError::BadLevel(_))
        ));
    }

    #[test]
    fn per_unit_rates_match_link_formula() {
        let mut rng = stream_rng(4, 0);
        let states: Vec<ChainState> = (0..5)
            .map(|_| {
                let mut s = ChainState::neutral(3, 0);
                for i in 0..3 {
                    s.nu[i] = rng.random_range(-1.0..1.0);
                    s.alpha_death[i] = rng.random_range(0.0..2.0);
                    s.eps_death[i] = rng.random_range(-0.2..0.2);
                    s.eps_treatment[i] = rng.random_range(-0.2..0.2);
                }
                s.beta0_death = rng.random_range(-0.5..0.5);
                s.beta0_treatment = rng.random_range(-0.5..0.5);
                s
            })
            .collect();
        let series = per_unit_rates(&states, 3);
        for (t, s) in states.iter().enumerate() {
            let link = s.link();
            for i in 0..3 {
                assert_eq!(series.log_smr[i][t], link.log_lambda_death[i]);
                let oracle = s.beta0_treatment + 1.0 * s.nu[i] + s.eps_treatment[i];
                assert_eq!(series.log_treatment_ratio[i][t], oracle);
                let oracle = s.beta0_death + s.alpha_death[i] * s.nu[i] + s.eps_death[i];
                assert_eq!(series.log_smr[i][t], oracle);
            }
        }
        let mut zero = ChainState::neutral(2, 0);
        zero.alpha_death = vec![0.0; 2];
        let series = per_unit_rates(&[zero], 2);
        assert_eq!(series.log_smr[0][0].exp(), 1.0);
    }

    #[test]
    fn chain_csv_round_trip() {
        let text = "iteration,beta0_death,beta0_treatment,tau2,tau2_death,sigma2_death,sigma2_treatment,nu[0],alpha_death[0],eps_death[0],eps_treatment[0]\n\
                    5,0.1,0.2,1,1,1,1,0,1,0.5,-0.5\n";
        let t = ChainTable::read_csv(text.as_bytes()).unwrap();
        assert_eq!(t.iterations, vec![5]);
        let states = t.states().unwrap();
        assert_eq!(states[0].eps_treatment, vec![-0.5]);
        assert!(ChainTable::read_csv("it,x\n1,2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn rescale_strictly_increasing(a in -0.999f64..50.0, b in -0.999f64..50.0) {
            prop_assume!(a < b);
            prop_assert!(rescale_loading(a).unwrap() < rescale_loading(b).unwrap());
        }

        #[test]
        fn summary_permutation_invariant(xs in proptest::collection::vec(-100.0f64..100.0, 10..60), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = xs.clone();
            shuffled.shuffle(&mut stream_rng(seed, 0));
            let a = summarize_series("x", &[&xs], 0.9);
            let b = summarize_series("x", &[&shuffled], 0.9);
            prop_assert!((a.mean - b.mean).abs() < 1e-9);
            prop_assert_eq!(a.lower, b.lower);
            prop_assert_eq!(a.upper, b.upper);
            prop_assert!(a.lower <= a.upper);
        }

        #[test]
        fn ess_bounded_by_draws(xs in proptest::collection::vec(-10.0f64..10.0, 2..200)) {
            if let Some(ess) = effective_sample_size(&xs) {
                prop_assert!(ess > 0.0 && ess <= xs.len() as f64);
            }
        }
    }
}
