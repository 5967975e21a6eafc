//! Observed counts, populations, censoring flags, offsets and the
//! standardized covariate design.

use std::io::Read;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the censoring interval: a censored count lies in
/// `[lower, lower + CENSOR_WIDTH]`.
pub const CENSOR_WIDTH: u64 = 9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("total count is zero; the statewide rate is undefined")]
    ZeroTotal,
    #[error("unit {unit}: population must be positive")]
    ZeroPopulation { unit: usize },
    #[error("covariate column {column:?} is constant")]
    ConstantColumn { column: String },
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unit {unit}: offset must be positive and finite")]
    BadOffset { unit: usize },
    #[error("row {row}: unit_id {got} out of order (expected {expected})")]
    UnitOrder { row: usize, expected: usize, got: usize },
    #[error("row {row}: censored flag must be 0 or 1, got {got}")]
    CensorFlag { row: usize, got: u8 },
    #[error("covariate column {column:?} not found")]
    MissingColumn { column: String },
    #[error("row {row}, column {column:?}: {message}")]
    Field {
        row: usize,
        column: String,
        message: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One row of the data CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit_id: usize,
    pub population: u64,
    pub deaths: u64,
    pub treatment_lower: u64,
    pub censored: u8,
}

/// Column centering and scaling retained for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    deaths: Vec<u64>,
    treatments_lower: Vec<u64>,
    censored: Vec<bool>,
    populations: Vec<u64>,
    covariates: DMatrix<f64>,
    covariate_names: Vec<String>,
    offsets_death: Vec<f64>,
    offsets_treatment: Vec<f64>,
}

/// Statewide rate `μ = Σ counts / Σ populations` and offsets `E_i = P_i μ`.
pub fn compute_offsets(populations: &[u64], counts: &[u64]) -> Result<(f64, Vec<f64>), DataError> {
    if populations.len() != counts.len() {
        return Err(DataError::LengthMismatch {
            what: "counts",
            expected: populations.len(),
            got: counts.len(),
        });
    }
    if let Some(unit) = populations.iter().position(|&p| p == 0) {
        return Err(DataError::ZeroPopulation { unit });
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(DataError::ZeroTotal);
    }
    let pop_total: u64 = populations.iter().sum();
    let rate = total as f64 / pop_total as f64;
    let offsets = populations.iter().map(|&p| p as f64 * rate).collect();
    Ok((rate, offsets))
}

/// Centers each column and scales it to unit sample sd (denominator n - 1).
pub fn standardize_covariates(
    raw: &DMatrix<f64>,
    names: &[String],
) -> Result<(DMatrix<f64>, Vec<ColumnTransform>), DataError> {
    let n = raw.nrows();
    let mut out = raw.clone();
    let mut transforms = Vec::with_capacity(raw.ncols());
    for (k, mut col) in out.column_iter_mut().enumerate() {
        let column = || names.get(k).cloned().unwrap_or_else(|| format!("column {k}"));
        if n < 2 {
            return Err(DataError::ConstantColumn { column: column() });
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if !(sd > 0.0) || sd <= 1e-12 * mean.abs() {
            return Err(DataError::ConstantColumn { column: column() });
        }
        for x in col.iter_mut() {
            *x = (*x - mean) / sd;
        }
        transforms.push(ColumnTransform { mean, sd });
    }
    Ok((out, transforms))
}

/// Inverse of [`standardize_covariates`].
pub fn destandardize(standardized: &DMatrix<f64>, transforms: &[ColumnTransform]) -> DMatrix<f64> {
    let mut out = standardized.clone();
    for (mut col, t) in out.column_iter_mut().zip(transforms) {
        for x in col.iter_mut() {
            *x = *x * t.sd + t.mean;
        }
    }
    out
}

impl Dataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        deaths: Vec<u64>,
        treatments_lower: Vec<u64>,
        censored: Vec<bool>,
        populations: Vec<u64>,
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
        offsets_death: Vec<f64>,
        offsets_treatment: Vec<f64>,
    ) -> Result<Self, DataError> {
        let n = deaths.len();
        let check = |what, got| {
            if got != n {
                Err(DataError::LengthMismatch { what, expected: n, got })
            } else {
                Ok(())
            }
        };
        check("treatments_lower", treatments_lower.len())?;
        check("censored", censored.len())?;
        check("populations", populations.len())?;
        check("covariate rows", covariates.nrows())?;
        check("offsets_death", offsets_death.len())?;
        check("offsets_treatment", offsets_treatment.len())?;
        if covariate_names.len() != covariates.ncols() {
            return Err(DataError::LengthMismatch {
                what: "covariate names",
                expected: covariates.ncols(),
                got: covariate_names.len(),
            });
        }
        if let Some(unit) = populations.iter().position(|&p| p == 0) {
            return Err(DataError::ZeroPopulation { unit });
        }
        for offsets in [&offsets_death, &offsets_treatment] {
            if let Some(unit) = offsets.iter().position(|e| !(e.is_finite() && *e > 0.0)) {
                return Err(DataError::BadOffset { unit });
            }
        }
        Ok(Self {
            deaths,
            treatments_lower,
            censored,
            populations,
            covariates,
            covariate_names,
            offsets_death,
            offsets_treatment,
        })
    }

    /// Builds a dataset from CSV records and raw covariates: standardizes the
    /// covariates and computes both offsets from the statewide rates.
    /// Censored treatment counts enter the statewide rate at their lower bound.
    pub fn from_records(
        records: &[UnitRecord],
        raw_covariates: &DMatrix<f64>,
        covariate_names: Vec<String>,
    ) -> Result<(Self, Vec<ColumnTransform>), DataError> {
        let populations: Vec<u64> = records.iter().map(|r| r.population).collect();
        let deaths: Vec<u64> = records.iter().map(|r| r.deaths).collect();
        let lower: Vec<u64> = records.iter().map(|r| r.treatment_lower).collect();
        let censored: Vec<bool> = records.iter().map(|r| r.censored == 1).collect();
        let (_, offsets_death) = compute_offsets(&populations, &deaths)?;
        let (_, offsets_treatment) = compute_offsets(&populations, &lower)?;
        let (x, transforms) = standardize_covariates(raw_covariates, &covariate_names)?;
        let data = Self::new(
            deaths,
            lower,
            censored,
            populations,
            x,
            covariate_names,
            offsets_death,
            offsets_treatment,
        )?;
        Ok((data, transforms))
    }

    pub fn n(&self) -> usize {
        self.deaths.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn deaths(&self) -> &[u64] {
        &self.deaths
    }

    pub fn treatments_lower(&self) -> &[u64] {
        &self.treatments_lower
    }

    pub fn censored(&self) -> &[bool] {
        &self.censored
    }

    pub fn populations(&self) -> &[u64] {
        &self.populations
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn offsets_death(&self) -> &[f64] {
        &self.offsets_death
    }

    pub fn offsets_treatment(&self) -> &[f64] {
        &self.offsets_treatment
    }

    /// `X β` for the latent factor mean.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for (k, &b) in beta.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.covariates.column(k).iter()) {
                *o += x * b;
            }
        }
        out
    }

    /// Replaces the observed counts, keeping offsets and covariates fixed.
    pub fn set_counts(&mut self, deaths: Vec<u64>, treatments_lower: Vec<u64>, censored: Vec<bool>) {
        assert_eq!(deaths.len(), self.n());
        assert_eq!(treatments_lower.len(), self.n());
        assert_eq!(censored.len(), self.n());
        self.deaths = deaths;
        self.treatments_lower = treatments_lower;
        self.censored = censored;
    }

    pub fn records(&self) -> Vec<UnitRecord> {
        (0..self.n())
            .map(|i| UnitRecord {
                unit_id: i,
                population: self.populations[i],
                deaths: self.deaths[i],
                treatment_lower: self.treatments_lower[i],
                censored: u8::from(self.censored[i]),
            })
            .collect()
    }
}

/// Reads the data CSV (`unit_id,population,deaths,treatment_lower,censored`).
pub fn read_data_csv<R: Read>(reader: R) -> Result<Vec<UnitRecord>, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.deserialize::<UnitRecord>().enumerate() {
        let rec = rec?;
        if rec.unit_id != row {
            return Err(DataError::UnitOrder {
                row: row + 1,
                expected: row,
                got: rec.unit_id,
            });
        }
        if rec.censored > 1 {
            return Err(DataError::CensorFlag {
                row: row + 1,
                got: rec.censored,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads the covariate CSV (`unit_id,<name1>,...`). When `select` is given,
/// only those columns are returned, in that order.
pub fn read_covariates_csv<R: Read>(
    reader: R,
    select: Option<&[String]>,
) -> Result<(Vec<String>, DMatrix<f64>), DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.first().map(String::as_str) != Some("unit_id") {
        return Err(DataError::MissingColumn {
            column: "unit_id".to_string(),
        });
    }
    let available = &headers[1..];
    let names: Vec<String> = match select {
        Some(cols) => cols.to_vec(),
        None => available.to_vec(),
    };
    let mut indices = Vec::with_capacity(names.len());
    for name in &names {
        let idx = available
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { column: name.clone() })?;
        indices.push(idx + 1);
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| -> Result<&str, DataError> {
            rec.get(k).map(str::trim).ok_or_else(|| DataError::Field {
                row: row + 1,
                column: headers[k].clone(),
                message: "missing value".to_string(),
            })
        };
        let id: usize = field(0)?.parse().map_err(|_| DataError::Field {
            row: row + 1,
            column: "unit_id".to_string(),
            message: "not an integer".to_string(),
        })?;
        if id != row {
            return Err(DataError::UnitOrder {
                row: row + 1,
                expected: row,
                got: id,
            });
        }
        let mut values = Vec::with_capacity(indices.len());
        for &k in &indices {
            let v: f64 = field(k)?.parse().map_err(|_| DataError::Field {
                row: row + 1,
                column: headers[k].clone(),
                message: "not a number".to_string(),
            })?;
            values.push(v);
        }
        rows.push(values);
    }
    let n = rows.len();
    let p = names.len();
    let matrix = DMatrix::from_fn(n, p, |i, k| rows[i][k]);
    Ok((names, matrix))
}

pub fn write_data_csv(records: &[UnitRecord]) -> Result<String, DataError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in records {
        wtr.serialize(r)?;
    }
    let bytes = wtr.into_inner().map_err(|e| DataError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_covariates_csv(names: &[String], values: &DMatrix<f64>) -> String {
    let mut out = String::from("unit_id");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..values.nrows() {
        out.push_str(&i.to_string());
        for k in 0..values.ncols() {
            out.push_str(&format!(",{}", values[(i, k)]));
        }
        out.push('\n');
    }
    out
}
