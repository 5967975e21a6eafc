use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use spatial_factor::checks::{geweke_test, recovery_study};
use spatial_factor::data::{self, Dataset};
use spatial_factor::diagnostics::{per_unit_csv, summarize, ChainTable};
use spatial_factor::sampler::run_chains;
use spatial_factor::simulate::simulate_dataset;
use spatial_factor::{AdjacencyGraph, Model, ParameterLayout};

use crate::config::{self, FitConfig};
use crate::error::CliError;

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub chains: Option<usize>,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::validation(format!("cannot open {}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::validation(format!("cannot create {}: {e}", dir.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn manifest(command: &str, config: Value, inputs: &[(&str, &Path)]) -> Result<String, CliError> {
    let mut files = serde_json::Map::new();
    for (role, path) in inputs {
        files.insert(
            role.to_string(),
            json!({ "path": path.display().to_string(), "sha256": sha256_file(path)? }),
        );
    }
    let m = json!({
        "tool": "sfactor",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "inputs": files,
    });
    Ok(serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n")
}

fn to_json<T: serde::Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("config serializes")
}

/// Loads graph and dataset named by a fit config.
pub fn load_inputs(cfg: &FitConfig) -> Result<(AdjacencyGraph, Dataset), CliError> {
    let records = data::read_data_csv(open(&cfg.data)?)?;
    let n = records.len();
    let graph = AdjacencyGraph::load_adjacency(open(&cfg.adjacency)?, n)?;
    graph.require_connected()?;
    let (names, raw) = match &cfg.covariates {
        Some(path) => data::read_covariates_csv(open(path)?, cfg.covariate_columns.as_deref())?,
        None if cfg.covariate_columns.as_ref().is_some_and(|c| !c.is_empty()) => {
            return Err(CliError::validation("covariate_columns given without a covariates file"));
        }
        None => (Vec::new(), nalgebra::DMatrix::zeros(n, 0)),
    };
    if raw.nrows() != n {
        return Err(CliError::validation(format!(
            "covariates have {} rows but data has {n} units",
            raw.nrows()
        )));
    }
    let (dataset, _) = Dataset::from_records(&records, &raw, names)?;
    Ok((graph, dataset))
}

pub fn fit(o: &Overrides) -> Result<(), CliError> {
    let path = o.config.as_deref().ok_or_else(|| CliError::validation("fit requires --config"))?;
    let mut cfg = config::load_fit(path)?;
    if let Some(seed) = o.seed {
        cfg.sampler.seed = seed;
    }
    if let Some(k) = o.chains {
        cfg.chains = k;
    }
    if cfg.chains == 0 {
        return Err(CliError::validation("chains must be at least 1"));
    }
    cfg.sampler.validate()?;
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let (graph, dataset) = load_inputs(&cfg)?;
    prepare_out(&out)?;

    let model = Model::new(&graph, &dataset, cfg.sampler.priors())?;
    let outputs = run_chains(&cfg.sampler, &model, cfg.chains)?;
    let tables: Vec<ChainTable> = outputs.iter().map(ChainTable::from_output).collect();
    for (k, chain) in outputs.iter().enumerate() {
        write(&out, &format!("chain_{k}.csv"), &chain.to_csv())?;
    }
    let reports: Vec<_> = outputs.iter().map(|c| &c.report).collect();
    write(&out, "acceptance.json", &(serde_json::to_string_pretty(&reports).expect("report serializes") + "\n"))?;
    write(&out, "summary.csv", &summarize(&tables, cfg.level)?.to_csv())?;
    let states: Vec<_> = outputs.iter().map(|c| c.samples.clone()).collect();
    write(&out, "per_unit.csv", &per_unit_csv(&states, dataset.n(), cfg.level))?;

    let mut inputs: Vec<(&str, &Path)> = vec![("config", path), ("adjacency", &cfg.adjacency), ("data", &cfg.data)];
    if let Some(c) = &cfg.covariates {
        inputs.push(("covariates", c));
    }
    write(&out, "manifest.json", &manifest("fit", to_json(&cfg), &inputs)?)?;
    Ok(())
}

pub fn simulate(o: &Overrides) -> Result<(), CliError> {
    let path = o.config.as_deref().ok_or_else(|| CliError::validation("simulate requires --config"))?;
    let mut spec = config::load_simulation(path)?;
    if let Some(seed) = o.seed {
        spec.seed = seed;
    }
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("sim"));
    let mut rng = spatial_factor::sampler::stream_rng(spec.seed, 0);
    let sim = simulate_dataset(&spec, &mut rng)?;
    prepare_out(&out)?;

    write(&out, "adjacency.csv", &sim.graph.to_edge_csv())?;
    write(&out, "data.csv", &data::write_data_csv(&sim.data.records())?)?;
    let names = sim.data.covariate_names().to_vec();
    write(&out, "covariates.csv", &data::write_covariates_csv(&names, &sim.raw_covariates))?;
    let layout = ParameterLayout::for_dataset(&sim.data);
    let mut truth = String::from("name,value\n");
    for (name, v) in layout.names().iter().zip(sim.truth.to_row()) {
        truth.push_str(&format!("{name},{v}\n"));
    }
    write(&out, "truth.csv", &truth)?;
    let mut true_counts = String::from("unit_id,treatments\n");
    for (i, y) in sim.true_treatments.iter().enumerate() {
        true_counts.push_str(&format!("{i},{y}\n"));
    }
    write(&out, "true_treatments.csv", &true_counts)?;
    let fit = FitConfig {
        adjacency: "adjacency.csv".into(),
        data: "data.csv".into(),
        covariates: Some("covariates.csv".into()),
        covariate_columns: None,
        chains: 4,
        level: 0.95,
        sampler: Default::default(),
    };
    write(&out, "fit.toml", &toml::to_string(&fit).map_err(|e| CliError::runtime(e.to_string()))?)?;
    write(&out, "manifest.json", &manifest("simulate", to_json(&spec), &[("config", path)])?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CheckKind {
    Geweke,
    Recovery,
}

pub fn check(kind: CheckKind, o: &Overrides) -> Result<(), CliError> {
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("check"));
    let inputs: Vec<(&str, &Path)> = o.config.as_deref().map(|p| ("config", p)).into_iter().collect();
    match kind {
        CheckKind::Geweke => {
            let mut cfg = config::load_geweke(o.config.as_deref())?;
            if let Some(seed) = o.seed {
                cfg.seed = seed;
            }
            let report = geweke_test(&cfg)?;
            prepare_out(&out)?;
            write(&out, "geweke.csv", &report.to_csv())?;
            write(&out, "manifest.json", &manifest("check geweke", to_json(&cfg), &inputs)?)?;
            println!(
                "geweke: max |z| = {:.3}, min ESS = {:.0}, {}",
                report.max_abs_z,
                report.min_ess,
                if report.passed { "PASS" } else { "FAIL" }
            );
            if !report.passed {
                return Err(CliError::check_failed(format!(
                    "geweke failed: max |z| {:.3} (threshold {}), min ESS {:.0} (required {})",
                    report.max_abs_z, cfg.z_threshold, report.min_ess, cfg.min_effective
                )));
            }
        }
        CheckKind::Recovery => {
            let mut cfg = config::load_recovery(o.config.as_deref())?;
            if let Some(seed) = o.seed {
                cfg.spec.seed = seed;
                cfg.sampler.seed = seed;
            }
            if let Some(k) = o.chains {
                cfg.threads = k;
            }
            let report = recovery_study(&cfg)?;
            prepare_out(&out)?;
            write(&out, "recovery.csv", &report.to_csv())?;
            write(&out, "recovery_replicates.csv", &report.rows_csv())?;
            write(&out, "manifest.json", &manifest("check recovery", to_json(&cfg), &inputs)?)?;
            print!("{}", report.to_csv());
            if !report.passed {
                return Err(CliError::check_failed("recovery coverage or sign rate below threshold"));
            }
        }
    }
    Ok(())
}

pub fn summarize_chains(paths: &[PathBuf], level: Option<f64>, o: &Overrides) -> Result<(), CliError> {
    let cfg = match o.config.as_deref() {
        Some(p) => config::load_summarize(p)?,
        None => Default::default(),
    };
    let paths: Vec<PathBuf> = if paths.is_empty() { cfg.chains.clone() } else { paths.to_vec() };
    if paths.is_empty() {
        return Err(CliError::validation("summarize needs at least one chain file"));
    }
    let level = level.or(cfg.level).unwrap_or(0.95);
    let tables = paths
        .iter()
        .map(|p| ChainTable::read_csv(open(p)?).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&tables, level)?;
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("."));
    prepare_out(&out)?;
    write(&out, "summary.csv", &summary.to_csv())?;
    let states: Option<Vec<_>> = tables.iter().map(ChainTable::states).collect();
    if let (Some(states), Some(layout)) = (states, ParameterLayout::from_names(&tables[0].names)) {
        write(&out, "per_unit.csv", &per_unit_csv(&states, layout.n, level))?;
    }
    Ok(())
}
