use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spatial_factor::diagnostics::{summarize, ChainTable};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn sfactor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfactor")).args(args).output().unwrap()
}

fn fit_fixture(out: &Path, extra: &[&str]) -> Output {
    let config = fixtures().join("fit.toml");
    let mut args = vec!["fit", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sfactor(&args)
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

#[test]
fn fit_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit");
    let res = fit_fixture(&out, &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["chain_0.csv", "chain_1.csv", "acceptance.json", "summary.csv", "per_unit.csv", "manifest.json"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["config"]["sampler"]["seed"], 11);
    assert_eq!(manifest["inputs"]["data"]["sha256"].as_str().unwrap().len(), 64);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("name,mean,q025,q975,ess,rhat\n"));
    assert!(summary.contains("beta[income],"));
    // two chains: split-R̂ is reported
    let tau = summary.lines().find(|l| l.starts_with("tau2,")).unwrap();
    assert!(!tau.ends_with(",NA"));
    let per_unit = fs::read_to_string(out.join("per_unit.csv")).unwrap();
    assert_eq!(per_unit.lines().count(), 7);
}

#[test]
fn chains_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one");
    assert!(fit_fixture(&out, &["--chains", "1"]).status.success());
    assert!(!out.join("chain_1.csv").exists());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with(",NA"));
}

#[test]
fn missing_covariate_column_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["adjacency.csv", "data.csv", "covariates.csv"] {
        fs::copy(fixtures().join(f), dir.path().join(f)).unwrap();
    }
    let config = fs::read_to_string(fixtures().join("fit.toml")).unwrap().replace("\"income\"", "\"poverty\"");
    fs::write(dir.path().join("fit.toml"), config).unwrap();
    let out = sfactor(&[
        "fit",
        "--config",
        dir.path().join("fit.toml").to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "validation");
    assert!(err["message"].as_str().unwrap().contains("poverty"));
}

#[test]
fn bad_sampler_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["adjacency.csv", "data.csv", "covariates.csv"] {
        fs::copy(fixtures().join(f), dir.path().join(f)).unwrap();
    }
    let config = fs::read_to_string(fixtures().join("fit.toml")).unwrap().replace("burn_in = 1000", "burn_in = 5000");
    fs::write(dir.path().join("fit.toml"), config).unwrap();
    let out = sfactor(&["fit", "--config", dir.path().join("fit.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("burn_in"));
}

#[test]
fn unknown_check_kind_is_a_usage_error() {
    let out = sfactor(&["check", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let spec = fixtures().join("simulate.toml");
    let res = sfactor(&["simulate", "--config", spec.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let truth = fs::read_to_string(sim.join("truth.csv")).unwrap();
    let nu: Vec<f64> = truth
        .lines()
        .filter(|l| l.starts_with("nu["))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(nu.len(), 9);
    assert!(nu.iter().sum::<f64>().abs() < 1e-12);

    // rewrite the generated config to a short run
    let text = fs::read_to_string(sim.join("fit.toml"))
        .unwrap()
        .replace("iterations = 50000", "iterations = 600")
        .replace("burn_in = 20000", "burn_in = 300");
    fs::write(sim.join("fit.toml"), text).unwrap();
    let out = dir.path().join("fit");
    let res = sfactor(&[
        "fit",
        "--config",
        sim.join("fit.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--chains",
        "1",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("chain_0.csv").is_file());
}

#[test]
fn simulate_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fixtures().join("simulate.toml");
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        assert!(sfactor(&["simulate", "--config", spec.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed])
            .status
            .success());
        fs::read(out.join("data.csv")).unwrap()
    };
    assert_eq!(run("a", "9"), run("b", "9"));
    assert_ne!(run("a", "9"), run("c", "10"));
}

#[test]
fn summarize_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let fit = dir.path().join("fit");
    assert!(fit_fixture(&fit, &[]).status.success());
    let out = dir.path().join("sum");
    let c0 = fit.join("chain_0.csv");
    let c1 = fit.join("chain_1.csv");
    let res = sfactor(&[
        "summarize",
        c0.to_str().unwrap(),
        c1.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--level",
        "0.9",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let tables: Vec<ChainTable> = [&c0, &c1]
        .iter()
        .map(|p| ChainTable::read_csv(fs::File::open(p).unwrap()).unwrap())
        .collect();
    let expected = summarize(&tables, 0.9).unwrap().to_csv();
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap(), expected);
    assert!(out.join("per_unit.csv").is_file());
}

#[test]
fn summarize_rejects_short_chains() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.csv");
    fs::write(&path, "iteration,x\n0,1\n1,2\n").unwrap();
    let out = sfactor(&["summarize", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn geweke_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let quick = "forward_draws = 500\nsuccessive_draws = 500\nthin = 1\npilot = 100\n";
    let pass = dir.path().join("pass.toml");
    fs::write(&pass, format!("{quick}min_effective = 1.0\nz_threshold = 1e9\n")).unwrap();
    let out = sfactor(&["check", "geweke", "--config", pass.to_str().unwrap(), "--out", dir.path().join("p").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("p/geweke.csv").is_file());

    let fail = dir.path().join("fail.toml");
    fs::write(&fail, format!("{quick}min_effective = 1e12\n")).unwrap();
    let out = sfactor(&["check", "geweke", "--config", fail.to_str().unwrap(), "--out", dir.path().join("f").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "check_failed");
}

#[test]
fn recovery_check_emits_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("rec.toml");
    fs::write(
        &config,
        "replicates = 1\nthreads = 1\nmin_coverage = 0.0\nmin_sign_rate = 0.0\n\
         [spec.graph.lattice]\nrows = 3\ncols = 3\n\
         [sampler]\niterations = 400\nburn_in = 200\nthin = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("r");
    let out = sfactor(&["check", "recovery", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("recovery.csv")).unwrap();
    assert!(table.starts_with("parameter,truth,replicates,coverage,sign_rate,mean_bias\n"));
    assert!(table.contains("beta[x1],0.3,1,"));
}
