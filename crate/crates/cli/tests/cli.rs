use std::path::Path;
use std::process::Command;

use ltpdpm_cli::config::{apply_override, load, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_ltpdpm");

const SMALL: &str = r#"
seed = 7

[model]
k = 3
p_t = 6
l = 3

[model.layout]
n_long = 4
n_lat = 4

[mcmc]
n_iter = 300
burn_in = 100
thin = 1

[task]
t0 = 260
u = 29.0

[simulate]
years = 4
"#;

fn setup() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn run(cfg: &Path, args: &[&str]) -> std::process::Output {
    Command::new(BIN).arg("-c").arg(cfg).args(args).output().unwrap()
}

#[test]
fn overrides_parse_literals_and_unset_keys() {
    let mut root = toml::Table::new();
    apply_override(&mut root, "mcmc.n_iter=2000").unwrap();
    apply_override(&mut root, "paths.dataset=data/sst.csv").unwrap();
    apply_override(&mut root, "task.d0_center=[38.5, 20.0]").unwrap();
    apply_override(&mut root, "task.u=30").unwrap();
    apply_override(&mut root, "task.u=").unwrap();
    assert_eq!(root["mcmc"]["n_iter"].as_integer(), Some(2000));
    assert_eq!(root["paths"]["dataset"].as_str(), Some("data/sst.csv"));
    assert!(root["task"].get("u").is_none());
    assert!(apply_override(&mut root, "no_equals").is_err());
    assert!(apply_override(&mut root, "mcmc..k=1").is_err());
    apply_override(&mut root, "seed=3").unwrap();
    assert!(apply_override(&mut root, "seed.x=1").is_err());
}

#[test]
fn loading_applies_overrides_in_order() {
    let (_dir, path) = setup();
    let cfg = load(Some(&path), &["mcmc.thin=3".into(), "seed=99".into(), "model.lgp=true".into()]).unwrap();
    assert_eq!(cfg.mcmc.thin, 3);
    assert_eq!(cfg.simulate.seed, 99);
    let m = cfg.mcmc_config();
    assert_eq!((m.k, m.fixed_df, m.seed), (1, Some(40.0), 99));
    assert!(load(Some(&path), &["model.bogus=1".into()]).is_err());
    assert_eq!(load(None, &[]).unwrap(), RunConfig::default());
}

#[test]
fn echoed_config_round_trips() {
    let cfg = load(None, &["task.u=28.5".into(), "model.k=4".into()]).unwrap();
    let text = cfg.to_toml();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("echo.toml");
    std::fs::write(&p, text).unwrap();
    assert_eq!(load(Some(&p), &[]).unwrap(), cfg);
}

#[test]
fn exit_codes() {
    let (dir, cfg) = setup();
    let usage = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
    let version = Command::new(BIN).arg("--version").output().unwrap();
    assert_eq!(version.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&version.stdout).contains(ltpdpm_cli::VERSION));

    // Missing inputs are a usage problem.
    let missing = run(&cfg, &["prepare-basis"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_key = run(&cfg, &["--set", "model.nope=1", "simulate"]);
    assert_eq!(bad_key.status.code(), Some(2));

    assert_eq!(run(&cfg, &["simulate"]).status.code(), Some(0));
    assert_eq!(run(&cfg, &["prepare-basis"]).status.code(), Some(0));
    assert_eq!(run(&cfg, &["fit"]).status.code(), Some(0));
    // No draw gets anywhere near this threshold.
    let undefined = run(&cfg, &["hotspot", "--u", "1e9"]);
    assert_eq!(undefined.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&undefined.stderr).starts_with("error:"));
    let both = run(&cfg, &["predict", "--set", "task.p=0.9"]);
    assert_eq!(both.status.code(), Some(2));
    drop(dir);
}

#[test]
fn pipeline_writes_manifests_and_outputs() {
    let (dir, cfg) = setup();
    for args in [
        vec!["simulate"],
        vec!["prepare-basis"],
        vec!["fit"],
        vec!["diagnose"],
        vec!["predict", "--p", "0.99"],
        vec!["hotspot"],
    ] {
        let out = run(&cfg, &args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = dir.path().join("out");
    for f in [
        "simulate.manifest.json",
        "fit_summary.json",
        "diagnostics.csv",
        "predictive_mean.csv",
        "exceedance_sites.csv",
        "hotspot.manifest.json",
        "hotspot.config.toml",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("hotspot.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "hotspot");
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["inputs"].as_object().unwrap().len() >= 3);
    assert!(manifest["outputs"].as_object().unwrap().values().all(|h| h.as_str().unwrap().len() == 64));

    // The echoed config re-runs from the output directory.
    let again = Command::new(BIN).arg("-c").arg(out.join("hotspot.config.toml")).arg("hotspot").output().unwrap();
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
}
