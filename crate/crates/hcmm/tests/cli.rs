use std::path::{Path, PathBuf};

use hcmm::cli::{main_with_args, ExperimentConfig};

fn preset(name: &str) -> String {
    format!("{}/presets/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hcmm-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write_config(name: &str, json: &str) -> String {
    let p = scratch(name);
    std::fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

/// Runs the CLI with `--out` pointed at a scratch file and returns (code, output).
fn run(args: &[&str], out_name: &str) -> (i32, String) {
    let out = scratch(out_name);
    let _ = std::fs::remove_file(&out);
    let mut argv = vec!["hcmm"];
    argv.extend_from_slice(args);
    let out_s = out.to_string_lossy().into_owned();
    argv.extend_from_slice(&["--out", &out_s]);
    let code = main_with_args(argv);
    (code, std::fs::read_to_string(&out).unwrap_or_default())
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const SMALL: &str = r#"{
  "dims": { "nx": 200, "nz": 200, "ny": 200 },
  "workers": 10,
  "base": { "family": "polynomial", "grid": { "mx": 2, "mz": 1, "my": 2 } },
  "trials": 200,
  "sweep": { "levels": [1, 2] },
  "jobs": [ { "label": "poly", "mode": "nonh" } ]
}"#;

#[test]
fn exit_codes() {
    let cfg = write_config("ok.json", SMALL);
    assert_eq!(run(&["simulate", "--config", &cfg], "ok.csv").0, 0);
    assert_eq!(main_with_args(["hcmm", "frobnicate"]), 2);
    assert_eq!(main_with_args(["hcmm", "simulate"]), 2, "missing --config");
    let bad = write_config(
        "bad.json",
        r#"{ "workers": 0, "base": { "family": "polynomial", "grid": { "mx": 1, "mz": 1, "my": 1 } } }"#,
    );
    assert_eq!(run(&["simulate", "--config", &bad], "bad.csv").0, 2);
    let junk = write_config("junk.json", "{ not json");
    assert_eq!(run(&["simulate", "--config", &junk], "junk.csv").0, 2);
    assert_eq!(
        run(&["simulate", "--config", "/nonexistent/x.json"], "nx.csv").0,
        2
    );
    assert_eq!(run(&["fit", "/nonexistent/samples.txt"], "fit.csv").0, 3);
    assert_eq!(
        run(
            &["simulate", "--config", &cfg, "--points", "rational"],
            "pts.csv"
        )
        .0,
        2
    );
}

#[test]
fn config_round_trip() {
    let cfg = ExperimentConfig::from_json(SMALL).unwrap();
    let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(back, cfg);
    for p in [
        "large_cluster_levels.json",
        "small_cluster_levels.json",
        "profile_regimes.json",
        "decode_tradeoff.json",
        "runtime_sweep.json",
    ] {
        let c = ExperimentConfig::load(Path::new(&preset(p))).unwrap();
        assert_eq!(
            ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(),
            c,
            "{p}"
        );
    }
}

#[test]
fn simulate_rows_and_determinism() {
    let cfg = write_config("det.json", SMALL);
    let (c1, a) = run(&["simulate", "--config", &cfg, "--seed", "5"], "det1.csv");
    let (c2, b) = run(&["simulate", "--config", &cfg, "--seed", "5"], "det2.csv");
    let (_, c) = run(&["simulate", "--config", &cfg, "--seed", "6"], "det3.csv");
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with("# schema=1\nscheme,L,P,N,R,profile,mean"));
    let schemes: Vec<String> = rows(&a).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(
        schemes,
        ["nonh", "bicc", "bicc", "mlcc", "rmlcc", "mlcc", "rmlcc"]
    );
}

#[test]
fn large_cluster_nonh_row() {
    let (code, out) = run(
        &[
            "simulate",
            "--config",
            &preset("large_cluster_levels.json"),
            "--trials",
            "2000",
        ],
        "large.csv",
    );
    assert_eq!(code, 0);
    let r = rows(&out);
    assert_eq!(r[0][0], "nonh");
    let mean: f64 = r[0][6].parse().unwrap();
    assert!((mean - 5.98).abs() < 0.05, "{mean}");
}

#[test]
fn profile_regimes_preset() {
    let (code, out) = run(
        &["simulate", "--config", &preset("profile_regimes.json")],
        "regimes.csv",
    );
    assert_eq!(code, 0);
    let r = rows(&out);
    assert_eq!(r.len(), 24);
    let worker: Vec<&Vec<String>> = r.iter().filter(|x| x[0] == "fast-worker").collect();
    assert!(worker.iter().all(|x| x[1] == "fast-worker" && x[3] == "4"));
    let net: Vec<usize> = r
        .iter()
        .filter(|x| x[0] == "fast-network")
        .map(|x| x[3].parse().unwrap())
        .collect();
    assert_eq!(net.iter().sum::<usize>(), 32);
    assert!(net.windows(2).all(|w| w[0] >= w[1]) && net[0] > net[7]);
}

#[test]
fn optimize_profile_json() {
    let (code, out) = run(
        &[
            "optimize-profile",
            "--config",
            &preset("small_cluster_levels.json"),
        ],
        "opt.json",
    );
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["l"], 1);
    assert_eq!(v["profile"], serde_json::json!([4]));
}

#[test]
fn empty_sweep_is_header_only() {
    let cfg = write_config(
        "empty.json",
        r#"{ "workers": 4, "base": { "family": "polynomial", "grid": { "mx": 1, "mz": 1, "my": 2 } } }"#,
    );
    let (code, out) = run(&["sweep", "--config", &cfg], "empty.csv");
    assert_eq!(code, 0);
    assert_eq!(out.lines().collect::<Vec<_>>(), ["# schema=1", "label,stragglerProb,repeats,encode,distribute,compute,computeStddev,aggregate,decode,maxRelError"]);
}

#[test]
fn run_and_sweep_small_job() {
    let json = r#"{
      "dims": { "nx": 48, "nz": 48, "ny": 48 },
      "workers": 6,
      "base": { "family": "polynomial", "grid": { "mx": 2, "mz": 1, "my": 2 } },
      "run": { "stragglerProb": 0.3, "repeats": 2, "verify": "fast" },
      "jobs": [ { "label": "poly", "mode": "nonh" }, { "label": "bicc", "mode": "bicc", "p": 2 } ]
    }"#;
    let cfg = write_config("job.json", json);
    let (code, out) = run(&["run", "--config", &cfg], "run.json");
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["relError"].as_f64().unwrap() <= 1e-8);
    let (code, out) = run(&["sweep", "--config", &cfg], "sweep.csv");
    assert_eq!(code, 0);
    let r = rows(&out);
    assert_eq!(r.len(), 2);
    assert_eq!((r[0][0].as_str(), r[0][2].as_str()), ("poly", "2"));
}

#[test]
fn tradeoff_rows() {
    let json = r#"{
      "dims": { "nx": 64, "nz": 64, "ny": 64 },
      "workers": 6,
      "base": { "family": "polynomial", "grid": { "mx": 1, "mz": 1, "my": 4 } },
      "run": { "verify": "fast" },
      "tradeoff": { "p": 2, "levelsH": [1], "uncoded": { "grid": { "mx": 1, "mz": 1, "my": 4 }, "workers": 4 } }
    }"#;
    let cfg = write_config("trade.json", json);
    let (code, out) = run(&["tradeoff", "--config", &cfg], "trade.csv");
    assert_eq!(code, 0);
    let r = rows(&out);
    assert_eq!(r.len(), 2);
    assert_eq!(r[0][0], "uncoded");
    assert_eq!(r[0][4].parse::<f64>().unwrap(), 0.0);
    assert_eq!(r[1][0], "hhcc-L1");
    let bad = write_config(
        "trade_bad.json",
        &json.replace("\"levelsH\": [1]", "\"levelsH\": [3]"),
    );
    assert_eq!(run(&["tradeoff", "--config", &bad], "trade_bad.csv").0, 2);
}

#[test]
fn fit_from_file() {
    let samples = scratch("samples.csv");
    std::fs::write(
        &samples,
        "seconds\n1.0\n2.0\n3.0\n# trailing comment\n6.0\n",
    )
    .unwrap();
    let (code, out) = run(&["fit", samples.to_str().unwrap()], "fit.json");
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["alpha"], 1.0);
    assert_eq!(v["mu"], 2.0);
    assert_eq!(v["degenerate"], false);
}
