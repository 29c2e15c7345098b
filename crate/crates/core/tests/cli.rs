use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_oqnet"));
    c.env_remove("OQNET_THREADS");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn fdt_selftest_passes_on_default_density() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "kind = \"fdt-selftest\"\n");
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(out.join("manifest.json"));
    assert_eq!(m["kind"], "fdt-selftest");
    assert!(m["summary"]["residual"].as_f64().unwrap() < 1e-8);
    assert!(m["wall_time_s"].as_f64().is_some());
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(!m["exercises"].as_array().unwrap().is_empty());
    assert_eq!(m["config"]["kind"], "fdt-selftest");
}

#[test]
fn failing_selftest_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "kind = \"fdt-selftest\"\n[fdt]\ntolerance = 0.0\n",
    );
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    let m = json(out.join("manifest.json"));
    assert_eq!(m["passed"], false);
}

#[test]
fn nogo_scan_reports_every_trial_and_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "kind = \"nogo-scan\"\nseed = 11\n[nogo]\ntrials = 12\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = run(&cfg, &a, &["--threads", "1"]);
    assert!(oa.status.success(), "{}", stderr(&oa));
    let ob = bin()
        .env("OQNET_THREADS", "4")
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert!(ob.status.success(), "{}", stderr(&ob));
    let ja = json(a.join("nogo_scan.json"));
    let results = ja["results"].as_array().unwrap();
    assert_eq!(results.len(), 12);
    assert!(results
        .iter()
        .all(|t| t["verdicts"]["coldest_absorbs"] == true));
    assert_eq!(ja, json(b.join("nogo_scan.json")));
    assert_eq!(
        std::fs::read_to_string(a.join("nogo_trials.csv")).unwrap(),
        std::fs::read_to_string(b.join("nogo_trials.csv")).unwrap()
    );
    assert_eq!(json(b.join("manifest.json"))["threads"], 4);
}

#[test]
fn seed_flag_changes_the_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "kind = \"nogo-scan\"\n[nogo]\ntrials = 2\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &a, &["--seed", "1"]).status.success());
    assert!(run(&cfg, &b, &["--seed", "2"]).status.success());
    let (ja, jb) = (
        json(a.join("nogo_scan.json")),
        json(b.join("nogo_scan.json")),
    );
    assert_ne!(ja["results"], jb["results"]);
    assert_eq!(json(a.join("manifest.json"))["seed"], 1);
}

#[test]
fn overlapping_regions_fail_with_structural_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        r#"kind = "heat-report"
[network]
renormalized_potential = [[1.0, 0.0], [0.0, 1.0]]
[[network.regions]]
id = "a"
sites = [0, 1]
reservoirs = [{ temperature = 1.0 }]
[[network.regions]]
id = "b"
sites = [1]
reservoirs = [{ temperature = 0.5 }]
"#,
    );
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("structural"), "{}", stderr(&o));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("", "kind"),
        ("kind = \"heat-report\"\n[numerics]\nstep = 0.1\n", "numerics.step"),
        (
            "kind = \"heat-report\"\n[[network.regions]]\nid = \"a\"\nsites = [0]\nreservoirs = [{ temprature = 1.0 }]\n",
            "network.regions[0].reservoirs[0].temprature",
        ),
        ("kind = \"heat-report\"\n[numerics]\nh = -1.0\n", "numerics.h"),
        ("kind = \"teleport\"\n", "kind"),
    ];
    for (i, (text, key)) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("c{i}.toml"), text);
        let o = run(&cfg, &dir.path().join(format!("out{i}")), &[]);
        assert!(!o.status.success(), "case {i} should fail");
        assert!(stderr(&o).contains(key), "case {i}: {}", stderr(&o));
    }
}

#[test]
fn overrides_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "kind = \"fdt-selftest\"\n");
    let out = dir.path().join("out");
    let o = run(
        &cfg,
        &out,
        &[
            "--tol-override",
            "fdt.grid_points=7",
            "--tol-override",
            "numerics.rel_tol=1e-9",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(out.join("manifest.json"));
    assert_eq!(m["config"]["fdt"]["grid_points"], 7);
    assert_eq!(m["config"]["numerics"]["rel_tol"], 1e-9);
}

#[test]
fn bad_thread_env_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "kind = \"fdt-selftest\"\n");
    let o = bin()
        .env("OQNET_THREADS", "many")
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("OQNET_THREADS"));
}

#[test]
fn describe_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        "kind = \"oracle-compare\"\n[oracle]\nmodes = [50]\n[output]\ndir = \"never\"\n",
    );
    let o = bin()
        .current_dir(dir.path())
        .args(["describe", "--config", "c.toml"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("experiment: oracle-compare"));
    assert!(text.contains("M = 50"));
    assert!(
        text.contains("warning"),
        "short window should warn:\n{text}"
    );
    assert!(!dir.path().join("never").exists());
}

#[test]
fn example_configs_parse_and_describe() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let o = bin()
                .arg("describe")
                .arg("--config")
                .arg(&p)
                .output()
                .unwrap();
            assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
            seen += 1;
        }
    }
    assert_eq!(seen, 7);
}

#[test]
fn heat_report_writes_transfer_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "kind = \"heat-report\"\n[numerics]\nomega_points = 20\n",
    );
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("transfer_matrix.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 1 + 2 * 4);
    assert_eq!(rdr.records().count(), 20);
    let r = json(out.join("heat_report.json"));
    let q = r["report"]["qdot"].as_array().unwrap();
    // heat enters from the hot reservoir and leaves into the cold one
    let (hot, cold) = (q[0].as_f64().unwrap(), q[1].as_f64().unwrap());
    assert!(hot > 0.0 && cold < 0.0);
    assert!((hot + cold).abs() < 1e-8 * hot.abs());
}
