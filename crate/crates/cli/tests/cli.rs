use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const FAST: &str = "1e-3";

fn etbr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etbr")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn simulate(dir: &Path, cfg: &str, extra: &[&str]) -> Output {
    let out = dir.display().to_string();
    let mut args = vec!["simulate", cfg, "--step", FAST, "--out", &out];
    args.extend_from_slice(extra);
    etbr(&args)
}

fn write_config(dir: &Path, name: &str, edit: impl Fn(String) -> String) -> String {
    let body = edit(std::fs::read_to_string(configs().join("inst_p12.toml")).unwrap());
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn design_reports_the_anchor() {
    let o = etbr(&["design", &config("inst_p12.toml")]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("Γ1(1,1) = 0.5699"));
    let o = etbr(&["design", &config("noninst_dist_p20.toml"), "--json"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert!((v["constants"]["V0"].as_f64().unwrap() - 5.3942).abs() < 1e-3);
}

#[test]
fn design_rejects_an_infeasible_margin() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "a10.toml", |s| s.replace("margin = 1.2", "margin = 10.0"));
    let o = etbr(&["design", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("W ≤ 0"), "{}", text(&o));
}

#[test]
fn missing_gain_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "nok.toml", |s| s.replace("k = [[2.0, -8.0]]\n", ""));
    let o = etbr(&["design", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("missing field `k`"), "{}", text(&o));
}

#[test]
fn json_configs_are_accepted() {
    let dir = TempDir::new().unwrap();
    let toml_text = std::fs::read_to_string(configs().join("inst_p20.toml")).unwrap();
    let value: toml::Value = toml::from_str(&toml_text).unwrap();
    let path = dir.path().join("inst_p20.json");
    std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
    let o = etbr(&["design", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&etbr(&["frobnicate"])), 1);
    assert_eq!(code(&etbr(&["reproduce", "fig9"])), 1);
    assert_eq!(code(&etbr(&["simulate"])), 1);
    assert_eq!(code(&etbr(&["--help"])), 0);
}

#[test]
fn simulate_writes_trace_and_manifest() {
    let dir = TempDir::new().unwrap();
    let o = simulate(dir.path(), &config("inst_p12.toml"), &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let summary = String::from_utf8_lossy(&o.stdout);
    let count: usize = summary.split_whitespace().next().unwrap().parse().unwrap();
    assert!((17..=19).contains(&count), "{summary}");
    let samples = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert!(samples.starts_with("t,x1,x2,xhat1,xhat2,V,Vd,b,de,eps\n"));
    let events = std::fs::read_to_string(dir.path().join("events.csv")).unwrap();
    assert!(events.starts_with("k,tk,rk,pk,bits,cause,cumulative_bits\n"));
    assert_eq!(events.lines().count(), count + 1);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "complete");
    assert_eq!(m["config_digest"].as_str().unwrap().len(), 64);
    assert_eq!(m["summary"]["transmissions"], count);
    assert_eq!(m["overrides"]["step"], 1e-3);
    assert!(m["constants"]["P"].is_array());
}

#[test]
fn zero_horizon_gives_empty_valid_files() {
    let dir = TempDir::new().unwrap();
    let o = simulate(dir.path(), &config("inst_p12.toml"), &["--horizon", "0"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let events = std::fs::read_to_string(dir.path().join("events.csv")).unwrap();
    assert_eq!(events.lines().count(), 1);
    let o = etbr(&["rates", dir.path().to_str().unwrap(), &config("inst_p12.toml")]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let rates = std::fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    let mut lines = rates.lines();
    assert_eq!(lines.next(), Some("t,necessary,realized_interp,sufficient"));
    for l in lines {
        let cols: Vec<&str> = l.split(',').collect();
        assert!(!cols[1].is_empty() && cols[3].is_empty(), "{l}");
    }
}

#[test]
fn override_file_reproduces_sim2() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let o = simulate(a.path(), &config("sim1.toml"), &["--pk-override", &config("sim2_overrides.csv")]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let o = simulate(b.path(), &config("sim2.toml"), &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let ev = |d: &TempDir| std::fs::read(d.path().join("events.csv")).unwrap();
    assert_eq!(ev(&a), ev(&b));
    let first: Vec<String> = String::from_utf8(ev(&b)).unwrap().lines().skip(1).take(4).map(String::from).collect();
    assert!(first.iter().all(|l| l.split(',').nth(3) == Some("20")), "{first:?}");
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        assert_eq!(code(&simulate(d.path(), &config("noninst_dist_p20.toml"), &["--horizon", "10"])), 0);
    }
    for f in ["samples.csv", "events.csv", "manifest.json"] {
        // manifests name outputs relative to their directory
        let read = |d: &TempDir| std::fs::read(d.path().join(f)).unwrap();
        assert_eq!(read(&a), read(&b), "{f}");
    }
}

#[test]
fn breach_keeps_a_failed_trace() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().display().to_string();
    let o = etbr(&["simulate", &config("inst_p12.toml"), "--step", "0.2", "--out", &out]);
    assert_eq!(code(&o), 3, "{}", text(&o));
    assert!(text(&o).contains("breach"));
    for f in ["samples.csv.failed", "events.csv.failed", "manifest.json.failed"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn rates_round_trip_for_bundled_configs() {
    for name in ["inst_p12.toml", "inst_p20.toml", "sim1.toml"] {
        let dir = TempDir::new().unwrap();
        assert_eq!(code(&simulate(dir.path(), &config(name), &[])), 0);
        let o = etbr(&["rates", dir.path().to_str().unwrap(), &config(name)]);
        assert_eq!(code(&o), 0, "{}", text(&o));
        let t = text(&o);
        assert!(t.contains("necessary asymptotic rate 7.6481 bits/s"), "{t}");
        if name.starts_with("inst") {
            assert!(t.contains("between necessary and sufficient bounds at"), "{t}");
            let line = t.lines().find(|l| l.contains("between")).unwrap();
            let words: Vec<&str> = line.split_whitespace().collect();
            let n = words.len();
            assert_eq!(words[n - 4], words[n - 2], "{line}");
        }
        let rates = std::fs::read_to_string(dir.path().join("rates.csv")).unwrap();
        assert_eq!(rates.lines().count(), 402);
    }
}

#[test]
fn rates_refuses_a_different_config() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&simulate(dir.path(), &config("inst_p12.toml"), &["--horizon", "5"])), 0);
    let o = etbr(&["rates", dir.path().to_str().unwrap(), &config("inst_p20.toml")]);
    assert_eq!(code(&o), 2);
    let t = text(&o);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(t.contains(m["config_digest"].as_str().unwrap()), "{t}");
    assert!(t.contains("digest mismatch"));
}

#[test]
fn reproduce_writes_figure_data() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().display().to_string();
    let o = etbr(&["reproduce", "fig2a", "--out", &out, "--step", FAST]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let bits = std::fs::read_to_string(dir.path().join("fig2a/fig2a_bits.csv")).unwrap();
    assert!(bits.starts_with("k,tk,pk,bits,cumulative_bits\n"));
    let o = etbr(&["reproduce", "fig1a", "--out", &out, "--step", FAST]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let v = std::fs::read_to_string(dir.path().join("fig1a/fig1a_v.csv")).unwrap();
    assert!(v.starts_with("t,V,Vd\n") && v.lines().count() > 100);
}
