use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bbfdr::benchmark::{generate, AlternativeKind, PriorKind};
use bbfdr::stage1::bh_select;

fn bbfdr(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bbfdr"));
    cmd.args(args).env("BBFDR_THREADS", "1");
    for (flag, path) in paths {
        cmd.arg(flag).arg(path);
    }
    cmd.output().unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON in {text}"));
    serde_json::from_str(line).unwrap()
}

struct Inputs {
    dir: tempfile::TempDir,
    z: PathBuf,
    x: PathBuf,
}

impl Inputs {
    fn new(z: &str, x: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (zp, xp) = (dir.path().join("z.csv"), dir.path().join("x.csv"));
        std::fs::write(&zp, z).unwrap();
        std::fs::write(&xp, x).unwrap();
        Inputs { dir, z: zp, x: xp }
    }

    fn synthetic(kind: PriorKind, n: usize, m: usize, seed: u64) -> Self {
        let data = generate(kind, n, m, if kind == PriorKind::Constant { 0 } else { m / 2 }, AlternativeKind::Ws, seed)
            .unwrap();
        let mut z = String::from("experiment_id,z\n");
        let mut x = String::from("experiment_id");
        for j in 0..m {
            x.push_str(&format!(",f{j}"));
        }
        x.push('\n');
        for i in 0..n {
            z.push_str(&format!("r{i},{}\n", data.z.get(i)));
            x.push_str(&format!("r{i}"));
            for &v in data.x.row(i) {
                x.push_str(&format!(",{v}"));
            }
            x.push('\n');
        }
        Inputs::new(&z, &x)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, command: &str, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![command];
        args.extend(extra);
        bbfdr(&args, &[("--z", &self.z), ("--x", &self.x), ("--out", &self.out(out))])
    }
}

fn read_json(path: PathBuf) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn csv_rows(path: PathBuf) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

const FAST: &[&str] = &["--epochs", "5", "--density", "known-ws"];

#[test]
fn unknown_scenario_is_a_usage_error() {
    let out = bbfdr(&["bench", "--scenario", "quadratic", "--n", "100"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_alpha_is_a_usage_error_with_json() {
    let inputs = Inputs::new("experiment_id,z\na,1\n", "experiment_id,g\na,0\n");
    let out = inputs.run("stage1", "o", &["--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
}

#[test]
fn non_binary_covariate_fails_with_located_message() {
    let inputs = Inputs::new("experiment_id,z\na,1\nb,2\n", "experiment_id,g1,g2\na,0,1\nb,2,0\n");
    let out = inputs.run("stage1", "o", &[]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("non-binary covariate at row 2, column g1"), "{msg}");
    assert!(!inputs.out("o").exists());
}

#[test]
fn stage1_then_stage2_round_trip() {
    let inputs = Inputs::synthetic(PriorKind::Linear, 1500, 6, 3);
    let s1 = inputs.run("stage1", "s1", &["--seed", "2", "--epochs", "10", "--density", "known-ws"]);
    assert!(s1.status.success(), "{}", String::from_utf8_lossy(&s1.stderr));
    let summary = read_json(inputs.out("s1/stage1_summary.json"));
    assert_eq!(summary["seed"], 2);
    assert_eq!(summary["n"], 1500);
    assert!(summary["schema_version"].as_u64().is_some());
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    let posteriors = csv_rows(inputs.out("s1/stage1_posteriors.csv"));
    assert_eq!(posteriors.len(), 1500);
    let rejected = posteriors.iter().filter(|r| r[3] == "1").count() as u64;
    assert_eq!(summary["q"].as_u64().unwrap(), rejected);

    let mut args = vec!["stage2", "--seed", "2", "--mc-draws", "30", "--alpha", "0.2"];
    args.extend(["--density", "known-ws"]);
    let s2 = bbfdr(
        &args,
        &[("--z", &inputs.z), ("--x", &inputs.x), ("--out", &inputs.out("s2")), ("--stage1", &inputs.out("s1"))],
    );
    assert!(s2.status.success(), "{}", String::from_utf8_lossy(&s2.stderr));
    let rows = csv_rows(inputs.out("s2/stage2_pvalues.csv"));
    assert_eq!(rows.len(), 6);
    let p: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
    let selected: Vec<bool> = rows.iter().map(|r| r[3] == "1").collect();
    assert_eq!(selected, bh_select(&p, 0.2).unwrap());
    let summary = read_json(inputs.out("s2/stage2_summary.json"));
    assert_eq!(summary["selected_features"].as_array().unwrap().len(), selected.iter().filter(|&&s| s).count());
}

#[test]
fn stage2_rejects_artifacts_from_another_dataset() {
    let a = Inputs::synthetic(PriorKind::Linear, 300, 4, 1);
    assert!(a.run("stage1", "s1", FAST).status.success());
    let b = Inputs::synthetic(PriorKind::Linear, 300, 4, 2);
    let out = bbfdr(
        &["stage2", "--mc-draws", "5"],
        &[("--z", &b.z), ("--x", &b.x), ("--out", &b.out("s2")), ("--stage1", &a.out("s1"))],
    );
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("rerun `bbfdr stage1`"), "{msg}");
    assert!(!b.out("s2").exists());

    let missing = bbfdr(
        &["stage2"],
        &[("--z", &b.z), ("--x", &b.x), ("--out", &b.out("s2")), ("--stage1", &b.out("nothing"))],
    );
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn alpha_endpoints() {
    let inputs = Inputs::synthetic(PriorKind::Linear, 1000, 6, 4);
    assert!(inputs.run("stage1", "wide", &["--alpha", "0.999", "--epochs", "5", "--density", "known-ws"]).status.success());
    assert!(inputs.run("stage1", "tight", &["--alpha", "1e-9", "--epochs", "5", "--density", "known-ws"]).status.success());
    let wide = read_json(inputs.out("wide/stage1_summary.json"))["q"].as_u64().unwrap();
    let tight = read_json(inputs.out("tight/stage1_summary.json"))["q"].as_u64().unwrap();
    assert!(wide >= 990, "q = {wide}");
    assert_eq!(tight, 0);
}

#[test]
fn predictive_recursion_writes_density() {
    let inputs = Inputs::synthetic(PriorKind::Linear, 800, 4, 5);
    let out = inputs.run("stage1", "o", &["--epochs", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(inputs.out("o/alternative_density.csv").exists());
    let summary = read_json(inputs.out("o/stage1_summary.json"));
    let pi0 = summary["null_proportion"].as_f64().unwrap();
    assert!(pi0 > 0.0 && pi0 < 1.0);
}

#[test]
fn bench_writes_trials_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let out = bbfdr(
        &["bench", "--scenario", "constant", "--alt", "ws", "--n", "1000", "--trials", "5", "--epochs", "5"],
        &[("--out", &dir.path().join("b"))],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_rows(dir.path().join("b/bench_trials.csv")).len(), 5);
    assert_eq!(csv_rows(dir.path().join("b/bench_aggregate.csv")).len(), 1);
    let svg = std::fs::read_to_string(dir.path().join("b/bench_plot.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(read_json(dir.path().join("b/bench_summary.json"))["schema_version"].is_u64());

    let sweep = bbfdr(
        &["bench", "--scenario", "linear", "--n", "300,600", "--trials", "2", "--epochs", "3"],
        &[("--out", &dir.path().join("s"))],
    );
    assert!(sweep.status.success(), "{}", String::from_utf8_lossy(&sweep.stderr));
    let rows = csv_rows(dir.path().join("s/bench_aggregate.csv"));
    assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["300", "600"]);
}

#[test]
fn twogroups_on_constant_and_linear_data() {
    let constant = Inputs::synthetic(PriorKind::Constant, 5000, 10, 6);
    assert!(constant.run("twogroups", "o", &["--density", "known-ws"]).status.success());
    let c = read_json(constant.out("o/twogroups_summary.json"));
    let (bb, gl) = (c["bb_fdr_discoveries"].as_f64().unwrap(), c["global_discoveries"].as_f64().unwrap());
    // the marginal likelihood pins only the prior mean, so the learned prior
    // stays diffuse and shrinks posteriors below the point-mass fit
    assert!(bb <= 1.1 * gl, "constant prior: {bb} vs {gl}");
    assert_eq!(c["covariates_informative"], false);

    let linear = Inputs::synthetic(PriorKind::Linear, 10_000, 50, 7);
    assert!(linear.run("twogroups", "o", &["--density", "known-ws"]).status.success());
    let l = read_json(linear.out("o/twogroups_summary.json"));
    assert!(l["bb_fdr_discoveries"].as_u64().unwrap() > l["global_discoveries"].as_u64().unwrap());
    assert!(l["recommendation"].as_str().unwrap().contains("discoveries"));
}
