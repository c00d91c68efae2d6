use std::fs;
use std::path::Path;

use safe_mbrl::cli::{run, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use safe_mbrl::harness::{crosscheck_summary, read_metrics, seed_dir};
use safe_mbrl::mdp::{classify_all, TabularMdp};

const TINY: &str = r#"{
  "env": {"name": "car-stop"},
  "seeds": [0, 1],
  "agent": {
    "total_env_steps": 300,
    "warmup_steps": 100,
    "n_rollout": 2,
    "n_actor": 1,
    "model": {"kind": "oracle"},
    "sac": {"hidden": [8], "batch_size": 8}
  }
}"#;

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("safe-mbrl").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cli(&[]), EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(cli(&["verify", "no-such-suite"]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--out", "x"]), EXIT_USAGE);
    assert_eq!(cli(&["export-mdp", "point-hazard"]), EXIT_USAGE);
    assert_eq!(cli(&["export-mdp"]), EXIT_USAGE);
}

#[test]
fn config_with_unknown_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"env": {"name": "car-stop"}, "agent": {"horizn": 3}}"#);
    assert_eq!(cli(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]), EXIT_USAGE);
}

#[test]
fn verify_exit_codes_follow_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report.json");
    assert_eq!(cli(&["verify", "contraction", "--out", s(&out)]), EXIT_OK);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["results"][0]["failures"], 0);
    // The theorem suite has known failing instances.
    assert_eq!(cli(&["verify", "theorem-safety", "--out", s(&out)]), EXIT_FAILURE);
}

#[test]
fn export_mdp_writes_a_loadable_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("car.json");
    assert_eq!(cli(&["export-mdp", "car-stop", "--gamma", "0.9", "--out", s(&out)]), EXIT_OK);
    let text = fs::read_to_string(&out).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["n_states", "n_actions", "gamma", "transition", "reward", "unsafe"] {
        assert!(doc.get(key).is_some(), "missing {key}");
    }
    let mdp = TabularMdp::from_json(&text).unwrap();
    assert_eq!(mdp.gamma(), 0.9);
    assert_eq!(classify_all(&mdp).len(), mdp.n_states());
}

#[test]
fn train_inspect_and_crosscheck() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    assert_eq!(cli(&["train", "--config", s(&cfg), "--out", s(&out), "--seeds", "5,6"]), EXIT_OK);
    for seed in [5, 6] {
        let dir = seed_dir(&out, seed);
        let rows = read_metrics(&dir.join("metrics.csv")).unwrap();
        assert!(rows.windows(2).all(|w| w[0].episode < w[1].episode));
        assert!(rows.last().unwrap().env_steps >= 300);
        for f in ["schedule.json", "models/oracle.json", "critic/critic.json", "policy/policy.json"] {
            assert!(dir.join(f).exists(), "{f}");
        }
    }
    let header = fs::read_to_string(seed_dir(&out, 5).join("metrics.csv")).unwrap();
    assert!(header.starts_with(
        "episode,env_steps,return,cumulative_violations,current_C,model_nll,critic_loss,policy_loss\n"
    ));
    assert!(crosscheck_summary(&out).unwrap().passed);
    assert_eq!(cli(&["verify", "summary-crosscheck", s(&out)]), EXIT_OK);
    assert_eq!(cli(&["inspect", s(&out)]), EXIT_OK);
    assert_eq!(cli(&["inspect", s(&tmp.path().join("nothing"))]), EXIT_USAGE);

    // Existing output needs --force.
    assert_eq!(cli(&["train", "--config", s(&cfg), "--out", s(&out)]), EXIT_USAGE);
    assert_eq!(cli(&["train", "--config", s(&cfg), "--out", s(&out), "--force"]), EXIT_OK);
    assert!(seed_dir(&out, 0).exists() && !seed_dir(&out, 5).exists());
}

#[test]
fn sweep_c_tabulates_each_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("sweep");
    let code = cli(&["sweep-c", "--config", s(&cfg), "--out", s(&out), "--seeds", "0", "bound", "3xbound", "0"]);
    assert_eq!(code, EXIT_OK);
    let mut reader = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["label", "C", "final_return_mean", "final_return_std", "cumulative_violations_mean", "cumulative_violations_std"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let c: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((c[1] - 3.0 * c[0]).abs() < 1e-12 && c[0] > 0.0 && c[2] == 0.0);
    assert!(out.join("sweep_curves.csv").exists());
    assert_eq!(cli(&["sweep-c", "--config", s(&cfg), "--out", s(&out), "--force", "nonsense"]), EXIT_USAGE);
}
