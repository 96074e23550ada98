//! End-to-end runs of the `emoblind` binary on a small configuration.

use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "gen.num_identities=120",
    "sup.outer_iterations=2",
    "sup.suppressor_steps=5",
    "sup.lnl_epochs=3",
    "probe.train.epochs=5",
    "probe.forest.trees=5",
    "ablate.repeats=1",
    "fair.repeats=1",
    "fair.train.epochs=2",
    "bias.min_class_size=5",
    "split.verification_pairs=50",
];

fn emoblind(out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_emoblind"));
    cmd.env_remove("EMOBLIND_OUT").arg("--out").arg(out);
    for s in SMALL {
        cmd.args(["--set", s]);
    }
    cmd.args(args).output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = emoblind(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const OUTPUTS: [&str; 5] = [
    "metrics.json",
    "accuracy_table.csv",
    "ablation.csv",
    "ablation.svg",
    "fairness_table.csv",
];

#[test]
fn staged_run_then_report_reproduces_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate"]);
    ok(d, &["train", "--method", "sn"]);
    ok(d, &["train", "--method", "lnl"]);
    let printed = ok(d, &["probe"]);
    assert!(printed.contains("task,chance,x,phi_sn(x),diff_phi_sn(x),phi_lnl(x),diff_phi_lnl(x)"));
    ok(d, &["ablate"]);
    ok(d, &["fairness"]);

    let table = String::from_utf8(read(d, "accuracy_table.csv")).unwrap();
    let tasks: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(tasks, ["identity", "gender", "ethnicity", "emotion-nn", "emotion-svm", "emotion-rf"]);
    let fairness = String::from_utf8(read(d, "fairness_table.csv")).unwrap();
    assert!(fairness.contains("x (biased)") && fairness.contains("x (unbiased)"));
    for f in ["config.txt", "timings.json", "dataset.txt", "suppressor_sn.txt", "suppressor_lnl.txt"] {
        assert!(d.join(f).exists(), "{f} missing");
    }

    let before: Vec<Vec<u8>> = OUTPUTS.iter().map(|f| read(d, f)).collect();
    for f in &OUTPUTS[1..] {
        std::fs::remove_file(d.join(f)).unwrap();
    }
    ok(d, &["report"]);
    let after: Vec<Vec<u8>> = OUTPUTS.iter().map(|f| read(d, f)).collect();
    assert_eq!(before, after);
}

#[test]
fn all_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(a.path(), &["--set", "seed=5", "all"]);
    ok(b.path(), &["--set", "seed=5", "all"]);
    for f in OUTPUTS.iter().chain(&["dataset.txt", "suppressor_sn.txt", "suppressor_lnl.txt"]) {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
    let c = tempfile::tempdir().unwrap();
    ok(c.path(), &["--set", "seed=6", "all"]);
    assert_ne!(read(a.path(), "dataset.txt"), read(c.path(), "dataset.txt"));
}

#[test]
fn report_sections_can_be_selected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate"]);
    ok(d, &["ablate"]);
    let printed = ok(d, &["report", "--section", "ablation"]);
    assert!(printed.contains("ablation.csv") && !printed.contains("accuracy_table"));
    let o = emoblind(d, &["report", "--section", "fairness"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fairness"));
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = emoblind(dir.path(), &["--set", "sup.no_such_knob=3", "generate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sup.no_such_knob"));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "gen.num_identities = 50\ngen.colour = red\n").unwrap();
    let o = emoblind(dir.path(), &["--config", cfg.to_str().unwrap(), "generate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen.colour"));
}

#[test]
fn missing_inputs_exit_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["probe"][..], &["train", "--method", "sn"], &["report"]] {
        let o = emoblind(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn config_file_and_env_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, "# tiny world\ngen.num_identities = 30\nseed = 3\n").unwrap();
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_emoblind"))
        .env("EMOBLIND_OUT", &out)
        .args(["--config", cfg.to_str().unwrap(), "generate"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let saved = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(saved.contains("gen.num_identities = 30") && saved.contains("seed = 3"));
    let samples = std::fs::read_to_string(out.join("dataset.txt")).unwrap();
    assert!(samples.lines().count() >= 30 * 6);
}

#[test]
fn help_exits_cleanly_and_bad_usage_does_not() {
    let bin = env!("CARGO_BIN_EXE_emoblind");
    assert_eq!(Command::new(bin).arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(Command::new(bin).arg("frobnicate").output().unwrap().status.code(), Some(1));
    let o = Command::new(bin).args(["train", "--method", "pca"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
