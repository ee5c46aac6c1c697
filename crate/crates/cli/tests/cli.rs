use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn xembody(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_xembody")).current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "xembody {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn dataset_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = stdout(&xembody(d, &["generate"]));
    assert!(out.contains("1012 embodiments"));
    let split = stdout(&xembody(d, &["split"]));
    let lines: Vec<&str> = split.lines().collect();
    assert!(lines[0].starts_with("humanoid: train 278 test 70"));
    assert!(lines[1].starts_with("quadruped: train 265 test 67"));
    let idx = |l: &str| l.split_once('[').unwrap().1.to_string();
    assert_eq!(idx(lines[1]), idx(lines[2]));

    xembody(d, &["stats", "--out", "stats.csv"]);
    assert!(fs::read_to_string(d.join("stats.csv")).unwrap().starts_with("class,parameter,bin,count"));

    xembody(d, &["export-urdf", "--id", "hexapod-0010", "--out", "urdf"]);
    let desc = stdout(&xembody(d, &["import-urdf", "urdf/hexapod-0010.urdf", "--class", "hexapod"]));
    let mut rows = desc.lines();
    assert!(rows.next().unwrap().starts_with("# hexapod-0010 (hexapod"));
    assert!(rows.all(|r| r.split(',').count() == 18));
}

#[test]
fn unknown_embodiment_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    xembody(tmp.path(), &["generate"]);
    let out = Command::new(env!("CARGO_BIN_EXE_xembody"))
        .current_dir(tmp.path())
        .args(["train-expert", "--id", "quadruped-9999"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    xembody(d, &["generate"]);
    let pool = ["quadruped-0003", "hexapod-0001"];
    for id in pool {
        let args = ["train-expert", "--id", id, "--iterations", "1", "--envs", "2", "--steps", "8", "--hidden", "16"];
        xembody(d, &args);
        assert!(d.join("experts").join(format!("{id}.ckpt")).exists());
    }
    let got = stdout(&xembody(d, &["collect", "--envs", "2", "--steps", "40", "--validation-steps", "10"]));
    assert!(got.contains("quadruped-0003: 60 train / 20 validation samples"), "{got}");

    let got = stdout(&xembody(d, &["distill", "--epochs", "1", "--classes", "quadruped"]));
    assert!(got.starts_with("1 embodiments"), "{got}");
    let loss = fs::read_to_string(d.join("policy/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 2);

    let ids = ["--id", "quadruped-0000", "--id", "humanoid-0000", "--id", "hexapod-0002"];
    let mut args = vec!["eval", "--policy", "policy/policy.ckpt", "--episodes", "1", "--ood", "--scales", "1,0.1"];
    args.extend(ids);
    let table = stdout(&xembody(d, &args));
    assert_eq!(table.lines().next().unwrap(), "class,1,0.1");
    assert_eq!(table.lines().count(), 4);

    let mut args = vec!["latent", "--policy", "policy/policy.ckpt", "--out", "lat"];
    args.extend(ids);
    xembody(d, &args);
    let pca = fs::read_to_string(d.join("lat/pca.csv")).unwrap();
    assert!(pca.starts_with("id,pc1,pc2\n"));
    assert_eq!(pca.lines().count(), 4);

    let cfg = include_str!("../../../configs/study.toml")
        .replace("proportions = [0.05, 0.2, 0.4, 0.6, 0.8, 1.0]", "proportions = [0.5, 1.0]")
        .replace("epochs = 80", "epochs = 1")
        .replace("eval_horizon = 1000", "eval_horizon = 10")
        .replace("eval_episodes = 4", "eval_episodes = 1")
        .replace("[data_scaling]\nproportion = 0.05\nmultipliers = [1, 2]\n", "");
    fs::write(d.join("study.toml"), cfg).unwrap();
    let first = stdout(&xembody(d, &["study", "--config", "study.toml", "--max-cells", "1"]));
    assert!(first.contains("1 cells pending"), "{first}");
    xembody(d, &["study", "--config", "study.toml"]);
    let csv = fs::read_to_string(d.join("study/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    xembody(d, &["study", "--config", "study.toml"]);
    assert_eq!(fs::read_to_string(d.join("study/results.csv")).unwrap(), csv);
}
