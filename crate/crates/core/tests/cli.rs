use std::path::Path;
use std::process::{Command, Output};

use fppn::dataio::SampleIndex;

fn fppn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fppn"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

const SPEC: &str = "train=3\nval=1\nwidth=32\nheight=32\nmin_size=6\nmax_size=14\n";
const NET: &str = "base_channels=4\ninit_channels=2\nrefine_channels=4\ncbam_reduction=2\nepochs=0\n";

fn synth(dir: &Path) {
    std::fs::write(dir.join("spec.txt"), SPEC).unwrap();
    std::fs::write(dir.join("net.txt"), NET).unwrap();
    let o = fppn(&["synth", "--spec", "spec.txt", "--out", "data"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fppn(&[], dir.path()).status.code(), Some(2));
    assert_eq!(fppn(&["train", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(fppn(&["train"], dir.path()).status.code(), Some(2));
    let o = fppn(&["train", "--manifest", "nope.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest"));
    let o = fppn(&["train", "--manifest", "x", "--set", "colour=blue"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fppn(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn synth_train_predict_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    assert!(d.join("data/train/manifest.txt").is_file());
    assert!(d.join("data/val/manifest.txt").is_file());

    let common = [
        "--config",
        "net.txt",
        "--manifest",
        "data/train/manifest.txt",
        "--checkpoint",
        "m.ckpt",
    ];
    let mut train = vec!["train"];
    train.extend(common);
    let o = fppn(&train, d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("m.ckpt").is_file());

    let mut predict = vec!["predict"];
    predict.extend(common);
    predict.extend(["--out", "pred"]);
    assert_eq!(fppn(&predict, d).status.code(), Some(0));
    assert!(d.join("pred/summary.csv").is_file());
    assert!(d.join("pred/s0002.ply").is_file());

    let mut eval = vec!["eval"];
    eval.extend(common);
    eval.extend(["--out", "ev"]);
    let o = fppn(&eval, d);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("nearest-fill") && text.contains("model"), "{text}");

    let index = SampleIndex::from_manifest(&d.join("data/train/manifest.txt")).unwrap();
    std::fs::remove_file(index.resolve(&index.paths(0).unwrap().rgb_tp1)).unwrap();
    let o = fppn(&predict, d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sample 0"));
    assert!(d.join("pred/s0001.ply").is_file());
}

#[test]
fn reported_table_is_ranked() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.csv"), "a,2,1,1,1\nb,1,1,1,1\n").unwrap();
    let o = fppn(&["eval", "--table", "t.csv", "--out", "r"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.find("| b").unwrap() < text.find("| a").unwrap(), "{text}");
    assert!(dir.path().join("r/ranking.csv").is_file());
}
