use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use set2box::corpus::synth;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_set2box"))
}

fn corpus(dir: &Path) -> PathBuf {
    let p = dir.join("c.sets");
    let c = synth::planted_clusters(3, 10, 10, 3, 7, 1).unwrap();
    c.write(std::fs::File::create(&p).unwrap()).unwrap();
    p
}

fn train(corpus: &Path, out: &Path, method: &str) -> Output {
    bin()
        .args(["train", "--method", method, "--d", "4", "--D", "2", "--K", "4", "--epochs", "2"])
        .args(["--seeds", "0", "--set", "val_pairs=100", "--corpus"])
        .arg(corpus)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_corpus_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = train(&tmp.path().join("nope.sets"), &tmp.path().join("run"), "set2box");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--help"));
}

#[test]
fn unknown_method_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path());
    let o = train(&c, &tmp.path().join("run"), "set2blob");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn set2bin_writes_a_sketch() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path());
    let run = tmp.path().join("run");
    assert!(train(&c, &run, "set2bin").status.success());
    assert!(run.join("seed-0/sketch.s2bn").exists());
}

#[test]
fn quantized_run_writes_codebook_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path());
    let run = tmp.path().join("run");
    assert!(train(&c, &run, "set2box+").status.success());
    assert!(run.join("seed-0/codebook.s2bq").exists());
    assert!(run.join("config.txt").exists());

    let o = bin()
        .args(["eval", "--pairs", "200", "--measures", "ji,oc", "--run"])
        .arg(&run)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.contains("ji") || r.contains("oc")), "{text}");
    assert!(!rows.iter().any(|r| r.contains(",cs,") || r.contains(",di,")), "{text}");
}

#[test]
fn damaged_artifact_exits_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path());
    let run = tmp.path().join("run");
    assert!(train(&c, &run, "set2box").status.success());
    let model = run.join("seed-0/model.s2b1");
    let mut bytes = std::fs::read(&model).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(&model, bytes).unwrap();
    let o = bin().args(["eval", "--pairs", "50", "--run"]).arg(&run).output().unwrap();
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn sweep_dry_run_lists_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path());
    let o = bin()
        .args(["sweep", "--dry-run", "--method", "set2box+", "--lrs", "0.01,0.001", "--lambdas", "0,0.1,1", "--betas", "1"])
        .args(["--d", "32", "--seeds", "0,1", "--corpus"])
        .arg(&c)
        .arg("--out")
        .arg(tmp.path().join("sweep"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.trim_end().ends_with("6 runs x 2 seeds"), "{text}");
    assert!(!tmp.path().join("sweep").exists());
}

#[test]
fn cost_prints_every_method() {
    let o = bin().args(["cost", "--num-sets", "1000"]).output().unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    for m in ["set2box", "set2box+", "set2bin"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{m},"))), "{text}");
    }
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path());
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "method = set2box\nd = 6\nepochs = 1\n").unwrap();
    let run = tmp.path().join("run");
    let o = bin()
        .args(["train", "--d", "4", "--seeds", "0", "--set", "val_pairs=50", "--config"])
        .arg(&cfg)
        .arg("--corpus")
        .arg(&c)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let written = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(written.lines().any(|l| l.replace(' ', "") == "d=4"), "{written}");
    assert!(written.lines().any(|l| l.replace(' ', "") == "epochs=1"), "{written}");
}
