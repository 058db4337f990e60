use std::path::Path;
use std::process::{Command, Output};

fn cpcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpcc"))
        .args(args)
        .env_remove("CPCC_OUT_DIR")
        .output()
        .expect("spawn cpcc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = cpcc(&["train", "--dataset", "blobs", "--k", "4", "--epochs", "5", "--pretrain-epochs", "2", "--seed", "7", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["epoch_log.csv", "final_labels.csv", "checkpoint.bin", "manifest.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(out.join("epoch_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let line = stdout(&o);
    let fields: Vec<f64> = line.trim().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(fields.len(), 3);

    // the manifest alone reproduces the run
    let again = tmp.path().join("again");
    let o = cpcc(&["train", "--config", path(&out.join("manifest.txt")), "--out", path(&again)]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["epoch_log.csv", "final_labels.csv", "checkpoint.bin"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
    let manifest = std::fs::read_to_string(again.join("manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l.starts_with("run.artifact.epoch_log.csv=sha256:")));
    assert!(manifest.lines().any(|l| l == "seed=7"));
}

#[test]
fn checkpoint_loads_back() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cpcc(&["train", "--k", "3", "--epochs", "1", "--pretrain-epochs", "0", "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(0));
    let bytes = std::fs::read(tmp.path().join("checkpoint.bin")).unwrap();
    let nets = cpcc::model::read_checkpoint(&bytes[..]).unwrap();
    assert_eq!(nets.len(), 3);
    assert_eq!(nets[0].dims(), vec![16, 64, 32, 16]);
    assert_eq!(nets[2].dims(), nets[0].dims());
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path(tmp.path());
    let o = cpcc(&["train", "--dataset", "blobs", "--epochs", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--k"));
    assert!(o.stdout.is_empty());
    assert_eq!(cpcc(&["train", "--k", "4", "--tau", "abc", "--out", out]).status.code(), Some(2));
    assert_eq!(cpcc(&["train", "--k", "4", "--tau", "0", "--out", out]).status.code(), Some(2));
    assert_eq!(cpcc(&["train", "--k", "4", "--set", "nonsense=1", "--out", out]).status.code(), Some(2));
    assert_eq!(cpcc(&["train", "--k", "4", "--ablation", "no_such", "--out", out]).status.code(), Some(2));
    assert_eq!(cpcc(&["train", "--k", "4", "--dataset", "mnist", "--out", out]).status.code(), Some(2));
    assert_eq!(cpcc(&["drift", "--trials", "0", "--out", out]).status.code(), Some(2));
    assert_eq!(cpcc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cpcc(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.txt");
    std::fs::write(&cfg, "# small run\nk = 3\nepochs=4\npretrain_epochs=1\ndataset=rings\nper_cluster=50\n").unwrap();
    let out = tmp.path().join("run");
    let o = cpcc(&["train", "--config", path(&cfg), "--epochs", "2", "--k", "2", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("\nepochs=2\n") && manifest.contains("\nk=2\n") && manifest.contains("\ndataset=rings\n"));
    let log = std::fs::read_to_string(out.join("epoch_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    std::fs::write(&cfg, "k 3\n").unwrap();
    assert_eq!(cpcc(&["train", "--config", path(&cfg), "--out", path(&out)]).status.code(), Some(2));
}

#[test]
fn csv_datasets_and_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    let mut body = String::from("x,y,label\n");
    for i in 0..40 {
        let c = i % 2;
        body.push_str(&format!("{},{},{}\n", c as f64 * 5.0 + (i as f64) * 0.01, 1.0 - c as f64 * 3.0, c + 10));
    }
    std::fs::write(&data, body).unwrap();
    let ds = format!("csv:{}", data.display());
    let out = tmp.path().join("run");
    let o = cpcc(&["train", "--dataset", &ds, "--k", "2", "--epochs", "2", "--pretrain-epochs", "1", "--batch-size", "8", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(&data, "1,2,0\n3,0\n").unwrap();
    let o = cpcc(&["train", "--dataset", &ds, "--k", "2", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
}

#[test]
fn ablation_table_has_six_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cpcc(&["ablation", "--k", "2", "--dataset", "rings", "--epochs", "2", "--pretrain-epochs", "1", "--seed", "3", "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(0));
    let table = std::fs::read_to_string(tmp.path().join("ablation_table.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["full", "no_spc", "no_dcl", "no_dcl1", "no_dcl2", "no_w"]);
    assert_eq!(stdout(&o), table);
    let manifest = std::fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "seed=3"));
}

#[test]
fn drift_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cpcc(&["drift", "--overlap", "0.1", "--batch", "32", "--trials", "300", "--seed", "1", "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(0));
    let v: Vec<f64> = stdout(&o).trim().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(v.len(), 3);
    assert!(v[1] <= v[0]);
    let csv = std::fs::read_to_string(tmp.path().join("drift.csv")).unwrap();
    assert_eq!(csv.lines().count(), 301);
}

#[test]
fn default_run_directory_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cpcc"))
        .args(["drift", "--trials", "10", "--seed", "4"])
        .env("CPCC_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("drift-seed4").join("drift.csv").exists());
}

#[test]
fn eval_command() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, labels: &[i32]| {
        let p = tmp.path().join(name);
        let body: String = labels.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(&p, body).unwrap();
        p
    };
    let a = write("a.csv", &[0, 0, 1, 1, 2, 2]);
    let b = write("b.csv", &[5, 5, 3, 3, 9, 9]);
    let c = write("c.csv", &[0, 0, 0, 0, 0, 0]);
    let short = write("d.csv", &[0, 1]);
    assert_eq!(stdout(&cpcc(&["eval", path(&a), path(&a)])), "1.0,1.0,1.0\n");
    assert_eq!(stdout(&cpcc(&["eval", path(&b), path(&a)])), "1.0,1.0,1.0\n");
    assert!(stdout(&cpcc(&["eval", path(&c), path(&a)])).starts_with("0.0,"));
    let o = cpcc(&["eval", path(&short), path(&a)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
}
