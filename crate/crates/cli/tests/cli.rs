use std::path::Path;
use std::process::{Command, Output};

use stylesynth_core::harness::{parse_metrics_csv, ExperimentConfig, OutputFlags};

fn stylesynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylesynth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let mut c = ExperimentConfig::default();
    c.train.num_styles = 2;
    c.train.iterations = 4;
    c.classifier.epochs = 3;
    c.world.per_class_count = 10;
    c.outputs = OutputFlags {
        styles: true,
        classifier: true,
        samples: true,
    };
    let path = dir.join("config.json");
    std::fs::write(&path, c.to_json()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    let o = stylesynth(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seeds",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "metrics.csv",
        "report.json",
        "styles.bin",
        "classifier.bin",
        "samples.txt",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let rows =
        parse_metrics_csv(&std::fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].n_seeds, 2);
}

#[test]
fn serial_and_parallel_metrics_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (dir, serial) in [(&a, false), (&b, true)] {
        let out = dir.to_str().unwrap();
        let mut argv = vec![
            "sweep", "--config", &cfg, "--out", out, "--param", "K", "--values", "1,2",
        ];
        if serial {
            argv.push("--serial");
        }
        let o = stylesynth(&argv);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path| std::fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(parse_metrics_csv(&read(&a)).unwrap().len(), 2);
}

#[test]
fn ablate_emits_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("abl");
    let o = stylesynth(&[
        "ablate",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seeds",
        "1",
    ]);
    assert!(o.status.success());
    let rows =
        parse_metrics_csv(&std::fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(!out.join("styles.bin").exists());
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"class_names": ["a"], "bogus": 1}"#).unwrap();
    let o = stylesynth(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let good = tiny_config(dir.path());
    let o = stylesynth(&[
        "sweep",
        "--config",
        &good,
        "--out",
        dir.path().to_str().unwrap(),
        "--param",
        "L",
        "--values",
        "5,3",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn io_failures_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = stylesynth(&[
        "run",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));

    let cfg = tiny_config(dir.path());
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let o = stylesynth(&[
        "run",
        "--config",
        &cfg,
        "--out",
        blocker.join("sub").to_str().unwrap(),
        "--seeds",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(4));
}
