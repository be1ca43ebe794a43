use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ckge(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ckge")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "ckge {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    cfg: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let data = root.join("data");
    ckge(&[
        "generate", "--seed", "4", "--entities", "30,40,45", "--triples", "200,80,40", "--relations", "5", "--out", s(&data),
    ]);
    let cfg = root.join("small.cfg");
    fs::write(&cfg, "dim.initial = 6\nscale.a = 300\ntrain.max_epochs = 4\ntrain.batch_size = 64\n").unwrap();
    Fixture { _tmp: tmp, root, data, cfg }
}

#[test]
fn generate_writes_snapshot_dirs() {
    let f = fixture();
    for i in 0..3 {
        for split in ["train.txt", "valid.txt", "test.txt"] {
            assert!(f.data.join(i.to_string()).join(split).is_file());
        }
    }
    let train0 = fs::read_to_string(f.data.join("0/train.txt")).unwrap();
    assert!(train0.lines().all(|l| l.split('\t').count() == 3));
}

#[test]
fn train_writes_outputs_and_resolved_config_reproduces() {
    let f = fixture();
    let out = f.root.join("run");
    let stdout = ckge(&[
        "train", "--data", s(&f.data), "--out", s(&out), "--config", s(&f.cfg), "--seed", "9", "--footprints",
    ])
    .stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("final: dim"));

    let jsonl = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    for (i, l) in lines[..3].iter().enumerate() {
        assert_eq!(l["snapshot"], i);
        assert!(l["cum_mrr"].as_f64().unwrap() > 0.0);
    }
    let dims: Vec<u64> = lines[3]["dims"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap()).collect();
    assert_eq!(dims.len(), 3);
    assert!(dims.windows(2).all(|w| w[0] <= w[1]));

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("snapshot,dim,"));
    for i in 0..3 {
        assert!(out.join(format!("checkpoints/snapshot_{i}.ckpt")).is_file());
    }
    let fp = fs::read_to_string(out.join("footprints.tsv")).unwrap();
    assert!(fp.lines().count() > 1);

    let again = f.root.join("again");
    ckge(&["train", "--config", s(&out.join("config.resolved")), "--out", s(&again)]);
    assert_eq!(
        fs::read(out.join("metrics.jsonl")).unwrap(),
        fs::read(again.join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn distillation_ablation_matches_zero_alpha_bytes() {
    let f = fixture();
    let di = f.root.join("di");
    let zero = f.root.join("zero");
    let zero_cfg = f.root.join("zero.cfg");
    let mut text = fs::read_to_string(&f.cfg).unwrap();
    text.push_str("train.alpha = 0\n");
    fs::write(&zero_cfg, text).unwrap();
    ckge(&["train", "--data", s(&f.data), "--out", s(&di), "--config", s(&f.cfg), "--ablate", "DI"]);
    ckge(&["train", "--data", s(&f.data), "--out", s(&zero), "--config", s(&zero_cfg)]);
    for name in ["metrics.jsonl", "metrics.csv", "checkpoints/snapshot_2.ckpt"] {
        assert_eq!(fs::read(di.join(name)).unwrap(), fs::read(zero.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn sweep_reports_argmax_per_snapshot() {
    let f = fixture();
    let out = f.root.join("sweep");
    let stdout = ckge(&["sweep", "--data", s(&f.data), "--out", s(&out), "--config", s(&f.cfg), "--dims", "2,6"]).stdout;
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<(usize, usize, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].parse().unwrap(), c[1].parse().unwrap(), c[5].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 6);
    let text = String::from_utf8(stdout).unwrap();
    for line in text.lines().skip(1) {
        let c: Vec<&str> = line.split('\t').collect();
        let (snap, best): (usize, usize) = (c[0].parse().unwrap(), c[1].parse().unwrap());
        let expect = rows
            .iter()
            .filter(|r| r.1 == snap)
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .unwrap()
            .0;
        assert_eq!(best, expect);
    }
    assert!(out.join("dim_2/metrics.jsonl").is_file());
}

#[test]
fn fit_scale_rejects_single_point() {
    let tmp = tempfile::tempdir().unwrap();
    let pts = tmp.path().join("pts.tsv");
    fs::write(&pts, "50000\t400000\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ckge"))
        .args(["fit-scale", "--points", s(&pts)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 points"));
}

#[test]
fn fit_scale_two_points_and_write_config() {
    let tmp = tempfile::tempdir().unwrap();
    let pts = tmp.path().join("pts.tsv");
    let e = std::f64::consts::E;
    fs::write(&pts, format!("# N\tP\n{e}\t5\n{}\t10\n", e * e)).unwrap();
    let cfg = tmp.path().join("fit.cfg");
    let stdout = String::from_utf8(ckge(&["fit-scale", "--points", s(&pts), "--write-config", s(&cfg)]).stdout).unwrap();
    let a: f64 = stdout.lines().find_map(|l| l.strip_prefix("a\t")).unwrap().parse().unwrap();
    assert!((a - 5.0).abs() < 1e-9, "a = {a}");
    let text = fs::read_to_string(&cfg).unwrap();
    let line = text.lines().find(|l| l.starts_with("scale.a")).unwrap();
    let written: f64 = line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!((written - a).abs() <= 1e-12 * a);
}

#[test]
fn eval_reproduces_training_metrics() {
    let f = fixture();
    let out = f.root.join("run");
    ckge(&["train", "--data", s(&f.data), "--out", s(&out), "--config", s(&f.cfg)]);
    let ck = out.join("checkpoints/snapshot_2.ckpt");
    let stdout = String::from_utf8(ckge(&["eval", "--checkpoint", s(&ck), "--data", s(&f.data)]).stdout).unwrap();
    let cum: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("cumulative\t"))
        .unwrap()
        .split('\t')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let jsonl = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(jsonl.lines().nth(2).unwrap()).unwrap();
    assert!((cum - last["cum_mrr"].as_f64().unwrap()).abs() < 5e-5);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ckge"))
        .args(["train", "--data", s(&tmp.path().join("missing")), "--out", s(&tmp.path().join("o"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
