use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use nnsparse::conditions::{evaluate, ConditionOptions, ConditionReport};
use nnsparse::{Dictionary, Observation, Problem, Support};

fn nnsparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnsparse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_csv_matrix(path: &Path) -> DMatrix<f64> {
    let text = fs::read_to_string(path).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c])
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut contents = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = nnsparse(&[
            "gen",
            "--L",
            "50",
            "--N",
            "12",
            "--J",
            "3",
            "--seed",
            "7",
            "--out-dir",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let files: Vec<Vec<u8>> = [
            "instance_dictionary.csv",
            "instance_observations.csv",
            "instance_truth.json",
        ]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
        contents.push(files);
    }
    assert_eq!(contents[0], contents[1]);
    let dict = read_csv_matrix(&dir.path().join("a/instance_dictionary.csv"));
    assert_eq!((dict.nrows(), dict.ncols()), (50, 12));
}

#[test]
fn gen_rejects_oversized_support() {
    let dir = tempfile::tempdir().unwrap();
    let o = nnsparse(&["gen", "--J", "13", "--N", "12", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn gen_directional_distortion_follows_its_construction() {
    let dir = tempfile::tempdir().unwrap();
    let o = nnsparse(&[
        "gen",
        "--L",
        "30",
        "--N",
        "8",
        "--J",
        "3",
        "--support",
        "0,2,6",
        "--distortion",
        "directional:j=5,beta=0.1,sign=-",
        "--seed",
        "3",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = read_csv_matrix(&dir.path().join("instance_dictionary.csv"));
    let truth: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("instance_truth.json")).unwrap())
            .unwrap();
    let e = DVector::from_vec(
        truth["distortion"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect(),
    );
    assert_eq!(truth["support"], serde_json::json!([0, 2, 6]));

    // residual of a_5 after least squares on the support, via normal equations
    let sub = a.select_columns(&[0, 2, 6]);
    let a5 = a.column(5).into_owned();
    let c = (sub.transpose() * &sub)
        .cholesky()
        .unwrap()
        .solve(&(sub.transpose() * &a5));
    let r = &a5 - &sub * c;
    let expected = -0.1 * &r / r.norm();
    assert!((&e - expected).amax() < 1e-12);

    let x = DVector::from_vec(
        truth["coefficients"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect(),
    );
    let y = read_csv_matrix(&dir.path().join("instance_observations.csv"))
        .column(0)
        .into_owned();
    assert!((y - (&a * x + e)).amax() < 1e-14);
}

fn identity_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    (
        write(dir, "d.csv", "1,0\n0,1\n"),
        write(dir, "y.csv", "1\n0\n"),
    )
}

#[test]
fn solve_identity_soft_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let (d, y) = identity_fixture(dir.path());
    let out = dir.path().join("sol.json");
    let o = nnsparse(&[
        "solve",
        "--dictionary",
        s(&d),
        "--observations",
        s(&y),
        "--gamma",
        "0.5",
        "--output",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let sol = &v["solutions"][0];
    assert_eq!(sol["support"], serde_json::json!([0]));
    assert!((sol["x"][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(sol["x"][1].as_f64().unwrap(), 0.0);
    assert_eq!(sol["converged"], Value::Bool(true));
    assert!((sol["objective"].as_f64().unwrap() - 0.375).abs() < 1e-12);
}

#[test]
fn gamma_zero_takes_the_nnls_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = nnsparse(&[
        "gen",
        "--L",
        "20",
        "--N",
        "6",
        "--J",
        "2",
        "--seed",
        "4",
        "--distortion",
        "gaussian:sigma=0.05",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0);
    let d = dir.path().join("instance_dictionary.csv");
    let y = dir.path().join("instance_observations.csv");
    let mut xs = Vec::new();
    for solver in ["nlasso", "nnls", "active-set"] {
        let o = nnsparse(&[
            "solve",
            "--dictionary",
            s(&d),
            "--observations",
            s(&y),
            "--gamma",
            "0",
            "--solver",
            solver,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        let x: Vec<f64> = v["solutions"][0]["x"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_f64().unwrap())
            .collect();
        xs.push((v["solutions"][0]["solver"].as_str().unwrap().to_string(), x));
    }
    assert_eq!(xs[0].0, "nnls");
    assert_eq!(xs[0].1, xs[1].1);
    for (a, b) in xs[0].1.iter().zip(&xs[2].1) {
        assert!((a - b).abs() < 1e-10);
    }

    let o = nnsparse(&[
        "solve",
        "--dictionary",
        s(&d),
        "--observations",
        s(&y),
        "--gamma",
        "0.1",
        "--solver",
        "nnls",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = write(dir.path(), "d.csv", "1,0\n0,x\n");
    let y = write(dir.path(), "y.csv", "1\n0\n");
    let o = nnsparse(&[
        "solve",
        "--dictionary",
        s(&d),
        "--observations",
        s(&y),
        "--gamma",
        "0.1",
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let y3 = write(dir.path(), "y3.csv", "1\n0\n0\n");
    let d = write(dir.path(), "d2.csv", "1,0\n0,1\n");
    let o = nnsparse(&[
        "solve",
        "--dictionary",
        s(&d),
        "--observations",
        s(&y3),
        "--gamma",
        "0.1",
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("dimension mismatch"));
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (d, y) = identity_fixture(dir.path());
    let o = nnsparse(&[
        "check",
        "--dictionary",
        s(&d),
        "--observations",
        s(&y),
        "--support",
        "0",
        "--gamma",
        "0.5",
        "--conditions",
        "erc-mrc",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("--truth"));

    let o = nnsparse(&[
        "check",
        "--dictionary",
        s(&d),
        "--observations",
        s(&y),
        "--gamma",
        "0.5",
    ]);
    assert_eq!(code(&o), 2);
    let o = nnsparse(&[
        "solve",
        "--dictionary",
        s(&d),
        "--observations",
        s(&y),
        "--gamma",
        "-1",
    ]);
    assert_eq!(code(&o), 2);
    let o = nnsparse(&["frobnicate"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn check_identity_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (d, y) = identity_fixture(dir.path());
    let out = dir.path().join("report.json");
    let o = nnsparse(&[
        "check",
        "--dictionary",
        s(&d),
        "--observations",
        s(&y),
        "--support",
        "0",
        "--gamma",
        "0.5",
        "--output",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("apmrc") && table.contains("true"));

    #[derive(serde::Deserialize)]
    struct Record {
        report: ConditionReport,
    }
    #[derive(serde::Deserialize)]
    struct Reports {
        reports: Vec<Record>,
    }
    let parsed: Reports = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let r = &parsed.reports[0].report;
    assert!(r.verdicts.apmrc);
    assert!((r.mcc_margin - 0.5).abs() < 1e-15);
    assert!((r.nscc_margins[&1] - 0.5).abs() < 1e-15);

    let p = Problem::new(
        Dictionary::identity(2),
        Observation::from_slice(&[1.0, 0.0]).unwrap(),
        0.5,
    )
    .unwrap();
    let direct = evaluate(
        &p,
        &Support::new(vec![0], 2).unwrap(),
        None,
        &ConditionOptions::default(),
    )
    .unwrap();
    assert_eq!(*r, direct);
}

#[test]
fn check_with_truth_and_rank_deficiency() {
    let dir = tempfile::tempdir().unwrap();
    let o = nnsparse(&[
        "gen",
        "--L",
        "20",
        "--N",
        "6",
        "--J",
        "2",
        "--seed",
        "9",
        "--distortion",
        "gaussian:sigma=0.01",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0);
    let d = dir.path().join("instance_dictionary.csv");
    let y = dir.path().join("instance_observations.csv");
    let t = dir.path().join("instance_truth.json");
    let truth: Value = serde_json::from_str(&fs::read_to_string(&t).unwrap()).unwrap();
    let support: Vec<String> = truth["support"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.to_string())
        .collect();
    let o = nnsparse(&[
        "check",
        "--dictionary",
        s(&d),
        "--observations",
        s(&y),
        "--support",
        &support.join(","),
        "--gamma",
        "0.1",
        "--gamma-scaling",
        "max-correlation",
        "--truth",
        s(&t),
        "--conditions",
        "erc-mrc,apmrc",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["reports"][0]["report"]["verdicts"]["erc_mrc"].is_boolean());
    assert_eq!(
        v["reports"][0]["requested"],
        serde_json::json!(["apmrc", "erc-mrc"])
    );

    let dup = write(dir.path(), "dup.csv", "1,1,0\n0,0,1\n");
    let y2 = write(dir.path(), "y2.csv", "1\n0\n");
    let o = nnsparse(&[
        "check",
        "--dictionary",
        s(&dup),
        "--observations",
        s(&y2),
        "--support",
        "0,1",
        "--gamma",
        "0.1",
    ]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("rank deficient"), "{}", stderr(&o));
}

fn eval_run(out: &Path, extra: &[&str], threads: &str) -> Output {
    let mut args = vec!["eval", "--out-dir", s(out)];
    args.extend_from_slice(extra);
    Command::new(env!("CARGO_BIN_EXE_nnsparse"))
        .args(&args)
        .env("NNSPARSE_THREADS", threads)
        .output()
        .unwrap()
}

#[test]
fn eval_tables_are_consistent_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let flags = [
        "--instances",
        "40",
        "--seed",
        "11",
        "--L",
        "30",
        "--N",
        "8",
        "--J",
        "2,3",
        "--distortion",
        "none",
        "--distortion",
        "gaussian:sigma=0.02",
        "--gammas",
        "0.2,0.05",
    ];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = eval_run(&a, &flags, "1");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = eval_run(&b, &flags, "4");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "confusion_gamma_0.2.csv",
        "confusion_gamma_0.05.csv",
        "records.csv",
        "summary.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{}",
            f
        );
    }

    let records = fs::read_to_string(a.join("records.csv")).unwrap();
    let header: Vec<&str> = records.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for (g, file) in [
        ("0.2", "confusion_gamma_0.2.csv"),
        ("0.05", "confusion_gamma_0.05.csv"),
    ] {
        let tallied = csv::Reader::from_path(a.join("records.csv"))
            .unwrap()
            .records()
            .map(|r| r.unwrap())
            .filter(|r| r[col("gamma_factor")].parse::<f64>().unwrap() == g.parse::<f64>().unwrap())
            .filter(|r| &r[col("converged")] == "true" && &r[col("boundary")] == "false")
            .count();
        let mut rdr = csv::Reader::from_path(a.join(file)).unwrap();
        let mut rows = 0;
        for row in rdr.records() {
            let row = row.unwrap();
            let sum: usize = (1..5).map(|k| row[k].parse::<usize>().unwrap()).sum();
            assert_eq!(sum, tallied);
            rows += 1;
        }
        assert_eq!(rows, 4);
    }
}

#[test]
fn eval_noiseless_batch_inside_the_interval() {
    let dir = tempfile::tempdir().unwrap();
    let o = eval_run(
        dir.path(),
        &[
            "--instances",
            "30",
            "--L",
            "40",
            "--N",
            "6",
            "--J",
            "2",
            "--coherence",
            "0.3",
            "--gammas",
            "0.01",
        ],
        "2",
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("confusion_gamma_0.01.csv")).unwrap();
    let apmrc = text.lines().find(|l| l.starts_with("APMRC")).unwrap();
    assert_eq!(apmrc, "APMRC,30,0,0,0");
}

#[test]
fn eval_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "batch.toml",
        "instances = 6\nl = 20\nn = 5\nsupport_sizes = [2]\ngammas = [0.1]\ndistortions = [\"bilinear:weight=0.2\"]\n",
    );
    let out = dir.path().join("out");
    let o = eval_run(&out, &["--config", s(&cfg)], "1");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("confusion_gamma_0.1.csv").exists());

    let o = eval_run(&out, &["--config", s(&cfg), "--instances", "3"], "1");
    assert_eq!(code(&o), 2);

    let bad = write(
        dir.path(),
        "bad.toml",
        "instances = 6\nl = 20\nn = 5\nsupport_sizes = [2]\ngammas = [0.1]\nsigma = 1\n",
    );
    let o = eval_run(&out, &["--config", s(&bad)], "1");
    assert_eq!(code(&o), 3);

    let o = eval_run(&out, &["--instances", "2"], "zero");
    assert_eq!(code(&o), 2);
}
