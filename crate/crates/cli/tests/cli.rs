use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn model(name: &str) -> String {
    models().join(name).to_string_lossy().into_owned()
}

fn vjump(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vjump"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(output: &Output) -> String {
    assert!(
        output.status.success(),
        "exit {:?}: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Rows of a CSV file without its header.
fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_is_deterministic_and_validates_input() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = [
        "simulate",
        "--model",
        &model("model_a.json"),
        "--seed",
        "5",
        "--trajectories",
        "300",
        "--horizon",
        "20",
    ];
    ok(&vjump(&args, &a));
    let out = Command::new(env!("CARGO_BIN_EXE_vjump"))
        .args(args)
        .arg("--out")
        .arg(&b)
        .env("VJUMP_THREADS", "1")
        .output()
        .unwrap();
    ok(&out);
    for f in ["trajectories.csv", "estimate.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let header = std::fs::read_to_string(a.join("trajectories.csv")).unwrap();
    assert!(header.starts_with("traj_id,t,x,state\n"));

    let zero = vjump(
        &[
            "simulate",
            "--model",
            &model("model_a.json"),
            "--seed",
            "5",
            "--trajectories",
            "0",
        ],
        &a,
    );
    assert_eq!(zero.status.code(), Some(2));
    let missing_seed = vjump(&["simulate", "--model", &model("model_a.json")], &a);
    assert_eq!(missing_seed.status.code(), Some(2));
}

#[test]
fn simulate_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    ok(&vjump(
        &[
            "simulate",
            "--model",
            &model("model_a.json"),
            "--seed",
            "1",
            "--trajectories",
            "10000",
            "--horizon",
            "50",
        ],
        dir.path(),
    ));
    let est = read_json(&dir.path().join("estimate.json"));
    let value = |v: &Value| v["value"].as_f64().unwrap();
    // States are labelled by descending velocity: (20, 0, −15).
    let truth = [20.0, 0.0, -15.0, 1.0, 0.3, 0.5, 0.8, 0.7, 0.3];
    let got: Vec<f64> = (0..3)
        .map(|s| value(&est["velocities"][s]))
        .chain((0..3).map(|s| value(&est["rates"][s])))
        .chain(["p12", "p21", "p31"].iter().map(|k| value(&est[k])))
        .collect();
    for (g, t) in got.iter().zip(truth) {
        let err = if t == 0.0 {
            g.abs()
        } else {
            ((g - t) / t).abs()
        };
        assert!(err < 0.05, "{got:?}");
    }
}

#[test]
fn density_outputs_and_cfl() {
    let dir = tempfile::tempdir().unwrap();
    let spectral = dir.path().join("spectral");
    ok(&vjump(
        &[
            "density",
            "--model",
            &model("model_a.json"),
            "--solver",
            "spectral",
        ],
        &spectral,
    ));
    let rows = csv_rows(&spectral.join("density.csv"));
    let meta = read_json(&spectral.join("density.json"));
    let w = [237.0 / 1441.0, 24.0 / 131.0, 940.0 / 1441.0];
    let first: Vec<&Vec<f64>> = rows.iter().filter(|r| r[0] == 0.0).collect();
    let dx = meta["dx"].as_f64().unwrap();
    let mass: f64 = first.iter().map(|r| r[5]).sum::<f64>() * dx;
    assert!((mass - 1.0).abs() < 1e-10, "{mass}");
    for r in first.iter().filter(|r| r[5] > 1e-12) {
        for s in 0..3 {
            assert!((r[2 + s] / r[5] - w[s]).abs() < 1e-9);
        }
    }

    let upwind = dir.path().join("upwind");
    ok(&vjump(
        &[
            "density",
            "--model",
            &model("model_a.json"),
            "--solver",
            "upwind",
            "--snapshots",
            "0.5",
        ],
        &upwind,
    ));
    let t_up = read_json(&upwind.join("density.json"))["times"][0]
        .as_f64()
        .unwrap();
    let matched = dir.path().join("matched");
    ok(&vjump(
        &[
            "density",
            "--model",
            &model("model_a.json"),
            "--solver",
            "spectral",
            "--snapshots",
            &t_up.to_string(),
        ],
        &matched,
    ));
    let (u, s) = (
        csv_rows(&upwind.join("density.csv")),
        csv_rows(&matched.join("density.csv")),
    );
    assert_eq!(u.len(), s.len());
    let gap = u
        .iter()
        .zip(&s)
        .map(|(a, b)| (a[5] - b[5]).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-3, "{gap}");

    let bad = vjump(
        &[
            "density",
            "--model",
            &model("model_a.json"),
            "--solver",
            "upwind",
            "--dt",
            "0.001",
        ],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("courant number 2"));
}

#[test]
fn equivalents_reports_members() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&vjump(
        &["equivalents", "--model", &model("model_a.json")],
        dir.path(),
    ));
    assert!(stdout.contains("member 1"));
    let report = read_json(&dir.path().join("equivalence.json"));
    let members = report["members"].as_array().unwrap();
    assert_eq!(members.len(), 2);
    let b = &members[1]["theta"];
    for (k, want) in [
        ("p12", 66.0 / 395.0),
        ("p21", 79.0 / 220.0),
        ("p31", 158.0 / 235.0),
    ] {
        assert!((b[k].as_f64().unwrap() - want).abs() < 1e-9);
    }
    assert_eq!(members[1]["verdict"], "Equivalent");
    assert!(csv_rows(&dir.path().join("equivalence_trace.csv")).len() > 50);

    let text = std::fs::read_to_string(models().join("model_a.json"))
        .unwrap()
        .replace(
            "\"stationary\"",
            "[0.3333333333333333, 0.3333333333333333, 0.3333333333333334]",
        );
    let uniform = dir.path().join("uniform.json");
    std::fs::write(&uniform, text).unwrap();
    ok(&vjump(
        &["equivalents", "--model", uniform.to_str().unwrap()],
        dir.path(),
    ));
    let report = read_json(&dir.path().join("equivalence.json"));
    assert_eq!(report["members"].as_array().unwrap().len(), 1);

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"velocities\": [1, 2").unwrap();
    let out = vjump(
        &["equivalents", "--model", broken.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let times = "0,0.1,0.2,0.3,0.4,0.5";
    let run = |other: &str| {
        ok(&vjump(
            &[
                "compare",
                "--model",
                &model("model_a.json"),
                "--other",
                &model(other),
                "--snapshots",
                times,
            ],
            dir.path(),
        ))
    };
    assert!(run("model_b.json").contains("verdict: Equivalent"));
    assert!(run("model_c.json").contains("verdict: Distinct"));
    run("model_a.json");
    let trace = csv_rows(&dir.path().join("compare.csv"));
    assert_eq!(trace.len(), 6);
    assert!(trace.iter().all(|r| r[1] == 0.0));

    let text = std::fs::read_to_string(models().join("model_b.json"))
        .unwrap()
        .replace("\"domain_half_width\": 40.0", "\"domain_half_width\": 30.0");
    let other = dir.path().join("other.json");
    std::fs::write(&other, text).unwrap();
    let out = vjump(
        &[
            "compare",
            "--model",
            &model("model_a.json"),
            "--other",
            other.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn coefficient_and_matrix_reports() {
    let dir = tempfile::tempdir().unwrap();
    ok(&vjump(
        &["coeffs", "--model", &model("model_a.json")],
        dir.path(),
    ));
    let c = read_json(&dir.path().join("coeffs.json"));
    assert!((c["c"][6].as_f64().unwrap() - 0.7205).abs() < 1e-12);
    assert!((c["c"][7].as_f64().unwrap() - 0.39).abs() < 1e-12);
    assert_eq!(c["units"][7], "lambda^2*v");

    ok(&vjump(
        &["coeffs", "--model", &model("model_merged.json")],
        dir.path(),
    ));
    let c = read_json(&dir.path().join("coeffs.json"));
    assert!((c["k"][0].as_f64().unwrap() - 0.8).abs() < 1e-12);

    ok(&vjump(
        &["fmatrix", "--model", &model("model_a.json")],
        dir.path(),
    ));
    let rows = csv_rows(&dir.path().join("fmatrix.csv"));
    let last = rows.last().unwrap();
    assert_eq!(last[0], 1e-4);
    assert!((last[3] - 1.0).abs() < 1e-3);
    assert!((last[4] + 2.0).abs() < 1e-3);
}

#[test]
fn dwell_fit_runs_on_merged_models_only() {
    let dir = tempfile::tempdir().unwrap();
    ok(&vjump(
        &[
            "dwell-fit",
            "--model",
            &model("model_merged.json"),
            "--seed",
            "3",
        ],
        dir.path(),
    ));
    let fit = read_json(&dir.path().join("dwell_fit.json"));
    assert_eq!(fit["samples"], 100_000);
    let slow = fit["fitted"]["lambda2"].as_f64().unwrap();
    assert!((slow - 0.3).abs() < 0.03, "{slow}");

    let out = vjump(
        &[
            "dwell-fit",
            "--model",
            &model("model_a.json"),
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let out = vjump(
        &[
            "dwell-fit",
            "--model",
            &model("model_merged.json"),
            "--seed",
            "3",
            "--trajectories",
            "10",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_vjump"))
        .args(["coeffs", "--model", &model("model_a.json"), "--out"])
        .arg(dir.path())
        .env("VJUMP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
