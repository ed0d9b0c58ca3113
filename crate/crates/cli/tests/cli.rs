//! End-to-end runs of the binary: gen, fit, predict, evaluate, bench, and
//! config-file resolution.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spectral-cde"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawning spectral-cde");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen_toy(dir: &Path, n: usize, seed: u64) {
    run_ok(bin().args([
        "gen",
        "--scenario",
        "one-relevant",
        "--d",
        "3",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]));
}

fn fit_toy(data_dir: &Path, out_dir: &Path) {
    run_ok(bin().args([
        "fit",
        "--data",
        data_dir.join("train.csv").to_str().unwrap(),
        "--val",
        data_dir.join("val.csv").to_str().unwrap(),
        "--epsilon-grid",
        "auto:2",
        "--i-grid",
        "1:6",
        "--j-grid",
        "1:6",
        "--delta-grid",
        "0,0.05",
        "--grid-size",
        "301",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
}

#[test]
fn gen_writes_split_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        run_ok(bin().args([
            "gen",
            "--scenario",
            "manifold",
            "--d",
            "6",
            "--n",
            "100",
            "--seed",
            "1",
            "--out",
            d.to_str().unwrap(),
        ]));
    }
    let train = read(&a.join("train.csv"));
    assert_eq!(train.lines().count(), 71, "70 rows plus header");
    assert_eq!(read(&a.join("val.csv")).lines().count(), 16);
    assert_eq!(read(&a.join("test.csv")).lines().count(), 16);
    for name in ["train.csv", "val.csv", "test.csv"] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name} not reproducible");
    }
    assert!(a.join("config.resolved.ini").exists());
}

#[test]
fn gen_rejects_unknown_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "gen",
            "--scenario",
            "nonsense",
            "--d",
            "3",
            "--n",
            "30",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}

#[test]
fn fit_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let fitd = dir.path().join("fit");
    gen_toy(&data, 160, 3);
    fit_toy(&data, &fitd);

    assert!(fitd.join("model.bin").exists());
    let report = read(&fitd.join("tuning_report.txt"));
    assert!(report.contains("chosen: epsilon"));
    assert!(report.contains("phase_gram_seconds"));
    assert!(report.contains("coefficient_fits = 2"));

    // Covariates-only query file.
    let query = dir.path().join("query.csv");
    std::fs::write(&query, "x1,x2,x3\n0.1,-0.2,0.3\n1.0,0.5,-0.5\n").unwrap();
    let pred = dir.path().join("pred");
    run_ok(bin().args([
        "predict",
        "--model",
        fitd.join("model.bin").to_str().unwrap(),
        "--data",
        query.to_str().unwrap(),
        "--grid-size",
        "201",
        "--out",
        pred.to_str().unwrap(),
    ]));
    let predictions = read(&pred.join("predictions.csv"));
    let mut lines = predictions.lines();
    assert_eq!(lines.next().unwrap(), "row_id,z,density");
    assert_eq!(predictions.lines().count(), 1 + 2 * 201);
    // Each query's grid re-integrates to one (trapezoid over the emitted rows).
    for row in ["0", "1"] {
        let pts: Vec<(f64, f64)> = predictions
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{row},")))
            .map(|l| {
                let mut f = l.split(',');
                f.next();
                (
                    f.next().unwrap().parse().unwrap(),
                    f.next().unwrap().parse().unwrap(),
                )
            })
            .collect();
        let mut integral = 0.0;
        for w in pts.windows(2) {
            integral += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
        }
        assert!((integral - 1.0).abs() < 1e-3, "row {row} integral {integral}");
    }

    let evald = dir.path().join("eval");
    let stdout = run_ok(bin().args([
        "evaluate",
        "--model",
        fitd.join("model.bin").to_str().unwrap(),
        "--data",
        data.join("test.csv").to_str().unwrap(),
        "--bootstrap",
        "50",
        "--grid-size",
        "301",
        "--out",
        evald.to_str().unwrap(),
    ]));
    assert!(stdout.contains("loss = "));
    let report = read(&evald.join("report.txt"));
    assert!(report.contains("bootstrap_b = 50"));
    assert!(evald.join("pit.csv").exists());
    assert!(evald.join("pit_hist.csv").exists());
    let csv = read(&evald.join("report.csv"));
    assert!(csv.starts_with("loss,loss_se,ks_stat,ks_pvalue,n_test,bootstrap_b"));

    // Re-running the evaluation reproduces the report byte for byte.
    let evald2 = dir.path().join("eval2");
    run_ok(bin().args([
        "evaluate",
        "--model",
        fitd.join("model.bin").to_str().unwrap(),
        "--data",
        data.join("test.csv").to_str().unwrap(),
        "--bootstrap",
        "50",
        "--grid-size",
        "301",
        "--out",
        evald2.to_str().unwrap(),
    ]));
    assert_eq!(read(&evald.join("report.txt")), read(&evald2.join("report.txt")));
}

#[test]
fn predict_handles_empty_query_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let fitd = dir.path().join("fit");
    gen_toy(&data, 120, 5);
    fit_toy(&data, &fitd);
    let query = dir.path().join("empty.csv");
    std::fs::write(&query, "").unwrap();
    let pred = dir.path().join("pred");
    run_ok(bin().args([
        "predict",
        "--model",
        fitd.join("model.bin").to_str().unwrap(),
        "--data",
        query.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]));
    assert_eq!(read(&pred.join("predictions.csv")), "row_id,z,density\n");
}

#[test]
fn predict_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let fitd = dir.path().join("fit");
    gen_toy(&data, 120, 7);
    fit_toy(&data, &fitd);
    let query = dir.path().join("query.csv");
    std::fs::write(&query, "x1,x2\n0.0,0.0\n").unwrap();
    let out = bin()
        .args([
            "predict",
            "--model",
            fitd.join("model.bin").to_str().unwrap(),
            "--data",
            query.to_str().unwrap(),
            "--out",
            dir.path().join("pred").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn uniform_model_evaluates_to_minus_one() {
    use spectral_cde::dataset::{Points, ZTransform};
    use spectral_cde::kernel::{KernelSpec, Normalization};
    use spectral_cde::spectral::{EigMethod, SpectralBasis};

    let dir = tempfile::tempdir().unwrap();
    // Constant eigenfunction (diffusion over identical points) with a unit
    // coefficient: the post-processed density is uniform on [0, 1].
    let pts = Points::new(vec![0.5, 0.5, 0.5], 3, 1).unwrap();
    let spec = KernelSpec::gaussian(1.0).with_normalization(Normalization::Diffusion);
    let basis = SpectralBasis::fit(pts, &spec, 1, &EigMethod::Dense).unwrap();
    let model = spectral_cde::CdeModel::new(
        basis,
        spectral_cde::ZBasis::fourier(),
        faer::Mat::from_fn(1, 1, |_, _| 1.0),
        1,
        1,
        0.0,
        ZTransform::identity(),
    )
    .unwrap();
    let model_path = dir.path().join("uniform.bin");
    let mut f = std::fs::File::create(&model_path).unwrap();
    model.write_to(&mut f).unwrap();
    drop(f);

    let mut test_csv = String::from("x1,z\n");
    for i in 0..40 {
        test_csv.push_str(&format!("{},{}\n", i as f64 / 40.0, (i % 7) as f64 / 7.0));
    }
    let test_path = dir.path().join("test.csv");
    std::fs::write(&test_path, test_csv).unwrap();

    let evald = dir.path().join("eval");
    run_ok(bin().args([
        "evaluate",
        "--model",
        model_path.to_str().unwrap(),
        "--data",
        test_path.to_str().unwrap(),
        "--bootstrap",
        "20",
        "--out",
        evald.to_str().unwrap(),
    ]));
    let report = read(&evald.join("report.txt"));
    let loss_line = report.lines().find(|l| l.starts_with("loss = ")).unwrap();
    let loss: f64 = loss_line["loss = ".len()..].parse().unwrap();
    assert!((loss + 1.0).abs() < 1e-6, "uniform loss {loss}");
}

#[test]
fn bench_writes_sorted_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    run_ok(bin().args([
        "bench",
        "--scenarios",
        "one-relevant",
        "--d-list",
        "2",
        "--n",
        "120",
        "--seeds",
        "1:2",
        "--methods",
        "knn,series",
        "--bootstrap",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]));
    let sweep = read(&out.join("sweep.csv"));
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines.len(), 1 + 4, "2 methods x 2 seeds plus header");
    assert!(lines[0].starts_with("method,scenario,d,n,seed,status"));
    for line in &lines[1..] {
        assert!(line.contains(",ok,"), "cell failed: {line}");
    }
    // Sorted rows: knn before series, seeds ascending within method.
    assert!(lines[1].starts_with("knn,") && lines[2].starts_with("knn,"));
    assert!(lines[3].starts_with("series,") && lines[4].starts_with("series,"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.ini");
    let out = dir.path().join("gen");
    std::fs::write(
        &cfg_path,
        format!(
            "[gen]\nscenario = one-relevant\nd = 3\nn = 50\nseed = 9\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    // n from the flag overrides the file; everything else resolves from it.
    run_ok(bin().args([
        "gen",
        "--config",
        cfg_path.to_str().unwrap(),
        "--n",
        "80",
    ]));
    let train = read(&out.join("train.csv"));
    assert_eq!(train.lines().count(), 57, "floor(80 * 0.7) rows plus header");
    let resolved = read(&out.join("config.resolved.ini"));
    assert!(resolved.contains("n = 80"));
    assert!(resolved.contains("scenario = one-relevant"));
}
