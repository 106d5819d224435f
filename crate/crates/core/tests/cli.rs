use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nits::model::checkpoint;
use nits::oracle::trapezoid;

fn nits(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nits"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn train_small(dir: &Path, name: &str, synthetic: &str) -> PathBuf {
    let out = dir.join(name);
    let o = nits(&[
        "train",
        "--synthetic",
        synthetic,
        "--n",
        "2000",
        "--seed",
        "7",
        "--hidden",
        "16",
        "--blocks",
        "1",
        "--lr",
        "1e-2",
        "--max-epochs",
        "15",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn read_grid(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn train_without_out_is_a_usage_error() {
    let o = nits(&["train", "--synthetic", "gmm2", "--n", "100"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn unknown_flag_is_a_usage_error_with_suggestion() {
    let o = nits(&[
        "sample", "--model", "m", "--n", "3", "--out", "x", "--seeds", "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn training_and_sampling_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_small(dir.path(), "a.nits", "gmm2");
    let b = train_small(dir.path(), "b.nits", "gmm2");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let report = std::fs::read_to_string(dir.path().join("a.nits.report")).unwrap();
    assert!(report.starts_with("epoch=0 "));

    let sa = dir.path().join("a.csv");
    let sb = dir.path().join("b.csv");
    for (model, out) in [(&a, &sa), (&b, &sb)] {
        let o = nits(&[
            "sample",
            "--model",
            path_str(model),
            "--n",
            "300",
            "--seed",
            "3",
            "--out",
            path_str(out),
        ]);
        assert!(o.status.success());
    }
    let bytes = std::fs::read(&sa).unwrap();
    assert_eq!(bytes, std::fs::read(&sb).unwrap());
    assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), 300);
}

#[test]
fn nll_prints_nats_and_bits() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_small(dir.path(), "m.nits", "gmm2");
    let o = nits(&[
        "nll",
        "--model",
        path_str(&m),
        "--synthetic",
        "gmm2",
        "--n",
        "2000",
    ]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    let nats: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("nll"))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    let bits: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("bits/dim"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(
        (bits - nats / std::f64::consts::LN_2).abs() < 1e-3,
        "{text}"
    );
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_small(dir.path(), "m.nits", "logistic");
    let mut bytes = std::fs::read(&m).unwrap();
    bytes[0] = b'X';
    std::fs::write(&m, bytes).unwrap();
    let o = nits(&[
        "sample",
        "--model",
        path_str(&m),
        "--n",
        "3",
        "--out",
        path_str(&dir.path().join("s.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}

#[test]
fn density_grid_endpoints_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_small(dir.path(), "m.nits", "gmm2");
    let model = checkpoint::load(&m).unwrap();
    let b = model.data_bounds()[0];

    let g = dir.path().join("g2.csv");
    let o = nits(&[
        "density-grid",
        "--model",
        path_str(&m),
        "--resolution",
        "2",
        "--out",
        path_str(&g),
    ]);
    assert!(o.status.success());
    let rows = read_grid(&g);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], b.lo);
    assert_eq!(rows[1][0], b.hi);
    for r in &rows {
        assert_eq!(
            r[1].to_bits(),
            model.log_likelihood(&[r[0]]).unwrap().to_bits()
        );
    }

    let g = dir.path().join("g.csv");
    let o = nits(&[
        "density-grid",
        "--model",
        path_str(&m),
        "--resolution",
        "10000",
        "--out",
        path_str(&g),
    ]);
    assert!(o.status.success());
    let rows = read_grid(&g);
    let dens: Vec<f64> = rows.iter().map(|r| r[1].exp()).collect();
    let mass = trapezoid(&dens, b.width() / 9999.0);
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
}

#[test]
fn density_grid_2d_and_bad_dims() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_small(dir.path(), "m.nits", "ring-2d");
    let g = dir.path().join("g.csv");
    let o = nits(&[
        "density-grid",
        "--model",
        path_str(&m),
        "--dims",
        "0,1",
        "--resolution",
        "5",
        "--out",
        path_str(&g),
    ]);
    assert!(o.status.success());
    let rows = read_grid(&g);
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| r.len() == 3 && r[2].is_finite()));

    let o = nits(&[
        "density-grid",
        "--model",
        path_str(&m),
        "--dims",
        "2",
        "--out",
        path_str(&g),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = nits(&[
        "density-grid",
        "--model",
        path_str(&m),
        "--resolution",
        "1",
        "--out",
        path_str(&g),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_small(dir.path(), "m.nits", "logistic");
    let cfg = dir.path().join("sample.cfg");
    let from_cfg = dir.path().join("cfg.csv");
    std::fs::write(
        &cfg,
        format!(
            "# sampling\nmodel={}\nn=4\nseed=9\nout={}\n",
            path_str(&m),
            path_str(&from_cfg)
        ),
    )
    .unwrap();
    assert!(nits(&["sample", "--config", path_str(&cfg)])
        .status
        .success());

    let direct = dir.path().join("direct.csv");
    let o = nits(&[
        "sample",
        "--model",
        path_str(&m),
        "--n",
        "4",
        "--seed",
        "9",
        "--out",
        path_str(&direct),
    ]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(&from_cfg).unwrap(),
        std::fs::read(&direct).unwrap()
    );

    let overridden = dir.path().join("over.csv");
    let o = nits(&[
        "sample",
        "--config",
        path_str(&cfg),
        "--seed",
        "1",
        "--out",
        path_str(&overridden),
    ]);
    assert!(o.status.success());
    assert_ne!(
        std::fs::read(&overridden).unwrap(),
        std::fs::read(&direct).unwrap()
    );
}

#[test]
fn verify_quick_passes() {
    let o = nits(&["verify", "--quick"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert_eq!(
        text.lines().filter(|l| l.starts_with("[PASS]")).count(),
        7,
        "{text}"
    );
}
