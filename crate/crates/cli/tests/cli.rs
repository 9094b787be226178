use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ric(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ric"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ric")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Comma-separated rows whose first field is numeric.
fn data_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| l.split(',').next().is_some_and(|f| f.parse::<f64>().is_ok()))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn manifest_value(path: &Path, key: &str) -> Option<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .find_map(|l| l.trim_start_matches("# ").strip_prefix(&format!("{key}=")).map(str::to_string))
}

#[test]
fn rs_curve_covers_both_branches() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ric(tmp.path(), &["rs-curve", "--set", "output_dir=out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&tmp.path().join("out/rs_curve.csv"));
    assert_eq!(rows.len(), 80);
    let sigma_max = rows
        .iter()
        .map(|r| r[9].parse::<f64>().unwrap())
        .fold(f64::MIN, f64::max);
    // H(0.1) = 0.3251
    assert!((sigma_max - 0.3251).abs() < 2e-3, "{sigma_max}");
    assert!(tmp.path().join("out/rs_curve.gp").exists());
    assert_eq!(
        manifest_value(&tmp.path().join("out/manifest_rs-curve.txt"), "failures").as_deref(),
        Some("0")
    );
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        let o = ric(
            tmp.path(),
            &["--set", "mu_steps=8", "--set", &format!("output_dir={d}"), "rs-curve"],
        );
        assert_eq!(code(&o), 0);
    }
    let a = fs::read(tmp.path().join("a/rs_curve.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/rs_curve.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&ric(tmp.path(), &["rs-curve", "--set", "mu_steps=0"])), 2);
    let o = ric(tmp.path(), &["rs-curve", "--set", "alpah=0.5"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpah"));
    assert_eq!(code(&ric(tmp.path(), &["ric", "--set", "rho_max=0.6"])), 2);
    assert_eq!(code(&ric(tmp.path(), &["emc", "--set", "sweeps=10"])), 2);
    assert_eq!(code(&ric(tmp.path(), &["oracle"])), 2);

    let conf = tmp.path().join("bad.conf");
    fs::write(&conf, "alpha = 0.5\nsweps = 10\n").unwrap();
    assert_eq!(
        code(&ric(tmp.path(), &["--config", conf.to_str().unwrap(), "rs-curve"])),
        2
    );
}

#[test]
fn config_file_is_applied() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("run.conf");
    fs::write(&conf, "# small grid\nmu_steps = 5\nrho = 0.05\noutput_dir = conf_out\n").unwrap();
    let o = ric(tmp.path(), &["--config", "run.conf", "rs-curve"]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(tmp.path().join("conf_out/rs_curve.csv")).unwrap();
    assert!(text.contains("rho=0.05"));
    assert_eq!(data_rows(&tmp.path().join("conf_out/rs_curve.csv")).len(), 10);
}

#[test]
fn oracle_reports_extremes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ric(tmp.path(), &["--seed", "1", "oracle", "--set", "output_dir=o"]);
    assert_eq!(code(&o), 0);
    let m = tmp.path().join("o/manifest_oracle.txt");
    assert_eq!(manifest_value(&m, "subsets").as_deref(), Some("220"));
    let lmin: f64 = manifest_value(&m, "lambda_min_star").unwrap().parse().unwrap();
    let lmax: f64 = manifest_value(&m, "lambda_max_star").unwrap().parse().unwrap();
    let dmin: f64 = manifest_value(&m, "delta_min").unwrap().parse().unwrap();
    assert!(0.0 < lmin && lmin < 1.0 && lmax > 1.0);
    assert!((dmin - (1.0 - lmin)).abs() < 1e-12);
    assert!(tmp.path().join("o/dos_exact_min.csv").exists());
    assert!(tmp.path().join("o/dos_exact_max.csv").exists());
}

#[test]
fn wham_on_single_flat_rung_is_normalized_histogram() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ric(
        tmp.path(),
        &[
            "--seed",
            "3",
            "emc",
            "--set",
            "rungs=1",
            "--set",
            "mu_hi=0",
            "--set",
            "sweeps=3000",
            "--set",
            "output_dir=e",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = ric(tmp.path(), &["wham", "e/hist_rung_00.csv", "--set", "output_dir=w"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let hist = data_rows(&tmp.path().join("e/hist_rung_00.csv"));
    let total: f64 = hist.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    let ln_c = (220f64).ln();
    let dos = data_rows(&tmp.path().join("w/dos_min.csv"));
    let mut checked = 0;
    for (h, d) in hist.iter().zip(&dos) {
        let count: f64 = h[1].parse().unwrap();
        if count > 0.0 {
            let sigma: f64 = d[1].parse().unwrap();
            let expected = ((count / total).ln() + ln_c) / 12.0;
            assert!((sigma - expected).abs() < 1e-9, "{sigma} vs {expected}");
            checked += 1;
        }
    }
    assert!(checked > 5);
}

#[test]
fn compare_refuses_mismatched_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&ric(tmp.path(), &["--seed", "1", "oracle", "--set", "output_dir=o"])),
        0
    );
    assert_eq!(
        code(&ric(
            tmp.path(),
            &["rs-curve", "--set", "mu_steps=6", "--set", "output_dir=rs"]
        )),
        0
    );
    // the oracle instance has rho = 3/12, the RS curve rho = 0.1
    let o = ric(
        tmp.path(),
        &[
            "compare",
            "rs/rs_curve.csv",
            "o/dos_exact_min.csv",
            "--set",
            "output_dir=c",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("mismatched"));
}

#[test]
fn emc_wham_compare_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ric(
        tmp.path(),
        &[
            "--seed",
            "5",
            "--threads",
            "2",
            "emc",
            "--set",
            "rungs=4",
            "--set",
            "mu_hi=3",
            "--set",
            "sweeps=2000",
            "--set",
            "output_dir=e",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(tmp.path().join("e")).unwrap().count(), 4 * 2 + 1);

    let o = ric(
        tmp.path(),
        &[
            "--seed",
            "6",
            "wham",
            "e",
            "--set",
            "output_dir=w",
            "--set",
            "bootstrap=5",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let errors = data_rows(&tmp.path().join("w/dos_min_errors.csv"));
    assert!(!errors.is_empty());
    let phi0: f64 = manifest_value(&tmp.path().join("w/manifest_wham.txt"), "phi_at_zero")
        .unwrap()
        .parse()
        .unwrap();
    assert!((phi0 - (220f64).ln() / 12.0).abs() < 1e-9);

    let o = ric(
        tmp.path(),
        &[
            "rs-curve",
            "--set",
            "rho=0.25",
            "--set",
            "mu_steps=10",
            "--set",
            "output_dir=rs",
        ],
    );
    assert_eq!(code(&o), 0);
    let o = ric(
        tmp.path(),
        &["compare", "rs/rs_curve.csv", "w/dos_min.csv", "--set", "output_dir=c"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&tmp.path().join("c/comparison_min.csv"));
    assert!(rows.len() > 5);
    assert!(rows.iter().all(|r| r.len() == 4));
    assert!(tmp.path().join("c/compare_min.gp").exists());
}

#[test]
fn manifests_reproduce_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ric(
        tmp.path(),
        &["--seed", "4", "emc", "--set", "rungs=3", "--set", "sweeps=500", "--set", "output_dir=a"],
    );
    assert_eq!(code(&o), 0);
    let o = ric(tmp.path(), &["--config", "a/manifest_emc.txt", "--set", "output_dir=b", "emc"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["hist_rung_00.csv", "hist_rung_02.csv", "blocks_rung_01.csv", "manifest_emc.txt"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
