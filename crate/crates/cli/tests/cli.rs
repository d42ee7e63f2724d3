//! End-to-end behaviour of the `cavsim` binary: exit codes, file outputs,
//! and determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

fn cavsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cavsim"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cavsim-cli-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_preset_exits_2() {
    let out = cavsim().args(["deflection", "--preset", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_override_key_exits_2_and_names_the_key() {
    let dir = temp_dir("badkey");
    let out = cavsim()
        .args(["deflection", "--set", "geometry.bogus_key=1", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("geometry.bogus_key"), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn deflection_outputs() {
    let dir = temp_dir("deflection");
    let status = cavsim().args(["deflection", "--out"]).arg(&dir).status().unwrap();
    assert!(status.success());

    let summary = read_json(&dir.join("deflection_summary.json"));
    let delta_pi = summary["delta_pi"].as_f64().unwrap();
    assert!((delta_pi - 666.7e-9).abs() / 666.7e-9 < 1e-3, "delta_pi {delta_pi}");

    // Gradient column stays above 100 µV/pm up to 390 nm of deflection.
    let csv = std::fs::read_to_string(dir.join("deflection.csv")).unwrap();
    let mut checked = 0;
    for line in csv.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let (deflection, gradient) = (fields[1], fields[2]);
        if deflection <= 390e-9 {
            assert!(gradient / 1e6 > 100.0, "gradient {} at {}", gradient, deflection);
            checked += 1;
        }
    }
    assert!(checked > 100, "deflection grid too coarse: {checked}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn scan_outputs_twelve_tuned_sites() {
    let dir = temp_dir("scan");
    let status = cavsim()
        .args(["scan", "--seed", "3", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());

    for i in 0..12 {
        assert!(dir.join(format!("scan_site_{i:02}.csv")).exists(), "missing trace {i}");
    }
    let report = read_json(&dir.join("scan_report.json"));
    assert_eq!(report["tuned"].as_u64(), Some(12));
    for site in report["sites"].as_array().unwrap() {
        assert_eq!(site["status"].as_str(), Some("tuned"));
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn scan_trace_has_two_dips_and_fit_recovers_kappa() {
    let dir = temp_dir("scanfit");
    let status = cavsim()
        .args(["scan", "--preset", "linewidth-matched", "--seed", "5", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());

    // Two fundamental dips in the single-site voltage ramp.
    let fit2 = cavsim()
        .args(["fit", "--peaks", "2", "--out"])
        .arg(&dir)
        .arg(dir.join("scan_site_00.csv"))
        .status()
        .unwrap();
    assert!(fit2.success());
    let report = read_json(&dir.join("fit_report.json"));
    assert_eq!(report["peaks"].as_array().unwrap().len(), 2);

    // The frequency-domain trace fits back to the model half-linewidth.
    let fit1 = cavsim()
        .args(["fit", "--peaks", "1", "--out"])
        .arg(&dir)
        .arg(dir.join("scan_frequency.csv"))
        .status()
        .unwrap();
    assert!(fit1.success());
    let report = read_json(&dir.join("fit_report.json"));
    assert!(report["converged"].as_bool().unwrap());
    let fwhm = 2.0 * report["peaks"][0]["half_width"].as_f64().unwrap();
    let kappa_hz = fwhm / 2.0;
    assert!(
        (kappa_hz - 14.97e9).abs() / 14.97e9 < 0.05,
        "kappa/2pi = {kappa_hz}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fit_malformed_csv_exits_2_with_line_number() {
    let dir = temp_dir("badcsv");
    let bad = dir.join("bad.csv");
    std::fs::write(&bad, "x,power\n0.0,0.5\n1.0,oops\n").unwrap();
    let out = cavsim().args(["fit", "--out"]).arg(&dir).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fit_too_many_peaks_is_degenerate() {
    let dir = temp_dir("degenerate");
    let status = cavsim()
        .args(["scan", "--seed", "3", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let out = cavsim()
        .args(["fit", "--peaks", "5", "--out"])
        .arg(&dir)
        .arg(dir.join("scan_site_00.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dips"), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn lock_outputs_and_zero_noise_floor() {
    let dir = temp_dir("lock");
    let status = cavsim().args(["lock", "--seed", "2", "--out"]).arg(&dir).status().unwrap();
    assert!(status.success());
    let summary = read_json(&dir.join("lock_summary.json"));
    let spacing = summary["plateau_spacing_m"].as_f64().unwrap();
    assert!((spacing - 15e-12).abs() / 15e-12 < 0.20, "spacing {spacing}");
    let rms_sp = summary["rms_setpoint_only_m"].as_f64().unwrap();
    assert!((rms_sp - 1.1e-12).abs() / 1.1e-12 < 0.30, "rms {rms_sp}");
    let rms_full = summary["rms_full_m"].as_f64().unwrap();
    assert!((rms_full - 7.4e-12).abs() / 7.4e-12 < 0.30, "rms {rms_full}");
    let peak = summary["psd_peak_hz"].as_f64().unwrap();
    assert!((peak - 223e3).abs() <= 2e3, "peak {peak}");

    // All noise amplitudes zeroed: the loop is quiet to numerical depth.
    let quiet = temp_dir("lock-quiet");
    let status = cavsim()
        .args([
            "lock",
            "--set",
            "noise.setpoint_noise_rms=0",
            "--set",
            "noise.power_fluctuation_rel=0",
            "--set",
            "noise.thermal_drift=0",
            "--out",
        ])
        .arg(&quiet)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = read_json(&quiet.join("lock_summary.json"));
    assert!(summary["rms_full_m"].as_f64().unwrap() < 1e-15);
    std::fs::remove_dir_all(&dir).ok();
    std::fs::remove_dir_all(&quiet).ok();
}

#[test]
fn infeasible_bandwidth_exits_4() {
    let dir = temp_dir("unstable");
    let out = cavsim()
        .args(["lock", "--set", "loop_bandwidth=200e3", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn figures_are_byte_reproducible() {
    let dir_a = temp_dir("figures-a");
    let dir_b = temp_dir("figures-b");
    for dir in [&dir_a, &dir_b] {
        let status = cavsim()
            .args(["figures", "--preset", "visibility-matched", "--seed", "9", "--out"])
            .arg(dir)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let mut names: Vec<_> = std::fs::read_dir(&dir_a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 10, "expected a full figure set, got {names:?}");
    for name in names {
        let a = std::fs::read(dir_a.join(&name)).unwrap();
        let b = std::fs::read(dir_b.join(&name)).unwrap();
        assert_eq!(a, b, "output {name:?} differs between identical runs");
    }
    std::fs::remove_dir_all(&dir_a).ok();
    std::fs::remove_dir_all(&dir_b).ok();
}

#[test]
fn env_var_sets_default_output_dir() {
    let dir = temp_dir("envvar");
    let status = cavsim()
        .env("CAVSIM_OUT", &dir)
        .args(["deflection"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.join("deflection_summary.json").exists());
    std::fs::remove_dir_all(&dir).ok();
}
