use std::path::Path;
use std::process::Command;

fn sfd() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sfd-deom"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_owned()
}

#[test]
fn preset_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let status = sfd()
        .args(["--preset", "LplusQ", "--trajectories", "8", "--t-final", "0.5", "--level", "3"])
        .args(["--seed", "7", "--workers", "2", "--field-dump", "50"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert_eq!(header(&dir.path().join("populations.csv")), "t,rho00,rho11,re_rho01,im_rho01,P");
    assert_eq!(header(&dir.path().join("convergence.csv")), "N,t,P,sigma,phi");
    assert_eq!(header(&dir.path().join("bath_validation.csv")), "t,abs_error");
    assert_eq!(
        header(&dir.path().join("fields.csv")),
        "trajectory,t,xi,xi_prime,xi_tilde,xi_tilde_prime"
    );
    let pops = std::fs::read_to_string(dir.path().join("populations.csv")).unwrap();
    // 0.5 / 0.001 steps, sampled every 10, plus t = 0.
    assert_eq!(pops.lines().count(), 1 + 51);
    let first: Vec<&str> = pops.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "0.0000000000000000e0");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["trajectories"], 8);
    assert_eq!(meta["config"]["flags"]["gt"], true);
    assert!(meta["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn runs_are_reproducible_across_worker_counts() {
    let run = |workers: &str| {
        let dir = tempfile::tempdir().unwrap();
        let status = sfd()
            .args(["--preset", "LminusQ", "--trajectories", "40", "--t-final", "0.3", "--level", "2"])
            .args(["--workers", workers])
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        std::fs::read_to_string(dir.path().join("populations.csv")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn validate_bath_only_with_four_poles() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfd()
        .args(["--preset", "L", "--validate-bath-only", "--poles", "4"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("bath_validation.csv").exists());
    assert!(!dir.path().join("populations.csv").exists());
    let errors: Vec<f64> = std::fs::read_to_string(dir.path().join("bath_validation.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(errors.iter().all(|e| *e < 1e-4));
}

#[test]
fn config_file_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[model]\nlambda = 0.0\ntheta_b = 1.0\n[integration]\nt_final = 0.2\n[ensemble]\nN = 2\n[hierarchy]\nL = 2\n",
    )
    .unwrap();
    let status = sfd().arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("a")).output().unwrap().status;
    assert!(status.success());

    std::fs::write(&cfg, "[integration]\ndt = 0.0\n").unwrap();
    let out = sfd().arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("b")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("integration.dt"));

    let out = sfd().args(["--preset", "L", "--poles", "0"]).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&cfg, "[bath]\nzeta = 2.0\nomega_b = 1.0\n").unwrap();
    let out = sfd().arg("--config").arg(&cfg).arg("--validate-bath-only").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = sfd().args(["--preset", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
