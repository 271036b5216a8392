use std::process::{Command, Output};

use selfnorm::cli::{read_csv, HEADER};

fn selfnorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfnorm"))
        .args(args)
        .env_remove("SELFNORM_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn verify_on_enumerable_cells_passes() {
    let o = selfnorm(&[
        "verify",
        "--dist",
        "rademacher",
        "--n",
        "1,4,16",
        "--B",
        "0.5,1,2",
        "--trials",
        "1000000",
        "--seed",
        "7",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let rows = read_csv(o.stdout.as_slice()).unwrap();
    assert!(rows.iter().any(|r| r.status == "PASS"));
    assert!(rows
        .iter()
        .all(|r| r.status == "PASS" || r.status == "INFO"));
    assert!(rows.iter().all(|r| r.mc_ci_lo.is_some()));
}

#[test]
fn power_rows_below_e_are_marked_skip() {
    let o = selfnorm(&["bound-power", "--dist", "gaussian", "--n", "16", "--B", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), HEADER.join(","));
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "gaussian,16,1,power,,p,,,,,,SKIP"
    );
}

#[test]
fn configuration_errors_exit_2() {
    let o = selfnorm(&["bound-exp", "--dist", "uniform:a=bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`dist`"));
    assert!(o.stdout.is_empty());

    let o = selfnorm(&["mc", "--dist", "gaussian", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = selfnorm(&["bound-exp", "--dist", "gaussian", "--format", "xml"]);
    assert_eq!(o.status.code(), Some(2));

    let o = selfnorm(&["gls", "--dist", "gaussian"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_errors_name_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "dist = rademacher\nn = 1,4\nB = 1,x\n").unwrap();
    let o = selfnorm(&["bound-exp", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`B`") && err.contains("line 3"), "{err}");

    // A flag overrides the broken file entry.
    let o = selfnorm(&["bound-exp", "--config", path.to_str().unwrap(), "--B", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = read_csv(o.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!((rows[1].value.unwrap() - 16.0 / 27.0).abs() < 1e-9);
}

#[test]
fn output_file_and_pretty_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let o = selfnorm(&[
        "bound-lower",
        "--dist",
        "gaussian",
        "--B",
        "1,3",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let rows = read_csv(std::fs::File::open(&path).unwrap()).unwrap();
    let families: Vec<&str> = rows.iter().map(|r| r.family.as_str()).collect();
    assert_eq!(
        families,
        [
            "lower_q1",
            "lower_q1",
            "lower_clt",
            "lower_clt_printed",
            "lower_clt",
            "lower_clt_printed"
        ]
    );

    let o = selfnorm(&[
        "bound-exp",
        "--dist",
        "rademacher",
        "--n",
        "4",
        "--B",
        "1,3",
        "--format",
        "pretty",
    ]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let col = lines[0].find("family").unwrap();
    assert!(lines[1..].iter().all(|l| &l[col..col + 3] == "exp"));
}

#[test]
fn sweep_and_gls_commands() {
    let o = selfnorm(&[
        "sweep",
        "--dist",
        "rademacher",
        "--n",
        "1,4",
        "--B",
        "1,e,5",
        "--n-sup",
        "1:8",
        "--trials",
        "20000",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let rows = read_csv(o.stdout.as_slice()).unwrap();
    for fam in [
        "exp",
        "exp_sup",
        "power",
        "power_sup",
        "lower_q1",
        "lower_clt",
    ] {
        assert!(rows.iter().any(|r| r.family == fam), "{fam}");
    }
    assert!(rows.iter().any(|r| r.status == "SKIP" && r.b == Some(1.0)));
    assert!(rows
        .iter()
        .any(|r| r.family == "exp_sup" && r.n_star.is_some()));

    let o = selfnorm(&[
        "gls",
        "--dist",
        "gaussian",
        "--phi",
        "phi:natural",
        "--B",
        "1,2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows = read_csv(o.stdout.as_slice()).unwrap();
    assert_eq!(rows[0].family, "bphi_norm");
    assert!((rows[0].value.unwrap() - 1.0).abs() < 1e-6);
    assert!((rows[2].value.unwrap() - (-2.0f64).exp()).abs() < 1e-6);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let args = [
        "mc",
        "--dist",
        "uniform:a=1.7320508075688772",
        "--n",
        "3",
        "--trials",
        "50000",
        "--seed",
        "4",
    ];
    let a = selfnorm(&args);
    let b = selfnorm(&[&args[..], &["--threads", "3"]].concat());
    assert_eq!(a.stdout, b.stdout);
}
