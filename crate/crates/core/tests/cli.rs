use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_token-lab"))
        .args(args)
        .env_remove("TOKEN_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(path).unwrap()
}

const GOLDEN: &[(&str, &[&str])] = &[
    ("steady.csv", &["steady", "--alpha", "0.6", "--k", "2"]),
    (
        "values.csv",
        &[
            "values", "--alpha", "1.5", "--k", "3", "--rho", "0.5", "--beta", "0.9", "--r", "2",
        ],
    ),
    (
        "marginals.csv",
        &[
            "marginals",
            "--alpha",
            "1.5",
            "--k",
            "3",
            "--rho",
            "0.5",
            "--beta",
            "0.9",
            "--r",
            "2",
        ],
    ),
    (
        "beta_interval.json",
        &[
            "beta-interval",
            "--alpha",
            "0.5",
            "--k",
            "1",
            "--rho",
            "0.5",
            "--r",
            "2",
        ],
    ),
    (
        "design.json",
        &["design", "--rho", "0.5", "--beta", "0.95", "--r", "2"],
    ),
    (
        "sweep.csv",
        &[
            "sweep",
            "--alpha",
            "0.25",
            "--rho",
            "0.5",
            "--r",
            "2",
            "--beta-min",
            "0.8",
            "--beta-max",
            "0.9",
            "--beta-steps",
            "5",
            "--k-max",
            "3",
        ],
    ),
    (
        "simulate.json",
        &[
            "simulate", "--agents", "200", "--steps", "100", "--seed", "3", "--alpha", "1", "--k",
            "2",
        ],
    ),
];

#[test]
fn golden_outputs_are_stable() {
    for (name, args) in GOLDEN {
        let first = stdout(args);
        assert_eq!(first, stdout(args), "{name} differs between runs");
        assert_eq!(first, golden(name), "{name} differs from golden file");
    }
}

#[test]
fn steady_uniform_rows() {
    let out = stdout(&["steady", "--alpha", "2", "--k", "4"]);
    assert_eq!(out, "k,eta\n0,0.200000000000\n1,0.200000000000\n2,0.200000000000\n3,0.200000000000\n4,0.200000000000\n");
}

#[test]
fn bounds_json() {
    let v: serde_json::Value = serde_json::from_str(&stdout(&[
        "bounds", "--rho", "0.5", "--beta", "0.9", "--r", "2",
    ]))
    .unwrap();
    assert!((v["K_L"].as_f64().unwrap() - 0.2291).abs() < 1e-4);
    assert!((v["K_H"].as_f64().unwrap() - 6.9083).abs() < 1e-4);
}

#[test]
fn check_and_intervals() {
    let v: serde_json::Value = serde_json::from_str(&stdout(&[
        "check", "--alpha", "0.5", "--k", "1", "--rho", "0.5", "--beta", "0.8", "--r", "2",
    ]))
    .unwrap();
    assert_eq!(v["class"], "BoundaryEquilibrium");
    let v: serde_json::Value = serde_json::from_str(&stdout(&[
        "r-interval",
        "--alpha",
        "0.5",
        "--k",
        "1",
        "--rho",
        "0.5",
        "--beta",
        "0.85",
    ]))
    .unwrap();
    let expected = (1.0 - 0.75 * 0.85) / (0.25 * 0.85);
    assert!((v["lo"].as_f64().unwrap() - expected).abs() < 1e-9);
}

#[test]
fn figure_commands_have_headers() {
    let common = [
        "--rho",
        "0.5",
        "--r",
        "2",
        "--beta-min",
        "0.9",
        "--beta-max",
        "0.95",
        "--beta-steps",
        "3",
        "--alpha-steps",
        "40",
    ];
    let fig3 = stdout(&[&["fig3"][..], &common].concat());
    assert!(fig3.starts_with("beta,K_star,alpha_star,eff_opt,eff_piK\n"));
    assert_eq!(fig3.lines().count(), 4);
    let fig4 = stdout(&[&["fig4"][..], &common, &["--fixed-k", "3"]].concat());
    assert!(fig4.starts_with("beta,eff_opt,eff_fixedK\n"));
    let opt: serde_json::Value = serde_json::from_str(&stdout(&[
        "optimize",
        "--rho",
        "0.5",
        "--beta",
        "0.95",
        "--r",
        "2",
        "--alpha-steps",
        "40",
    ]))
    .unwrap();
    assert!(opt["best"]["efficiency"].as_f64().unwrap() >= 0.5625);
}

#[test]
fn output_flag_and_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eta.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_token-lab"))
        .args(["steady", "--alpha", "2", "--k", "4", "--output"])
        .arg(&path)
        .env("TOKEN_LAB_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    assert!(std::fs::read_to_string(&path)
        .unwrap()
        .starts_with("k,eta\n"));

    let bad = Command::new(env!("CARGO_BIN_EXE_token-lab"))
        .args(["steady", "--alpha", "2", "--k", "4"])
        .env("TOKEN_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn simulate_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let p = path.to_str().unwrap();
    stdout(&[
        "simulate", "--agents", "50", "--steps", "10", "--alpha", "1", "--k", "2", "--trace", p,
    ]);
    let trace = std::fs::read_to_string(&path).unwrap();
    assert!(trace.starts_with("t,trades,eta0,etaK\n"));
    assert_eq!(trace.lines().count(), 11);
}

#[test]
fn exit_codes() {
    let cases: &[(&[&str], i32)] = &[
        (&["steady", "--alpha", "2"], 2),
        (&["steady", "--alpha", "4", "--k", "4"], 2),
        (&["bogus"], 2),
        (&["bounds", "--rho", "0.7", "--beta", "0.9", "--r", "2"], 2),
        (
            &[
                "sweep",
                "--alpha",
                "0.25",
                "--r",
                "2",
                "--beta-min",
                "0.9",
                "--beta-max",
                "0.8",
                "--beta-steps",
                "3",
            ],
            2,
        ),
        (
            &[
                "simulate", "--agents", "1", "--steps", "10", "--alpha", "1", "--k", "2",
            ],
            2,
        ),
        (
            &["design", "--rho", "0.5", "--beta", "0.2", "--r", "1.5"],
            1,
        ),
        (
            &[
                "simulate",
                "--agents",
                "10",
                "--steps",
                "10",
                "--alpha",
                "3",
                "--k",
                "2",
                "--mix-weight",
                "0",
            ],
            1,
        ),
    ];
    for (args, code) in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(*code), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        if *code == 1 {
            let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
            assert!(v["error"].is_string() && v["message"].is_string());
        }
    }
}
