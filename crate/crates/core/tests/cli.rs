use std::fs;
use std::process::Command;

fn pdboo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pdboo"))
}

const CHAIN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/nchain_default.mdp");
const LEFT_POLICY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/left_policy.txt");

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = pdboo().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = pdboo().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(pdboo().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn config_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seeds = 1\nwhatever = 2\n[agent.pqr]\n").unwrap();
    let out = pdboo().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:2"));
    let out = pdboo().args(["dp-verify", "/does/not/exist.mdp"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = pdboo().args(["dp-verify", CHAIN, "--delta0", "-1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dp_verify_writes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("dp.csv");
    let out = pdboo()
        .args([
            "dp-verify",
            CHAIN,
            "--n",
            "32",
            "--m",
            "8",
            "--iters",
            "40",
            "--seed",
            "3",
            "--out",
        ])
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,sup_gap,bound,assumption_ok"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r[1] <= r[2] && r[3] == 1.0));
    // stdout when --out is absent
    let out = pdboo()
        .args(["dp-verify", CHAIN, "--n", "8", "--m", "4", "--iters", "3"])
        .output()
        .unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);
}

#[test]
fn oracle_reports_the_left_return() {
    let out = pdboo()
        .args([
            "oracle",
            CHAIN,
            "--policy",
            LEFT_POLICY,
            "--rollouts",
            "20000",
            "--seed",
            "9",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    let (mean, std, se) = (row[1], row[2], row[3]);
    assert!((mean - 8.1).abs() < 4.0 * se, "{text}");
    assert!((std - 0.081).abs() < 0.005);
    assert_eq!(row[5], 0.0);
}

#[test]
fn run_then_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(
        &cfg,
        "total_steps = 700\nseeds = 1, 2\neval_interval = 350\noutput_dir = results\n\
         [agent.p_dltv]\nn_quantiles = 6\nbatch_size = 4\nstart_steps = 100\n",
    )
    .unwrap();
    let out = pdboo().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // output_dir is relative to the config file
    let results = dir.path().join("results");
    assert!(results.join("summary.csv").exists());
    let out = pdboo().arg("plotdata").arg(&results).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(results.join("plots/counts_p_dltv.csv").exists());
    assert!(results.join("plots/w2_p_dltv.csv").exists());
    let out = pdboo().arg("plotdata").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
