use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use input_consensus::likelihood::enumerate_stationary;
use input_consensus::model::{generate, ModelParams};

fn icsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn header_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

#[test]
fn simulate_ia_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let trace = dir.path().join(format!("trace{tag}.csv"));
        let summary = dir.path().join(format!("summary{tag}.json"));
        let out = icsim(&[
            "simulate", "--algo", "ia", "--topology", "ring", "--n", "64", "--zeta", "0.7", "--seed", "7",
            "-o", trace.to_str().unwrap(), "--summary", summary.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        (fs::read(trace).unwrap(), fs::read(summary).unwrap())
    };
    let (t1, s1) = run("a");
    let (t2, s2) = run("b");
    assert_eq!(t1, t2);
    assert_eq!(s1, s2);
    let trace = String::from_utf8(t1).unwrap();
    assert_eq!(body(&trace)[0], "t,gamma,mean_theta,disagreement,label_changes");
    assert!(body(&trace).len() > 500);
    let summary: serde_json::Value = serde_json::from_slice(&s1).unwrap();
    assert_eq!(summary["summary"]["converged"], true);
    assert_eq!(
        summary["config_hash"].as_str(),
        header_value(&trace, "config_hash")
    );
}

#[test]
fn simulate_em_converges() {
    let out = icsim(&["simulate", "--algo", "em", "--n", "100", "--seed", "1"]);
    let text = stdout(&out);
    assert_eq!(body(&text)[0], "iteration,theta,loglik");
    let summary: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(summary["summary"]["converged"], true);
}

#[test]
fn simulate_json_output() {
    for algo in ["ia", "iml", "ml_exact"] {
        let out = icsim(&["simulate", "--algo", algo, "--n", "12", "--format", "json"]);
        let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert_eq!(doc["command"], "simulate");
        assert_eq!(doc["config"]["algo"], algo);
        assert!(doc["result"]["summary"]["theta"].is_number());
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let out = icsim(&["simulate", "--algo", "em"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--n"));
    assert_eq!(icsim(&["simulate", "--n", "5", "--algo", "magic"]).status.code(), Some(2));
    assert_eq!(icsim(&["simulate", "--n", "5", "--p", "1.5"]).status.code(), Some(2));
    assert_eq!(icsim(&["simulate", "--n", "abc"]).status.code(), Some(2));
    assert_eq!(icsim(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn config_file_is_merged_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# comment\nn = 20\nseed=3\nalgo = iml\n").unwrap();
    let text = stdout(&icsim(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "5"]));
    assert_eq!(header_value(&text, "n"), Some("20"));
    assert_eq!(header_value(&text, "seed"), Some("5"));
    assert_eq!(header_value(&text, "algo"), Some("iml"));

    fs::write(&cfg, "n = 20\nbogus = 1\n").unwrap();
    let out = icsim(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn identical_config_gives_identical_hash_and_body() {
    let a = stdout(&icsim(&["likelihood-curve", "--n", "30", "--seed", "2", "--grid-points", "101"]));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "n=30\nseed=2\ngrid_points=101\n").unwrap();
    let b = stdout(&icsim(&["likelihood-curve", "--config", cfg.to_str().unwrap()]));
    assert_eq!(a, b);
}

fn parse_curve(text: &str) -> Vec<(f64, f64, bool)> {
    body(text)[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2] == "true")
        })
        .collect()
}

#[test]
fn likelihood_curve_flags_exact_stationary_points() {
    let text = stdout(&icsim(&["likelihood-curve", "--n", "50", "--seed", "11"]));
    assert_eq!(body(&text)[0], "theta,profile_value,is_stationary");
    let rows = parse_curve(&text);
    let params = ModelParams::reference();
    let y = generate(&params, 50, 11).unwrap().y;
    let set = enumerate_stationary(&y, &params).unwrap();
    let flagged: Vec<f64> = rows.iter().filter(|r| r.2).map(|r| r.0).collect();
    assert_eq!(flagged.len(), set.len());
    for (a, b) in flagged.iter().zip(&set.points) {
        assert!((a - b).abs() <= 1e-9);
    }
    let best = set.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid_best = rows.iter().filter(|r| !r.2).map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    assert!(grid_best <= best + 1e-6);
    assert!(rows.windows(2).all(|w| w[0].0 <= w[1].0));
}

#[test]
fn likelihood_curve_large_network() {
    let text = stdout(&icsim(&["likelihood-curve", "--n", "5000", "--seed", "1", "--grid-points", "201"]));
    let rows = parse_curve(&text);
    let stationary = rows.iter().filter(|r| r.2).count();
    assert!((1..50).contains(&stationary), "{stationary} stationary points");
}

#[test]
fn asymptotics_table_shape() {
    let text = stdout(&icsim(&["asymptotics"]));
    let rows: Vec<Vec<f64>> = body(&text)[1..]
        .iter()
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    let q_at = |p: f64, ratio: f64| {
        rows.iter()
            .find(|r| r[0] == p && (r[1] - ratio).abs() < 1e-9)
            .map(|r| r[5])
            .unwrap()
    };
    assert!((q_at(0.25, 10.0 / 0.3) - 0.0200).abs() < 1e-4);
    // Shrinking p drives q to zero monotonically at a fixed ratio.
    let column: Vec<f64> = [0.45, 0.25, 0.1, 0.01, 0.001, 0.0001]
        .iter()
        .map(|&p| q_at(p, 10.0))
        .collect();
    assert!(column.windows(2).all(|w| w[1] < w[0]));
    assert!(*column.last().unwrap() < 1e-3);
    // Near-equal variances: q tends to p.
    for p in [0.45, 0.25, 0.1] {
        assert!((q_at(p, 1.000001) - p).abs() < 1e-3);
    }
}

#[test]
fn validate_matrix_reports_ring_spectrum_and_edges() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.txt");
    let text = stdout(&icsim(&["validate-matrix", "--n", "4", "--edges", edges.to_str().unwrap()]));
    let min: f64 = body(&text)
        .iter()
        .find_map(|l| l.strip_prefix("min_eigenvalue,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((min + 1.0 / 3.0).abs() < 1e-9);
    assert!(text.contains("positive_spectrum,false"));
    let lines = fs::read_to_string(&edges).unwrap();
    assert_eq!(lines.lines().count(), 12);
    let lazy = stdout(&icsim(&["validate-matrix", "--n", "4", "--tau", "0.5"]));
    assert!(lazy.contains("positive_spectrum,true"));
}

#[test]
fn sweep_body_independent_of_execution() {
    let args = |exec: &'static str, path: &Path| {
        vec![
            "sweep".to_string(),
            "--n-values".into(), "8,16".into(),
            "--topologies".into(), "ring,rgg".into(),
            "--radius".into(), "0.6".into(),
            "--algorithms".into(), "ia,em,iml,ml_exact".into(),
            "--zetas".into(), "0.5,0.9".into(),
            "--mc-runs".into(), "6".into(),
            "--tau".into(), "0.5".into(),
            "--execution".into(), exec.into(),
            "-o".into(), path.to_str().unwrap().into(),
        ]
    };
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq.csv");
    let par = dir.path().join("par.csv");
    for (exec, path) in [("sequential", &seq), ("parallel", &par)] {
        let a = args(exec, path);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        assert!(icsim(&refs).status.success());
    }
    let seq = fs::read_to_string(seq).unwrap();
    let par = fs::read_to_string(par).unwrap();
    assert_eq!(body(&seq), body(&par));
    let rows = body(&seq);
    assert_eq!(rows[0], input_consensus::montecarlo::SWEEP_CSV_HEADER);
    assert_eq!(rows.len(), 1 + 2 * (2 * 2 + 3));
}
