use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn collapse(dir: &Path, cmd: &str, config: &str, sets: &[&str], seed_env: Option<&str>) -> Output {
    let cfg = dir.join("experiment.cfg");
    std::fs::write(&cfg, config).unwrap();
    let mut c = Command::new(env!("CARGO_BIN_EXE_collapse"));
    c.arg(cmd).arg("--config").arg(&cfg).arg("--out").arg(dir.join("out"));
    for s in sets {
        c.arg("--set").arg(s);
    }
    c.env_remove("COLLAPSE_SEED");
    if let Some(s) = seed_env {
        c.env("COLLAPSE_SEED", s);
    }
    c.output().unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap()
}

fn csv(dir: &Path, name: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(dir.join("out").join(name)).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let k = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[k]).collect()
}

const SHORT: &str = "classes = 4\nexamples_per_class = 5\nhorizon = 5\nstep_size = 1e-2\nrecord_every = 50\n";

#[test]
fn decompose_writes_identity_and_on_path_rows() {
    let dir = TempDir::new().unwrap();
    let out = collapse(dir.path(), "decompose", SHORT, &[], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let printed: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("identity residual max: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(printed <= 1e-10);

    let (header, rows) = csv(dir.path(), "decomposition.csv");
    assert_eq!(header, ["t", "total", "ls", "perp", "nc1", "nc23"]);
    assert_eq!(rows.len(), 11);
    assert!(column(&header, &rows, "perp").iter().all(|p| p.abs() <= 1e-14));
    let s = summary(dir.path());
    assert_eq!(s["status"], "ok");
    assert!(s["results"]["nc23_decays_faster"].is_boolean());
}

#[test]
fn flow_is_deterministic_and_contracts() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let out = collapse(d.path(), "flow", SHORT, &["seed=3"], None);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["trajectory.csv", "nc_report.csv", "summary.json"] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    let s = summary(a.path());
    let r = &s["results"];
    assert!(r["final_ratio"].as_f64().unwrap() < r["initial_ratio"].as_f64().unwrap());
    assert!(r["drift"].as_f64().unwrap() <= 1e-3);
    let (header, rows) = csv(a.path(), "nc_report.csv");
    assert_eq!(header.len(), 6);
    assert_eq!(rows.len(), 11);
}

#[test]
fn seed_precedence() {
    let read = |d: &TempDir| std::fs::read(d.path().join("out/trajectory.csv")).unwrap();
    let cfg = "init = random\nclasses = 3\nexamples_per_class = 6\nhorizon = 1\nstep_size = 1e-2\nseed = 1\n";
    let base = TempDir::new().unwrap();
    collapse(base.path(), "flow", cfg, &[], None);
    let env = TempDir::new().unwrap();
    collapse(env.path(), "flow", cfg, &[], Some("2"));
    let set = TempDir::new().unwrap();
    collapse(set.path(), "flow", cfg, &["seed=2"], Some("1"));
    assert_ne!(read(&base), read(&env));
    assert_eq!(read(&env), read(&set));
    assert_eq!(summary(env.path())["config"]["seed"], 2);
}

#[test]
fn closedform_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = "classes = 10\nexamples_per_class = 5\nomegas = 0.5,0.75,1,1.25,1.5,1.75,2,2.5,3\nt_max = 1e7\n";
    let out = collapse(dir.path(), "closedform", cfg, &[], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv(dir.path(), "closedform.csv");
    assert_eq!(header, ["omega0", "t", "omega_closed_form", "asymptote", "ratio", "residual"]);
    let per = rows.len() / 9;
    for block in rows.chunks(per) {
        assert_eq!(block[0][1], 0.0);
        assert_eq!(block[0][2], block[0][0]);
        let last = block.last().unwrap();
        assert_eq!(last[1], 1e7);
        assert!((0.98..=1.02).contains(&last[4]), "ratio {}", last[4]);
    }
    assert!(column(&header, &rows, "residual").iter().all(|r| *r <= 1e-12));
}

#[test]
fn compare_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let cfg = "classes = 5\nexamples_per_class = 8\nstep_size = 1e-3\nhorizon = 50\nrecord_every = 5000\n";
    let out = collapse(dir.path(), "compare", cfg, &[], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = &summary(dir.path())["results"];
    assert!(r["max_relative_error"].as_f64().unwrap() <= 1e-2);
    let factor = r["convergence_factor"].as_f64().unwrap();
    assert!((1.7..=2.3).contains(&factor), "factor {factor}");
    assert_eq!(r["etf_distance_decreasing"], true);
    assert_eq!(r["limit_certificate_passed"], true);
    assert!(r["etf_distance_final"].as_f64().unwrap() <= r["etf_distance_initial"].as_f64().unwrap());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = collapse(dir.path(), "flow", "classes = 1\n", &[], None);
    assert_eq!(out.status.code(), Some(2));
    let out = collapse(dir.path(), "flow", SHORT, &["colour=red"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = collapse(dir.path(), "flow", SHORT, &[], Some("not-a-seed"));
    assert_eq!(out.status.code(), Some(2));

    let out = collapse(dir.path(), "closedform", SHORT, &["tol.residual=1e-300"], None);
    assert_eq!(out.status.code(), Some(1));
    let s = summary(dir.path());
    assert_eq!(s["status"], "tolerance_violation");
    assert_eq!(s["violations"].as_array().unwrap().len(), 1);

    // Fewer examples than feature dimensions: the within-class covariance is singular.
    let singular = "init = random\nclasses = 3\nexamples_per_class = 2\nfeature_dim = 5\n";
    let out = collapse(dir.path(), "flow", singular, &[], None);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(summary(dir.path())["status"], "numerical_failure");
}
