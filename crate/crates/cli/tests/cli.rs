//! End-to-end runs of the `orbitflow` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use orbitflow::io::{format_matrix, PolarTrajectoryFile, TrajectoryFile};
use orbitflow::linalg::{self, CMatrix};
use orbitflow::orbit_metric::{chamber_map, distance};
use orbitflow::polar::builtin_root_system;
use orbitflow::sampling;
use orbitflow::MatrixModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn orbitflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbitflow")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_matrix(dir: &TempDir, name: &str, model: MatrixModel, m: &CMatrix) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, format_matrix(model, m)).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Data rows of a trajectory CSV as numbers, plus the header.
fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn symmetric_seeded_run_has_monotone_time_and_constant_energy() {
    let out = orbitflow(&["simulate", "--model", "symmetric", "--n", "2", "--seed", "5", "--t-end", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("# seed: 5") && text.contains("# sign_convention: dY/dt = ZY - YZ"));
    let (header, rows) = csv_rows(&text);
    assert_eq!(header, ["t", "a_1", "a_2", "p_1", "p_2", "energy", "min_gap", "casimir_1", "casimir_2", "casimir_3"]);
    assert_eq!(rows.len(), 201);
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
    let e0 = rows[0][5];
    assert!(rows.iter().all(|r| (r[5] - e0).abs() < 1e-8 * e0.abs().max(1.0)));
}

#[test]
fn identical_seed_gives_identical_bytes() {
    let args = ["simulate", "--model", "hermitian", "--n", "4", "--seed", "9", "--samples", "50"];
    let a = orbitflow(&args);
    let b = orbitflow(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let other = orbitflow(&["simulate", "--model", "hermitian", "--n", "4", "--seed", "10", "--samples", "50"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn free_initial_data_gives_piecewise_linear_coordinates() {
    let dir = TempDir::new().unwrap();
    let model = MatrixModel::hermitian(3);
    let a0 = [1.0, 0.5, 0.0];
    let v0 = [-1.0, 0.0, 1.0];
    let a = write_matrix(&dir, "a.txt", model, &linalg::diag_real(&a0));
    let alpha = write_matrix(&dir, "alpha.txt", model, &linalg::diag_real(&v0));
    let out = orbitflow(&["simulate", "--a", p(&a), "--alpha", p(&alpha), "--t-end", "2", "--samples", "40"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = csv_rows(&stdout(&out));
    for r in &rows {
        let mut want: Vec<f64> = (0..3).map(|i| a0[i] + r[0] * v0[i]).collect();
        want.sort_by(|x, y| y.total_cmp(x));
        for i in 0..3 {
            assert!((r[1 + i] - want[i]).abs() < 1e-12, "t={}: {:?} vs {want:?}", r[0], &r[1..4]);
        }
    }
}

#[test]
fn json_output_round_trips_losslessly() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.json");
    let out = orbitflow(&["simulate", "--n", "3", "--seed", "2", "--format", "json", "--out", p(&path)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let file = TrajectoryFile::from_json(&text).unwrap();
    assert_eq!(file.to_json(), text);
    assert_eq!(file.metadata.n, 3);
    assert_eq!(file.metadata.seed, Some(2));
    assert_eq!(file.samples[0].spin.len(), 3);
    assert_eq!(file.samples.len(), 201);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "model = \"symmetric\"\nn = 3\nseed = 4\nsamples = 10\nt-end = 0.5\n").unwrap();
    let out = orbitflow(&["--config", p(&cfg), "simulate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("# model: symmetric") && text.contains("# t_end: 0.5"));
    assert_eq!(csv_rows(&text).1.len(), 11);
    let out = orbitflow(&["--config", p(&cfg), "simulate", "--samples", "20"]);
    assert_eq!(csv_rows(&stdout(&out)).1.len(), 21);
}

#[test]
fn malformed_input_exits_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "model = \"symmetric\"\nt-end = \"soon\"\n").unwrap();
    let out = orbitflow(&["--config", p(&cfg), "simulate", "--n", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed config"));

    std::fs::write(&cfg, "colour = \"blue\"\n").unwrap();
    assert_eq!(orbitflow(&["--config", p(&cfg), "simulate", "--n", "2"]).status.code(), Some(2));

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "2 symmetric\n1 x\n0 1\n").unwrap();
    let out = orbitflow(&["simulate", "--a", p(&bad), "--alpha", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    assert_eq!(orbitflow(&["simulate"]).status.code(), Some(2), "--n missing");
    assert_eq!(orbitflow(&["simulate", "--n", "2", "--tol", "-1"]).status.code(), Some(2));
    assert_eq!(orbitflow(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(orbitflow(&["distance", "/nonexistent/a", "/nonexistent/b"]).status.code(), Some(2));
}

#[test]
fn integration_failure_writes_partial_output_and_exits_one() {
    // A gap floor wider than the initial gaps can never be satisfied.
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("partial.json");
    let out = orbitflow(&["simulate", "--n", "3", "--seed", "1", "--gap-floor", "100", "--format", "json", "--out", p(&path)]);
    assert_eq!(out.status.code(), Some(1));
    let file = TrajectoryFile::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(file.metadata.status.starts_with("failed"));
    assert!(!file.samples.is_empty());
}

#[test]
fn oracle_comparison_passes_and_negative_control_fails() {
    let out = orbitflow(&["compare-oracle", "--model", "hermitian", "--n", "4", "--seed", "3", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["max_deviation"].as_f64().unwrap() < 1e-6);
    assert_eq!(report["channel_deviation"].as_array().unwrap().len(), 4);

    let out = orbitflow(&["compare-oracle", "--model", "symmetric", "--n", "3", "--seed", "3", "--debug-flip-sign"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn commuting_pair_matches_oracle_exactly() {
    let dir = TempDir::new().unwrap();
    let model = MatrixModel::symmetric(3);
    let a = write_matrix(&dir, "a.txt", model, &linalg::diag_real(&[2.0, 1.0, -1.0]));
    let alpha = write_matrix(&dir, "alpha.txt", model, &linalg::diag_real(&[-3.0, 0.5, 1.0]));
    let out = orbitflow(&["compare-oracle", "--a", p(&a), "--alpha", p(&alpha), "--format", "json", "--t-end", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["max_deviation"].as_f64().unwrap() < 1e-12, "{report}");
}

fn billiard_json(args: &[&str]) -> serde_json::Value {
    let mut all = vec!["billiard", "--format", "json"];
    all.extend_from_slice(args);
    let out = orbitflow(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn billiard_examples() {
    // Interior ray that never reaches a wall.
    let path = billiard_json(&["--x0", "3,0", "--v0", "1,0", "--t-end", "1"]);
    assert_eq!(path["vertices"].as_array().unwrap().len(), 2);
    assert!(path["events"].as_array().unwrap().is_empty());

    // n = 2 crossing: the velocity components are exchanged.
    let path = billiard_json(&["--x0", "1,0", "--v0=-1,1", "--t-end", "2"]);
    let events = path["events"].as_array().unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0]["v_in"], serde_json::json!([-1.0, 1.0]));
    assert_eq!(events[0]["v_out"], serde_json::json!([1.0, -1.0]));

    // Aimed at the origin, where all walls of A_2 meet.
    let path = billiard_json(&["--x0", "1,0,-1", "--v0=-1,0,1", "--t-end", "2"]);
    let events = path["events"].as_array().unwrap();
    assert!(!events.is_empty());
    assert!(events.iter().all(|e| e["corner"] == true && e["t"] == 1.0));
    assert_eq!(events[0]["walls"].as_array().unwrap().len(), 3);
    assert_eq!(events.last().unwrap()["v_out"], serde_json::json!([1.0, 0.0, -1.0]));

    let out = orbitflow(&["billiard", "--x0", "0,1", "--v0", "1,0"]);
    assert_eq!(out.status.code(), Some(2), "start outside the chamber");
}

#[test]
fn billiard_csv_lists_vertices_and_events() {
    let out = orbitflow(&["billiard", "--x0", "1,0", "--v0=-1,1", "--t-end", "2"]);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "record,t,root,corner,x_1,x_2,v_in_1,v_in_2,v_out_1,v_out_2");
    assert_eq!(text.lines().filter(|l| l.starts_with("vertex,")).count(), 3);
    assert_eq!(text.lines().filter(|l| l.starts_with("event,")).count(), 1);
}

#[test]
fn distance_examples() {
    let dir = TempDir::new().unwrap();
    let model = MatrixModel::symmetric(2);
    let a = write_matrix(&dir, "a.txt", model, &linalg::diag_real(&[2.0, 0.0]));
    let z = write_matrix(&dir, "z.txt", model, &CMatrix::zeros(2, 2));
    assert_eq!(stdout(&orbitflow(&["distance", p(&a), p(&a)])).trim(), "0");
    assert_eq!(stdout(&orbitflow(&["distance", p(&a), p(&z)])).trim(), "2");

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = MatrixModel::hermitian(4);
    let (ma, mb) = (sampling::random_matrix(model, &mut rng), sampling::random_matrix(model, &mut rng));
    let fa = write_matrix(&dir, "ra.txt", model, &ma);
    let fb = write_matrix(&dir, "rb.txt", model, &mb);
    let printed: f64 = stdout(&orbitflow(&["distance", p(&fa), p(&fb)])).trim().parse().unwrap();
    let want = distance(&chamber_map(&ma, model, 1e-8).unwrap(), &chamber_map(&mb, model, 1e-8).unwrap()).unwrap();
    assert!((printed - want).abs() <= 1e-11 * want, "{printed} vs {want}");

    let out = orbitflow(&["distance", p(&a), p(&fa)]);
    assert_eq!(out.status.code(), Some(2), "mismatched models");
    let herm = write_matrix(&dir, "h.txt", MatrixModel::hermitian(2), &linalg::diag_real(&[1.0, 0.0]));
    assert_eq!(orbitflow(&["distance", "--model", "symmetric", p(&herm), p(&herm)]).status.code(), Some(2));
}

#[test]
fn polar_file_simulation_conserves_energy() {
    let dir = TempDir::new().unwrap();
    let roots = dir.path().join("a2.toml");
    builtin_root_system(MatrixModel::hermitian(3)).save(&roots).unwrap();
    let out = orbitflow(&["simulate", "--root-file", p(&roots), "--seed", "3", "--samples", "20", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let file = PolarTrajectoryFile::from_json(&text).unwrap();
    assert_eq!(file.to_json(), text);
    assert_eq!(file.samples.len(), 21);
    let e0 = file.samples[0].energy;
    assert!(file.samples.iter().all(|s| (s.energy - e0).abs() < 1e-8 * e0.max(1.0)));

    let out = orbitflow(&["simulate", "--model", "polar-file", "--n", "3"]);
    assert_eq!(out.status.code(), Some(2), "root file missing");
}
