use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pilotwave::io::load_fld;
use pilotwave::trajectory::TrajectoryRecord;

const BIN: &str = env!("CARGO_BIN_EXE_pilotwave");

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn trajectory(dir: &Path, name: &str) -> TrajectoryRecord {
    let f = std::fs::File::open(dir.join(name)).unwrap();
    TrajectoryRecord::read_csv(std::io::BufReader::new(f)).unwrap()
}

fn manifest_value(dir: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in manifest:\n{text}"))
}

const PLANE: &str = r#"
[physics]
c = 10.0

[grid]
points = 12
extent = 4.0
boundary = "periodic"

[initial]
position = [1.0, 2.0, 3.0]
modes = [{ n = [1, 0, 0], re = 1.0 }]

[run]
t_end = 0.5
dt = 0.01
snapshot_every = 10
"#;

#[test]
fn plane_wave_moves_in_a_straight_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "plane.toml", PLANE);
    let out = tmp.path().join("out");
    let o = run("run-bohmian", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rec = trajectory(&out, "trajectory.csv");
    // constant speed, close to hbar k / m (the grid phase gradient is sin(kh)/h)
    let k = 2.0 * std::f64::consts::PI / 4.0;
    let v = (rec.positions[1][0] - 1.0) / rec.times[1];
    assert!((v - k).abs() < 0.05 * k, "{v} vs {k}");
    for (t, q) in rec.times.iter().zip(&rec.positions) {
        let x = (1.0 + v * t).rem_euclid(4.0);
        assert!((q[0] - x).abs() < 1e-9, "t = {t}: {} vs {x}", q[0]);
        assert_eq!((q[1], q[2]), (2.0, 3.0));
    }
    let snap = load_fld(&out.join("snapshots/000010.fld")).unwrap();
    assert_eq!(snap.dims, [12, 12, 12]);
    assert!((snap.time - 0.1).abs() < 1e-12);
    assert_eq!(manifest_value(&out, "command"), "run-bohmian");
}

#[test]
fn missing_key_exits_2_with_its_name() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &PLANE.replace("t_end = 0.5\n", ""));
    let o = run("run-bohmian", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("t_end"));
}

#[test]
fn malformed_config_reports_a_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &PLANE.replace("dt = 0.01", "dt = = 0.01"));
    let o = run("run-bohmian", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 16"), "{}", String::from_utf8_lossy(&o.stderr));
}

fn strip_wall_time(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with("wall_time")).collect::<Vec<_>>().join("\n")
}

#[test]
fn identical_configs_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "plane.toml", PLANE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run("run-bohmian", &cfg, &a, &["--threads", "1"]).status.success());
    assert!(run("run-bohmian", &cfg, &b, &[]).status.success());
    for f in ["trajectory.csv", "snapshots/000000.fld", "snapshots/000050.fld"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ma = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    let mb = std::fs::read_to_string(b.join("manifest.txt")).unwrap();
    assert_eq!(strip_wall_time(&ma), strip_wall_time(&mb));
    let before = std::fs::read_to_string(&cfg).unwrap();
    assert_eq!(before, PLANE);
}

const PILOT: &str = r#"
[physics]
c = 10.0
b = 1.0

[grid]
points = 16
extent = 6.283185307179586
boundary = "dirichlet"

[initial]
position = [2.2, 3.1, 3.0]
modes = [{ n = [1, 1, 1], re = 1.0 }, { n = [2, 1, 1], im = 1.0 }]

[run]
t_end = 0.05
snapshot_every = 25
probes = [[1.6, 1.6, 1.6]]
"#;

#[test]
fn pilotwave_demo_writes_its_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "pw.toml", PILOT);
    let out = tmp.path().join("out");
    let o = run("run-pilotwave", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest_value(&out, "omega_c"), "100");
    let rec = trajectory(&out, "trajectory.csv");
    assert_eq!(rec.len(), 51);
    assert!(out.join("probes.csv").exists());
    assert!(out.join("snapshots/000000.fld").exists());
    assert!(out.join("snapshots/000050.fld").exists());
}

#[test]
fn cfl_violation_exits_3_before_stepping() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "pw.toml", &PILOT.replace("t_end = 0.05", "t_end = 0.05\ndt = 0.02"));
    let out = tmp.path().join("out");
    let o = run("run-pilotwave", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("trajectory.csv").exists());
    assert!(!out.join("snapshots/000000.fld").exists());
}

#[test]
fn decoupled_real_field_keeps_the_particle_still() {
    let tmp = tempfile::tempdir().unwrap();
    let text = PILOT
        .replace("b = 1.0", "b = 0.0\na = -3.141592653589793")
        .replace(", { n = [2, 1, 1], im = 1.0 }", "");
    let cfg = write(tmp.path(), "pw.toml", &text);
    let out = tmp.path().join("out");
    let o = run("run-pilotwave", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rec = trajectory(&out, "trajectory.csv");
    assert!(rec.positions.iter().all(|q| *q == [2.2, 3.1, 3.0]));
}

const MEASURE: &str = r#"
[physics]
c = 4.0

[grid]
points = [16, 8, 8]
extent = [6.283185307179586, 3.141592653589793, 3.141592653589793]
boundary = "dirichlet"

[initial]
position = [1.5, 1.5, 1.5]
modes = [{ n = [1, 1, 1], re = 1.0 }]
normalize = true

[measure]
cells = [2, 1, 1]
trials = 200

[run]
t_end = 0.0
seed = 3
"#;

#[test]
fn measurement_empties_the_other_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "m.toml", MEASURE);
    let out = tmp.path().join("out");
    let o = run("measure", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest_value(&out, "cell_index"), "0");
    let text = std::fs::read_to_string(out.join("collapse.csv")).unwrap();
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let first: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(last[2] < 1e-3 * first[2], "{} vs {}", last[2], first[2]);
    let outcomes = std::fs::read_to_string(out.join("outcomes.csv")).unwrap();
    assert_eq!(outcomes.lines().count(), 3);
    assert!(out.join("snapshots/000400.fld").exists());

    let again = tmp.path().join("again");
    assert!(run("measure", &cfg, &again, &["--seed", "3"]).status.success());
    assert_eq!(std::fs::read(out.join("outcomes.csv")).unwrap(), std::fs::read(again.join("outcomes.csv")).unwrap());
}

#[test]
fn greens_check_writes_kernel_and_residuals() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "g.toml",
        r#"
[physics]
c = 1.0

[greens]
source = { amplitude = 1.0, t_center = 0.6, t_width = 0.5, radius = 0.5 }
points = [[0.7, 1.5]]
steps = [0.04, 0.02, 0.01]
kernel_radii = [0.0, 5.0]
truncations = [50.0]
"#,
    );
    let out = tmp.path().join("out");
    let o = run("greens-check", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let order: f64 = manifest_value(&out, "min_order").parse().unwrap();
    assert!(order > 1.8, "{order}");
    assert_eq!(std::fs::read_to_string(out.join("kernel.csv")).unwrap().lines().count(), 3);
    assert_eq!(std::fs::read_to_string(out.join("residual.csv")).unwrap().lines().count(), 4);
}

const SWEEP: &str = r#"
[physics]
c = 10.0

[grid]
points = 12
extent = 6.283185307179586
boundary = "dirichlet"

[initial]
position = [2.2, 3.1, 3.0]
modes = [{ n = [1, 1, 1], re = 1.0 }, { n = [2, 1, 1], im = 1.0 }]

[run]
t_end = 0.02
laplacian = "seven_point"
probes = [[1.6, 1.6, 1.6]]

[converge]
lights = [3.0, 4.0, 5.0]
"#;

#[test]
fn converge_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SWEEP);
    let out = tmp.path().join("out");
    let o = run("converge", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("c,U,sup_dev,l2_dev,field_dev\n"));
    assert_eq!(report.lines().count(), 4);
    assert!(out.join("trajectory_c4.csv").exists());
    manifest_value(&out, "order");
}

#[test]
fn failed_member_exits_4_and_keeps_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    // the initial guidance speed exceeds c = 0.3
    let cfg = write(tmp.path(), "s.toml", &SWEEP.replace("[3.0, 4.0, 5.0]", "[0.3, 4.0, 5.0]"));
    let out = tmp.path().join("out");
    let o = run("converge", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
    assert!(manifest_value(&out, "failed").starts_with("c = 0.3"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let (cfg, text) = pilotwave::config::load_config(&p).unwrap();
        cfg.params().unwrap();
        pilotwave::config::config_hash(&text).unwrap();
        if cfg.grid.is_some() {
            let g = cfg.grid().unwrap();
            cfg.initial_field(&g).unwrap();
        }
        n += 1;
    }
    assert!(n >= 5);
}
