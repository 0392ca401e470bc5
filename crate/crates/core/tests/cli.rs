use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csr_eprocess::format::fmt_f64;
use csr_eprocess::geometry::Window;
use csr_eprocess::io::{read_pattern, read_trajectory_csv, PatternMeta};
use csr_eprocess::simulate::sim_hpp;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csr-eprocess"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn unit_window(dir: &Path) -> PathBuf {
    write(
        dir,
        "unit.json",
        r#"{"type":"rectangle","xmin":0,"xmax":1,"ymin":0,"ymax":1}"#,
    )
}

const SMALL: [&str; 4] = ["--particles", "300", "--pretrain-lambda", "3000"];

#[test]
fn simulate_hpp_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = run(&[
            "simulate", "--scenario", "hpp", "--lambda", "10", "--window", "0,10,0,10", "--seed", "5", "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let points = read_pattern(&a, false).unwrap();
    let expected = sim_hpp(&Window::rectangle(0.0, 10.0, 0.0, 10.0).unwrap(), 10.0, 5).unwrap();
    assert_eq!(points, expected.points);
    assert!((850..1150).contains(&points.len()));

    let meta: PatternMeta = serde_json::from_slice(&fs::read(dir.path().join("a.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta.format_version, 1);
    assert_eq!(meta.count, points.len());
    assert_eq!(meta.provenance.seed, Some(5));
    assert_eq!(meta.provenance.generator, "hpp");
}

#[test]
fn simulate_other_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("te.csv");
    let o = run(&["simulate", "--scenario", "trunc-exp", "--lambda0", "1000", "--gamma", "2,4", "--out", s(&out)]);
    assert!(o.status.success());
    let pts = read_pattern(&out, false).unwrap();
    assert!(pts.iter().all(|p| p.in_unit_square()));

    let cp = dir.path().join("cp.csv");
    let wout = dir.path().join("cp-window.json");
    let o = run(&["simulate", "--scenario", "changepoint", "--out", s(&cp), "--window-out", s(&wout)]);
    assert!(o.status.success());
    assert_eq!(read_pattern(&cp, false).unwrap().len(), 1100);
    assert!(wout.exists());

    let o = run(&["simulate", "--scenario", "trunc-exp", "--lambda0", "1000", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--gamma"));
    let o = run(&["simulate", "--scenario", "hpp", "--lambda", "-1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["simulate", "--scenario", "bogus", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn test_on_uniform_pattern_continues() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("u.csv");
    assert!(run(&["simulate", "--scenario", "uniform", "--count", "500", "--seed", "3", "--out", s(&pts)])
        .status
        .success());
    let window = unit_window(dir.path());
    let traj = dir.path().join("t.csv");
    let mut args = vec!["test", "--points", s(&pts), "--window", s(&window), "--seed", "1", "--out", s(&traj)];
    args.extend(SMALL);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("verdict: continue"), "{text}");
    assert!(text.contains(&format!("threshold: {}", fmt_f64(20f64.ln()))));
    let recs = read_trajectory_csv(fs::File::open(&traj).unwrap()).unwrap();
    assert_eq!(recs.iter().map(|r| r.n).collect::<Vec<_>>(), vec![100, 200, 300, 400, 500]);
}

#[test]
fn test_on_matern_pattern_rejects_early() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("m.csv");
    assert!(run(&["simulate", "--scenario", "matern", "--seed", "11", "--out", s(&pts)]).status.success());
    let window = unit_window(dir.path());
    let o = run(&["test", "--points", s(&pts), "--window", s(&window), "--particles", "2000", "--seed", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("verdict: reject_null"), "{text}");
    let at: u64 = text
        .lines()
        .find_map(|l| l.strip_prefix("first_crossing: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(at <= 100);
}

#[test]
fn ndjson_output_and_time_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let window = unit_window(dir.path());
    let mut text = String::from("x,y,t\n");
    for k in 0..120 {
        let v = (k as f64 * 0.618_033_988_75).fract();
        text.push_str(&format!("{v},{},{}\n", 1.0 - v, 120 - k));
    }
    let pts = write(dir.path(), "t.csv", &text);
    let out = dir.path().join("traj.ndjson");
    let mut args = vec![
        "test", "--points", s(&pts), "--window", s(&window), "--order-by-t", "--stride", "10", "--out", s(&out),
    ];
    args.extend(SMALL);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (meta, recs) = csr_eprocess::io::read_trajectory_ndjson(fs::read(&out).unwrap().as_slice()).unwrap();
    assert_eq!(meta.stride, 10);
    assert_eq!(meta.particles, 300);
    assert_eq!(recs.len(), 12);

    let plain = write(dir.path(), "plain.csv", "x,y\n0.5,0.5\n");
    let o = run(&["test", "--points", s(&plain), "--window", s(&window), "--order-by-t"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let window = write(
        dir.path(),
        "tri.json",
        r#"{"type":"polygon","vertices":[[0,0],[4,0],[0,3]]}"#,
    );
    let full = dir.path().join("full.csv");
    assert!(run(&[
        "simulate", "--scenario", "uniform", "--count", "400", "--window", s(&window), "--seed", "9", "--out",
        s(&full)
    ])
    .status
    .success());
    let text = fs::read_to_string(&full).unwrap();
    let head: String = text.lines().take(1 + 150).map(|l| format!("{l}\n")).collect();
    let part = write(dir.path(), "part.csv", &head);

    let common = |points: &Path, out: &Path| -> Vec<String> {
        let mut v: Vec<String> = [
            "test", "--points", s(points), "--window", s(&window), "--stride", "1", "--seed", "4", "--out",
            s(out),
        ]
        .iter()
        .map(|x| x.to_string())
        .collect();
        v.extend(SMALL.iter().map(|x| x.to_string()));
        v
    };

    let whole_out = dir.path().join("whole.csv");
    assert!(bin().args(common(&full, &whole_out)).output().unwrap().status.success());

    let first_out = dir.path().join("first.csv");
    let snap = dir.path().join("state.snap");
    let mut a = common(&part, &first_out);
    a.extend(["--snapshot-out".to_string(), s(&snap).to_string()]);
    assert!(bin().args(a).output().unwrap().status.success());

    let second_out = dir.path().join("second.csv");
    let mut b = common(&full, &second_out);
    b.extend(["--resume".to_string(), s(&snap).to_string()]);
    let o = bin().args(b).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let whole = read_trajectory_csv(fs::File::open(&whole_out).unwrap()).unwrap();
    let mut joined = read_trajectory_csv(fs::File::open(&first_out).unwrap()).unwrap();
    joined.extend(read_trajectory_csv(fs::File::open(&second_out).unwrap()).unwrap());
    assert_eq!(whole.len(), 400);
    assert_eq!(joined.len(), whole.len());
    for (x, y) in joined.iter().zip(&whole) {
        assert_eq!(x.n, y.n);
        assert_eq!(x.log_e.to_bits(), y.log_e.to_bits());
    }

    // snapshot from a different window is refused
    let unit = unit_window(dir.path());
    let o = run(&["test", "--points", s(&full), "--window", s(&unit), "--resume", s(&snap)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let window = unit_window(dir.path());
    let bow = write(
        dir.path(),
        "bow.json",
        r#"{"type":"polygon","vertices":[[0,0],[1,1],[1,0],[0,1]]}"#,
    );
    let good = write(dir.path(), "good.csv", "x,y\n0.5,0.5\n");
    let o = run(&["test", "--points", s(&good), "--window", s(&bow)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("self-intersecting"));

    let mut text = String::from("x,y\n");
    for _ in 0..16 {
        text.push_str("0.1,0.2\n");
    }
    text.push_str("0.1,oops\n");
    let bad = write(dir.path(), "bad.csv", &text);
    let o = run(&["test", "--points", s(&bad), "--window", s(&window)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 17"));

    let o = run(&["test", "--points", "/nonexistent.csv", "--window", s(&window)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["test", "--points", s(&good), "--window", s(&window), "--gamma", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["test", "--points", s(&good), "--window", s(&window), "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["test", "--points", s(&good), "--window", s(&window), "--bounds", "5,1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outside_points_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let window = write(
        dir.path(),
        "tri.json",
        r#"{"type":"polygon","vertices":[[0,0],[1,0],[0,1]]}"#,
    );
    let pts = write(dir.path(), "p.csv", "x,y\n0.1,0.1\n0.9,0.9\n0.2,0.3\n");
    let mut args = vec!["test", "--points", s(&pts), "--window", s(&window)];
    args.extend(SMALL);
    let o = run(&args);
    assert!(o.status.success());
    assert!(stdout(&o).contains("outside_window: 1"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("outside the window"));
}

fn small_experiment(dir: &Path, kind: &str) -> PathBuf {
    let scenario = match kind {
        "trunc" => "kind = \"trunc_exp\"\nlambda0 = 300\ngamma1 = 2\ngamma2 = 4\n",
        _ => "kind = \"hpp\"\nlambda = 200\nwindow = { type = \"rectangle\", xmin = 0, xmax = 1, ymin = 0, ymax = 1 }\n",
    };
    write(
        dir,
        &format!("{kind}.cfg"),
        &format!("replicates = 4\nparticles = 100\npretrain_lambda = 1000\nstride = 50\nseed = 3\n\n[scenario]\n{scenario}"),
    )
}

#[test]
fn experiment_reports_do_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_experiment(dir.path(), "hpp");
    let one = dir.path().join("one");
    let three = dir.path().join("three");
    for (out, jobs) in [(&one, "1"), (&three, "3")] {
        let o = run(&["experiment", "--config", s(&cfg), "--out", s(out), "--jobs", jobs]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trajectories.csv", "rejection.csv", "summary.json"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(three.join(f)).unwrap(), "{f}");
    }
    assert!(!one.join("growth_rate.csv").exists());
}

#[test]
fn trunc_exp_experiment_writes_growth_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_experiment(dir.path(), "trunc");
    let out = dir.path().join("out");
    let o = run(&["experiment", "--config", s(&cfg), "--out", s(&out), "--jobs", "1"]);
    assert!(o.status.success());
    let series = fs::read_to_string(out.join("growth_rate.csv")).unwrap();
    assert!(series.starts_with("n,log_e\n50,"));
    let report: csr_eprocess::experiments::ExperimentReport =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(report.replicates.len() + report.failures.len(), 4);
}

#[test]
fn experiment_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "replicates = 0\n[scenario]\nkind = \"hpp\"\nlambda = 1\nwindow = { type = \"rectangle\", xmin = 0, xmax = 1, ymin = 0, ymax = 1 }\n");
    let o = run(&["experiment", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let json = write(dir.path(), "x.json", r#"{"scenario":{"kind":"nope"}}"#);
    let o = run(&["experiment", "--config", s(&json), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn external_data_experiment_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let mut text = String::from("x,y\n");
    for k in 0..60 {
        text.push_str(&format!("{},{}\n", 2.0 + (k as f64 * 0.37).fract(), 5.0 + (k as f64 * 0.71).fract()));
    }
    write(&data, "cases.csv", &text);
    write(&data, "window.json", r#"{"type":"rectangle","xmin":2,"xmax":3,"ymin":5,"ymax":6}"#);
    let cfg = write(
        &data,
        "study.cfg",
        "study = \"permutation\"\nreplicates = 3\nparticles = 50\npretrain_lambda = 500\nstride = 2\n\n[scenario]\nkind = \"external\"\npoints = \"cases.csv\"\nwindow = \"window.json\"\n",
    );
    let out = dir.path().join("out");
    let o = run(&["experiment", "--config", s(&cfg), "--out", s(&out), "--jobs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rej = fs::read_to_string(out.join("rejection.csv")).unwrap();
    assert_eq!(rej.lines().count(), 1 + 30);
}

#[test]
fn growth_rate_subcommand() {
    let o = run(&["growth-rate", "--gamma", "2,4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rate: f64 = text.lines().next().unwrap().strip_prefix("rate: ").unwrap().parse().unwrap();
    let quad: f64 = text.lines().nth(1).unwrap().strip_prefix("quadrature: ").unwrap().parse().unwrap();
    assert!((rate - 0.631_005_173_329_009_2).abs() < 1e-14);
    assert!((rate - quad).abs() < 1e-8);

    let o = run(&["growth-rate", "--gamma", "1e-9,1e-9"]);
    let rate: f64 = stdout(&o).lines().next().unwrap().strip_prefix("rate: ").unwrap().parse().unwrap();
    assert!(rate.abs() < 1e-12);

    let o = run(&["growth-rate", "--gamma", "2,4", "--n-max", "1000", "--stride", "100"]);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1 + 10);
    assert!(text.starts_with("n,log_e\n100,"));

    assert_eq!(run(&["growth-rate", "--gamma", "0,4"]).status.code(), Some(2));
    assert_eq!(run(&["growth-rate", "--gamma=-1,4"]).status.code(), Some(2));
}
