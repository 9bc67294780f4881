use std::fs;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphon-mf"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn spectral_of_constant_kernel() {
    let o = run(&["spectral", "--kernel", "constant:0.5", "--M", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "1,0.5");
    assert!(lines[1..].iter().enumerate().all(|(i, l)| *l == format!("{},0", i + 2)));
}

#[test]
fn threshold_sweep_flips_once() {
    let o = run(&["threshold", "--kernel", "constant:1", "--betas", "0.6,1.5", "--T", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("[PASS] single_flip_at_threshold"));
    assert!(text.contains(r#""outcomes":["die_out","endemic"]"#));
}

#[test]
fn missing_flags_are_usage_errors() {
    let o = run(&["spectral", "--M", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(run(&["threshold", "--kernel", "constant:1"]).status.code(), Some(2));
    assert_eq!(run(&["spectral", "--kernel", "nonsense", "--M", "4"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn version_reports_golden_hash() {
    let o = run(&["--version"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("graphon-mf "));
    assert!(text.contains(&graphon_mf::experiments::golden_sha256()));
}

#[test]
fn config_file_run_writes_only_into_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"kind":"threshold_sweep","kernel":{"type":"constant","p":1},"betas":[0.5,2.0],"t_end":80,"m":1}"#,
    )
    .unwrap();
    let o = run(&["threshold", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.json").is_file());
    let mut names: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, vec!["cfg.json", "out"]);
}

#[test]
fn config_kind_must_match_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"kind":"threshold_sweep","kernel":{"type":"constant","p":1},"betas":[1.0],"t_end":1}"#)
        .unwrap();
    assert_eq!(run(&["opnorm", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&cfg, r#"{"kind":"threshold_sweep","bogus":1}"#).unwrap();
    assert_eq!(run(&["threshold", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn failed_assertion_exits_one() {
    // A bound no finite sample can meet.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"kind":"empirical_opnorm","kernel":{"type":"constant","p":0.5},"n_list":[50,100],"replicas":2,"t_end":1,"final_median_below":1e-9}"#,
    )
    .unwrap();
    let o = run(&["opnorm", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("[FAIL] final_median_below_bound"));
}

#[test]
fn sample_and_meanfield_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&["sample", "--kernel", "product_xy", "--N", "50", "--seed", "3", "--out", d]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("graph.txt")).unwrap();
    let g = graphon_mf::SampledGraph::read_edge_list(text.as_bytes()).unwrap();
    assert_eq!(g.n(), 50);

    let o = run(&["meanfield", "--kernel", "constant:1", "--M", "2", "--T", "0.2", "--out", d]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("meanfield.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,cell,state,value"));
    // Three recorded times, two cells, two states.
    assert_eq!(lines.count(), 12);
}

#[test]
fn simulate_writes_trajectory_and_densities() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&[
        "simulate", "--kernel", "constant:0.5", "--N", "200", "--T", "1", "--M", "4",
        "--record-dt", "0.5", "--seed", "9", "--out", d,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dens = fs::read_to_string(dir.path().join("densities.csv")).unwrap();
    assert_eq!(dens.lines().next(), Some("t,S,I"));
    assert_eq!(dens.lines().count(), 4);
    assert!(dir.path().join("trajectory.csv").is_file());
}
