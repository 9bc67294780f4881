use graphon_mf::dynamics::ModelSpec;
use graphon_mf::experiments::{
    golden_convergence, golden_sha256, run, ExperimentConfig, ExperimentKind, KappaRule,
};
use graphon_mf::{Error, KernelSpec};

fn config(kind: ExperimentKind, kernel: KernelSpec, t_end: f64) -> ExperimentConfig {
    ExperimentConfig::new(kind, kernel, t_end)
}

#[test]
fn threshold_sweep_on_constant_kernel() {
    let mut c = config(ExperimentKind::ThresholdSweep, KernelSpec::Constant { p: 1.0 }, 100.0);
    c.betas = vec![0.6, 0.8, 1.2, 1.5];
    c.m = 1;
    let r = run(&c).unwrap();
    assert!(r.passed(), "{:?}", r.assertions);
    let prev: Vec<f64> = serde_json::from_value(r.summary["prevalence"].clone()).unwrap();
    assert!(prev[0] < 1e-4 && prev[1] < 1e-4);
    assert!((prev[2] - (1.0 - 1.0 / 1.2)).abs() < 1e-3);
    assert!((prev[3] - 1.0 / 3.0).abs() < 1e-3);
    assert!(r.summary["lambda_1_gap"].as_f64().unwrap() < 1e-12);
}

#[test]
fn threshold_reports_eigenvalue_refinement_gap() {
    let mut c = config(ExperimentKind::ThresholdSweep, KernelSpec::ProductXy, 50.0);
    c.betas = vec![2.0, 4.0];
    c.m = 10;
    c.spectral_m = 50;
    let r = run(&c).unwrap();
    let l = r.summary["lambda_1"].as_f64().unwrap();
    let l2 = r.summary["lambda_1_refined"].as_f64().unwrap();
    // Right-endpoint sums of x^2 overshoot 1/3 by about 1/(2M).
    assert!((l - (1.0 / 3.0 + 1.0 / 100.0)).abs() < 1e-3, "{l}");
    assert!(l2 < l && l2 > 1.0 / 3.0);
    assert!((r.summary["lambda_1_gap"].as_f64().unwrap() - (l - l2)).abs() < 1e-15);
}

#[test]
fn threshold_sweep_entirely_subcritical() {
    let mut c = config(ExperimentKind::ThresholdSweep, KernelSpec::Constant { p: 1.0 }, 100.0);
    c.betas = vec![0.3, 0.5, 0.7];
    c.m = 1;
    let r = run(&c).unwrap();
    assert!(r.passed(), "{:?}", r.assertions);
    assert!(r.assertion("single_flip_at_threshold").unwrap().passed);
    assert!(r.notes.iter().any(|n| n.contains("connected")));
}

#[test]
fn equilibrium_crosscheck_constant_and_subcritical() {
    let mut c = config(
        ExperimentKind::EquilibriumCrosscheck,
        KernelSpec::Constant { p: 1.0 },
        60.0,
    );
    c.beta = Some(2.0);
    c.m = 4;
    c.quad_m = 100;
    let r = run(&c).unwrap();
    assert!(r.passed());
    assert!(r.summary["sup_cell_gap"].as_f64().unwrap() < 1e-6);

    c.kernel = KernelSpec::SeparablePoly {
        coeffs: vec![0.0, 1.0],
    };
    c.beta = Some(2.0);
    c.t_end = 100.0;
    let r = run(&c).unwrap();
    assert_eq!(r.summary["outcome"], "die_out");
    assert_eq!(r.summary["sup_cell_gap"].as_f64().unwrap(), 0.0);
    assert!(r.passed());

    c.kernel = KernelSpec::Blockwise {
        m: None,
        values: vec![0.9, 0.1, 0.1, 0.9],
    };
    assert!(matches!(run(&c), Err(Error::Config(_))));
}

#[test]
fn opnorm_of_zero_kernel_is_zero() {
    let mut c = config(ExperimentKind::EmpiricalOpnorm, KernelSpec::Constant { p: 0.0 }, 1.0);
    c.n_list = vec![50, 100];
    c.replicas = 2;
    let r = run(&c).unwrap();
    let med: Vec<f64> = serde_json::from_value(r.summary["medians"].clone()).unwrap();
    assert_eq!(med, vec![0.0, 0.0]);
    assert!(r.passed());
}

#[test]
fn sparse_kappa_rejected_for_opnorm() {
    let mut c = config(ExperimentKind::EmpiricalOpnorm, KernelSpec::Constant { p: 0.5 }, 1.0);
    c.n_list = vec![100];
    c.kappa = KappaRule::Sparse { lambda: 1.0 };
    assert!(matches!(run(&c), Err(Error::Config(_))));
}

#[test]
fn sparse_counterexample_with_zero_beta_skips_divergence() {
    let mut c = config(
        ExperimentKind::SparseCounterexample,
        KernelSpec::Constant { p: 1.0 },
        3.0,
    );
    c.beta = Some(0.0);
    c.kappa = KappaRule::Sparse { lambda: 1.0 };
    c.n_list = vec![20_000];
    c.replicas = 3;
    c.dt = 0.01;
    let r = run(&c).unwrap();
    assert!(r.assertion("meanfield_departs_from_decay").is_none());
    let gap = r.summary["sup_decay_vs_meanfield"].as_f64().unwrap();
    assert!(gap < 1e-8, "{gap}");
}

#[test]
fn zero_rate_convergence_reflects_initial_sampling_only() {
    let mut c = config(ExperimentKind::Convergence, KernelSpec::Constant { p: 0.5 }, 1.0);
    c.model = serde_json::from_str(r#"{"states":["S","I"]}"#).unwrap();
    c.n_list = vec![200, 3200];
    c.m = 10;
    c.record_dt = 0.25;
    c.dt = 0.05;
    let r = run(&c).unwrap();
    assert!(r.passed(), "{:?}", r.assertions);
    // Without events every recorded frame equals the initial one, so the
    // sup gap is the gap at time zero.
    let table = &r.tables[0];
    assert_eq!(table.rows.len(), 20);
}

#[test]
fn single_size_has_no_monotonicity_assertion() {
    let mut c = config(ExperimentKind::Convergence, KernelSpec::Constant { p: 0.5 }, 0.5);
    c.model = ModelSpec::sis(2.0);
    c.n_list = vec![200];
    c.replicas = 2;
    c.m = 10;
    let r = run(&c).unwrap();
    assert!(r.assertion("median_gap_strictly_decreasing").is_none());
    assert!(r.passed());
}

#[test]
fn reports_reproduce_and_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(ExperimentKind::Convergence, KernelSpec::ProductXy, 0.5);
    c.n_list = vec![100, 400];
    c.replicas = 3;
    c.m = 5;
    c.seed = 17;
    c.output_dir = Some(dir.path().to_path_buf());
    let a = run(&c).unwrap();
    let b = run(&c).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.seeds, b.seeds);

    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["version"], graphon_mf::VERSION);
    assert_eq!(v["rng"], "chacha8");
    let embedded: ExperimentConfig = serde_json::from_value(v["config"].clone()).unwrap();
    assert_eq!(run(&embedded).unwrap().summary, a.summary);
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(csv.starts_with("N,kappa,replica,seed,sup_interval_gap,sup_l1_gap\n"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn golden_file_parses_and_has_a_stable_hash() {
    let g = golden_convergence().unwrap();
    assert_eq!(g.n, 8000);
    assert_eq!(g.config.kind, ExperimentKind::Convergence);
    assert!(g.median_sup_gap > 0.0);
    assert_eq!(golden_sha256().len(), 64);
}
