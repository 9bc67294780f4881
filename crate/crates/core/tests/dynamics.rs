use graphon_mf::dynamics::{
    InitialCondition, ModelBuilder, Process, RateModel, StepOutcome, Trajectory,
};
use graphon_mf::{sample_graph, GraphonKernel, SampledGraph, StepFunction, VertexMode};

fn pure_recovery() -> RateModel {
    RateModel::sis(0.0).unwrap()
}

#[test]
fn independent_recoveries_follow_exponential_decay() {
    // With beta = 0 every infected vertex recovers at rate 1 independently.
    let n = 10_000;
    let g = SampledGraph::from_edges(n, 1.0, 0, VertexMode::Grid, &[]).unwrap();
    let mut p = Process::new(&g, pure_recovery(), &InitialCondition::Explicit(vec![1; n]), 4)
        .unwrap();
    let traj = p.run(3.0, 10, 0.1).unwrap();
    for (t, d) in traj.times.iter().zip(&traj.densities) {
        assert!((d[1] - (-t).exp()).abs() < 0.02, "t = {t}: {}", d[1]);
    }
}

#[test]
fn single_vertex_sojourn_mean() {
    // Two states, a[I -> S] = 1: sojourn times are Exp(1).
    let g = SampledGraph::from_edges(1, 1.0, 0, VertexMode::Grid, &[]).unwrap();
    let mut b = ModelBuilder::new(&["S", "I"]);
    b.base("I", "S", 1.0).unwrap();
    let model = b.build().unwrap();
    let runs = 10_000;
    let mut sum = 0.0;
    for seed in 0..runs {
        let mut p = Process::new(&g, model.clone(), &InitialCondition::Explicit(vec![1]), seed)
            .unwrap();
        match p.step() {
            StepOutcome::Transition(e) => sum += e.time,
            StepOutcome::Absorbed => panic!("infected vertex must recover"),
        }
        assert_eq!(p.step(), StepOutcome::Absorbed);
    }
    let mean = sum / runs as f64;
    let sigma = 1.0 / (runs as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sigma, "mean sojourn {mean}");
}

#[test]
fn k2_first_event_rate_is_two() {
    let g = SampledGraph::from_edges(2, 1.0, 0, VertexMode::Grid, &[(0, 1)]).unwrap();
    let model = RateModel::sis(2.0).unwrap();
    let runs = 10_000;
    let mut sum = 0.0;
    for seed in 0..runs {
        let mut p = Process::new(&g, model.clone(), &InitialCondition::Explicit(vec![1, 1]), seed)
            .unwrap();
        assert_eq!(p.total_rate(), 2.0);
        if let StepOutcome::Transition(e) = p.step() {
            assert_eq!((e.from, e.to), (1, 0));
            sum += e.time;
        }
    }
    let mean = sum / runs as f64;
    // Exp(2) has mean 0.5 and standard deviation 0.5.
    assert!((mean - 0.5).abs() < 3.0 * 0.5 / (runs as f64).sqrt(), "{mean}");
}

#[test]
fn degree_zero_fraction_on_sparse_graph() {
    let n = 100_000;
    let w = GraphonKernel::constant(1.0).unwrap();
    let g = sample_graph(&w, n, 1.0 / n as f64, VertexMode::Grid, 21).unwrap();
    let p = Process::new(
        &g,
        RateModel::sis(2.0).unwrap(),
        &InitialCondition::DegreeZero {
            isolated: 1,
            otherwise: 0,
        },
        0,
    )
    .unwrap();
    let frac = p.densities()[1];
    assert!((frac - (-1.0f64).exp()).abs() < 0.005, "{frac}");
}

#[test]
fn iid_initial_condition_hits_target_fraction() {
    let g = SampledGraph::from_edges(2, 1.0, 0, VertexMode::Grid, &[(0, 1)]).unwrap();
    let half = StepFunction::constant(1, vec!["S".into(), "I".into()], &[0.5, 0.5]).unwrap();
    let mut infected = 0;
    let runs = 4000;
    for seed in 0..runs {
        let p = Process::new(
            &g,
            RateModel::sis(1.0).unwrap(),
            &InitialCondition::Iid(half.clone()),
            seed,
        )
        .unwrap();
        infected += p.states().filter(|&s| s == 1).count();
    }
    let frac = infected as f64 / (2 * runs) as f64;
    assert!((frac - 0.5).abs() < 0.03, "{frac}");
}

fn sir_run(seed: u64) -> (Trajectory, f64) {
    let w = GraphonKernel::product_xy();
    let g = sample_graph(&w, 400, 1.0, VertexMode::Grid, 5).unwrap();
    let u0 = StepFunction::constant(
        1,
        vec!["S".into(), "I".into(), "R".into()],
        &[0.8, 0.2, 0.0],
    )
    .unwrap();
    let mut p = Process::new(&g, RateModel::sir(6.0).unwrap(), &InitialCondition::Iid(u0), seed)
        .unwrap();
    let t = p.run(4.0, 8, 0.2).unwrap();
    (t, p.time())
}

#[test]
fn trajectories_conserve_mass_and_are_reproducible() {
    let (a, t_end) = sir_run(1);
    assert_eq!(t_end, 4.0);
    for (d, f) in a.densities.iter().zip(&a.frames) {
        assert_eq!(d.iter().sum::<f64>(), 1.0);
        assert!(f.in_simplex(1e-12));
    }
    // Recovered mass only grows under SIR.
    assert!(a.densities.windows(2).all(|w| w[1][2] >= w[0][2]));
    assert_eq!(a, sir_run(1).0);
}

#[test]
fn env_vector_norm_is_scaled_degree() {
    let w = GraphonKernel::constant(0.4).unwrap();
    let g = sample_graph(&w, 500, 0.5, VertexMode::Grid, 2).unwrap();
    let u0 = StepFunction::constant(1, vec!["S".into(), "I".into()], &[0.6, 0.4]).unwrap();
    let mut p = Process::new(&g, RateModel::sis(3.0).unwrap(), &InitialCondition::Iid(u0), 3)
        .unwrap();
    for _ in 0..2000 {
        p.step();
    }
    for i in (0..500).step_by(37) {
        let norm: f64 = p.env_vector(i).iter().sum();
        let expected = g.degree(i).unwrap() as f64 / (500.0 * 0.5);
        assert!((norm - expected).abs() < 1e-12);
    }
    assert!(p.consistency().within(1e-9));
}

#[test]
fn explicit_initial_condition_is_validated() {
    let g = SampledGraph::from_edges(3, 1.0, 0, VertexMode::Grid, &[]).unwrap();
    let m = RateModel::sis(1.0).unwrap();
    assert!(Process::new(&g, m.clone(), &InitialCondition::Explicit(vec![0, 1]), 0).is_err());
    assert!(Process::new(&g, m.clone(), &InitialCondition::Explicit(vec![0, 1, 2]), 0).is_err());
    let mut p = Process::new(&g, m, &InitialCondition::Explicit(vec![0, 0, 0]), 0).unwrap();
    assert!(p.run(0.0, 1, 0.1).is_err());
    assert!(p.run(1.0, 0, 0.1).is_err());
}
