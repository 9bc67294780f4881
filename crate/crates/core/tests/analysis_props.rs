use graphon_mf::analysis::{
    compare_trajectories, interval_cut_surrogate, interval_norm, l1_distance, l1_norm,
};
use graphon_mf::meanfield::MeanFieldSolution;
use graphon_mf::spectral::op2_norm;
use graphon_mf::{GraphonKernel, StepFunction};
use proptest::prelude::*;

fn step_fn(max_m: usize, comps: usize) -> impl Strategy<Value = StepFunction> {
    (1..=max_m).prop_flat_map(move |m| {
        prop::collection::vec(-2.0f64..2.0, m * comps).prop_map(move |v| {
            let labels = (0..comps).map(|c| format!("s{c}")).collect();
            StepFunction::new(m, labels, v).unwrap()
        })
    })
}

fn brute_interval_norm(f: &StepFunction) -> f64 {
    let m = f.grid_size();
    (0..f.n_components())
        .map(|c| {
            let mut best: f64 = 0.0;
            for a in 0..m {
                let mut s = 0.0;
                for k in a..m {
                    s += f.value(k, c);
                    best = best.max(s.abs());
                }
            }
            best / m as f64
        })
        .sum()
}

fn path(frames: Vec<StepFunction>) -> MeanFieldSolution {
    MeanFieldSolution {
        grid_size: frames[0].grid_size(),
        labels: frames[0].labels().to_vec(),
        times: (0..frames.len()).map(|i| i as f64 * 0.5).collect(),
        values: frames,
        max_sum_drift: 0.0,
        min_component: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn interval_norm_bounded_by_l1(f in step_fn(40, 2)) {
        prop_assert!(interval_norm(&f) <= l1_norm(&f) + 1e-12);
    }

    #[test]
    fn interval_norm_equals_l1_for_single_signed(f in step_fn(40, 1)) {
        let pos = StepFunction::scalar(f.values().iter().map(|v| v.abs()).collect()).unwrap();
        prop_assert!((interval_norm(&pos) - l1_norm(&pos)).abs() < 1e-12);
    }

    #[test]
    fn interval_norm_matches_enumeration(f in step_fn(50, 2)) {
        prop_assert!((interval_norm(&f) - brute_interval_norm(&f)).abs() < 1e-12);
    }

    #[test]
    fn l1_distance_is_a_metric(f in step_fn(12, 1), g in step_fn(12, 1), h in step_fn(12, 1)) {
        let fg = l1_distance(&f, &g).unwrap();
        prop_assert!((fg - l1_distance(&g, &f).unwrap()).abs() < 1e-12);
        prop_assert!(fg <= l1_distance(&f, &h).unwrap() + l1_distance(&h, &g).unwrap() + 1e-12);
        prop_assert_eq!(l1_distance(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn l1_distance_invariant_under_refinement(f in step_fn(10, 2), g in step_fn(10, 2), r in 2usize..4) {
        let d = l1_distance(&f, &g).unwrap();
        let d_ref = l1_distance(&f.refine(r).unwrap(), &g).unwrap();
        prop_assert!((d - d_ref).abs() < 1e-12);
    }

    #[test]
    fn operator_is_linear(
        (f, g) in (1usize..=8).prop_flat_map(|m| (
            prop::collection::vec(-2.0f64..2.0, m),
            prop::collection::vec(-2.0f64..2.0, m),
        )),
        a in -3.0f64..3.0,
    ) {
        let f = StepFunction::scalar(f).unwrap();
        let g = StepFunction::scalar(g).unwrap();
        let w = GraphonKernel::product_xy();
        let m = f.grid_size() * 4;
        let lhs = w.apply(&f.axpby(a, &g, 1.0).unwrap(), m).unwrap();
        let rhs = w.apply(&f, m).unwrap().axpby(a, &w.apply(&g, m).unwrap(), 1.0).unwrap();
        for (x, y) in lhs.values().iter().zip(rhs.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn comparison_is_symmetric(a in prop::collection::vec(step_fn(1, 2), 3),
                               b in prop::collection::vec(step_fn(1, 2), 3)) {
        let refine = |v: Vec<StepFunction>| -> Vec<StepFunction> {
            v.into_iter().map(|f| f.project(6).unwrap()).collect()
        };
        let (pa, pb) = (path(refine(a)), path(refine(b)));
        let ab = compare_trajectories(&pa, &pb).unwrap();
        let ba = compare_trajectories(&pb, &pa).unwrap();
        prop_assert_eq!(&ab.interval_gap, &ba.interval_gap);
        prop_assert_eq!(&ab.l1_gap, &ba.l1_gap);
        for (i, l) in ab.interval_gap.iter().zip(&ab.l1_gap) {
            prop_assert!(*i <= *l + 1e-12);
        }
    }

    #[test]
    fn cut_surrogate_below_operator_norm(vals in prop::collection::vec(-1.0f64..1.0, 10)) {
        // Symmetric 4x4 block kernel from the upper triangle.
        let mut w = vec![0.0; 16];
        let mut it = vals.into_iter();
        for i in 0..4 {
            for j in i..4 {
                let v = it.next().unwrap();
                w[i * 4 + j] = v;
                w[j * 4 + i] = v;
            }
        }
        let k = GraphonKernel::blockwise_signed(4, w).unwrap();
        let cut = interval_cut_surrogate(&k, 8).unwrap();
        prop_assert!(cut <= op2_norm(&k, 8).unwrap() + 1e-9);
    }
}

#[test]
fn comparison_checks_grids_and_labels() {
    let a = path(vec![StepFunction::constant(2, vec!["S".into(), "I".into()], &[1.0, 0.0]).unwrap()]);
    let b = path(vec![StepFunction::constant(3, vec!["S".into(), "I".into()], &[1.0, 0.0]).unwrap()]);
    let c = path(vec![StepFunction::constant(2, vec!["A".into(), "B".into()], &[1.0, 0.0]).unwrap()]);
    assert!(compare_trajectories(&a, &b).is_err());
    assert!(compare_trajectories(&a, &c).is_err());
}

#[test]
fn cut_surrogate_of_product_kernel() {
    let v = interval_cut_surrogate(&GraphonKernel::product_xy(), 40).unwrap();
    assert!((v - 0.25).abs() < 1.0 / 40.0);
}
