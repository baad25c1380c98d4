use num_rational::BigRational;
use percolab_core::graph::{Family, GraphBall, GraphSpec};
use percolab_core::invariance::{
    indistinguishability_test, mtp_check, mtp_violation_fixed_end, mtp_violation_fixed_end_with_radius,
    nearest_target_sampled, phases_experiment, transport_sums, uniqueness_monotonicity_check, ClusterStatistic,
    IndistParams, TransportKernel, Verdict,
};
use percolab_core::percolation::{sample_bernoulli, CouplingSeed, Process};
use percolab_core::Error;

fn int(n: usize) -> BigRational {
    BigRational::from_integer(n.into())
}

#[test]
fn every_torus_kernel_balances_exactly() {
    for side in [3usize, 4, 5, 8] {
        let t = GraphBall::torus(2, side).unwrap();
        let configs: Vec<_> = (0..4)
            .map(|s| sample_bernoulli(&t, 0.6, CouplingSeed::new(side as u64, s)).unwrap())
            .collect();
        let mut kernels = vec![
            TransportKernel::Zero,
            TransportKernel::Offset(vec![1, 0]),
            TransportKernel::Offset(vec![2, -1]),
        ];
        kernels.extend((0..=side as u32).map(TransportKernel::DistanceShell));
        for cfg in &configs {
            for min_degree in [1, 3] {
                kernels.push(TransportKernel::NearestTarget { config: cfg, min_degree });
            }
        }
        for o in [0, t.n_vertices() / 2, t.n_vertices() - 1] {
            let sphere = t.bfs_distances_from(o);
            for k in &kernels {
                let (sent, received) = mtp_check(&t, k, o).unwrap();
                assert_eq!(sent, received, "{} on torus(2,{side}) at {o}", k.name());
                match k {
                    TransportKernel::Zero => assert_eq!(sent, int(0)),
                    TransportKernel::Offset(_) => assert_eq!(sent, int(1)),
                    TransportKernel::DistanceShell(r) => {
                        assert_eq!(sent, int(sphere.iter().filter(|&&d| d == *r).count()))
                    }
                    _ => assert!(sent <= int(1)),
                }
            }
        }
    }
}

#[test]
fn fixed_end_parent_kernel_is_unbalanced_at_every_radius() {
    assert_eq!(mtp_violation_fixed_end(), (1, 2));
    for r in 1..=7 {
        assert_eq!(mtp_violation_fixed_end_with_radius(r).unwrap(), (1, 2));
    }
    let b = GraphBall::build(&GraphSpec::new(Family::FixedEndTree { b: 3 }, 4)).unwrap();
    let pair = |k: &TransportKernel| mtp_check(&b, k, 0).unwrap();
    assert_eq!(pair(&TransportKernel::ToChild), (int(2), int(1)));
    assert_eq!(pair(&TransportKernel::ToParentOrChild), (int(3), int(3)));
}

#[test]
fn kernels_outside_the_menu_are_refused() {
    let t = GraphBall::torus(2, 4).unwrap();
    let custom = TransportKernel::Custom {
        name: "one_way".into(),
        weights: vec![(0, 1, 1)],
    };
    assert!(matches!(mtp_check(&t, &custom, 0), Err(Error::UncertifiedKernel(_))));
    assert_eq!(transport_sums(&t, &custom, 0).unwrap(), (int(1), int(0)));
    let tree = GraphBall::build(&GraphSpec::new(Family::RegularTree { b: 3 }, 3)).unwrap();
    assert!(matches!(mtp_check(&tree, &TransportKernel::ToParent, 0), Err(Error::WrongFamily { .. })));
    assert!(matches!(mtp_check(&tree, &TransportKernel::Offset(vec![1, 0]), 0), Err(Error::WrongFamily { .. })));
}

#[test]
fn unaveraged_nearest_target_balances_in_expectation() {
    let t = GraphBall::torus(2, 6).unwrap();
    for min_degree in [2, 3] {
        let s = nearest_target_sampled(&t, 0.6, min_degree, 100, 13).unwrap();
        assert!(s.difference.within_sigmas(0.0, 3.0), "{:?}", s.difference);
    }
}

#[test]
fn uniqueness_levels() {
    let t = GraphBall::build(&GraphSpec::new(Family::RegularTree { b: 3 }, 8)).unwrap();
    let same = uniqueness_monotonicity_check(&t, 0.7, 0.7, 200, 2).unwrap();
    assert_eq!(same.fraction.unwrap().estimate, 1.0);
    let top = uniqueness_monotonicity_check(&t, 0.7, 1.0, 200, 2).unwrap();
    assert_eq!(top.fraction.unwrap().estimate, 1.0);
    assert!(uniqueness_monotonicity_check(&t, 0.9, 0.7, 200, 2).is_err());

    let levels = [0.62, 0.7, 0.8, 0.95];
    let reports: Vec<_> = levels
        .iter()
        .map(|&p2| uniqueness_monotonicity_check(&t, 0.6, p2, 300, 5).unwrap())
        .collect();
    for w in reports.windows(2) {
        for (a, b) in w[0].origin_contains.iter().zip(&w[1].origin_contains) {
            assert_eq!(a.is_some(), b.is_some());
            if *a == Some(true) {
                assert_eq!(*b, Some(true));
            }
        }
    }
}

#[test]
fn phases_extremes() {
    let table = phases_experiment(&[0.0, 0.2, 1.0], 4, 60, 3).unwrap();
    let [zero, mid, one] = &table.rows[..] else { panic!() };
    assert_eq!(zero.histogram, vec![60]);
    assert!(zero.fiber_histogram.as_ref().unwrap().iter().sum::<u64>() == 60);
    assert_eq!(mid.mode, 1);
    assert_eq!(one.histogram, vec![0, 60]);
    assert!(table.to_csv().starts_with("eps,kind,count,samples\n"));
    assert!(phases_experiment(&[], 4, 10, 0).is_err());
}

#[test]
fn harness_is_deterministic_and_reports_inconclusive() {
    let t = GraphBall::build(&GraphSpec::new(Family::RegularTree { b: 3 }, 6)).unwrap();
    let mut params = IndistParams::for_radius(6);
    params.pc_thinnings = 100;
    let run = |params: &IndistParams| {
        indistinguishability_test(&t, &Process::Bernoulli { p: 0.7 }, ClusterStatistic::MeanDegree, 40, 9, params)
            .unwrap()
    };
    let a = serde_json::to_string(&run(&params)).unwrap();
    let b = serde_json::to_string(&run(&params)).unwrap();
    assert_eq!(a, b);
    params.min_multi_samples = 1000;
    assert_eq!(run(&params).verdict, Verdict::Inconclusive);
    let err = indistinguishability_test(
        &t,
        &Process::Bernoulli { p: 0.7 },
        ClusterStatistic::EndVertexDegree,
        40,
        9,
        &params,
    );
    assert!(matches!(err, Err(Error::WrongFamily { .. })));
}
