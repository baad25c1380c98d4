use percolab_core::cluster::decompose;
use percolab_core::graph::{Family, GraphBall, GraphSpec, Vertex};
use percolab_core::percolation::{sample_bernoulli, Configuration, CouplingSeed, EdgeStates, Process};
use percolab_core::stats::{mann_whitney, EstimateWithCI};
use percolab_core::walks::{
    delayed_walk, return_statistics, stationarity_check, step_probability, subadditivity_check,
    two_sided_walk, visit_frequencies, WalkStatistic, WalkTrajectory,
};
use proptest::prelude::*;

fn ball(f: Family, r: usize) -> GraphBall {
    GraphBall::build(&GraphSpec::new(f, r)).unwrap()
}

fn coords(b: &GraphBall, v: u32) -> Vec<i64> {
    match b.vertex(v as usize) {
        Vertex::Lattice(xs) => xs.clone(),
        _ => unreachable!(),
    }
}

#[test]
fn full_torus_moves_to_each_neighbor_equally() {
    let side = 5;
    let t = GraphBall::torus(2, side).unwrap();
    let full = Configuration::full(&t);
    let steps = 40_000;
    let traj = delayed_walk(&t, &full, 0, steps, CouplingSeed::new(1, 0)).unwrap();
    assert!(traj.forward.moved.iter().all(|&m| m));
    let mut counts = [0u64; 4];
    for w in traj.forward.positions.windows(2) {
        let (a, b) = (coords(&t, w[0]), coords(&t, w[1]));
        let dx = (b[0] - a[0]).rem_euclid(side as i64);
        let dy = (b[1] - a[1]).rem_euclid(side as i64);
        let dir = match (dx, dy) {
            (1, 0) => 0,
            (4, 0) => 1,
            (0, 1) => 2,
            (0, 4) => 3,
            other => panic!("not a torus step: {other:?}"),
        };
        counts[dir] += 1;
    }
    for k in counts {
        assert!(EstimateWithCI::proportion(k, steps as u64, 1).within_sigmas(0.25, 3.0), "{counts:?}");
    }
}

#[test]
fn single_open_edge_is_a_two_state_chain() {
    let b = ball(Family::Lattice { d: 1 }, 3);
    let right = b.find(&Vertex::Lattice(vec![1])).unwrap();
    let e = b.edge_between(0, right).unwrap();
    let cfg = Configuration::from_open_edges(&b, [e]);
    let steps = 20_000;
    let traj = delayed_walk(&b, &cfg, 0, steps, CouplingSeed::new(2, 0)).unwrap();
    assert!(!traj.truncated());
    let at_start = traj.forward.positions.iter().filter(|&&v| v == 0).count() as u64;
    assert!(traj.forward.positions.iter().all(|&v| v == 0 || v as usize == right));
    // Each step switches state with probability 1/2 whatever the state, so
    // positions after time 0 are independent fair draws.
    let est = EstimateWithCI::proportion(at_start, steps as u64 + 1, 2);
    assert!(est.within_sigmas(0.5, 3.0));
    let ret = return_statistics(&traj);
    assert!((ret.returns as f64 / steps as f64 - 0.5).abs() < 0.03);
}

#[test]
fn empty_configuration_walks_stand_still() {
    let b = ball(Family::RegularTree { b: 3 }, 4);
    let empty = Configuration::empty(&b);
    let traj = two_sided_walk(&b, &empty, 3, 50, CouplingSeed::new(3, 1)).unwrap();
    assert_eq!((traj.first_time(), traj.end_time()), (-50, 51));
    for t in -50..=50 {
        assert_eq!(traj.at(t), Some(3));
    }
    assert_eq!(return_statistics(&traj).returns, 50);
    assert!(delayed_walk(&b, &empty, 0, 0, CouplingSeed::new(0, 0)).is_err());
}

#[test]
fn frequency_tables_on_walks_through_clusters() {
    // A simple random walk on the full torus records which clusters of an
    // independent configuration it visits.
    let t = GraphBall::torus(2, 8).unwrap();
    let full = Configuration::full(&t);
    for s in 0..50 {
        let cfg = sample_bernoulli(&t, 0.45, CouplingSeed::new(5, s)).unwrap();
        let dec = decompose(&t, &cfg).unwrap();
        let traj = two_sided_walk(&t, &full, s as usize % t.n_vertices(), 300, CouplingSeed::new(5, s)).unwrap();
        for window in [(0, 300), (-300, 0), (-120, 77)] {
            let table = visit_frequencies(&traj, &dec, window).unwrap();
            assert!(table.alpha_sum_is_one());
            let alpha_total: f64 = table.alphas().iter().map(|a| a.1).sum();
            assert!((alpha_total - 1.0).abs() < 1e-12);
            let k = table.counts.len() as u64;
            assert!(table.top(1) * k >= table.len());
            assert_eq!(table.top(table.counts.len()), table.len());
            assert!(table.counts.windows(2).all(|w| w[0].1 >= w[1].1));
        }
        assert!(visit_frequencies(&traj, &dec, (4, 4)).is_err());
        assert!(visit_frequencies(&traj, &dec, (0, 302)).is_err());
    }
    let one = decompose(&t, &full).unwrap();
    let traj = delayed_walk(&t, &full, 0, 100, CouplingSeed::new(1, 1)).unwrap();
    assert_eq!(visit_frequencies(&traj, &one, (0, 100)).unwrap().alpha(0), 1.0);
}

#[test]
fn forward_and_backward_frequencies_agree() {
    let t = GraphBall::torus(2, 8).unwrap();
    let full = Configuration::full(&t);
    let (mut fwd, mut bwd) = (Vec::new(), Vec::new());
    for s in 0..600 {
        let cfg = sample_bernoulli(&t, 0.5, CouplingSeed::new(6, s)).unwrap();
        let dec = decompose(&t, &cfg).unwrap();
        let traj = two_sided_walk(&t, &full, 0, 200, CouplingSeed::new(6, s)).unwrap();
        let own = dec.cluster_of(0);
        fwd.push(visit_frequencies(&traj, &dec, (0, 200)).unwrap().alpha(own));
        bwd.push(visit_frequencies(&traj, &dec, (-200, 0)).unwrap().alpha(own));
    }
    let (_, p) = mann_whitney(&fwd, &bwd);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn returns_saturate_on_the_tree_and_grow_on_the_plane() {
    let walks = 2000;
    let mean_returns = |b: &GraphBall, steps: usize| -> f64 {
        let full = Configuration::full(b);
        (0..walks)
            .map(|s| {
                let traj = delayed_walk(b, &full, 0, steps, CouplingSeed::new(7, s)).unwrap();
                return_statistics(&traj).returns as f64
            })
            .sum::<f64>()
            / walks as f64
    };
    let tree = ball(Family::RegularTree { b: 3 }, 16);
    let (t_short, t_long) = (mean_returns(&tree, 30), mean_returns(&tree, 300));
    assert!(t_long - t_short < 0.1, "tree {t_short} -> {t_long}");
    let plane = GraphBall::torus(2, 64).unwrap();
    let (z_short, z_long) = (mean_returns(&plane, 30), mean_returns(&plane, 300));
    assert!(z_long - z_short > 0.4, "plane {z_short} -> {z_long}");
}

#[test]
fn stationarity_on_the_full_torus() {
    let t = GraphBall::torus(2, 6).unwrap();
    let report = stationarity_check(&t, &Process::Bernoulli { p: 1.0 }, &WalkStatistic::Moved, 100, 3, 9, 1).unwrap();
    assert_eq!((report.mean_t1, report.mean_t2), (1.0, 1.0));
    assert!(report.passed && report.certified);
    assert!(!WalkStatistic::DistanceFromOrigin.certified());
    assert!(stationarity_check(&t, &Process::Bernoulli { p: 1.0 }, &WalkStatistic::Moved, 100, 9, 9, 1).is_err());
    let b = ball(Family::RegularTree { b: 3 }, 3);
    assert!(stationarity_check(&b, &Process::Bernoulli { p: 1.0 }, &WalkStatistic::Moved, 100, 10, 50, 1).is_err());
}

fn check_trajectory(b: &GraphBall, cfg: &Configuration, traj: &WalkTrajectory) -> Result<(), TestCaseError> {
    let halves = std::iter::once(&traj.forward).chain(traj.backward.as_ref());
    for half in halves {
        prop_assert_eq!(half.positions[0], traj.start);
        for t in 0..half.moved.len() {
            let (x, y) = (half.positions[t] as usize, half.positions[t + 1] as usize);
            let proposal = half.proposals[t] as usize;
            let e = b.edge_between(x, proposal).expect("proposal is a neighbor");
            prop_assert_eq!(half.moved[t], cfg.is_open(e));
            prop_assert_eq!(y, if half.moved[t] { proposal } else { x });
            prop_assert!(!b.is_boundary(x));
        }
        if let Some(t) = half.truncated_at {
            prop_assert!(b.is_boundary(half.positions[t] as usize));
            prop_assert_eq!(half.positions.len(), t + 1);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_are_valid(seed in any::<u64>(), p in 0.0f64..=1.0, start in 0usize..40, fi in 0usize..3) {
        let b = [
            ball(Family::Lattice { d: 2 }, 6),
            ball(Family::RegularTree { b: 3 }, 5),
            ball(Family::FreeProductZ2Z2, 3),
        ][fi].clone();
        let cfg = sample_bernoulli(&b, p, CouplingSeed::new(seed, 0)).unwrap();
        let traj = two_sided_walk(&b, &cfg, start % b.n_vertices(), 200, CouplingSeed::new(seed, 1)).unwrap();
        check_trajectory(&b, &cfg, &traj)?;
    }

    #[test]
    fn one_step_kernel_is_symmetric(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let b = ball(Family::Lattice { d: 2 }, 4);
        let cfg = sample_bernoulli(&b, p, CouplingSeed::new(seed, 0)).unwrap();
        for x in (0..b.n_vertices()).filter(|&x| !b.is_boundary(x)) {
            let total: f64 = (0..b.n_vertices()).map(|y| step_probability(&b, &cfg, x, y)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for y in b.neighbors(x).unwrap().into_iter().filter(|&y| !b.is_boundary(y)) {
                prop_assert_eq!(step_probability(&b, &cfg, x, y), step_probability(&b, &cfg, y, x));
            }
        }
    }

    #[test]
    fn top_counts_are_subadditive(seed in any::<u64>(), j in 1usize..8, split in 1i64..399) {
        let t = GraphBall::torus(2, 10).unwrap();
        let cfg = sample_bernoulli(&t, 0.5, CouplingSeed::new(seed, 0)).unwrap();
        let dec = decompose(&t, &cfg).unwrap();
        let traj = delayed_walk(&t, &Configuration::full(&t), 0, 400, CouplingSeed::new(seed, 1)).unwrap();
        let (lhs, rhs) = subadditivity_check(&traj, &dec, j, (0, 400), split).unwrap();
        prop_assert!(lhs <= rhs);
        let visited = visit_frequencies(&traj, &dec, (0, 400)).unwrap().counts.len();
        if j >= visited {
            prop_assert_eq!(lhs, rhs);
        }
    }
}
