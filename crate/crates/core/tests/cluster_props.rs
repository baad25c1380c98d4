use std::collections::VecDeque;

use percolab_core::cluster::{
    cluster_pc_estimate, cluster_stats, decompose, ends_proxy, find_pivotal_edges, heavy_weight,
    spanning_cluster_count,
};
use percolab_core::graph::{Family, GraphBall, GraphSpec};
use percolab_core::percolation::{insert_edge, sample_bernoulli, Configuration, CouplingSeed, EdgeStates};
use percolab_core::stats::EstimateWithCI;
use proptest::prelude::*;

fn ball(f: Family, r: usize) -> GraphBall {
    GraphBall::build(&GraphSpec::new(f, r)).unwrap()
}

/// Open components by breadth-first search, labelled in order of first
/// vertex.
fn bfs_components(b: &GraphBall, cfg: &Configuration, keep: impl Fn(usize) -> bool) -> Vec<Option<usize>> {
    let mut label = vec![None; b.n_vertices()];
    let mut next = 0;
    for s in 0..b.n_vertices() {
        if label[s].is_some() || !keep(s) {
            continue;
        }
        label[s] = Some(next);
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &(w, e) in b.adjacent(u) {
                let w = w as usize;
                if label[w].is_none() && keep(w) && cfg.is_open(e as usize) {
                    label[w] = Some(next);
                    q.push_back(w);
                }
            }
        }
        next += 1;
    }
    label
}

#[test]
fn decomposition_matches_bfs() {
    let b = ball(Family::Lattice { d: 2 }, 5);
    for s in 0..100 {
        let p = 0.2 + 0.6 * (s as f64 / 100.0);
        let cfg = sample_bernoulli(&b, p, CouplingSeed::new(1, s)).unwrap();
        let dec = decompose(&b, &cfg).unwrap();
        let bfs = bfs_components(&b, &cfg, |_| true);
        // BFS from vertices in index order labels components by least vertex,
        // which is the decomposition's id order.
        for v in 0..b.n_vertices() {
            assert_eq!(Some(dec.cluster_of(v) as usize), bfs[v]);
        }
        for (c, info) in dec.clusters.iter().enumerate() {
            let members = dec.cluster_members(c as u32);
            assert_eq!(info.size as usize, members.len());
            assert_eq!(info.least_vertex, members[0]);
            assert_eq!(info.spanning, members.iter().any(|&v| b.is_boundary(v as usize)));
            let stats = cluster_stats(&b, &cfg, &dec, c as u32).unwrap();
            assert!((0.0..=1.0).contains(&stats.density));
            assert!(stats.ends_proxy <= stats.boundary_contacts);
        }
    }
    assert_eq!(decompose(&b, &Configuration::empty(&b)).unwrap().len(), b.n_vertices());
    assert_eq!(decompose(&b, &Configuration::full(&b)).unwrap().len(), 1);
}

#[test]
fn spanning_count_extremes_and_tree_nonuniqueness() {
    let z = ball(Family::Lattice { d: 2 }, 6);
    assert_eq!(spanning_cluster_count(&z, &Configuration::full(&z)).unwrap(), 1);
    assert_eq!(
        spanning_cluster_count(&z, &Configuration::empty(&z)).unwrap(),
        z.boundary_vertices().count()
    );
    let t = ball(Family::RegularTree { b: 3 }, 10);
    let multi = (0..1000)
        .filter(|&s| {
            let cfg = sample_bernoulli(&t, 0.7, CouplingSeed::new(3, s)).unwrap();
            spanning_cluster_count(&t, &cfg).unwrap() >= 2
        })
        .count();
    assert!(multi > 500, "{multi} of 1000");
}

#[test]
fn pivotal_edge_on_a_path() {
    let b = ball(Family::Lattice { d: 1 }, 2);
    assert_eq!(b.n_vertices(), 5);
    let cut = b.edge_between(0, b.neighbors(0).unwrap()[0]).unwrap();
    let cfg = Configuration::from_open_edges(&b, (0..b.n_edges()).filter(|&e| e != cut));
    assert_eq!(spanning_cluster_count(&b, &cfg).unwrap(), 2);
    assert_eq!(find_pivotal_edges(&b, &cfg).unwrap(), vec![b.edge_key(cut)]);
    assert!(find_pivotal_edges(&b, &Configuration::full(&b)).unwrap().is_empty());
}

#[test]
fn ends_proxy_matches_shell_search() {
    for (f, r, p) in [
        (Family::RegularTree { b: 3 }, 7, 0.8),
        (Family::Lattice { d: 2 }, 8, 0.6),
        (Family::FreeProductZ2Z2, 4, 0.7),
    ] {
        let b = ball(f, r);
        for s in 0..20 {
            let cfg = sample_bernoulli(&b, p, CouplingSeed::new(17, s)).unwrap();
            let dec = decompose(&b, &cfg).unwrap();
            let shell = bfs_components(&b, &cfg, |v| b.distance(v) + 1 >= r as u32);
            let mut per_cluster = vec![std::collections::BTreeSet::new(); dec.len()];
            for v in b.boundary_vertices() {
                per_cluster[dec.cluster_of(v) as usize].insert(shell[v].unwrap());
            }
            for c in 0..dec.len() {
                assert_eq!(ends_proxy(&b, &cfg, &dec, c as u32) as usize, per_cluster[c].len());
            }
        }
    }
    // Full tree: one shell component per vertex at distance R - 1.
    let t = ball(Family::RegularTree { b: 3 }, 5);
    let dec = decompose(&t, &Configuration::full(&t)).unwrap();
    assert_eq!(ends_proxy(&t, &Configuration::full(&t), &dec, 0), 3 * 2u32.pow(3));
}

#[test]
fn heavy_weight_of_lower_subtrees() {
    let r = 6;
    let b = ball(Family::FixedEndTree { b: 3 }, r);
    let h = b.heights().unwrap().to_vec();
    // The ray vertex at distance k has height -k.
    let ray: Vec<usize> = (0..=r)
        .map(|k| (0..b.n_vertices()).find(|&v| b.distance(v) as usize == k && h[v] == -(k as i64)).unwrap())
        .collect();
    for (top, depth) in [(0usize, r), (2, r - 2), (3, 1), (1, 0)] {
        let root = ray[top];
        let mut open = Vec::new();
        let mut level = vec![root];
        for _ in 0..depth {
            let mut next = Vec::new();
            for &u in &level {
                for &(w, e) in b.adjacent(u) {
                    if h[w as usize] == h[u] + 1 {
                        open.push(e as usize);
                        next.push(w as usize);
                    }
                }
            }
            level = next;
        }
        let cfg = Configuration::from_open_edges(&b, open);
        let dec = decompose(&b, &cfg).unwrap();
        let w = heavy_weight(&b, &dec, dec.cluster_of(root)).unwrap();
        let want = (-(h[root] as f64)).exp2() * (depth + 1) as f64;
        assert!((w - want).abs() < 1e-9, "top {top} depth {depth}: {w} vs {want}");
    }
    let z = ball(Family::RegularTree { b: 3 }, 2);
    let dz = decompose(&z, &Configuration::empty(&z)).unwrap();
    assert!(heavy_weight(&z, &dz, 0).is_err());
}

#[test]
fn pc_of_full_tree_and_single_path() {
    let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
    let t = ball(Family::RegularTree { b: 3 }, 10);
    let full = Configuration::full(&t);
    let dec = decompose(&t, &full).unwrap();
    let est = cluster_pc_estimate(&t, &full, &dec, 0, &grid, 400, 5).unwrap();
    let q = est.crossing.unwrap().estimate;
    assert!((q - 0.5).abs() < 0.05, "crossing {q}");
    assert!(est.spanning_fraction.windows(2).all(|w| w[0] <= w[1]));

    let r = 6;
    let t6 = ball(Family::RegularTree { b: 3 }, r);
    let far = t6.boundary_vertices().next().unwrap();
    let mut path = Vec::new();
    let mut cur = far;
    while cur != 0 {
        let &(w, e) = t6.adjacent(cur).iter().find(|&&(w, _)| t6.distance(w as usize) < t6.distance(cur)).unwrap();
        path.push(e as usize);
        cur = w as usize;
    }
    let cfg = Configuration::from_open_edges(&t6, path);
    let dec = decompose(&t6, &cfg).unwrap();
    let n = 4000;
    let est = cluster_pc_estimate(&t6, &cfg, &dec, 0, &grid, n, 8).unwrap();
    for (i, &q) in grid.iter().enumerate().step_by(10) {
        let k = (est.spanning_fraction[i] * n as f64).round() as u64;
        assert!(EstimateWithCI::proportion(k, n, 8).within_sigmas(q.powi(r as i32), 4.0), "q = {q}");
    }
    let lone = decompose(&t6, &Configuration::empty(&t6)).unwrap();
    assert!(cluster_pc_estimate(&t6, &Configuration::empty(&t6), &lone, 0, &grid, 100, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn pivotal_edges_merge_two_spanning_clusters(seed in any::<u64>(), p in 0.3f64..0.7) {
        let b = ball(Family::Lattice { d: 2 }, 5);
        let cfg = sample_bernoulli(&b, p, CouplingSeed::new(seed, 0)).unwrap();
        let before = spanning_cluster_count(&b, &cfg).unwrap();
        for e in find_pivotal_edges(&b, &cfg).unwrap() {
            let after = spanning_cluster_count(&b, &insert_edge(&b, &cfg, &e).unwrap()).unwrap();
            prop_assert_eq!(after + 1, before);
        }
    }

    #[test]
    fn pc_spanning_fraction_is_monotone(seed in any::<u64>()) {
        let b = ball(Family::RegularTree { b: 3 }, 6);
        let cfg = sample_bernoulli(&b, 0.8, CouplingSeed::new(seed, 0)).unwrap();
        let dec = decompose(&b, &cfg).unwrap();
        let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
        for c in dec.spanning_ids().take(3) {
            let est = cluster_pc_estimate(&b, &cfg, &dec, c, &grid, 100, seed).unwrap();
            prop_assert!(est.spanning_fraction.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(est.mean_connections.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
