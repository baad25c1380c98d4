//! Delayed simple random walk on a configuration, visit frequencies and
//! walk diagnostics.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterDecomposition;
use crate::error::{invalid, Result};
use crate::graph::GraphBall;
use crate::percolation::{CouplingSeed, EdgeStates, LazyBernoulli, Process};
use crate::rng::{Stream, StreamKey};
use crate::stats::mann_whitney;

/// One half of a walk. `positions[t]` is the vertex at time `t`;
/// `proposals[t]` and `moved[t]` describe the step from `t` to `t + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkHalf {
    pub positions: Vec<u32>,
    pub proposals: Vec<u32>,
    pub moved: Vec<bool>,
    /// Time at which the walk stood on a boundary vertex and stopped.
    pub truncated_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkTrajectory {
    pub start: u32,
    /// Times `0, 1, 2, ...`.
    pub forward: WalkHalf,
    /// Times `0, -1, -2, ...` of an independent walk from the same start.
    pub backward: Option<WalkHalf>,
    pub seed: CouplingSeed,
}

fn walk_half(
    ball: &GraphBall,
    cfg: &impl EdgeStates,
    start: usize,
    steps: usize,
    key: StreamKey,
) -> WalkHalf {
    let mut positions = Vec::with_capacity(steps + 1);
    let mut proposals = Vec::with_capacity(steps);
    let mut moved = Vec::with_capacity(steps);
    let mut truncated_at = None;
    let mut cur = start;
    positions.push(cur as u32);
    for t in 0..steps {
        if ball.is_boundary(cur) {
            truncated_at = Some(t);
            break;
        }
        let adj = ball.adjacent(cur);
        let (w, e) = adj[key.below(t as u64, adj.len() as u64) as usize];
        let open = cfg.is_open(e as usize);
        proposals.push(w);
        moved.push(open);
        if open {
            cur = w as usize;
        }
        positions.push(cur as u32);
    }
    WalkHalf {
        positions,
        proposals,
        moved,
        truncated_at,
    }
}

/// Propose a uniform neighbor, move iff the edge to it is open. The walk
/// stops, flagged as truncated, when it stands on a boundary vertex.
pub fn delayed_walk(
    ball: &GraphBall,
    cfg: &impl EdgeStates,
    start: usize,
    steps: usize,
    seed: CouplingSeed,
) -> Result<WalkTrajectory> {
    ball.check_vertex(start)?;
    if steps == 0 {
        return Err(invalid("steps", "must be at least 1"));
    }
    Ok(WalkTrajectory {
        start: start as u32,
        forward: walk_half(ball, cfg, start, steps, seed.stream(Stream::Walk)),
        backward: None,
        seed,
    })
}

pub fn two_sided_walk(
    ball: &GraphBall,
    cfg: &impl EdgeStates,
    start: usize,
    steps: usize,
    seed: CouplingSeed,
) -> Result<WalkTrajectory> {
    let mut traj = delayed_walk(ball, cfg, start, steps, seed)?;
    traj.backward = Some(walk_half(
        ball,
        cfg,
        start,
        steps,
        seed.stream(Stream::BackwardWalk),
    ));
    Ok(traj)
}

impl WalkTrajectory {
    /// Earliest recorded time.
    pub fn first_time(&self) -> i64 {
        self.backward
            .as_ref()
            .map_or(0, |b| -(b.positions.len() as i64 - 1))
    }

    /// One past the last recorded time.
    pub fn end_time(&self) -> i64 {
        self.forward.positions.len() as i64
    }

    pub fn at(&self, t: i64) -> Option<u32> {
        if t >= 0 {
            self.forward.positions.get(t as usize).copied()
        } else {
            self.backward
                .as_ref()
                .and_then(|b| b.positions.get((-t) as usize).copied())
        }
    }

    pub fn truncated(&self) -> bool {
        self.forward.truncated_at.is_some()
            || self.backward.as_ref().is_some_and(|b| b.truncated_at.is_some())
    }

    /// `time,vertex_key,cluster_id,moved_flag,truncated_flag`; the flags
    /// describe the step leaving that time and whether the walk stops there.
    pub fn to_csv(&self, ball: &GraphBall, dec: Option<&ClusterDecomposition>) -> String {
        let mut out = String::from("time,vertex_key,cluster_id,moved_flag,truncated_flag\n");
        let mut row = |t: i64, v: u32, moved: Option<bool>, trunc: bool| {
            let cid = dec.map_or(String::new(), |d| d.cluster_of[v as usize].to_string());
            let moved = moved.map_or(String::new(), |m| (m as u8).to_string());
            writeln!(out, "{t},{},{cid},{moved},{}", ball.vertex_key(v as usize), trunc as u8)
                .expect("write to string");
        };
        if let Some(b) = &self.backward {
            for k in (1..b.positions.len()).rev() {
                row(-(k as i64), b.positions[k], b.moved.get(k).copied(), b.truncated_at == Some(k));
            }
        }
        let f = &self.forward;
        for (t, &v) in f.positions.iter().enumerate() {
            row(t as i64, v, f.moved.get(t).copied(), f.truncated_at == Some(t));
        }
        out
    }
}

/// Probability that one delayed step from interior `x` lands on `y`.
pub fn step_probability(ball: &GraphBall, cfg: &impl EdgeStates, x: usize, y: usize) -> f64 {
    let adj = ball.adjacent(x);
    let deg = adj.len() as f64;
    if x == y {
        return adj.iter().filter(|&&(_, e)| !cfg.is_open(e as usize)).count() as f64 / deg;
    }
    match ball.edge_between(x, y) {
        Some(e) if cfg.is_open(e) => 1.0 / deg,
        _ => 0.0,
    }
}

/// Visit counts per cluster over a half-open time window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub window: (i64, i64),
    /// `(cluster, visits)`, most visited first, ties by cluster id.
    pub counts: Vec<(u32, u64)>,
    /// `top_counts[j - 1]` = visits to the `j` most visited clusters.
    pub top_counts: Vec<u64>,
}

impl FrequencyTable {
    pub fn len(&self) -> u64 {
        (self.window.1 - self.window.0) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn alpha(&self, cluster: u32) -> f64 {
        self.counts
            .iter()
            .find(|&&(c, _)| c == cluster)
            .map_or(0.0, |&(_, k)| k as f64 / self.len() as f64)
    }

    pub fn alphas(&self) -> Vec<(u32, f64)> {
        let n = self.len() as f64;
        self.counts.iter().map(|&(c, k)| (c, k as f64 / n)).collect()
    }

    /// The visit counts add up to the window length.
    pub fn alpha_sum_is_one(&self) -> bool {
        self.counts.iter().map(|&(_, k)| k).sum::<u64>() == self.len()
    }

    /// Visits to the `j` most visited clusters (all visits once `j` exceeds
    /// the number of visited clusters).
    pub fn top(&self, j: usize) -> u64 {
        self.counts.iter().take(j).map(|&(_, k)| k).sum()
    }
}

fn check_window(traj: &WalkTrajectory, window: (i64, i64)) -> Result<()> {
    let (m, n) = window;
    if m >= n {
        return Err(invalid("window", format!("[{m}, {n}) is empty")));
    }
    if m < traj.first_time() || n > traj.end_time() {
        return Err(invalid(
            "window",
            format!(
                "[{m}, {n}) outside recorded times [{}, {})",
                traj.first_time(),
                traj.end_time()
            ),
        ));
    }
    Ok(())
}

pub fn visit_frequencies(
    traj: &WalkTrajectory,
    dec: &ClusterDecomposition,
    window: (i64, i64),
) -> Result<FrequencyTable> {
    check_window(traj, window)?;
    let mut tally: BTreeMap<u32, u64> = BTreeMap::new();
    for t in window.0..window.1 {
        let v = traj.at(t).expect("window checked");
        *tally.entry(dec.cluster_of[v as usize]).or_default() += 1;
    }
    let mut counts: Vec<(u32, u64)> = tally.into_iter().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut top_counts = Vec::with_capacity(counts.len());
    let mut acc = 0;
    for &(_, k) in &counts {
        acc += k;
        top_counts.push(acc);
    }
    Ok(FrequencyTable {
        window,
        counts,
        top_counts,
    })
}

/// `(F over [m, n), F over [m, split) + F over [split, n))` for top-`j`
/// counts; the first never exceeds the second.
pub fn subadditivity_check(
    traj: &WalkTrajectory,
    dec: &ClusterDecomposition,
    j: usize,
    window: (i64, i64),
    split: i64,
) -> Result<(u64, u64)> {
    if !(window.0 < split && split < window.1) {
        return Err(invalid(
            "split",
            format!("{split} not strictly inside [{}, {})", window.0, window.1),
        ));
    }
    let whole = visit_frequencies(traj, dec, window)?.top(j);
    let left = visit_frequencies(traj, dec, (window.0, split))?.top(j);
    let right = visit_frequencies(traj, dec, (split, window.1))?.top(j);
    Ok((whole, left + right))
}

/// Observables compared across times by the stationarity check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "statistic", rename_all = "snake_case")]
pub enum WalkStatistic {
    /// The step leaving time `t` moved.
    Moved,
    /// Open edges at the walker's vertex.
    OpenDegree,
    /// Size of the walker's cluster, explored up to `cap` vertices.
    ClusterSize { cap: usize },
    /// Not invariant under the graph's automorphisms; drifts by design.
    DistanceFromOrigin,
}

impl WalkStatistic {
    /// Invariant under automorphisms and time shifts of the walk's law.
    pub fn certified(&self) -> bool {
        !matches!(self, WalkStatistic::DistanceFromOrigin)
    }

    fn name(&self) -> String {
        match self {
            WalkStatistic::Moved => "moved".into(),
            WalkStatistic::OpenDegree => "open_degree".into(),
            WalkStatistic::ClusterSize { cap } => format!("cluster_size(cap={cap})"),
            WalkStatistic::DistanceFromOrigin => "distance_from_origin".into(),
        }
    }

    fn evaluate(&self, ball: &GraphBall, cfg: &impl EdgeStates, traj: &WalkTrajectory, t: usize) -> f64 {
        let v = traj.forward.positions[t] as usize;
        match self {
            WalkStatistic::Moved => traj.forward.moved[t] as u8 as f64,
            WalkStatistic::OpenDegree => ball
                .adjacent(v)
                .iter()
                .filter(|&&(_, e)| cfg.is_open(e as usize))
                .count() as f64,
            WalkStatistic::ClusterSize { cap } => capped_cluster_size(ball, cfg, v, *cap) as f64,
            WalkStatistic::DistanceFromOrigin => ball.distance(v) as f64,
        }
    }
}

fn capped_cluster_size(ball: &GraphBall, cfg: &impl EdgeStates, v: usize, cap: usize) -> usize {
    let mut seen = std::collections::HashSet::from([v]);
    let mut q = VecDeque::from([v]);
    while let Some(u) = q.pop_front() {
        for &(w, e) in ball.adjacent(u) {
            if seen.len() >= cap {
                return cap;
            }
            if cfg.is_open(e as usize) && seen.insert(w as usize) {
                q.push_back(w as usize);
            }
        }
    }
    seen.len()
}

/// Significance level of the stationarity and indistinguishability tests.
pub const TEST_LEVEL: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub statistic: String,
    pub certified: bool,
    pub t1: usize,
    pub t2: usize,
    pub walks: u64,
    /// Walks that hit the boundary before `t2 + 1` and were excluded.
    pub excluded_truncated: u64,
    pub mean_t1: f64,
    pub mean_t2: f64,
    pub u_statistic: f64,
    pub p_value: f64,
    pub threshold: f64,
    /// No difference detected at the threshold.
    pub passed: bool,
}

/// Walk `i` runs on configuration sample `i` from the origin. Even walks are
/// measured at `t1`, odd walks at `t2`, and the two samples are compared
/// with a two-sided Mann-Whitney test.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_check(
    ball: &GraphBall,
    process: &Process,
    statistic: &WalkStatistic,
    n_walks: u64,
    t1: usize,
    t2: usize,
    seed: u64,
) -> Result<StationarityReport> {
    if t1 >= t2 {
        return Err(invalid("t1", format!("t1 = {t1} must be below t2 = {t2}")));
    }
    if n_walks < 20 {
        return Err(invalid("n_walks", "at least 20 walks required"));
    }
    process.validate()?;
    let steps = t2 + 1;
    let values: Vec<Option<(bool, f64)>> = (0..n_walks)
        .into_par_iter()
        .map(|i| -> Result<Option<(bool, f64)>> {
            let cs = CouplingSeed::new(seed, i);
            let t = if i % 2 == 0 { t1 } else { t2 };
            let run = |cfg: &dyn Fn(usize) -> bool| -> Result<Option<f64>> {
                let states = FnStates(cfg);
                let traj = delayed_walk(ball, &states, 0, steps, cs)?;
                if traj.forward.truncated_at.is_some() {
                    return Ok(None);
                }
                Ok(Some(statistic.evaluate(ball, &states, &traj, t)))
            };
            let v = match *process {
                Process::Bernoulli { p } => {
                    let lazy = LazyBernoulli::new(ball, p, cs);
                    run(&|e| lazy.is_open(e))?
                }
                _ => {
                    let cfg = process.sample(ball, cs)?;
                    run(&|e| cfg.is_open(e))?
                }
            };
            Ok(v.map(|x| (i % 2 == 0, x)))
        })
        .collect::<Result<_>>()?;
    let excluded = values.iter().filter(|v| v.is_none()).count() as u64;
    let a: Vec<f64> = values.iter().flatten().filter(|v| v.0).map(|v| v.1).collect();
    let b: Vec<f64> = values.iter().flatten().filter(|v| !v.0).map(|v| v.1).collect();
    if a.len() < 10 || b.len() < 10 {
        return Err(invalid("steps", "too many walks truncated before t2"));
    }
    let (u, p) = mann_whitney(&a, &b);
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    Ok(StationarityReport {
        statistic: statistic.name(),
        certified: statistic.certified(),
        t1,
        t2,
        walks: n_walks,
        excluded_truncated: excluded,
        mean_t1: mean(&a),
        mean_t2: mean(&b),
        u_statistic: u,
        p_value: p,
        threshold: TEST_LEVEL,
        passed: p >= TEST_LEVEL,
    })
}

struct FnStates<'a>(&'a dyn Fn(usize) -> bool);

impl EdgeStates for FnStates<'_> {
    fn is_open(&self, e: usize) -> bool {
        (self.0)(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnStats {
    /// Forward times `t >= 1` spent at the start vertex.
    pub returns: u64,
    pub last_return: Option<u64>,
}

pub fn return_statistics(traj: &WalkTrajectory) -> ReturnStats {
    let mut returns = 0;
    let mut last = None;
    for (t, &v) in traj.forward.positions.iter().enumerate().skip(1) {
        if v == traj.start {
            returns += 1;
            last = Some(t as u64);
        }
    }
    ReturnStats {
        returns,
        last_return: last,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::decompose;
    use crate::graph::{Family, GraphSpec};
    use crate::percolation::Configuration;

    #[test]
    fn empty_config_is_constant() {
        let b = GraphBall::torus(2, 5).unwrap();
        let cfg = Configuration::empty(&b);
        let tr = two_sided_walk(&b, &cfg, 3, 100, CouplingSeed::new(1, 0)).unwrap();
        assert!(tr.forward.positions.iter().all(|&v| v == 3));
        assert!(tr.backward.as_ref().unwrap().positions.iter().all(|&v| v == 3));
        assert_eq!(return_statistics(&tr).returns, 100);
    }

    #[test]
    fn truncates_at_boundary() {
        let b = GraphBall::build(&GraphSpec::new(Family::RegularTree { b: 3 }, 2)).unwrap();
        let cfg = Configuration::full(&b);
        let tr = delayed_walk(&b, &cfg, 0, 1000, CouplingSeed::new(2, 0)).unwrap();
        let t = tr.forward.truncated_at.expect("walk reaches the boundary");
        assert!(b.is_boundary(tr.forward.positions[t] as usize));
        assert_eq!(tr.forward.positions.len(), t + 1);
    }

    #[test]
    fn step_probabilities_are_symmetric() {
        let b = GraphBall::torus(2, 4).unwrap();
        let cfg = crate::percolation::sample_bernoulli(&b, 0.5, CouplingSeed::new(3, 0)).unwrap();
        for x in 0..b.n_vertices() {
            let total: f64 = (0..b.n_vertices()).map(|y| step_probability(&b, &cfg, x, y)).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for y in 0..b.n_vertices() {
                assert_eq!(step_probability(&b, &cfg, x, y), step_probability(&b, &cfg, y, x));
            }
        }
    }

    #[test]
    fn frequencies_and_subadditivity_on_a_built_trajectory() {
        // Alternate between two singleton-free clusters A = {0}, B = {1}.
        let b = GraphBall::torus(1, 4).unwrap();
        let cfg = Configuration::empty(&b);
        let dec = decompose(&b, &cfg).unwrap();
        let positions: Vec<u32> = (0..10).map(|t| (t / 5) as u32).collect();
        let traj = WalkTrajectory {
            start: 0,
            forward: WalkHalf {
                positions,
                proposals: vec![],
                moved: vec![],
                truncated_at: None,
            },
            backward: None,
            seed: CouplingSeed::new(0, 0),
        };
        let ft = visit_frequencies(&traj, &dec, (0, 10)).unwrap();
        assert!(ft.alpha_sum_is_one());
        assert_eq!(ft.top(1), 5);
        // Split at 3: [0,3) all A, [3,10) has A twice and B five times.
        assert_eq!(subadditivity_check(&traj, &dec, 1, (0, 10), 3).unwrap(), (5, 8));
        assert_eq!(subadditivity_check(&traj, &dec, 2, (0, 10), 3).unwrap(), (10, 10));
        assert!(subadditivity_check(&traj, &dec, 1, (0, 10), 0).is_err());
        assert!(visit_frequencies(&traj, &dec, (4, 4)).is_err());
    }

    #[test]
    fn trajectory_csv_rows() {
        let b = GraphBall::torus(1, 5).unwrap();
        let cfg = Configuration::full(&b);
        let tr = two_sided_walk(&b, &cfg, 0, 3, CouplingSeed::new(0, 0)).unwrap();
        let csv = tr.to_csv(&b, None);
        assert_eq!(csv.lines().count(), 1 + 3 + 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("-3,"));
    }
}
