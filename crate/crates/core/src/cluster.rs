//! Cluster decomposition and per-cluster statistics.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{EdgeKey, GraphBall};
use crate::percolation::{Configuration, EdgeStates};
use crate::rng::{Stream, StreamKey};
use crate::stats::{EstimateWithCI, Z99};

/// Disjoint-set forest with union by size and path compression. Equal sizes
/// attach the larger root index under the smaller.
#[derive(Clone, Debug)]
pub struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] as usize != root {
            root = self.parent[root] as usize;
        }
        let mut cur = x;
        while self.parent[cur] as usize != root {
            let next = self.parent[cur] as usize;
            self.parent[cur] = root as u32;
            cur = next;
        }
        root
    }

    /// Returns true if two distinct sets were merged.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = match self.size[ra].cmp(&self.size[rb]) {
            std::cmp::Ordering::Greater => (ra, rb),
            std::cmp::Ordering::Less => (rb, ra),
            std::cmp::Ordering::Equal => (ra.min(rb), ra.max(rb)),
        };
        self.parent[small] = big as u32;
        self.size[big] += self.size[small];
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub size: u32,
    /// Open edges inside the cluster.
    pub edge_count: u32,
    /// Boundary vertices in the cluster.
    pub boundary_contacts: u32,
    /// Touches the boundary.
    pub spanning: bool,
    pub least_vertex: u32,
    /// Smallest ball distance of a cluster vertex.
    pub min_distance: u32,
}

/// Partition of the ball's vertices into open clusters. Cluster ids follow
/// least-vertex order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterDecomposition {
    pub cluster_of: Vec<u32>,
    pub clusters: Vec<ClusterInfo>,
}

impl ClusterDecomposition {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn cluster_of(&self, v: usize) -> u32 {
        self.cluster_of[v]
    }

    /// Vertices of each cluster, in index order.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = self
            .clusters
            .iter()
            .map(|c| Vec::with_capacity(c.size as usize))
            .collect();
        for (v, &c) in self.cluster_of.iter().enumerate() {
            out[c as usize].push(v as u32);
        }
        out
    }

    pub fn cluster_members(&self, c: u32) -> Vec<u32> {
        self.cluster_of
            .iter()
            .enumerate()
            .filter(|&(_, &x)| x == c)
            .map(|(v, _)| v as u32)
            .collect()
    }

    pub fn spanning_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.spanning_ids_within(u32::MAX)
    }

    /// Spanning clusters that also come within `inner_radius` of the origin.
    pub fn spanning_ids_within(&self, inner_radius: u32) -> impl Iterator<Item = u32> + '_ {
        self.clusters
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.spanning && c.min_distance <= inner_radius)
            .map(|(i, _)| i as u32)
    }

    pub fn spanning_count(&self) -> usize {
        self.clusters.iter().filter(|c| c.spanning).count()
    }

    pub fn largest(&self) -> u32 {
        self.clusters
            .iter()
            .enumerate()
            .max_by_key(|(i, c)| (c.size, Reverse(*i)))
            .map(|(i, _)| i as u32)
            .unwrap_or(0)
    }
}

/// Union-find decomposition of any edge-state source.
pub fn decompose_states(ball: &GraphBall, states: &impl EdgeStates) -> ClusterDecomposition {
    let n = ball.n_vertices();
    let mut ds = DisjointSet::new(n);
    let mut open_edges = Vec::new();
    for (e, ed) in ball.edges().iter().enumerate() {
        if states.is_open(e) {
            ds.union(ed.u as usize, ed.v as usize);
            open_edges.push(e);
        }
    }
    let mut root_id = vec![u32::MAX; n];
    let mut cluster_of = vec![0u32; n];
    let mut clusters: Vec<ClusterInfo> = Vec::new();
    for v in 0..n {
        let r = ds.find(v);
        if root_id[r] == u32::MAX {
            root_id[r] = clusters.len() as u32;
            clusters.push(ClusterInfo {
                size: 0,
                edge_count: 0,
                boundary_contacts: 0,
                spanning: false,
                least_vertex: v as u32,
                min_distance: ball.distance(v),
            });
        }
        let c = root_id[r];
        cluster_of[v] = c;
        let info = &mut clusters[c as usize];
        info.size += 1;
        info.min_distance = info.min_distance.min(ball.distance(v));
        if ball.is_boundary(v) {
            info.boundary_contacts += 1;
            info.spanning = true;
        }
    }
    for e in open_edges {
        let c = cluster_of[ball.edge(e).u as usize];
        clusters[c as usize].edge_count += 1;
    }
    ClusterDecomposition {
        cluster_of,
        clusters,
    }
}

pub fn decompose(ball: &GraphBall, cfg: &Configuration) -> Result<ClusterDecomposition> {
    cfg.check_ball(ball)?;
    Ok(decompose_states(ball, cfg))
}

/// Number of clusters touching the boundary.
pub fn spanning_cluster_count(ball: &GraphBall, cfg: &Configuration) -> Result<usize> {
    if ball.radius() == 0 && !ball.is_torus() {
        return Err(invalid("radius", "spanning needs a ball of radius at least 1"));
    }
    Ok(decompose(ball, cfg)?.spanning_count())
}

/// BFS from `x` over open edges; stops early once `y` is found.
pub fn connected(ball: &GraphBall, states: &impl EdgeStates, x: usize, y: usize) -> bool {
    if x == y {
        return true;
    }
    let mut seen = vec![false; ball.n_vertices()];
    let mut q = VecDeque::from([x]);
    seen[x] = true;
    while let Some(u) = q.pop_front() {
        for &(w, e) in ball.adjacent(u) {
            let w = w as usize;
            if !seen[w] && states.is_open(e as usize) {
                if w == y {
                    return true;
                }
                seen[w] = true;
                q.push_back(w);
            }
        }
    }
    false
}

/// Does the open cluster of `x` reach the boundary?
pub fn reaches_boundary(ball: &GraphBall, states: &impl EdgeStates, x: usize) -> bool {
    if ball.is_boundary(x) {
        return true;
    }
    let mut seen = vec![false; ball.n_vertices()];
    let mut q = VecDeque::from([x]);
    seen[x] = true;
    while let Some(u) = q.pop_front() {
        for &(w, e) in ball.adjacent(u) {
            let w = w as usize;
            if !seen[w] && states.is_open(e as usize) {
                if ball.is_boundary(w) {
                    return true;
                }
                seen[w] = true;
                q.push_back(w);
            }
        }
    }
    false
}

/// Invariantly defined per-cluster statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub cluster_id: u32,
    pub size: u32,
    pub density: f64,
    /// `degree_histogram[k]` = cluster vertices with `k` open edges.
    pub degree_histogram: Vec<u32>,
    pub mean_degree: f64,
    pub ends_proxy: u32,
    pub boundary_contacts: u32,
    pub spanning: bool,
    pub pc: Option<f64>,
    pub heavy_weight: Option<f64>,
}

/// Vertices at distance at least `R - 1` form the shell used by the ends
/// proxy.
pub const ENDS_SHELL_WIDTH: u32 = 2;

/// Components of `cluster ∩ shell` under the open edges that contain a
/// boundary vertex. Never exceeds the boundary-contact count.
pub fn ends_proxy(
    ball: &GraphBall,
    states: &impl EdgeStates,
    dec: &ClusterDecomposition,
    cluster: u32,
) -> u32 {
    let r = ball.radius() as u32;
    let shell_from = r.saturating_sub(ENDS_SHELL_WIDTH - 1);
    let in_shell = |v: usize| dec.cluster_of[v] == cluster && ball.distance(v) >= shell_from;
    let mut seen = vec![false; ball.n_vertices()];
    let mut count = 0;
    for s in ball.boundary_vertices() {
        if dec.cluster_of[s] != cluster || seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &(w, e) in ball.adjacent(u) {
                let w = w as usize;
                if !seen[w] && in_shell(w) && states.is_open(e as usize) {
                    seen[w] = true;
                    q.push_back(w);
                }
            }
        }
    }
    count
}

pub fn cluster_stats(
    ball: &GraphBall,
    cfg: &Configuration,
    dec: &ClusterDecomposition,
    cluster: u32,
) -> Result<ClusterStats> {
    cfg.check_ball(ball)?;
    let info = dec
        .clusters
        .get(cluster as usize)
        .ok_or_else(|| invalid("cluster", format!("no cluster {cluster}")))?;
    let members = dec.cluster_members(cluster);
    let mut hist = vec![0u32; ball.degree() + 1];
    let mut deg_sum = 0u64;
    for &v in &members {
        let d = ball
            .adjacent(v as usize)
            .iter()
            .filter(|&&(_, e)| cfg.is_open(e as usize))
            .count();
        hist[d] += 1;
        deg_sum += d as u64;
    }
    let heavy = if ball.heights().is_some() {
        Some(heavy_weight(ball, dec, cluster)?)
    } else {
        None
    };
    Ok(ClusterStats {
        cluster_id: cluster,
        size: info.size,
        density: info.size as f64 / ball.n_vertices() as f64,
        degree_histogram: hist,
        mean_degree: deg_sum as f64 / info.size as f64,
        ends_proxy: ends_proxy(ball, cfg, dec, cluster),
        boundary_contacts: info.boundary_contacts,
        spanning: info.spanning,
        pc: None,
        heavy_weight: heavy,
    })
}

/// One JSON object per line, each carrying the configuration provenance.
pub fn export_cluster_stats(stats: &[ClusterStats], cfg: &Configuration) -> String {
    let prov = serde_json::to_value(cfg.provenance()).expect("provenance serializes");
    let mut out = String::new();
    for s in stats {
        let mut v = serde_json::to_value(s).expect("stats serialize");
        v["provenance"] = prov.clone();
        out.push_str(&serde_json::to_string(&v).expect("value serializes"));
        out.push('\n');
    }
    out
}

/// `Σ 2^(-height)` over the cluster.
pub fn heavy_weight(ball: &GraphBall, dec: &ClusterDecomposition, cluster: u32) -> Result<f64> {
    let mut total = 0.0;
    for (v, &c) in dec.cluster_of.iter().enumerate() {
        if c == cluster {
            total += (-(ball.end_height(v)? as f64)).exp2();
        }
    }
    if dec.clusters.get(cluster as usize).is_none() {
        ball.end_height(0)?;
        return Err(invalid("cluster", format!("no cluster {cluster}")));
    }
    Ok(total)
}

/// Closed edges whose endpoints lie in two different spanning clusters.
pub fn find_pivotal_edges(ball: &GraphBall, cfg: &Configuration) -> Result<Vec<EdgeKey>> {
    let dec = decompose(ball, cfg)?;
    Ok(ball
        .edges()
        .iter()
        .enumerate()
        .filter(|&(e, ed)| {
            let (a, b) = (dec.cluster_of[ed.u as usize], dec.cluster_of[ed.v as usize]);
            !cfg.is_open(e)
                && a != b
                && dec.clusters[a as usize].spanning
                && dec.clusters[b as usize].spanning
        })
        .map(|(e, _)| ball.edge_key(e))
        .collect())
}

/// Result of sub-percolating one cluster over a grid of retention levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcEstimate {
    pub grid: Vec<f64>,
    /// Fraction of thinnings in which the root still reaches the boundary.
    pub spanning_fraction: Vec<f64>,
    /// Mean number of boundary vertices still connected to the root.
    pub mean_connections: Vec<f64>,
    /// Level where the mean connection count crosses 1, with its interval.
    pub crossing: Option<EstimateWithCI>,
    /// Set when the curve never crosses 1 on the grid.
    pub no_crossing: bool,
}

/// Minimax path values from `root` within the cluster: the smallest `q`
/// such that the root and the vertex are joined by edges with labels `< q`.
fn bottleneck_from(
    ball: &GraphBall,
    cfg: &impl EdgeStates,
    dec: &ClusterDecomposition,
    root: usize,
    label: impl Fn(usize) -> f64,
) -> Vec<(usize, f64)> {
    let cluster = dec.cluster_of[root];
    let mut best: std::collections::HashMap<usize, f64> = Default::default();
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((OrdF64(0.0), root)));
    best.insert(root, 0.0);
    let mut done = Vec::new();
    let mut finished: std::collections::HashSet<usize> = Default::default();
    while let Some(Reverse((OrdF64(b), u))) = heap.pop() {
        if !finished.insert(u) {
            continue;
        }
        done.push((u, b));
        for &(w, e) in ball.adjacent(u) {
            let (w, e) = (w as usize, e as usize);
            if dec.cluster_of[w] != cluster || !cfg.is_open(e) || finished.contains(&w) {
                continue;
            }
            let nb = b.max(label(e));
            if best.get(&w).is_none_or(|&old| nb < old) {
                best.insert(w, nb);
                heap.push(Reverse((OrdF64(nb), w)));
            }
        }
    }
    done
}

/// Thresholds in [0, 1], never NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Interpolated `q` at which `curve(q)` first reaches `level`.
pub fn crossing_point(grid: &[f64], curve: &[f64], level: f64) -> Option<f64> {
    if curve.first().is_some_and(|&c| c >= level) {
        return Some(grid[0]);
    }
    for i in 1..grid.len() {
        let (a, b) = (curve[i - 1], curve[i]);
        if a < level && b >= level {
            let t = (level - a) / (b - a);
            return Some(grid[i - 1] + t * (grid[i] - grid[i - 1]));
        }
    }
    None
}

/// Sub-percolation of one spanning cluster: each thinning keeps each cluster
/// edge independently with probability `q` (coupled across the grid), and
/// the estimator locates the level where the mean number of boundary
/// vertices connected to the cluster's least vertex crosses 1.
pub fn cluster_pc_estimate(
    ball: &GraphBall,
    cfg: &Configuration,
    dec: &ClusterDecomposition,
    cluster: u32,
    grid: &[f64],
    n: u64,
    seed: u64,
) -> Result<PcEstimate> {
    cfg.check_ball(ball)?;
    let info = dec
        .clusters
        .get(cluster as usize)
        .ok_or_else(|| invalid("cluster", format!("no cluster {cluster}")))?;
    if !info.spanning {
        return Err(Error::NotSpanning(cluster));
    }
    if grid.is_empty()
        || grid.windows(2).any(|w| w[0] >= w[1])
        || grid.iter().any(|&q| q <= 0.0 || q >= 1.0)
    {
        return Err(invalid("grid", "must be strictly increasing inside (0, 1)"));
    }
    if n < 100 {
        return Err(invalid("n", format!("{n} samples; at least 100 required")));
    }
    let root = info.least_vertex as usize;
    let base = StreamKey::new(seed, root as u64, Stream::PcThinning);
    let digests = ball.digests();
    // Per thinning: sorted bottleneck values of the cluster's boundary vertices.
    let per_sample: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let key = base.child(s);
            let mut b: Vec<f64> = bottleneck_from(ball, cfg, dec, root, |e| key.unit(digests[e]))
                .into_iter()
                .filter(|&(v, _)| ball.is_boundary(v))
                .map(|(_, b)| b)
                .collect();
            b.sort_by(f64::total_cmp);
            b
        })
        .collect();
    let nf = n as f64;
    let mut spanning_fraction = Vec::with_capacity(grid.len());
    let mut mean = Vec::with_capacity(grid.len());
    let mut lo_curve = Vec::with_capacity(grid.len());
    let mut hi_curve = Vec::with_capacity(grid.len());
    for &q in grid {
        let counts: Vec<f64> = per_sample
            .iter()
            .map(|b| b.partition_point(|&x| x < q) as f64)
            .collect();
        spanning_fraction.push(counts.iter().filter(|&&c| c >= 1.0).count() as f64 / nf);
        let m = counts.iter().sum::<f64>() / nf;
        let var = counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (nf - 1.0);
        let hw = Z99 * (var / nf).sqrt();
        mean.push(m);
        lo_curve.push(m - hw);
        hi_curve.push(m + hw);
    }
    let crossing = crossing_point(grid, &mean, 1.0).map(|q| {
        let low = crossing_point(grid, &hi_curve, 1.0).unwrap_or(grid[0]).min(q);
        let high = crossing_point(grid, &lo_curve, 1.0)
            .unwrap_or(grid[grid.len() - 1])
            .max(q);
        EstimateWithCI {
            estimate: q,
            half_width: 0.5 * (high - low),
            ci_low: low,
            ci_high: high,
            n,
            seed,
        }
    });
    Ok(PcEstimate {
        grid: grid.to_vec(),
        spanning_fraction,
        mean_connections: mean,
        no_crossing: crossing.is_none(),
        crossing,
    })
}
