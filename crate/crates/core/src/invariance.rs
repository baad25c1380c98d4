//! Exact mass-transport sums, the cluster indistinguishability harness, and
//! the uniqueness-containment and phase experiments.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_pc_estimate, decompose, decompose_states, ClusterDecomposition};
use crate::error::{invalid, Error, Result};
use crate::graph::{Family, GraphBall, GraphSpec, Vertex};
use crate::percolation::{fiber_process, Configuration, CouplingSeed, EdgeStates, LazyBernoulli, Process};
use crate::rng::derive_seed;
use crate::stats::{binomial_upper_tail, mann_whitney, mean_sd, two_means, EstimateWithCI};
use crate::walks::{delayed_walk, TEST_LEVEL};

/// Kernels `phi(x, y) >= 0` for the mass-transport check. Every variant but
/// `Custom` is invariant under the diagonal action of the symmetry group of
/// the graph it is certified on.
#[derive(Clone, Debug)]
pub enum TransportKernel<'a> {
    Zero,
    /// Mass 1 from `x` to `x + offset` on a torus.
    Offset(Vec<i64>),
    /// Mass 1 from `x` to every vertex at graph distance exactly `k`.
    DistanceShell(u32),
    /// Every vertex whose cluster contains a target splits mass 1 equally
    /// among the targets of its cluster nearest to it in the cluster metric.
    /// Targets are vertices with at least `min_degree` open edges. The
    /// kernel is averaged over torus translations, which makes it invariant
    /// for a single configuration.
    NearestTarget {
        config: &'a Configuration,
        min_degree: usize,
    },
    /// Fixed-end tree: mass 1 from `x` to its neighbor toward the end.
    ToParent,
    /// Fixed-end tree: mass 1 from `x` to each neighbor away from the end.
    ToChild,
    ToParentOrChild,
    /// Arbitrary `(from, to, mass)` entries; never certified.
    Custom {
        name: String,
        weights: Vec<(u32, u32, u64)>,
    },
}

impl TransportKernel<'_> {
    pub fn name(&self) -> String {
        match self {
            TransportKernel::Zero => "zero".into(),
            TransportKernel::Offset(o) => format!("offset{o:?}"),
            TransportKernel::DistanceShell(k) => format!("distance_shell({k})"),
            TransportKernel::NearestTarget { min_degree, .. } => {
                format!("nearest_target(min_degree={min_degree})")
            }
            TransportKernel::ToParent => "to_parent".into(),
            TransportKernel::ToChild => "to_child".into(),
            TransportKernel::ToParentOrChild => "to_parent_or_child".into(),
            TransportKernel::Custom { name, .. } => name.clone(),
        }
    }

    /// Checks that the kernel is a menu kernel for this graph.
    pub fn certify(&self, ball: &GraphBall) -> Result<()> {
        let torus = || -> Result<()> {
            if ball.is_torus() {
                Ok(())
            } else {
                Err(Error::WrongFamily {
                    expected: "torus",
                    got: ball.family().tag(),
                })
            }
        };
        let fixed_end = || -> Result<()> {
            if ball.heights().is_some() {
                Ok(())
            } else {
                Err(Error::WrongFamily {
                    expected: "fixed_end_tree",
                    got: ball.family().tag(),
                })
            }
        };
        match self {
            TransportKernel::Zero => {
                if ball.is_torus() {
                    Ok(())
                } else {
                    fixed_end()
                }
            }
            TransportKernel::Offset(o) => {
                torus()?;
                let d = match ball.family() {
                    Family::Torus { d, .. } => *d,
                    _ => unreachable!("checked as a torus"),
                };
                if o.len() != d {
                    return Err(invalid("offset", format!("{} coordinates for dimension {d}", o.len())));
                }
                Ok(())
            }
            TransportKernel::DistanceShell(_) => torus(),
            TransportKernel::NearestTarget { config, .. } => {
                torus()?;
                config.check_ball(ball)
            }
            TransportKernel::ToParent | TransportKernel::ToChild | TransportKernel::ToParentOrChild => {
                fixed_end()
            }
            TransportKernel::Custom { name, .. } => Err(Error::UncertifiedKernel(name.clone())),
        }
    }
}

fn one() -> BigRational {
    BigRational::from_integer(BigInt::from(1))
}

fn count(n: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Index arithmetic for torus translations.
struct Translations {
    side: i64,
    coords: Vec<Vec<i64>>,
    index: HashMap<Vec<i64>, usize>,
}

impl Translations {
    fn new(ball: &GraphBall) -> Self {
        let side = match ball.family() {
            Family::Torus { side, .. } => *side as i64,
            _ => unreachable!("certified as a torus"),
        };
        let coords: Vec<Vec<i64>> = ball
            .vertices()
            .iter()
            .map(|v| match v {
                Vertex::Lattice(c) => c.clone(),
                _ => unreachable!("torus vertices are lattice points"),
            })
            .collect();
        let index = coords.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Translations { side, coords, index }
    }

    fn shift(&self, v: usize, offset: &[i64]) -> usize {
        let c: Vec<i64> = self.coords[v]
            .iter()
            .zip(offset)
            .map(|(a, b)| (a + b).rem_euclid(self.side))
            .collect();
        self.index[&c]
    }
}

/// `F(v, .)`: the equal split of unit mass over the nearest targets of
/// `v`'s cluster, measured along open edges.
fn nearest_target_split(
    ball: &GraphBall,
    cfg: &Configuration,
    min_degree: usize,
) -> Vec<Vec<(usize, BigRational)>> {
    let targets: Vec<bool> = (0..ball.n_vertices())
        .map(|v| {
            ball.adjacent(v)
                .iter()
                .filter(|&&(_, e)| cfg.is_open(e as usize))
                .count()
                >= min_degree
        })
        .collect();
    (0..ball.n_vertices())
        .map(|v| {
            let mut dist = HashMap::from([(v, 0u32)]);
            let mut q = VecDeque::from([v]);
            let mut found: Vec<usize> = Vec::new();
            let mut found_at = u32::MAX;
            while let Some(u) = q.pop_front() {
                let du = dist[&u];
                if du > found_at {
                    break;
                }
                if targets[u] {
                    found.push(u);
                    found_at = du;
                    continue;
                }
                for &(w, e) in ball.adjacent(u) {
                    let w = w as usize;
                    if cfg.is_open(e as usize) && !dist.contains_key(&w) {
                        dist.insert(w, du + 1);
                        q.push_back(w);
                    }
                }
            }
            if found.is_empty() {
                return Vec::new();
            }
            let share = BigRational::new(BigInt::from(1), BigInt::from(found.len()));
            found.into_iter().map(|w| (w, share.clone())).collect()
        })
        .collect()
}

/// `(sum_v phi(o, v), sum_v phi(v, o))` evaluated exactly, for any kernel.
pub fn transport_sums(
    ball: &GraphBall,
    kernel: &TransportKernel,
    o: usize,
) -> Result<(BigRational, BigRational)> {
    ball.check_vertex(o)?;
    let n = ball.n_vertices();
    let zero = BigRational::zero();
    let sums = |phi: &dyn Fn(usize, usize) -> BigRational| {
        let lhs = (0..n).fold(zero.clone(), |acc, v| acc + phi(o, v));
        let rhs = (0..n).fold(zero.clone(), |acc, v| acc + phi(v, o));
        (lhs, rhs)
    };
    let indicator = |b: bool| if b { one() } else { BigRational::zero() };
    let tree_kernel = matches!(
        kernel,
        TransportKernel::ToParent | TransportKernel::ToChild | TransportKernel::ToParentOrChild
    );
    if tree_kernel && ball.is_boundary(o) {
        return Err(invalid("o", "must be an interior vertex"));
    }
    Ok(match kernel {
        TransportKernel::Zero => sums(&|_, _| BigRational::zero()),
        TransportKernel::Offset(off) => {
            let tr = Translations::new(ball);
            sums(&|x, y| indicator(tr.shift(x, off) == y))
        }
        TransportKernel::DistanceShell(k) => {
            let from: Vec<Vec<u32>> = (0..n).map(|v| ball.bfs_distances_from(v)).collect();
            sums(&|x, y| indicator(from[x][y] == *k))
        }
        TransportKernel::NearestTarget { config, min_degree } => {
            let tr = Translations::new(ball);
            let split: Vec<HashMap<usize, BigRational>> = nearest_target_split(ball, config, *min_degree)
                .into_iter()
                .map(|row| row.into_iter().collect())
                .collect();
            let shifts: Vec<Vec<i64>> = tr.coords.clone();
            let nn = count(n);
            sums(&|x, y| {
                let total = shifts.iter().fold(BigRational::zero(), |acc, t| {
                    match split[tr.shift(x, t)].get(&tr.shift(y, t)) {
                        Some(m) => acc + m,
                        None => acc,
                    }
                });
                total / nn.clone()
            })
        }
        TransportKernel::ToParent | TransportKernel::ToChild | TransportKernel::ToParentOrChild => {
            let parent: Vec<Option<usize>> =
                (0..n).map(|v| ball.end_parent(v)).collect::<Result<_>>()?;
            let is_parent = |x: usize, y: usize| parent[x] == Some(y);
            match kernel {
                TransportKernel::ToParent => sums(&|x, y| indicator(is_parent(x, y))),
                TransportKernel::ToChild => sums(&|x, y| indicator(is_parent(y, x))),
                _ => sums(&|x, y| indicator(is_parent(x, y) || is_parent(y, x))),
            }
        }
        TransportKernel::Custom { weights, .. } => {
            let mut lhs = 0u64;
            let mut rhs = 0u64;
            for &(x, y, m) in weights {
                if x as usize == o {
                    lhs += m;
                }
                if y as usize == o {
                    rhs += m;
                }
            }
            (count(lhs as usize), count(rhs as usize))
        }
    })
}

/// Mass sent from and received at `o` for a certified kernel.
pub fn mtp_check(
    ball: &GraphBall,
    kernel: &TransportKernel,
    o: usize,
) -> Result<(BigRational, BigRational)> {
    kernel.certify(ball)?;
    transport_sums(ball, kernel, o)
}

/// Parent kernel on the fixed-end 3-regular tree of the given radius.
pub fn mtp_violation_fixed_end_with_radius(radius: usize) -> Result<(u64, u64)> {
    if radius == 0 {
        return Err(invalid("radius", "must be at least 1"));
    }
    let ball = GraphBall::build(&GraphSpec::new(Family::FixedEndTree { b: 3 }, radius))?;
    let (l, r) = mtp_check(&ball, &TransportKernel::ToParent, 0)?;
    let int = |x: BigRational| x.to_integer().to_u64().expect("small integer sums");
    Ok((int(l), int(r)))
}

/// `(1, 2)`: one parent, two children.
pub fn mtp_violation_fixed_end() -> (u64, u64) {
    mtp_violation_fixed_end_with_radius(3).expect("radius 3 is within bounds")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledTransport {
    pub sent: EstimateWithCI,
    pub received: EstimateWithCI,
    /// Per-configuration `sent - received` at the origin.
    pub difference: EstimateWithCI,
}

/// Nearest-target transport without translation averaging, averaged over
/// Bernoulli(p) configurations instead.
pub fn nearest_target_sampled(
    ball: &GraphBall,
    p: f64,
    min_degree: usize,
    n: u64,
    seed: u64,
) -> Result<SampledTransport> {
    if !ball.is_torus() {
        return Err(Error::WrongFamily {
            expected: "torus",
            got: ball.family().tag(),
        });
    }
    if n < 2 {
        return Err(invalid("n", "at least 2 configurations required"));
    }
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|s| -> Result<(f64, f64)> {
            let cfg = Process::Bernoulli { p }.sample(ball, CouplingSeed::new(seed, s))?;
            let split = nearest_target_split(ball, &cfg, min_degree);
            let sent = split[0].iter().map(|(_, m)| m.to_f64().unwrap_or(0.0)).sum();
            let received = split
                .iter()
                .flatten()
                .filter(|(w, _)| *w == 0)
                .map(|(_, m)| m.to_f64().unwrap_or(0.0))
                .sum();
            Ok((sent, received))
        })
        .collect::<Result<_>>()?;
    let sent: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let received: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let diff: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
    Ok(SampledTransport {
        sent: EstimateWithCI::mean(&sent, seed),
        received: EstimateWithCI::mean(&received, seed),
        difference: EstimateWithCI::mean(&diff, seed),
    })
}

/// Per-cluster observables for the indistinguishability harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterStatistic {
    /// Fraction of moving steps of delayed walks started at branch roots.
    Frequency,
    /// Fraction of each branch's outward cone inside the cluster.
    Density,
    /// Sub-percolation threshold of the cluster.
    ClusterPc,
    MeanDegree,
    EndsProxy,
    /// Fixed-end trees: open degree of the cluster vertex closest to the end.
    EndVertexDegree,
}

impl ClusterStatistic {
    /// The statistics defined on every graph.
    pub const GENERAL: [ClusterStatistic; 5] = [
        ClusterStatistic::Frequency,
        ClusterStatistic::Density,
        ClusterStatistic::ClusterPc,
        ClusterStatistic::MeanDegree,
        ClusterStatistic::EndsProxy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ClusterStatistic::Frequency => "frequency",
            ClusterStatistic::Density => "density",
            ClusterStatistic::ClusterPc => "cluster_pc",
            ClusterStatistic::MeanDegree => "mean_degree",
            ClusterStatistic::EndsProxy => "ends_proxy",
            ClusterStatistic::EndVertexDegree => "end_vertex_degree",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::GENERAL
            .into_iter()
            .chain([ClusterStatistic::EndVertexDegree])
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid("statistic", format!("unknown statistic `{s}`")))
    }

    /// One exact value per cluster; clusters are compared by equality.
    pub fn single_valued(&self) -> bool {
        matches!(self, ClusterStatistic::EndVertexDegree)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndistParams {
    /// Clusters count only if they span and come within this distance of
    /// the origin.
    pub inner_radius: u32,
    /// Distance of the branch roots: cluster vertices whose outward cones
    /// (reached by steps away from the origin) give per-branch observations.
    pub branch_depth: u32,
    pub pc_grid: Vec<f64>,
    pub pc_thinnings: u64,
    pub walks_per_cluster: usize,
    pub walk_steps: usize,
    /// Fewer samples with two eligible clusters give an inconclusive verdict.
    pub min_multi_samples: u64,
}

impl IndistParams {
    pub fn for_radius(radius: u32) -> Self {
        let inner_radius = (radius / 5).max(1);
        let branch_depth = (radius + inner_radius) / 2;
        IndistParams {
            inner_radius,
            branch_depth,
            pc_grid: (0..60).map(|i| 0.40 + 0.01 * i as f64).collect(),
            pc_thinnings: 200,
            walks_per_cluster: 8,
            walk_steps: 2 * (radius - branch_depth) as usize,
            min_multi_samples: 20,
        }
    }

    fn validate(&self, radius: u32) -> Result<()> {
        if self.inner_radius >= radius {
            return Err(invalid("inner_radius", format!("must be below the radius {radius}")));
        }
        if self.branch_depth >= radius {
            return Err(invalid("branch_depth", format!("must be below the radius {radius}")));
        }
        if self.walks_per_cluster == 0 || self.walk_steps == 0 {
            return Err(invalid("walks_per_cluster", "walks and steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    DifferenceDetected,
    NotDetected,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub sample: u64,
    pub cluster: u32,
    pub size: u32,
    pub summary: f64,
    pub observations: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub sample: u64,
    pub a: u32,
    pub b: u32,
    pub u_statistic: f64,
    /// Mann-Whitney p-value; 0 or 1 for single-valued statistics.
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndistReport {
    pub statistic: ClusterStatistic,
    pub process: Process,
    pub n_samples: u64,
    pub seed: u64,
    pub params: IndistParams,
    pub clusters: Vec<ClusterRecord>,
    pub pairs: Vec<PairTest>,
    /// Samples with at least two eligible clusters.
    pub multi_cluster_samples: u64,
    /// Samples whose smallest pair p-value is below the Bonferroni level.
    pub flagged_samples: Vec<u64>,
    /// `P[Binomial(multi, threshold) >= flagged]`.
    pub aggregate_p: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    /// Mean within-sample variance of the cluster summaries.
    pub within_dispersion: f64,
    /// Variance of the per-sample mean summaries.
    pub between_dispersion: f64,
    /// 2-means centers of all cluster summaries.
    pub modes: Option<(f64, f64)>,
}

/// Vertices reached from `u` along open edges that step one unit farther
/// from the origin each time.
fn forward_cone(ball: &GraphBall, cfg: &impl EdgeStates, u: usize) -> Vec<usize> {
    let mut seen = HashSet::from([u]);
    let mut q = VecDeque::from([u]);
    let mut out = Vec::new();
    while let Some(x) = q.pop_front() {
        out.push(x);
        for &(w, e) in ball.adjacent(x) {
            let w = w as usize;
            if ball.distance(w) == ball.distance(x) + 1 && cfg.is_open(e as usize) && seen.insert(w) {
                q.push_back(w);
            }
        }
    }
    out
}

struct AllOpen;

impl EdgeStates for AllOpen {
    fn is_open(&self, _: usize) -> bool {
        true
    }
}

/// Component labels of the cluster's boundary vertices inside the shell
/// used by the ends proxy.
fn shell_labels(
    ball: &GraphBall,
    cfg: &impl EdgeStates,
    dec: &ClusterDecomposition,
    cluster: u32,
) -> HashMap<usize, u32> {
    let r = ball.radius() as u32;
    let shell_from = r.saturating_sub(crate::cluster::ENDS_SHELL_WIDTH - 1);
    let mut label: HashMap<usize, u32> = HashMap::new();
    let mut next = 0;
    for s in ball.boundary_vertices() {
        if dec.cluster_of[s] != cluster || label.contains_key(&s) {
            continue;
        }
        let mut seen = HashSet::from([s]);
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            if ball.is_boundary(u) {
                label.insert(u, next);
            }
            for &(w, e) in ball.adjacent(u) {
                let w = w as usize;
                if dec.cluster_of[w] == cluster
                    && ball.distance(w) >= shell_from
                    && cfg.is_open(e as usize)
                    && seen.insert(w)
                {
                    q.push_back(w);
                }
            }
        }
        next += 1;
    }
    label
}

fn open_degree(ball: &GraphBall, cfg: &impl EdgeStates, v: usize) -> usize {
    ball.adjacent(v)
        .iter()
        .filter(|&&(_, e)| cfg.is_open(e as usize))
        .count()
}

/// The cluster vertex of least end height, ties by index.
fn end_vertex(ball: &GraphBall, members: &[u32]) -> Result<usize> {
    let h = ball.heights().ok_or(Error::WrongFamily {
        expected: "fixed_end_tree",
        got: ball.family().tag(),
    })?;
    Ok(members
        .iter()
        .map(|&v| v as usize)
        .min_by_key(|&v| (h[v], v))
        .expect("clusters are nonempty"))
}

#[allow(clippy::too_many_arguments)]
fn observe_cluster(
    ball: &GraphBall,
    cfg: &Configuration,
    dec: &ClusterDecomposition,
    members: &[u32],
    cluster: u32,
    statistic: ClusterStatistic,
    params: &IndistParams,
    sample_seed: u64,
) -> Result<Option<(f64, Vec<f64>)>> {
    let r = ball.radius() as u32;
    let branch_roots = || -> Vec<usize> {
        members
            .iter()
            .map(|&v| v as usize)
            .filter(|&v| ball.distance(v) == params.branch_depth)
            .collect()
    };
    let mean = |o: &[f64]| o.iter().sum::<f64>() / o.len() as f64;
    let obs: Vec<f64> = match statistic {
        ClusterStatistic::MeanDegree => members
            .iter()
            .map(|&v| v as usize)
            .filter(|&v| !ball.is_boundary(v))
            .map(|v| open_degree(ball, cfg, v) as f64)
            .collect(),
        ClusterStatistic::Density => branch_roots()
            .into_iter()
            .map(|u| {
                let below = forward_cone(ball, &AllOpen, u);
                let inside = below.iter().filter(|&&x| dec.cluster_of[x] == cluster).count();
                inside as f64 / below.len() as f64
            })
            .collect(),
        ClusterStatistic::EndsProxy => {
            let labels = shell_labels(ball, cfg, dec, cluster);
            branch_roots()
                .into_iter()
                .map(|u| {
                    let hit: HashSet<u32> = forward_cone(ball, cfg, u)
                        .into_iter()
                        .filter_map(|x| labels.get(&x).copied())
                        .collect();
                    hit.len() as f64
                })
                .collect()
        }
        ClusterStatistic::ClusterPc => {
            let depth = (r - params.branch_depth) as f64;
            branch_roots()
                .into_iter()
                .filter_map(|u| {
                    let z = forward_cone(ball, cfg, u)
                        .into_iter()
                        .filter(|&x| ball.is_boundary(x))
                        .count();
                    (z > 0).then(|| (z as f64).powf(-1.0 / depth))
                })
                .collect()
        }
        ClusterStatistic::Frequency => {
            let starts = branch_roots();
            let k = params.walks_per_cluster.min(starts.len());
            let mut out = Vec::with_capacity(k);
            for i in 0..k {
                let start = starts[i * starts.len() / k];
                let traj = delayed_walk(
                    ball,
                    cfg,
                    start,
                    params.walk_steps,
                    CouplingSeed::new(sample_seed, start as u64),
                )?;
                let moved = &traj.forward.moved;
                if !moved.is_empty() {
                    out.push(moved.iter().filter(|&&m| m).count() as f64 / moved.len() as f64);
                }
            }
            out
        }
        ClusterStatistic::EndVertexDegree => {
            let v = end_vertex(ball, members)?;
            if ball.is_boundary(v) {
                Vec::new()
            } else {
                vec![open_degree(ball, cfg, v) as f64]
            }
        }
    };
    if obs.is_empty() {
        return Ok(None);
    }
    let summary = if statistic == ClusterStatistic::ClusterPc {
        cluster_pc_estimate(ball, cfg, dec, cluster, &params.pc_grid, params.pc_thinnings, sample_seed)?
            .crossing
            .map_or(f64::NAN, |c| c.estimate)
    } else {
        mean(&obs)
    };
    Ok(Some((summary, obs)))
}

struct SampleResult {
    clusters: Vec<ClusterRecord>,
    pairs: Vec<PairTest>,
    flagged: bool,
}

/// Per sample, every eligible spanning cluster is summarized by a vector of
/// observations; all cluster pairs are compared with Mann-Whitney tests and
/// the sample is flagged when the smallest p-value falls below the level
/// divided by the number of pairs. Under indistinguishability a sample is
/// flagged with probability at most the level, so the verdict compares the
/// flagged count with a Binomial(multi-cluster samples, level) tail.
pub fn indistinguishability_test(
    ball: &GraphBall,
    process: &Process,
    statistic: ClusterStatistic,
    n_samples: u64,
    seed: u64,
    params: &IndistParams,
) -> Result<IndistReport> {
    if ball.is_torus() {
        return Err(invalid("graph", "needs a ball with a boundary"));
    }
    process.validate()?;
    params.validate(ball.radius() as u32)?;
    if statistic == ClusterStatistic::EndVertexDegree && ball.heights().is_none() {
        return Err(Error::WrongFamily {
            expected: "fixed_end_tree",
            got: ball.family().tag(),
        });
    }
    let per_sample: Vec<SampleResult> = (0..n_samples)
        .into_par_iter()
        .map(|s| -> Result<SampleResult> {
            let cfg = process.sample(ball, CouplingSeed::new(seed, s))?;
            let dec = decompose(ball, &cfg)?;
            let eligible: Vec<u32> = dec.spanning_ids_within(params.inner_radius).collect();
            let members = dec.members();
            let sample_seed = derive_seed(seed, s);
            let mut clusters = Vec::new();
            for c in eligible {
                let m = &members[c as usize];
                if let Some((summary, observations)) =
                    observe_cluster(ball, &cfg, &dec, m, c, statistic, params, sample_seed)?
                {
                    clusters.push(ClusterRecord {
                        sample: s,
                        cluster: c,
                        size: m.len() as u32,
                        summary,
                        observations,
                    });
                }
            }
            let mut pairs = Vec::new();
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let (a, b) = (&clusters[i], &clusters[j]);
                    let (u, p) = if statistic.single_valued() {
                        let same = a.observations == b.observations;
                        (0.0, if same { 1.0 } else { 0.0 })
                    } else {
                        mann_whitney(&a.observations, &b.observations)
                    };
                    pairs.push(PairTest {
                        sample: s,
                        a: a.cluster,
                        b: b.cluster,
                        u_statistic: u,
                        p_value: p,
                    });
                }
            }
            let level = TEST_LEVEL / pairs.len().max(1) as f64;
            let flagged = pairs.iter().any(|t| t.p_value < level);
            Ok(SampleResult {
                clusters,
                pairs,
                flagged,
            })
        })
        .collect::<Result<_>>()?;

    let multi: Vec<&SampleResult> = per_sample.iter().filter(|r| r.clusters.len() >= 2).collect();
    let n_multi = multi.len() as u64;
    let flagged_samples: Vec<u64> = multi
        .iter()
        .filter(|r| r.flagged)
        .map(|r| r.clusters[0].sample)
        .collect();
    let aggregate_p = binomial_upper_tail(flagged_samples.len() as u64, n_multi, TEST_LEVEL);
    let verdict = if n_multi < params.min_multi_samples {
        Verdict::Inconclusive
    } else if aggregate_p < TEST_LEVEL {
        Verdict::DifferenceDetected
    } else {
        Verdict::NotDetected
    };

    let finite = |r: &SampleResult| -> Vec<f64> {
        r.clusters.iter().map(|c| c.summary).filter(|x| x.is_finite()).collect()
    };
    let within: Vec<f64> = multi
        .iter()
        .map(|r| finite(r))
        .filter(|v| v.len() >= 2)
        .map(|v| mean_sd(&v).1.powi(2))
        .collect();
    let sample_means: Vec<f64> = per_sample
        .iter()
        .map(finite)
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let avg = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let between = if sample_means.len() >= 2 {
        mean_sd(&sample_means).1.powi(2)
    } else {
        f64::NAN
    };

    let mut clusters = Vec::new();
    let mut pairs = Vec::new();
    for r in per_sample {
        clusters.extend(r.clusters);
        pairs.extend(r.pairs);
    }
    let summaries: Vec<f64> = clusters.iter().map(|c| c.summary).collect();
    Ok(IndistReport {
        statistic,
        process: process.clone(),
        n_samples,
        seed,
        params: params.clone(),
        modes: two_means(&summaries),
        clusters,
        pairs,
        multi_cluster_samples: n_multi,
        flagged_samples,
        aggregate_p,
        threshold: TEST_LEVEL,
        verdict,
        within_dispersion: avg(&within),
        between_dispersion: between,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub p1: f64,
    pub p2: f64,
    pub n: u64,
    pub seed: u64,
    /// Higher-level clusters are checked if they come within this distance
    /// of the origin.
    pub outer_inner_radius: u32,
    /// Lower-level spanning clusters count if they come within this
    /// distance of the origin.
    pub inner_inner_radius: u32,
    /// Samples with at least one counted lower-level spanning cluster.
    pub qualifying_samples: u64,
    pub clusters_checked: u64,
    pub clusters_containing: u64,
    pub fraction: Option<EstimateWithCI>,
    /// Per sample: does the origin's higher-level cluster contain a counted
    /// lower-level cluster? Monotone in `p2` under the coupling.
    pub origin_contains: Vec<Option<bool>>,
    pub inconclusive: bool,
}

fn check_level(name: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("{p} not in (0, 1]")))
    }
}

/// Coupled Bernoulli levels `p1 <= p2`: the fraction of `p2` spanning
/// clusters that contain a `p1` spanning cluster.
pub fn uniqueness_monotonicity_check(
    ball: &GraphBall,
    p1: f64,
    p2: f64,
    n: u64,
    seed: u64,
) -> Result<UniquenessReport> {
    check_level("p1", p1)?;
    check_level("p2", p2)?;
    if p1 > p2 {
        return Err(invalid("p1", format!("{p1} exceeds p2 = {p2}")));
    }
    if ball.is_torus() {
        return Err(invalid("graph", "needs a ball with a boundary"));
    }
    let r = ball.radius() as u32;
    let outer = r / 2;
    let inner = r.saturating_sub(3).max(outer);
    let rows: Vec<Option<(u64, u64, bool)>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let cs = CouplingSeed::new(seed, s);
            let d1 = decompose_states(ball, &LazyBernoulli::new(ball, p1, cs));
            let counted: Vec<bool> = d1
                .clusters
                .iter()
                .map(|c| c.spanning && c.min_distance <= inner)
                .collect();
            if !counted.iter().any(|&b| b) {
                return None;
            }
            let d2 = decompose_states(ball, &LazyBernoulli::new(ball, p2, cs));
            let mut contains = vec![false; d2.len()];
            for v in 0..ball.n_vertices() {
                if counted[d1.cluster_of[v] as usize] {
                    contains[d2.cluster_of[v] as usize] = true;
                }
            }
            let checked: Vec<u32> = d2.spanning_ids_within(outer).collect();
            let hit = checked.iter().filter(|&&c| contains[c as usize]).count() as u64;
            Some((checked.len() as u64, hit, contains[d2.cluster_of[0] as usize]))
        })
        .collect();
    let qualifying = rows.iter().flatten().count() as u64;
    let checked: u64 = rows.iter().flatten().map(|r| r.0).sum();
    let hit: u64 = rows.iter().flatten().map(|r| r.1).sum();
    Ok(UniquenessReport {
        p1,
        p2,
        n,
        seed,
        outer_inner_radius: outer,
        inner_inner_radius: inner,
        qualifying_samples: qualifying,
        clusters_checked: checked,
        clusters_containing: hit,
        fraction: (checked > 0).then(|| EstimateWithCI::proportion(hit, checked, seed)),
        origin_contains: rows.iter().map(|r| r.map(|x| x.2)).collect(),
        inconclusive: checked == 0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasesRow {
    pub eps: f64,
    /// `histogram[k]` = samples with `k` counted clusters.
    pub histogram: Vec<u64>,
    pub mode: usize,
    /// Only at `eps = 0`: spanning clusters meeting the identity fiber.
    pub fiber_histogram: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasesTable {
    pub radius: usize,
    pub inner_radius: u32,
    pub n: u64,
    pub seed: u64,
    pub rows: Vec<PhasesRow>,
}

impl PhasesTable {
    /// `eps,count,samples` with fiber counts under `fiber_count` at eps 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,kind,count,samples\n");
        for row in &self.rows {
            for (k, &c) in row.histogram.iter().enumerate() {
                writeln!(out, "{},graph,{k},{c}", row.eps).expect("write to string");
            }
            for (k, &c) in row.fiber_histogram.iter().flatten().enumerate() {
                writeln!(out, "{},fiber,{k},{c}", row.eps).expect("write to string");
            }
        }
        out
    }
}

fn histogram(counts: &[usize]) -> Vec<u64> {
    let mut h = vec![0u64; counts.iter().copied().max().unwrap_or(0) + 1];
    for &c in counts {
        h[c] += 1;
    }
    h
}

/// Spanning-cluster counts of the fiber process on the product of the free
/// group on two generators with the square lattice. A cluster counts if it
/// spans, comes within the inner radius of the origin and contains an open
/// edge between fibers.
pub fn phases_experiment(eps_list: &[f64], radius: usize, n: u64, seed: u64) -> Result<PhasesTable> {
    if eps_list.is_empty() {
        return Err(invalid("eps_list", "must not be empty"));
    }
    if radius < 2 {
        return Err(invalid("radius", "must be at least 2"));
    }
    let ball = GraphBall::build(&GraphSpec::new(
        Family::Product {
            left: Box::new(Family::FreeGroup { k: 2 }),
            right: Box::new(Family::Lattice { d: 2 }),
        },
        radius,
    ))?;
    let inner = (radius as u32 / 3).max(1);
    let identity_left = match ball.vertex(0) {
        Vertex::Pair(a, _) => (**a).clone(),
        _ => unreachable!("product vertices are pairs"),
    };
    let in_identity_fiber: Vec<bool> = ball
        .vertices()
        .iter()
        .map(|v| matches!(v, Vertex::Pair(a, _) if **a == identity_left))
        .collect();
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let per: Vec<(usize, usize)> = (0..n)
            .into_par_iter()
            .map(|s| -> Result<(usize, usize)> {
                let cfg = fiber_process(&ball, eps, CouplingSeed::new(seed, s))?;
                let dec = decompose(&ball, &cfg)?;
                let mut crosses = vec![false; dec.len()];
                for e in cfg.open_edges() {
                    if !crate::percolation::is_fiber_edge(&ball, e) {
                        crosses[dec.cluster_of[ball.edge(e).u as usize] as usize] = true;
                    }
                }
                let eligible: Vec<u32> = dec.spanning_ids_within(inner).collect();
                let graph = eligible.iter().filter(|&&c| crosses[c as usize]).count();
                let fiber: HashSet<u32> = (0..ball.n_vertices())
                    .filter(|&v| in_identity_fiber[v])
                    .map(|v| dec.cluster_of[v])
                    .filter(|c| eligible.contains(c))
                    .collect();
                Ok((graph, fiber.len()))
            })
            .collect::<Result<_>>()?;
        let graph: Vec<usize> = per.iter().map(|x| x.0).collect();
        let h = histogram(&graph);
        let mode = (0..h.len()).max_by_key(|&k| (h[k], std::cmp::Reverse(k))).unwrap_or(0);
        let fiber_histogram = (eps == 0.0).then(|| histogram(&per.iter().map(|x| x.1).collect::<Vec<_>>()));
        rows.push(PhasesRow {
            eps,
            histogram: h,
            mode,
            fiber_histogram,
        });
    }
    Ok(PhasesTable {
        radius,
        inner_radius: inner,
        n,
        seed,
        rows,
    })
}
