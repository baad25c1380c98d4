//! Connectivity function estimates, decay scans and second-moment bounds.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{connected, decompose_states};
use crate::error::{check_probability, invalid, Error, Result};
use crate::graph::{EdgeKey, GraphBall};
use crate::percolation::{Configuration, CouplingSeed, EdgeStates, LazyBernoulli, Process};
use crate::stats::EstimateWithCI;

/// `P[x <-> y]` under the process, estimated over samples `0..n`.
pub fn tau_estimate(
    ball: &GraphBall,
    process: &Process,
    x: usize,
    y: usize,
    n: u64,
    seed: u64,
) -> Result<EstimateWithCI> {
    ball.check_vertex(x)?;
    ball.check_vertex(y)?;
    if n < 100 {
        return Err(invalid("n", format!("{n} samples; at least 100 required")));
    }
    process.validate()?;
    // Endpoint order never affects the estimator.
    let (x, y) = (x.min(y), x.max(y));
    let hits: u64 = (0..n)
        .into_par_iter()
        .map(|s| -> Result<u64> {
            let cs = CouplingSeed::new(seed, s);
            let hit = match *process {
                Process::Bernoulli { p } => connected(ball, &LazyBernoulli::new(ball, p, cs), x, y),
                _ => connected(ball, &process.sample(ball, cs)?, x, y),
            };
            Ok(hit as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(EstimateWithCI::proportion(hits, n, seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub pair_id: usize,
    pub x: String,
    pub y: String,
    pub estimate: EstimateWithCI,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub distance: u32,
    pub pairs: Vec<PairEstimate>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    /// No canonical pair exists at this distance.
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    pub n: u64,
    pub seed: u64,
}

const CSV_HEADER: &str = "distance,pair_id,estimate,ci_low,ci_high,n,seed";

fn csv_line(out: &mut String, distance: u32, pair_id: usize, e: &EstimateWithCI) {
    writeln!(
        out,
        "{distance},{pair_id},{},{},{},{},{}",
        e.estimate, e.ci_low, e.ci_high, e.n, e.seed
    )
    .expect("write to string");
}

impl DecayTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for row in &self.rows {
            for p in &row.pairs {
                csv_line(&mut out, row.distance, p.pair_id, &p.estimate);
            }
        }
        out
    }
}

/// Single-row CSV for a τ estimate.
pub fn tau_csv(distance: u32, e: &EstimateWithCI) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    csv_line(&mut out, distance, 0, e);
    out
}

/// Canonical pairs at ball distance `d`: scan `x` in index order, then `y > x`
/// in index order, both within distance `R - 1` of the origin; keep the
/// first `k`.
pub fn canonical_pairs(ball: &GraphBall, d: u32, k: usize) -> Vec<(usize, usize)> {
    let inner = if ball.is_torus() {
        u32::MAX
    } else {
        (ball.radius() as u32).saturating_sub(1)
    };
    let mut out = Vec::new();
    for x in 0..ball.n_vertices() {
        if out.len() >= k {
            break;
        }
        if ball.distance(x) > inner {
            continue;
        }
        let dx = ball.bfs_distances_from(x);
        for (y, &dy) in dx.iter().enumerate().skip(x + 1) {
            if dy == d && ball.distance(y) <= inner {
                out.push((x, y));
                if out.len() >= k {
                    break;
                }
            }
        }
    }
    out
}

/// τ estimates for canonical pairs at each requested distance. One sampled
/// configuration per sample index is shared by all pairs.
pub fn decay_scan(
    ball: &GraphBall,
    process: &Process,
    distances: &[u32],
    pairs_per_distance: usize,
    n: u64,
    seed: u64,
) -> Result<DecayTable> {
    if n < 100 {
        return Err(invalid("n", format!("{n} samples; at least 100 required")));
    }
    if pairs_per_distance == 0 {
        return Err(invalid("pairs_per_distance", "must be at least 1"));
    }
    process.validate()?;
    if !ball.is_torus() {
        let limit = 2 * ball.radius() as u32;
        if let Some(&d) = distances.iter().find(|&&d| d + 2 > limit) {
            return Err(invalid("distances", format!("{d} exceeds 2R - 2 = {}", limit.saturating_sub(2))));
        }
    }
    let pair_sets: Vec<Vec<(usize, usize)>> = distances
        .iter()
        .map(|&d| canonical_pairs(ball, d, pairs_per_distance))
        .collect();
    let flat: Vec<(usize, usize)> = pair_sets.iter().flatten().copied().collect();
    let hits: Vec<u64> = (0..n)
        .into_par_iter()
        .map(|s| -> Result<Vec<u64>> {
            let cs = CouplingSeed::new(seed, s);
            let dec = match *process {
                Process::Bernoulli { p } => decompose_states(ball, &LazyBernoulli::new(ball, p, cs)),
                _ => decompose_states(ball, &process.sample(ball, cs)?),
            };
            Ok(flat
                .iter()
                .map(|&(x, y)| (dec.cluster_of[x] == dec.cluster_of[y]) as u64)
                .collect())
        })
        .try_reduce(
            || vec![0; flat.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let mut next = 0;
    let rows = distances
        .iter()
        .zip(&pair_sets)
        .map(|(&d, set)| {
            let pairs: Vec<PairEstimate> = set
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| {
                    let e = EstimateWithCI::proportion(hits[next + i], n, seed);
                    PairEstimate {
                        pair_id: i,
                        x: ball.vertex_key(x),
                        y: ball.vertex_key(y),
                        estimate: e,
                    }
                })
                .collect();
            next += set.len();
            let vals: Vec<f64> = pairs.iter().map(|p| p.estimate.estimate).collect();
            DecayRow {
                distance: d,
                min: vals.iter().copied().reduce(f64::min),
                max: vals.iter().copied().reduce(f64::max),
                mean: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                empty: pairs.is_empty(),
                pairs,
            }
        })
        .collect();
    Ok(DecayTable { rows, n, seed })
}

/// Histogram of `|φ ∩ ψ|` (shared edges) over sampled path pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPairStats {
    pub target: String,
    pub measure: String,
    /// `histogram[k]` = pairs sharing exactly `k` edges.
    pub histogram: Vec<u64>,
    pub pairs: u64,
    /// Pairs with a path leaving the ball; recorded at `k = 0`.
    pub lost: u64,
}

impl PathPairStats {
    pub fn from_intersections(
        target: String,
        measure: String,
        sizes: impl IntoIterator<Item = (usize, bool)>,
    ) -> Self {
        let mut histogram = Vec::new();
        let (mut pairs, mut lost) = (0, 0);
        for (k, in_ball) in sizes {
            let k = if in_ball { k } else { 0 };
            if histogram.len() <= k {
                histogram.resize(k + 1, 0);
            }
            histogram[k] += 1;
            pairs += 1;
            lost += (!in_ball) as u64;
        }
        PathPairStats {
            target,
            measure,
            histogram,
            pairs,
            lost,
        }
    }

    /// Probability mass at each intersection size.
    pub fn mass(&self) -> Vec<f64> {
        self.histogram
            .iter()
            .map(|&c| c as f64 / self.pairs as f64)
            .collect()
    }

    pub fn lost_fraction(&self) -> f64 {
        self.lost as f64 / self.pairs.max(1) as f64
    }

    /// `1 / Σ_k mass(k) p^(-k)`: the second-moment bound before any
    /// geometric domination.
    pub fn second_moment_bound(&self, p: f64) -> f64 {
        let s: f64 = self
            .mass()
            .iter()
            .enumerate()
            .map(|(k, m)| m * p.powi(-(k as i32)))
            .sum();
        1.0 / s
    }
}

/// A pair `(c, θ)` with `mass(k) <= c θ^k` for every observed `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    pub c: f64,
    pub theta: f64,
}

/// Smallest `c` making `(c, θ)` dominate the mass function.
fn dominating_c(mass: &[f64], theta: f64) -> f64 {
    mass.iter()
        .enumerate()
        .filter(|&(_, &m)| m > 0.0)
        .map(|(k, &m)| if k == 0 { m } else if theta == 0.0 { f64::INFINITY } else { m / theta.powi(k as i32) })
        .fold(0.0, f64::max)
}

/// Does `(c, θ)` dominate every observed mass, up to rounding?
pub fn certify(stats: &PathPairStats, fit: &GeometricFit) -> bool {
    stats
        .mass()
        .iter()
        .enumerate()
        .all(|(k, &m)| m <= fit.c * fit.theta.powi(k as i32) * (1.0 + 1e-12))
}

/// Grid resolution of the θ search.
const THETA_STEPS: usize = 2000;

/// For each θ on a grid over `[0, p)`, take the smallest dominating `c`, and
/// keep the pair with the largest resulting bound `c⁻¹(1 - θ/p)`.
pub fn fit_dominating(stats: &PathPairStats, p: f64) -> Result<GeometricFit> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid("p", format!("{p} not in (0, 1]")));
    }
    if stats.pairs == 0 {
        return Err(invalid("stats", "no sampled pairs"));
    }
    let mass = stats.mass();
    let mut best: Option<(f64, GeometricFit)> = None;
    for i in 0..THETA_STEPS {
        let theta = p * i as f64 / THETA_STEPS as f64;
        let c = dominating_c(&mass, theta);
        if !c.is_finite() {
            continue;
        }
        let bound = (1.0 - theta / p) / c;
        if best.is_none_or(|(b, _)| bound > b) {
            best = Some((bound, GeometricFit { c, theta }));
        }
    }
    let (_, fit) = best.expect("some theta > 0 always gives a finite c");
    debug_assert!(certify(stats, &fit));
    Ok(fit)
}

/// `c⁻¹(1 - θ/p)`. With `clamp`, `θ >= p` yields 0 instead of an error.
pub fn eit_bound(fit: &GeometricFit, p: f64, clamp: bool) -> Result<f64> {
    check_probability("p", p)?;
    if !(fit.c > 0.0) {
        return Err(invalid("c", format!("{} must be positive", fit.c)));
    }
    if fit.theta < 0.0 {
        return Err(invalid("theta", format!("{} must be non-negative", fit.theta)));
    }
    if fit.theta >= p {
        if clamp {
            return Ok(0.0);
        }
        return Err(invalid("theta", format!("theta = {} must be below p = {p}", fit.theta)));
    }
    Ok((1.0 - fit.theta / p) / fit.c)
}

/// `(1 - (1 - p)^(1/m))^n`.
pub fn lss_bound(p: f64, n: u32, m: u32) -> Result<f64> {
    check_probability("p", p)?;
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    if m == 0 {
        return Err(invalid("m", "must be at least 1"));
    }
    Ok((1.0 - (1.0 - p).powf(1.0 / m as f64)).powi(n as i32))
}

/// One induced edge `[x, x·φ(s)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducedEdge {
    pub from: String,
    pub generator: String,
    /// Endpoint key; `None` if the image path leaves the ball.
    pub to: Option<String>,
    pub open: bool,
    pub lost: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducedConfig {
    pub edges: Vec<InducedEdge>,
    /// Longest image word: induced edges farther apart than twice this are
    /// functions of disjoint edge sets.
    pub block_radius: usize,
    pub lost: usize,
}

impl InducedConfig {
    pub fn open_fraction(&self, generator: &str) -> Option<f64> {
        let es: Vec<_> = self
            .edges
            .iter()
            .filter(|e| e.generator == generator && !e.lost)
            .collect();
        (!es.is_empty()).then(|| es.iter().filter(|e| e.open).count() as f64 / es.len() as f64)
    }
}

/// Induce a configuration for a second generating set: the edge from `x`
/// along a new generator `s` is open iff the path spelled by `word_map[s]`
/// from `x` is open in `cfg`. Give one generator per undirected edge class.
pub fn induced_config_across_generators(
    ball: &GraphBall,
    word_map: &[(String, Vec<String>)],
    cfg: &Configuration,
) -> Result<InducedConfig> {
    cfg.check_ball(ball)?;
    let fam = ball.family();
    let mut compiled = Vec::new();
    for (s, word) in word_map {
        if word.is_empty() {
            return Err(invalid("word_map", format!("empty word for {s}")));
        }
        let gens = word
            .iter()
            .map(|g| {
                fam.generator_index(g).ok_or_else(|| {
                    invalid("word_map", format!("{g} is not a generator of {}", fam.tag()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        compiled.push((s.clone(), gens));
    }
    let block_radius = compiled.iter().map(|(_, w)| w.len()).max().unwrap_or(0);
    let mut edges = Vec::new();
    for x in 0..ball.n_vertices() {
        for (s, word) in &compiled {
            let mut cur = x;
            let mut open = true;
            let mut lost = false;
            for &g in word {
                match ball.find(&fam.apply(ball.vertex(cur), g)) {
                    Some(nxt) => {
                        let e = ball.edge_between(cur, nxt).ok_or_else(|| {
                            Error::UnknownEdge(format!("{} -> {}", ball.vertex_key(cur), ball.vertex_key(nxt)))
                        })?;
                        open &= cfg.is_open(e);
                        cur = nxt;
                    }
                    None => {
                        lost = true;
                        break;
                    }
                }
            }
            edges.push(InducedEdge {
                from: ball.vertex_key(x),
                generator: s.clone(),
                to: (!lost).then(|| ball.vertex_key(cur)),
                open: open && !lost,
                lost,
            });
        }
    }
    let lost = edges.iter().filter(|e| e.lost).count();
    Ok(InducedConfig {
        edges,
        block_radius,
        lost,
    })
}

/// Edge keys of the ball path between two tree vertices (the unique path).
pub fn tree_path(ball: &GraphBall, x: usize, y: usize) -> Result<Vec<EdgeKey>> {
    ball.check_vertex(x)?;
    ball.check_vertex(y)?;
    let d = ball.bfs_distances_from(y);
    if d[x] == u32::MAX {
        return Err(Error::Unreachable(ball.vertex_key(y)));
    }
    let mut out = Vec::new();
    let mut cur = x;
    while cur != y {
        let &(w, e) = ball
            .adjacent(cur)
            .iter()
            .find(|&&(w, _)| d[w as usize] + 1 == d[cur])
            .expect("BFS predecessor exists");
        out.push(ball.edge_key(e as usize));
        cur = w as usize;
    }
    Ok(out)
}

/// Point mass on one path: every pair shares all of its edges.
pub fn point_mass_stats(target: String, path_len: usize) -> PathPairStats {
    PathPairStats::from_intersections(target, "point_mass".into(), [(path_len, true)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Family, GraphSpec};

    #[test]
    fn eit_direct_evaluation() {
        let b = eit_bound(&GeometricFit { c: 2.0, theta: 0.5 }, 0.75, false).unwrap();
        assert!((b - 1.0 / 6.0).abs() < 1e-15);
        assert!(eit_bound(&GeometricFit { c: 1.0, theta: 0.8 }, 0.75, false).is_err());
        assert_eq!(eit_bound(&GeometricFit { c: 1.0, theta: 0.8 }, 0.75, true).unwrap(), 0.0);
        let near = eit_bound(&GeometricFit { c: 1.0, theta: 0.75 - 1e-9 }, 0.75, false).unwrap();
        assert!(near < 1e-8);
        let one = eit_bound(&GeometricFit { c: 1.0, theta: 1e-12 }, 0.75, false).unwrap();
        assert!((one - 1.0).abs() < 1e-11);
    }

    #[test]
    fn lss_values() {
        assert!((lss_bound(0.37, 1, 1).unwrap() - 0.37).abs() < 1e-15);
        assert!((lss_bound(0.99, 1, 2).unwrap() - 0.9).abs() < 1e-12);
        assert!((lss_bound(0.99, 2, 1).unwrap() - 0.9801).abs() < 1e-12);
        assert!(lss_bound(1.2, 1, 1).is_err());
        assert!(lss_bound(0.5, 0, 1).is_err());
    }

    #[test]
    fn point_mass_fit_stays_below_path_probability() {
        for d in [1usize, 3, 5] {
            for p in [0.5, 0.7, 0.9] {
                let st = point_mass_stats("t".into(), d);
                let fit = fit_dominating(&st, p).unwrap();
                assert!(certify(&st, &fit));
                let bound = eit_bound(&fit, p, false).unwrap();
                assert!(bound <= p.powi(d as i32), "d={d} p={p} bound={bound}");
                // Optimum over θ is (d p / (d + 1))^d / (d + 1).
                let best = (d as f64 * p / (d as f64 + 1.0)).powi(d as i32) / (d as f64 + 1.0);
                assert!((bound - best).abs() < 1e-3 * best, "{bound} vs {best}");
            }
        }
    }

    #[test]
    fn tau_trivial_cases() {
        let b = GraphBall::build(&GraphSpec::new(Family::RegularTree { b: 3 }, 3)).unwrap();
        let same = tau_estimate(&b, &Process::Bernoulli { p: 0.3 }, 4, 4, 100, 0).unwrap();
        assert_eq!(same.estimate, 1.0);
        let zero = tau_estimate(&b, &Process::Bernoulli { p: 0.0 }, 0, 4, 100, 0).unwrap();
        assert_eq!(zero.estimate, 0.0);
        assert!(tau_estimate(&b, &Process::Bernoulli { p: 0.3 }, 0, 999, 100, 0).is_err());
    }

    #[test]
    fn canonical_pairs_rule() {
        let b = GraphBall::build(&GraphSpec::new(Family::Lattice { d: 2 }, 3)).unwrap();
        let pairs = canonical_pairs(&b, 2, 5);
        assert_eq!(pairs.len(), 5);
        for &(x, y) in &pairs {
            assert!(x < y && b.distance(x) <= 2 && b.distance(y) <= 2);
            assert_eq!(b.bfs_distances_from(x)[y], 2);
        }
        assert!(pairs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn induced_identity_and_full() {
        let b = GraphBall::build(&GraphSpec::new(Family::Lattice { d: 2 }, 3)).unwrap();
        let cfg = crate::percolation::sample_bernoulli(&b, 0.5, CouplingSeed::new(1, 0)).unwrap();
        let map = vec![
            ("e1+".to_string(), vec!["e1+".to_string()]),
            ("e2+".to_string(), vec!["e2+".to_string()]),
        ];
        let ind = induced_config_across_generators(&b, &map, &cfg).unwrap();
        assert_eq!(ind.block_radius, 1);
        for ie in ind.edges.iter().filter(|e| !e.lost) {
            let x = b.find_key(&ie.from).unwrap();
            let y = b.find_key(ie.to.as_ref().unwrap()).unwrap();
            assert_eq!(ie.open, cfg.is_open(b.edge_between(x, y).unwrap()));
        }
        assert_eq!(ind.edges.len() - ind.lost, b.n_edges());
        let full = induced_config_across_generators(&b, &map, &Configuration::full(&b)).unwrap();
        assert!(full.edges.iter().all(|e| e.open || e.lost));
    }
}
