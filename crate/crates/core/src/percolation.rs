//! Coupled Bernoulli sampling, edge surgery, cluster coloring and the
//! derived processes built on top of the standard coupling.

use std::fmt::Write as _;

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{decompose_states, ClusterDecomposition};
use crate::error::{check_probability, invalid, Error, Result};
use crate::graph::{edge_digest, EdgeKey, Family, GraphBall};
use crate::rng::{Stream, StreamKey};
use crate::stats::EstimateWithCI;

/// Upper limit on the slab process parameter.
pub const SLAB_EPS_MAX: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CouplingSeed {
    pub seed: u64,
    pub sample: u64,
}

impl CouplingSeed {
    pub fn new(seed: u64, sample: u64) -> Self {
        CouplingSeed { seed, sample }
    }

    pub fn stream(&self, stream: Stream) -> StreamKey {
        StreamKey::new(self.seed, self.sample, stream)
    }
}

/// Edge label `U(e)` of the standard coupling.
pub fn edge_value(seed: CouplingSeed, e: &EdgeKey) -> f64 {
    seed.stream(Stream::EdgeLabel).unit(e.digest())
}

/// Anything that can say whether a ball edge is open.
pub trait EdgeStates {
    fn is_open(&self, e: usize) -> bool;
}

/// Bernoulli(p) evaluated on demand from the edge labels.
#[derive(Clone, Copy)]
pub struct LazyBernoulli<'a> {
    digests: &'a [u64],
    key: StreamKey,
    p: f64,
}

impl<'a> LazyBernoulli<'a> {
    pub fn new(ball: &'a GraphBall, p: f64, seed: CouplingSeed) -> Self {
        LazyBernoulli {
            digests: ball.digests(),
            key: seed.stream(Stream::EdgeLabel),
            p,
        }
    }
}

impl EdgeStates for LazyBernoulli<'_> {
    #[inline]
    fn is_open(&self, e: usize) -> bool {
        self.key.unit(self.digests[e]) < self.p
    }
}

/// The processes the engine can sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum Process {
    Bernoulli { p: f64 },
    /// Bernoulli(p) on the 3-regular tree with half of the clusters, chosen
    /// by a fair per-cluster coin, thinned by an independent Bernoulli(p').
    Delet { p: f64, p_prime: f64 },
    /// Bernoulli(1/2) on the lattice fibers of a product graph, united with
    /// Bernoulli(eps) on every edge.
    Fiber { eps: f64 },
    /// The three-layer slab construction on Z^3.
    Slab { eps: f64 },
}

impl Process {
    pub fn tag(&self) -> &'static str {
        match self {
            Process::Bernoulli { .. } => "bernoulli",
            Process::Delet { .. } => "delet",
            Process::Fiber { .. } => "fiber",
            Process::Slab { .. } => "slab",
        }
    }

    /// Parameter checks that do not need a ball.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Process::Bernoulli { p } => check_probability("p", p),
            Process::Delet { p, p_prime } => check_delet(p, p_prime),
            Process::Fiber { eps } => check_probability("eps", eps),
            Process::Slab { eps } => check_slab(eps),
        }
    }

    pub fn sample(&self, ball: &GraphBall, seed: CouplingSeed) -> Result<Configuration> {
        match *self {
            Process::Bernoulli { p } => sample_bernoulli(ball, p, seed),
            Process::Delet { p, p_prime } => delet_process(ball, p, p_prime, seed),
            Process::Fiber { eps } => fiber_process(ball, eps, seed),
            Process::Slab { eps } => slab_process(ball, eps, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surgery {
    pub edge: String,
    pub open: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Sampled {
        #[serde(flatten)]
        process: Process,
        seed: CouplingSeed,
    },
    /// A sampled configuration followed by single-edge surgeries. No longer a
    /// sample of the original process.
    Surgered {
        base: Box<Provenance>,
        log: Vec<Surgery>,
    },
    Manual,
}

/// A set of open edges over one ball.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    ball_fingerprint: u64,
    open: FixedBitSet,
    provenance: Provenance,
}

impl EdgeStates for Configuration {
    #[inline]
    fn is_open(&self, e: usize) -> bool {
        self.open.contains(e)
    }
}

impl Configuration {
    pub fn from_bits(ball: &GraphBall, open: FixedBitSet, provenance: Provenance) -> Self {
        assert_eq!(open.len(), ball.n_edges(), "bitmap length must equal edge count");
        Configuration {
            ball_fingerprint: ball.fingerprint(),
            open,
            provenance,
        }
    }

    pub fn from_fn(ball: &GraphBall, provenance: Provenance, f: impl Fn(usize) -> bool) -> Self {
        let mut open = FixedBitSet::with_capacity(ball.n_edges());
        for e in 0..ball.n_edges() {
            if f(e) {
                open.insert(e);
            }
        }
        Configuration::from_bits(ball, open, provenance)
    }

    pub fn empty(ball: &GraphBall) -> Self {
        Configuration::from_fn(ball, Provenance::Manual, |_| false)
    }

    pub fn full(ball: &GraphBall) -> Self {
        Configuration::from_fn(ball, Provenance::Manual, |_| true)
    }

    pub fn from_open_edges(ball: &GraphBall, edges: impl IntoIterator<Item = usize>) -> Self {
        let mut open = FixedBitSet::with_capacity(ball.n_edges());
        for e in edges {
            open.insert(e);
        }
        Configuration::from_bits(ball, open, Provenance::Manual)
    }

    pub fn bits(&self) -> &FixedBitSet {
        &self.open
    }

    pub fn len(&self) -> usize {
        self.open.len()
    }

    pub fn is_empty(&self) -> bool {
        self.open.is_empty()
    }

    pub fn n_open(&self) -> usize {
        self.open.count_ones(..)
    }

    pub fn open_edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.open.ones()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn belongs_to(&self, ball: &GraphBall) -> bool {
        self.ball_fingerprint == ball.fingerprint() && self.open.len() == ball.n_edges()
    }

    pub fn check_ball(&self, ball: &GraphBall) -> Result<()> {
        if self.belongs_to(ball) {
            Ok(())
        } else {
            Err(Error::BallMismatch)
        }
    }

    /// Rebuild a configuration from its provenance record.
    pub fn regenerate(ball: &GraphBall, provenance: &Provenance) -> Result<Configuration> {
        match provenance {
            Provenance::Sampled { process, seed } => process.sample(ball, *seed),
            Provenance::Surgered { base, log } => {
                let mut cfg = Configuration::regenerate(ball, base)?;
                for s in log {
                    let e = ball.find_edge(&parse_edge_key(&s.edge)?)?;
                    cfg = set_edge(ball, &cfg, e, s.open)?;
                }
                Ok(cfg)
            }
            Provenance::Manual => Err(invalid(
                "provenance",
                "manual configurations cannot be regenerated",
            )),
        }
    }

    /// Provenance header line followed by one open edge key per line.
    pub fn export(&self, ball: &GraphBall) -> String {
        let mut out = String::new();
        let header = serde_json::to_string(&self.provenance).expect("provenance serializes");
        writeln!(out, "# {header}").expect("write to string");
        for e in self.open_edges() {
            writeln!(out, "{}", ball.edge_key(e)).expect("write to string");
        }
        out
    }
}

pub fn parse_edge_key(s: &str) -> Result<EdgeKey> {
    let parts: Vec<&str> = s.split('\t').collect();
    if parts.len() != 3 {
        return Err(Error::UnknownEdge(s.to_string()));
    }
    Ok(EdgeKey::new(
        crate::graph::Vertex::parse(parts[0])?,
        crate::graph::Vertex::parse(parts[1])?,
        parts[2],
    ))
}

pub fn sample_bernoulli(ball: &GraphBall, p: f64, seed: CouplingSeed) -> Result<Configuration> {
    check_probability("p", p)?;
    let lazy = LazyBernoulli::new(ball, p, seed);
    Ok(Configuration::from_fn(
        ball,
        Provenance::Sampled {
            process: Process::Bernoulli { p },
            seed,
        },
        |e| lazy.is_open(e),
    ))
}

fn set_edge(ball: &GraphBall, cfg: &Configuration, e: usize, open: bool) -> Result<Configuration> {
    cfg.check_ball(ball)?;
    if e >= ball.n_edges() {
        return Err(Error::UnknownEdge(format!("edge index {e}")));
    }
    let mut bits = cfg.open.clone();
    bits.set(e, open);
    let surgery = Surgery {
        edge: ball.edge_key(e).to_string(),
        open,
    };
    let provenance = match &cfg.provenance {
        Provenance::Surgered { base, log } => {
            let mut log = log.clone();
            log.push(surgery);
            Provenance::Surgered {
                base: base.clone(),
                log,
            }
        }
        Provenance::Manual => Provenance::Manual,
        sampled => Provenance::Surgered {
            base: Box::new(sampled.clone()),
            log: vec![surgery],
        },
    };
    Ok(Configuration::from_bits(ball, bits, provenance))
}

/// Force edge `e` open.
pub fn insert_edge(ball: &GraphBall, cfg: &Configuration, e: &EdgeKey) -> Result<Configuration> {
    set_edge(ball, cfg, ball.find_edge(e)?, true)
}

/// Force edge `e` closed.
pub fn delete_edge(ball: &GraphBall, cfg: &Configuration, e: &EdgeKey) -> Result<Configuration> {
    set_edge(ball, cfg, ball.find_edge(e)?, false)
}

pub fn insert_edge_index(ball: &GraphBall, cfg: &Configuration, e: usize) -> Result<Configuration> {
    set_edge(ball, cfg, e, true)
}

pub fn delete_edge_index(ball: &GraphBall, cfg: &Configuration, e: usize) -> Result<Configuration> {
    set_edge(ball, cfg, e, false)
}

/// Per-cluster colors. Each cluster's color is a uniform draw keyed by its
/// least vertex index, so colors of distinct clusters are independent.
#[derive(Clone, Debug)]
pub struct ColoredConfig {
    pub config: Configuration,
    pub decomposition: ClusterDecomposition,
    /// Uniform `[0, 1)` color per cluster.
    pub colors: Vec<f64>,
    /// `floor(color * k)` per cluster.
    pub palette: Vec<u32>,
    pub palette_size: u32,
}

impl ColoredConfig {
    pub fn vertex_color(&self, v: usize) -> u32 {
        self.palette[self.decomposition.cluster_of[v] as usize]
    }

    pub fn vertex_color_value(&self, v: usize) -> f64 {
        self.colors[self.decomposition.cluster_of[v] as usize]
    }
}

fn cluster_colors(dec: &ClusterDecomposition, k: u32, seed: CouplingSeed) -> (Vec<f64>, Vec<u32>) {
    let key = seed.stream(Stream::ClusterColor);
    let colors: Vec<f64> = dec
        .clusters
        .iter()
        .map(|c| key.unit(c.least_vertex as u64))
        .collect();
    let palette = colors
        .iter()
        .map(|&u| ((u * k as f64) as u32).min(k - 1))
        .collect();
    (colors, palette)
}

pub fn color_clusters(
    ball: &GraphBall,
    cfg: &Configuration,
    k: u32,
    seed: CouplingSeed,
) -> Result<ColoredConfig> {
    if k == 0 {
        return Err(invalid("k", "palette size must be at least 1"));
    }
    cfg.check_ball(ball)?;
    let decomposition = decompose_states(ball, cfg);
    let (colors, palette) = cluster_colors(&decomposition, k, seed);
    Ok(ColoredConfig {
        config: cfg.clone(),
        decomposition,
        colors,
        palette,
        palette_size: k,
    })
}

fn check_delet(p: f64, p_prime: f64) -> Result<()> {
    if !(p > 0.5 && p < 1.0) {
        return Err(invalid("p", format!("{p} not in (1/2, 1)")));
    }
    let lo = 1.0 / (2.0 * p);
    if !(p_prime > lo && p_prime <= 1.0) {
        return Err(invalid(
            "p_prime",
            format!("{p_prime} not in (1/(2p), 1] = ({lo}, 1]"),
        ));
    }
    Ok(())
}

/// The per-cluster thinning decision of the delet process, exposed so
/// callers can label clusters as thinned or not.
pub struct DeletSample {
    pub config: Configuration,
    /// Decomposition of the Bernoulli(p) configuration before thinning.
    pub base: ClusterDecomposition,
    /// Per base cluster: was it thinned?
    pub thinned: Vec<bool>,
}

pub fn delet_sample(ball: &GraphBall, p: f64, p_prime: f64, seed: CouplingSeed) -> Result<DeletSample> {
    if *ball.family() != (Family::RegularTree { b: 3 }) {
        return Err(Error::WrongFamily {
            expected: "regular_tree(3)",
            got: ball.family().tag(),
        });
    }
    check_delet(p, p_prime)?;
    let lazy = LazyBernoulli::new(ball, p, seed);
    let base = decompose_states(ball, &lazy);
    let (_, coins) = cluster_colors(&base, 2, seed);
    let thinned: Vec<bool> = coins.iter().map(|&c| c == 1).collect();
    let thin = seed.stream(Stream::Thinning);
    let digests = ball.digests();
    let config = Configuration::from_fn(
        ball,
        Provenance::Sampled {
            process: Process::Delet { p, p_prime },
            seed,
        },
        |e| {
            if !lazy.is_open(e) {
                return false;
            }
            let c = base.cluster_of[ball.edge(e).u as usize] as usize;
            !thinned[c] || thin.unit(digests[e]) < p_prime
        },
    );
    Ok(DeletSample {
        config,
        base,
        thinned,
    })
}

pub fn delet_process(ball: &GraphBall, p: f64, p_prime: f64, seed: CouplingSeed) -> Result<Configuration> {
    Ok(delet_sample(ball, p, p_prime, seed)?.config)
}

fn is_fiber_ball(f: &Family) -> bool {
    matches!(f, Family::Product { left, right }
        if **left == Family::FreeGroup { k: 2 } && **right == Family::Lattice { d: 2 })
}

/// Is edge `e` of a product ball an edge of a lattice fiber?
pub fn is_fiber_edge(ball: &GraphBall, e: usize) -> bool {
    ball.edge_label(e).starts_with("R:")
}

pub fn fiber_process(ball: &GraphBall, eps: f64, seed: CouplingSeed) -> Result<Configuration> {
    if !is_fiber_ball(ball.family()) {
        return Err(Error::WrongFamily {
            expected: "product(free_group(2), lattice(2))",
            got: ball.family().tag(),
        });
    }
    check_probability("eps", eps)?;
    let half = seed.stream(Stream::EdgeLabel);
    let extra = seed.stream(Stream::FiberExtra);
    let digests = ball.digests();
    Ok(Configuration::from_fn(
        ball,
        Provenance::Sampled {
            process: Process::Fiber { eps },
            seed,
        },
        |e| {
            (is_fiber_edge(ball, e) && half.unit(digests[e]) < 0.5) || extra.unit(digests[e]) < eps
        },
    ))
}

fn check_slab(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < SLAB_EPS_MAX {
        Ok(())
    } else {
        Err(invalid("eps", format!("{eps} not in (0, {SLAB_EPS_MAX})")))
    }
}

/// Slab coin `a(x1)` of the slab process.
pub fn slab_coin(seed: CouplingSeed, x1: i64) -> bool {
    seed.stream(Stream::SlabCoin).bits(x1 as u64) & 1 == 1
}

pub fn slab_process(ball: &GraphBall, eps: f64, seed: CouplingSeed) -> Result<Configuration> {
    let fam = ball.family();
    if *fam != (Family::Lattice { d: 3 }) {
        return Err(Error::WrongFamily {
            expected: "lattice(3)",
            got: fam.tag(),
        });
    }
    check_slab(eps)?;
    let z = seed.stream(Stream::EdgeLabel);
    let gens = fam.generators();
    let x1 = |v: &crate::graph::Vertex| match v {
        crate::graph::Vertex::Lattice(xs) => xs[0],
        _ => unreachable!("lattice vertices"),
    };
    let in_a: Vec<bool> = ball
        .vertices()
        .iter()
        .map(|v| slab_coin(seed, x1(v)))
        .collect();
    // Touched by the eps layer, including edges that leave the ball.
    let touched: Vec<bool> = ball
        .vertices()
        .iter()
        .map(|v| {
            gens.iter().enumerate().any(|(g, gen)| {
                let w = fam.apply(v, g);
                z.unit(edge_digest(v, &w, &gen.edge_label)) < eps
            })
        })
        .collect();
    let digests = ball.digests();
    Ok(Configuration::from_fn(
        ball,
        Provenance::Sampled {
            process: Process::Slab { eps },
            seed,
        },
        |e| {
            let ed = ball.edge(e);
            let (u, v) = (ed.u as usize, ed.v as usize);
            let ze = z.unit(digests[e]);
            let layer1 = in_a[u] && in_a[v] && ze < 1.0 - eps;
            let layer2 = ze < eps;
            let layer3 = !in_a[u] && !in_a[v] && !touched[u] && !touched[v] && ze < 1.0 - eps;
            layer1 || layer2 || layer3
        },
    ))
}

/// Conditional probability that one edge is open, bucketed by the states of
/// the edges sharing an endpoint with it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginalEstimate {
    pub edge: String,
    /// Unconditional `P[e open]`.
    pub overall: EstimateWithCI,
    pub buckets: Vec<MarginalBucket>,
    /// Number of buckets below the minimum sample size.
    pub flagged: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginalBucket {
    /// Neighbor edge states in ball edge-index order, `1` = open.
    pub pattern: String,
    pub estimate: EstimateWithCI,
    pub insufficient: bool,
}

/// Buckets with fewer samples are reported but flagged.
pub const MIN_BUCKET_SAMPLES: u64 = 30;

pub fn conditional_marginal_estimate(
    ball: &GraphBall,
    process: &Process,
    e: &EdgeKey,
    n: u64,
    seed: u64,
) -> Result<MarginalEstimate> {
    if n < 100 {
        return Err(invalid("n", format!("{n} samples; at least 100 required")));
    }
    process.validate()?;
    let e = ball.find_edge(e)?;
    let ed = ball.edge(e);
    let mut nbrs: Vec<usize> = ball
        .adjacent(ed.u as usize)
        .iter()
        .chain(ball.adjacent(ed.v as usize))
        .map(|&(_, f)| f as usize)
        .filter(|&f| f != e)
        .collect();
    nbrs.sort_unstable();
    nbrs.dedup();
    let draws: Vec<(String, bool)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let cfg = process.sample(ball, CouplingSeed::new(seed, s))?;
            let pattern: String = nbrs
                .iter()
                .map(|&f| if cfg.is_open(f) { '1' } else { '0' })
                .collect();
            Ok((pattern, cfg.is_open(e)))
        })
        .collect::<Result<_>>()?;
    let mut tally: std::collections::BTreeMap<String, (u64, u64)> = Default::default();
    let mut total_open = 0;
    for (pat, open) in draws {
        let t = tally.entry(pat).or_default();
        t.1 += 1;
        if open {
            t.0 += 1;
            total_open += 1;
        }
    }
    let buckets: Vec<MarginalBucket> = tally
        .into_iter()
        .map(|(pattern, (k, m))| MarginalBucket {
            pattern,
            estimate: EstimateWithCI::proportion(k, m, seed),
            insufficient: m < MIN_BUCKET_SAMPLES,
        })
        .collect();
    Ok(MarginalEstimate {
        edge: ball.edge_key(e).to_string(),
        overall: EstimateWithCI::proportion(total_open, n, seed),
        flagged: buckets.iter().filter(|b| b.insufficient).count(),
        buckets,
    })
}
