//! The operations a config can name, their parameters, and how each turns
//! into a JSON payload.

use percolab_core::cluster::{cluster_pc_estimate, decompose, find_pivotal_edges};
use percolab_core::connectivity::{
    canonical_pairs, certify, decay_scan, eit_bound, fit_dominating, point_mass_stats, tau_estimate, tree_path,
};
use percolab_core::graph::{Family, GraphBall, Vertex};
use percolab_core::invariance::{
    indistinguishability_test, mtp_check, phases_experiment, uniqueness_monotonicity_check, ClusterStatistic,
    IndistParams, TransportKernel, Verdict,
};
use percolab_core::percolation::{conditional_marginal_estimate, parse_edge_key, CouplingSeed, Process};
use percolab_core::stats::EstimateWithCI;
use percolab_core::walks::{stationarity_check, WalkStatistic};
use percolab_core::wreath::lamplighter_pair_stats;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Operation {
    OpenFraction,
    TauEstimate {
        /// Vertex key; the origin when absent.
        #[serde(default)]
        x: Option<String>,
        #[serde(default)]
        y: Option<String>,
        /// Picks the first canonical pair at this distance instead of `x, y`.
        #[serde(default)]
        distance: Option<u32>,
    },
    DecayScan {
        distances: Vec<u32>,
        #[serde(default = "one")]
        pairs: usize,
    },
    SpanningClusterCount,
    ClusterSummary,
    PivotalEdges,
    ConditionalMarginal {
        /// Edge key: endpoint keys and generator label, tab separated.
        edge: String,
    },
    ClusterPc {
        /// Retention grid `i / grid_points` for `0 < i < grid_points`.
        #[serde(default = "hundred")]
        grid_points: usize,
    },
    Stationarity {
        statistic: String,
        #[serde(default)]
        cap: Option<usize>,
        t1: usize,
        t2: usize,
    },
    Indistinguishability {
        statistic: String,
        #[serde(default)]
        inner_radius: Option<u32>,
        #[serde(default)]
        branch_depth: Option<u32>,
        #[serde(default)]
        pc_thinnings: Option<u64>,
        #[serde(default)]
        walks_per_cluster: Option<usize>,
        #[serde(default)]
        walk_steps: Option<usize>,
        #[serde(default)]
        min_multi_samples: Option<u64>,
    },
    Uniqueness {
        p2: f64,
    },
    MassTransport {
        kernel: String,
        #[serde(default)]
        offset: Option<Vec<i64>>,
        #[serde(default)]
        shell: Option<u32>,
        #[serde(default)]
        min_degree: Option<usize>,
        #[serde(default)]
        origin: Option<String>,
    },
    SecondMomentBound {
        target: String,
        #[serde(default)]
        clamp: bool,
    },
    Phases {
        eps: Vec<f64>,
    },
}

fn one() -> usize {
    1
}

fn hundred() -> usize {
    100
}

pub struct OpInfo {
    pub name: &'static str,
    pub params: &'static str,
    pub summary: &'static str,
}

/// `run.n` is the sample count unless a summary says otherwise.
pub const OPERATIONS: [OpInfo; 14] = [
    OpInfo {
        name: "open_fraction",
        params: "",
        summary: "mean fraction of open edges",
    },
    OpInfo {
        name: "tau_estimate",
        params: "x?, y? | distance",
        summary: "probability that x and y share a cluster",
    },
    OpInfo {
        name: "decay_scan",
        params: "distances, pairs=1",
        summary: "connectivity at each distance over canonical pairs; writes a CSV table",
    },
    OpInfo {
        name: "spanning_cluster_count",
        params: "",
        summary: "spanning clusters per sample and the probability the origin's cluster spans",
    },
    OpInfo {
        name: "cluster_summary",
        params: "",
        summary: "mean cluster count, largest cluster and origin cluster size",
    },
    OpInfo {
        name: "pivotal_edges",
        params: "",
        summary: "mean number of closed edges whose insertion merges two spanning clusters",
    },
    OpInfo {
        name: "conditional_marginal",
        params: "edge",
        summary: "probability the edge is open given its neighborhood pattern",
    },
    OpInfo {
        name: "cluster_pc",
        params: "grid_points=100",
        summary: "sub-percolation curve of the largest spanning cluster of one sample; n thinnings",
    },
    OpInfo {
        name: "stationarity",
        params: "statistic, cap?, t1, t2",
        summary: "compares a walk observable at two times; n walks",
    },
    OpInfo {
        name: "indistinguishability",
        params: "statistic, inner_radius?, branch_depth?, pc_thinnings?, walks_per_cluster?, walk_steps?, min_multi_samples?",
        summary: "tests whether spanning clusters of one sample differ in a statistic",
    },
    OpInfo {
        name: "uniqueness",
        params: "p2",
        summary: "fraction of level-p2 clusters containing a level-p spanning cluster (bernoulli only)",
    },
    OpInfo {
        name: "mass_transport",
        params: "kernel, offset?, shell?, min_degree?, origin?",
        summary: "exact mass sent and received at a vertex; n is unused",
    },
    OpInfo {
        name: "second_moment_bound",
        params: "target, clamp=false",
        summary: "geometric fit of path intersections and the resulting connectivity bound; n path pairs",
    },
    OpInfo {
        name: "phases",
        params: "eps",
        summary: "spanning cluster histograms of the fiber process on free_group(2) x lattice(2)",
    },
];

/// What an operation hands back to the runner.
pub struct OpOutput {
    pub payload: Value,
    pub table: Option<String>,
    /// The operation ran but could not reach a verdict.
    pub inconclusive: bool,
}

impl OpOutput {
    fn payload(payload: Value) -> Self {
        OpOutput {
            payload,
            table: None,
            inconclusive: false,
        }
    }
}

fn op_err(e: percolab_core::Error) -> CliError {
    CliError::from_core("operation", e)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

fn vertex(ball: &GraphBall, field: &str, key: &str) -> Result<usize> {
    ball.find_key(key)
        .map_err(|e| CliError::validation(format!("operation.{field}"), e.to_string()))
}

fn bernoulli_p(process: &Process, op: &str) -> Result<f64> {
    match *process {
        Process::Bernoulli { p } => Ok(p),
        _ => Err(CliError::validation(
            "process.process",
            format!("{op} needs the bernoulli process"),
        )),
    }
}

fn walk_statistic(name: &str, cap: Option<usize>) -> Result<WalkStatistic> {
    let path = "operation.statistic";
    let stat = match name {
        "moved" => WalkStatistic::Moved,
        "open_degree" => WalkStatistic::OpenDegree,
        "cluster_size" => WalkStatistic::ClusterSize { cap: cap.unwrap_or(200) },
        "distance_from_origin" => WalkStatistic::DistanceFromOrigin,
        other => {
            return Err(CliError::validation(
                path,
                format!("unknown statistic `{other}` (moved, open_degree, cluster_size, distance_from_origin)"),
            ))
        }
    };
    if cap.is_some() && !matches!(stat, WalkStatistic::ClusterSize { .. }) {
        return Err(CliError::validation("operation.cap", "only cluster_size takes a cap"));
    }
    Ok(stat)
}

fn phases_family() -> Family {
    Family::Product {
        left: Box::new(Family::FreeGroup { k: 2 }),
        right: Box::new(Family::Lattice { d: 2 }),
    }
}

/// Runs `f` on samples `0..n` in parallel; results stay in sample order.
fn per_sample<T: Send>(n: u64, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(|i| f(i)).collect()
}

impl Operation {
    pub fn name(&self) -> &'static str {
        match self {
            Operation::OpenFraction => "open_fraction",
            Operation::TauEstimate { .. } => "tau_estimate",
            Operation::DecayScan { .. } => "decay_scan",
            Operation::SpanningClusterCount => "spanning_cluster_count",
            Operation::ClusterSummary => "cluster_summary",
            Operation::PivotalEdges => "pivotal_edges",
            Operation::ConditionalMarginal { .. } => "conditional_marginal",
            Operation::ClusterPc { .. } => "cluster_pc",
            Operation::Stationarity { .. } => "stationarity",
            Operation::Indistinguishability { .. } => "indistinguishability",
            Operation::Uniqueness { .. } => "uniqueness",
            Operation::MassTransport { .. } => "mass_transport",
            Operation::SecondMomentBound { .. } => "second_moment_bound",
            Operation::Phases { .. } => "phases",
        }
    }

    /// Parameter checks that need the ball but no sampling.
    pub fn check(&self, ball: &GraphBall, process: &Process) -> Result<()> {
        match self {
            Operation::TauEstimate { x, y, distance } => {
                if let Some(x) = x {
                    vertex(ball, "x", x)?;
                }
                match (y, distance) {
                    (Some(y), None) => {
                        vertex(ball, "y", y)?;
                    }
                    (None, Some(d)) => {
                        if x.is_some() {
                            return Err(CliError::validation("operation.x", "not used with `distance`"));
                        }
                        if canonical_pairs(ball, *d, 1).is_empty() {
                            return Err(CliError::validation(
                                "operation.distance",
                                format!("no pair at distance {d} inside radius {}", ball.radius()),
                            ));
                        }
                    }
                    _ => return Err(CliError::validation("operation.y", "give exactly one of `y` and `distance`")),
                }
            }
            Operation::DecayScan { distances, pairs } => {
                if distances.is_empty() {
                    return Err(CliError::validation("operation.distances", "must not be empty"));
                }
                if *pairs == 0 {
                    return Err(CliError::validation("operation.pairs", "must be at least 1"));
                }
            }
            Operation::ConditionalMarginal { edge } => {
                let key = parse_edge_key(edge)
                    .map_err(|e| CliError::validation("operation.edge", e.to_string()))?;
                ball.find_edge(&key)
                    .map_err(|e| CliError::validation("operation.edge", e.to_string()))?;
            }
            Operation::ClusterPc { grid_points } => {
                if *grid_points < 2 {
                    return Err(CliError::validation("operation.grid_points", "must be at least 2"));
                }
            }
            Operation::Stationarity { statistic, cap, t1, t2 } => {
                walk_statistic(statistic, *cap)?;
                if t1 >= t2 {
                    return Err(CliError::validation("operation.t1", "must be below t2"));
                }
            }
            Operation::Indistinguishability { statistic, .. } => {
                ClusterStatistic::parse(statistic).map_err(op_err)?;
            }
            Operation::Uniqueness { p2 } => {
                let p1 = bernoulli_p(process, "uniqueness")?;
                if !(*p2 > 0.0 && *p2 <= 1.0) || *p2 < p1 {
                    return Err(CliError::validation(
                        "operation.p2",
                        format!("{p2} must lie in [p, 1] with p = {p1}"),
                    ));
                }
            }
            Operation::MassTransport { origin, .. } => {
                if let Some(o) = origin {
                    vertex(ball, "origin", o)?;
                }
                self.kernel_shape()?;
            }
            Operation::SecondMomentBound { target, .. } => {
                bernoulli_p(process, "second_moment_bound")?;
                match ball.family() {
                    Family::Lamplighter { .. } | Family::RegularTree { .. } => {}
                    other => {
                        return Err(CliError::validation(
                            "graph.family",
                            format!("second_moment_bound runs on lamplighter or regular_tree, got {}", other.tag()),
                        ))
                    }
                }
                vertex(ball, "target", target)?;
            }
            Operation::Phases { eps } => {
                if eps.is_empty() {
                    return Err(CliError::validation("operation.eps", "must not be empty"));
                }
                if *ball.family() != phases_family() {
                    return Err(CliError::validation(
                        "graph.family",
                        format!("phases runs on {}", phases_family().tag()),
                    ));
                }
            }
            Operation::OpenFraction
            | Operation::SpanningClusterCount
            | Operation::ClusterSummary
            | Operation::PivotalEdges => {}
        }
        Ok(())
    }

    /// Kernel named by a mass_transport operation, without its sampled
    /// configuration.
    fn kernel_shape(&self) -> Result<KernelShape> {
        let Operation::MassTransport {
            kernel,
            offset,
            shell,
            min_degree,
            ..
        } = self
        else {
            unreachable!("only mass_transport names a kernel")
        };
        let unused = |field: &str, present: bool| -> Result<()> {
            if present {
                Err(CliError::validation(
                    format!("operation.{field}"),
                    format!("not used by kernel `{kernel}`"),
                ))
            } else {
                Ok(())
            }
        };
        let needs = |field: &str| CliError::validation(format!("operation.{field}"), format!("kernel `{kernel}` needs it"));
        let shape = match kernel.as_str() {
            "zero" => KernelShape::Zero,
            "offset" => KernelShape::Offset(offset.clone().ok_or_else(|| needs("offset"))?),
            "distance_shell" => KernelShape::Shell(shell.ok_or_else(|| needs("shell"))?),
            "nearest_target" => KernelShape::NearestTarget(min_degree.ok_or_else(|| needs("min_degree"))?),
            "to_parent" => KernelShape::ToParent,
            "to_child" => KernelShape::ToChild,
            "to_parent_or_child" => KernelShape::ToParentOrChild,
            other => {
                return Err(CliError::validation(
                    "operation.kernel",
                    format!(
                        "unknown kernel `{other}` (zero, offset, distance_shell, nearest_target, to_parent, to_child, to_parent_or_child)"
                    ),
                ))
            }
        };
        unused("offset", offset.is_some() && !matches!(shape, KernelShape::Offset(_)))?;
        unused("shell", shell.is_some() && !matches!(shape, KernelShape::Shell(_)))?;
        unused("min_degree", min_degree.is_some() && !matches!(shape, KernelShape::NearestTarget(_)))?;
        Ok(shape)
    }

    pub fn execute(&self, ball: &GraphBall, process: &Process, n: u64, seed: u64) -> Result<OpOutput> {
        let sample = |i: u64| process.sample(ball, CouplingSeed::new(seed, i)).map_err(op_err);
        let out = match self {
            Operation::OpenFraction => {
                let m = ball.n_edges().max(1) as f64;
                let fractions = per_sample(n, |i| Ok(sample(i)?.n_open() as f64 / m))?;
                OpOutput::payload(json!({ "open_fraction": EstimateWithCI::mean(&fractions, seed) }))
            }
            Operation::TauEstimate { x, y, distance } => {
                let (x, y) = match (y, distance) {
                    (_, Some(d)) => canonical_pairs(ball, *d, 1)[0],
                    (Some(y), None) => {
                        let x = x.as_deref().map_or(Ok(0), |k| vertex(ball, "x", k))?;
                        (x, vertex(ball, "y", y)?)
                    }
                    (None, None) => unreachable!("checked before execution"),
                };
                let est = tau_estimate(ball, process, x, y, n, seed).map_err(op_err)?;
                OpOutput::payload(json!({
                    "x": ball.vertex_key(x),
                    "y": ball.vertex_key(y),
                    "estimate": est,
                }))
            }
            Operation::DecayScan { distances, pairs } => {
                let table = decay_scan(ball, process, distances, *pairs, n, seed).map_err(op_err)?;
                OpOutput {
                    table: Some(table.to_csv()),
                    ..OpOutput::payload(to_value(&table))
                }
            }
            Operation::SpanningClusterCount => {
                let rows = per_sample(n, |i| {
                    let dec = decompose(ball, &sample(i)?).map_err(op_err)?;
                    Ok((dec.spanning_count(), dec.clusters[dec.cluster_of(0) as usize].spanning))
                })?;
                let counts: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
                let multi = rows.iter().filter(|r| r.0 >= 2).count() as u64;
                let origin = rows.iter().filter(|r| r.1).count() as u64;
                OpOutput::payload(json!({
                    "mean_spanning_clusters": EstimateWithCI::mean(&counts, seed),
                    "multiple_spanning": EstimateWithCI::proportion(multi, n, seed),
                    "spanning_probability": EstimateWithCI::proportion(origin, n, seed),
                }))
            }
            Operation::ClusterSummary => {
                let rows = per_sample(n, |i| {
                    let dec = decompose(ball, &sample(i)?).map_err(op_err)?;
                    let largest = dec.clusters[dec.largest() as usize].size as f64;
                    let origin = dec.clusters[dec.cluster_of(0) as usize].size as f64;
                    Ok([dec.len() as f64, largest, origin])
                })?;
                let column = |k: usize| -> Vec<f64> { rows.iter().map(|r| r[k]).collect() };
                OpOutput::payload(json!({
                    "clusters": EstimateWithCI::mean(&column(0), seed),
                    "largest_size": EstimateWithCI::mean(&column(1), seed),
                    "origin_size": EstimateWithCI::mean(&column(2), seed),
                }))
            }
            Operation::PivotalEdges => {
                let counts = per_sample(n, |i| Ok(find_pivotal_edges(ball, &sample(i)?).map_err(op_err)?.len() as f64))?;
                OpOutput::payload(json!({ "pivotal_edges": EstimateWithCI::mean(&counts, seed) }))
            }
            Operation::ConditionalMarginal { edge } => {
                let key = parse_edge_key(edge).map_err(op_err)?;
                let est = conditional_marginal_estimate(ball, process, &key, n, seed).map_err(op_err)?;
                OpOutput::payload(to_value(&est))
            }
            Operation::ClusterPc { grid_points } => {
                let cfg = sample(0)?;
                let dec = decompose(ball, &cfg).map_err(op_err)?;
                let largest = dec
                    .spanning_ids()
                    .max_by_key(|&c| (dec.clusters[c as usize].size, std::cmp::Reverse(c)));
                match largest {
                    None => OpOutput {
                        inconclusive: true,
                        ..OpOutput::payload(json!({ "cluster": null, "estimate": null }))
                    },
                    Some(c) => {
                        let grid: Vec<f64> = (1..*grid_points).map(|i| i as f64 / *grid_points as f64).collect();
                        let est = cluster_pc_estimate(ball, &cfg, &dec, c, &grid, n, seed).map_err(op_err)?;
                        OpOutput::payload(json!({
                            "cluster": c,
                            "cluster_size": dec.clusters[c as usize].size,
                            "grid": grid,
                            "estimate": est,
                        }))
                    }
                }
            }
            Operation::Stationarity { statistic, cap, t1, t2 } => {
                let stat = walk_statistic(statistic, *cap)?;
                let rep = stationarity_check(ball, process, &stat, n, *t1, *t2, seed).map_err(op_err)?;
                OpOutput::payload(to_value(&rep))
            }
            Operation::Indistinguishability {
                statistic,
                inner_radius,
                branch_depth,
                pc_thinnings,
                walks_per_cluster,
                walk_steps,
                min_multi_samples,
            } => {
                let stat = ClusterStatistic::parse(statistic).map_err(op_err)?;
                let mut params = IndistParams::for_radius(ball.radius() as u32);
                params.inner_radius = inner_radius.unwrap_or(params.inner_radius);
                params.branch_depth = branch_depth.unwrap_or(params.branch_depth);
                params.pc_thinnings = pc_thinnings.unwrap_or(params.pc_thinnings);
                params.walks_per_cluster = walks_per_cluster.unwrap_or(params.walks_per_cluster);
                params.walk_steps = walk_steps.unwrap_or(params.walk_steps);
                params.min_multi_samples = min_multi_samples.unwrap_or(params.min_multi_samples);
                let rep = indistinguishability_test(ball, process, stat, n, seed, &params).map_err(op_err)?;
                OpOutput {
                    inconclusive: rep.verdict == Verdict::Inconclusive,
                    ..OpOutput::payload(json!({ "params": params, "report": rep }))
                }
            }
            Operation::Uniqueness { p2 } => {
                let p1 = bernoulli_p(process, "uniqueness")?;
                let rep = uniqueness_monotonicity_check(ball, p1, *p2, n, seed).map_err(op_err)?;
                OpOutput {
                    inconclusive: rep.inconclusive,
                    ..OpOutput::payload(to_value(&rep))
                }
            }
            Operation::MassTransport { origin, .. } => {
                let o = origin.as_deref().map_or(Ok(0), |k| vertex(ball, "origin", k))?;
                let cfg;
                let kernel = match self.kernel_shape()? {
                    KernelShape::Zero => TransportKernel::Zero,
                    KernelShape::Offset(v) => TransportKernel::Offset(v),
                    KernelShape::Shell(k) => TransportKernel::DistanceShell(k),
                    KernelShape::NearestTarget(min_degree) => {
                        cfg = sample(0)?;
                        TransportKernel::NearestTarget {
                            config: &cfg,
                            min_degree,
                        }
                    }
                    KernelShape::ToParent => TransportKernel::ToParent,
                    KernelShape::ToChild => TransportKernel::ToChild,
                    KernelShape::ToParentOrChild => TransportKernel::ToParentOrChild,
                };
                let (sent, received) = mtp_check(ball, &kernel, o).map_err(op_err)?;
                OpOutput::payload(json!({
                    "kernel": kernel.name(),
                    "origin": ball.vertex_key(o),
                    "sent": sent.to_string(),
                    "received": received.to_string(),
                    "balanced": sent == received,
                }))
            }
            Operation::SecondMomentBound { target, clamp } => {
                let p = bernoulli_p(process, "second_moment_bound")?;
                let y = vertex(ball, "target", target)?;
                let stats = match ball.family() {
                    Family::RegularTree { .. } => {
                        let len = tree_path(ball, 0, y).map_err(op_err)?.len();
                        point_mass_stats(ball.vertex_key(y), len)
                    }
                    _ => {
                        let v: Vertex = ball.vertex(y).clone();
                        lamplighter_pair_stats(ball, &v, n, seed).map_err(op_err)?
                    }
                };
                let fit = fit_dominating(&stats, p).map_err(op_err)?;
                let certified = certify(&stats, &fit);
                let bound = eit_bound(&fit, p, *clamp).map_err(op_err)?;
                OpOutput {
                    inconclusive: !certified,
                    ..OpOutput::payload(json!({
                        "stats": stats,
                        "fit": fit,
                        "certified": certified,
                        "bound": bound,
                    }))
                }
            }
            Operation::Phases { eps } => {
                let table = phases_experiment(eps, ball.radius(), n, seed).map_err(op_err)?;
                OpOutput {
                    table: Some(table.to_csv()),
                    ..OpOutput::payload(to_value(&table))
                }
            }
        };
        Ok(out)
    }
}

enum KernelShape {
    Zero,
    Offset(Vec<i64>),
    Shell(u32),
    NearestTarget(usize),
    ToParent,
    ToChild,
    ToParentOrChild,
}
