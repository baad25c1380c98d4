use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::edge::{edge_digest, EdgeKey};
use super::family::{Family, MAX_BALL_VERTICES};
use super::vertex::Vertex;
use crate::error::{Error, Result};
use crate::rng::mix64;

/// A family together with a ball radius. Tori ignore the radius and are
/// built whole.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default)]
    pub radius: usize,
}

impl GraphSpec {
    pub fn new(family: Family, radius: usize) -> Self {
        GraphSpec { family, radius }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub u: u32,
    pub v: u32,
    pub label: u16,
}

/// Finite BFS ball about the identity, with free boundary.
///
/// Vertices are indexed in `(distance, encoding)` order, so index 0 is the
/// origin. Edge `i` joins `edges[i].u < edges[i].v`.
#[derive(Clone, Debug)]
pub struct GraphBall {
    spec: GraphSpec,
    vertices: Vec<Vertex>,
    index: HashMap<Vertex, u32>,
    dist: Vec<u32>,
    boundary: Vec<bool>,
    adj_start: Vec<u32>,
    adj: Vec<(u32, u32)>,
    edges: Vec<Edge>,
    labels: Vec<String>,
    digests: Vec<u64>,
    heights: Option<Vec<i64>>,
    fingerprint: u64,
}

impl GraphBall {
    pub fn build(spec: &GraphSpec) -> Result<GraphBall> {
        let fam = &spec.family;
        fam.validate()?;
        let bound = fam.volume_bound(spec.radius);
        if bound > MAX_BALL_VERTICES {
            let name = if matches!(fam, Family::Torus { .. }) {
                "side"
            } else {
                "radius"
            };
            return Err(Error::BoundExceeded {
                name,
                value: format!("{} (ball bound {bound} vertices)", spec.radius),
                allowed: format!("at most {MAX_BALL_VERTICES} vertices"),
            });
        }
        let torus = matches!(fam, Family::Torus { .. });
        let radius = if torus { u32::MAX } else { spec.radius as u32 };
        let deg = fam.degree();

        // BFS layer by layer; each layer sorted by encoding.
        let mut vertices = vec![fam.identity()];
        let mut dist = vec![0u32];
        let mut index: HashMap<Vertex, u32> = HashMap::new();
        index.insert(vertices[0].clone(), 0);
        let mut layer_start = 0usize;
        let mut r = 0u32;
        while r < radius && layer_start < vertices.len() {
            let layer_end = vertices.len();
            let mut next = Vec::new();
            for i in layer_start..layer_end {
                for g in 0..deg {
                    let w = fam.apply(&vertices[i], g);
                    if !index.contains_key(&w) {
                        index.insert(w.clone(), u32::MAX);
                        next.push(w);
                    }
                }
            }
            next.sort();
            for w in next {
                let id = vertices.len() as u32;
                *index.get_mut(&w).expect("inserted above") = id;
                vertices.push(w);
                dist.push(r + 1);
            }
            layer_start = layer_end;
            r += 1;
        }

        let gens = fam.generators();
        let mut labels: Vec<String> = Vec::new();
        let mut label_id: HashMap<String, u16> = HashMap::new();
        let gen_label: Vec<u16> = gens
            .iter()
            .map(|g| {
                *label_id.entry(g.edge_label.clone()).or_insert_with(|| {
                    labels.push(g.edge_label.clone());
                    (labels.len() - 1) as u16
                })
            })
            .collect();

        let mut edges = Vec::new();
        for (i, v) in vertices.iter().enumerate() {
            for (g, &lab) in gen_label.iter().enumerate() {
                let w = fam.apply(v, g);
                if let Some(&j) = index.get(&w) {
                    if j as usize > i {
                        edges.push(Edge {
                            u: i as u32,
                            v: j,
                            label: lab,
                        });
                    }
                }
            }
        }
        edges.sort_by_key(|e| (e.u, e.v, e.label));
        edges.dedup_by_key(|e| (e.u, e.v));

        let n = vertices.len();
        let mut counts = vec![0u32; n + 1];
        for e in &edges {
            counts[e.u as usize + 1] += 1;
            counts[e.v as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let adj_start = counts.clone();
        let mut fill = counts;
        let mut adj = vec![(0u32, 0u32); edges.len() * 2];
        for (id, e) in edges.iter().enumerate() {
            adj[fill[e.u as usize] as usize] = (e.v, id as u32);
            fill[e.u as usize] += 1;
            adj[fill[e.v as usize] as usize] = (e.u, id as u32);
            fill[e.v as usize] += 1;
        }
        for i in 0..n {
            adj[adj_start[i] as usize..adj_start[i + 1] as usize].sort_unstable();
        }

        let digests: Vec<u64> = edges
            .iter()
            .map(|e| {
                edge_digest(
                    &vertices[e.u as usize],
                    &vertices[e.v as usize],
                    &labels[e.label as usize],
                )
            })
            .collect();

        let boundary = dist.iter().map(|&d| !torus && d == radius).collect();
        let heights = match fam {
            Family::FixedEndTree { .. } => Some(
                vertices
                    .iter()
                    .map(|v| match v {
                        Vertex::Word(w) => fixed_end_height(w),
                        _ => unreachable!("tree vertices are words"),
                    })
                    .collect(),
            ),
            _ => None,
        };

        let mut fingerprint = mix64(n as u64 ^ mix64(edges.len() as u64));
        for b in fam.tag().bytes() {
            fingerprint = mix64(fingerprint ^ b as u64);
        }
        fingerprint = mix64(fingerprint ^ spec.radius as u64);
        for &d in &digests {
            fingerprint = mix64(fingerprint.rotate_left(17) ^ d);
        }

        Ok(GraphBall {
            spec: spec.clone(),
            vertices,
            index,
            dist,
            boundary,
            adj_start,
            adj,
            edges,
            labels,
            digests,
            heights,
            fingerprint,
        })
    }

    /// `(Z/LZ)^d` built whole; no boundary.
    pub fn torus(d: usize, side: usize) -> Result<GraphBall> {
        GraphBall::build(&GraphSpec::new(Family::Torus { d, side }, 0))
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn family(&self) -> &Family {
        &self.spec.family
    }

    pub fn radius(&self) -> usize {
        self.spec.radius
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.spec.family, Family::Torus { .. })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Degree of the infinite graph.
    pub fn degree(&self) -> usize {
        self.spec.family.degree()
    }

    /// Identifies the ball; configurations carry it to detect mismatches.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn vertex(&self, v: usize) -> &Vertex {
        &self.vertices[v]
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex_key(&self, v: usize) -> String {
        self.vertices[v].key()
    }

    pub fn find(&self, v: &Vertex) -> Option<usize> {
        self.index.get(v).map(|&i| i as usize)
    }

    pub fn find_key(&self, key: &str) -> Result<usize> {
        let v = Vertex::parse(key)?;
        self.find(&v)
            .ok_or_else(|| Error::BadVertexKey(format!("{key} is not in the ball")))
    }

    pub fn distance(&self, v: usize) -> u32 {
        self.dist[v]
    }

    pub fn distances(&self) -> &[u32] {
        &self.dist
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_vertices()).filter(|&v| self.boundary[v])
    }

    pub fn check_vertex(&self, v: usize) -> Result<()> {
        if v < self.n_vertices() {
            Ok(())
        } else {
            Err(Error::VertexOutOfRange {
                index: v,
                len: self.n_vertices(),
            })
        }
    }

    /// `(neighbor, edge id)` pairs sorted by neighbor.
    #[inline]
    pub fn adjacent(&self, v: usize) -> &[(u32, u32)] {
        &self.adj[self.adj_start[v] as usize..self.adj_start[v + 1] as usize]
    }

    pub fn neighbors(&self, v: usize) -> Result<Vec<usize>> {
        self.check_vertex(v)?;
        Ok(self.adjacent(v).iter().map(|&(w, _)| w as usize).collect())
    }

    pub fn edge(&self, e: usize) -> Edge {
        self.edges[e]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_label(&self, e: usize) -> &str {
        &self.labels[self.edges[e].label as usize]
    }

    pub fn edge_digest(&self, e: usize) -> u64 {
        self.digests[e]
    }

    pub fn digests(&self) -> &[u64] {
        &self.digests
    }

    pub fn edge_key(&self, e: usize) -> EdgeKey {
        let ed = self.edges[e];
        EdgeKey::new(
            self.vertices[ed.u as usize].clone(),
            self.vertices[ed.v as usize].clone(),
            self.edge_label(e),
        )
    }

    pub fn edge_between(&self, u: usize, v: usize) -> Option<usize> {
        let a = self.adjacent(u);
        a.binary_search_by_key(&(v as u32), |&(w, _)| w)
            .ok()
            .map(|i| a[i].1 as usize)
    }

    pub fn find_edge(&self, key: &EdgeKey) -> Result<usize> {
        let u = self.find(&key.lo);
        let v = self.find(&key.hi);
        match (u, v) {
            (Some(u), Some(v)) => self
                .edge_between(u, v)
                .filter(|&e| self.edge_label(e) == key.label)
                .ok_or_else(|| Error::UnknownEdge(key.to_string())),
            _ => Err(Error::UnknownEdge(key.to_string())),
        }
    }

    /// Right multiplication of the vertex by the named generator, if the
    /// result is in the ball.
    pub fn step(&self, v: usize, generator: &str) -> Result<Option<usize>> {
        self.check_vertex(v)?;
        let g = self
            .family()
            .generator_index(generator)
            .ok_or_else(|| Error::InvalidParameter {
                name: "generator",
                reason: format!("{generator} is not a generator of {}", self.family().tag()),
            })?;
        Ok(self.find(&self.family().apply(&self.vertices[v], g)))
    }

    /// Ball-graph BFS distances from `src`; `u32::MAX` if unreachable.
    pub fn bfs_distances_from(&self, src: usize) -> Vec<u32> {
        let mut d = vec![u32::MAX; self.n_vertices()];
        let mut q = VecDeque::from([src]);
        d[src] = 0;
        while let Some(u) = q.pop_front() {
            for &(w, _) in self.adjacent(u) {
                if d[w as usize] == u32::MAX {
                    d[w as usize] = d[u] + 1;
                    q.push_back(w as usize);
                }
            }
        }
        d
    }

    /// Height toward the fixed end. The parent has height one less.
    pub fn end_height(&self, v: usize) -> Result<i64> {
        self.check_vertex(v)?;
        match &self.heights {
            Some(h) => Ok(h[v]),
            None => Err(Error::WrongFamily {
                expected: "fixed_end_tree",
                got: self.family().tag(),
            }),
        }
    }

    pub fn heights(&self) -> Option<&[i64]> {
        self.heights.as_deref()
    }

    /// In-ball neighbor one step closer to the fixed end, if present.
    pub fn end_parent(&self, v: usize) -> Result<Option<usize>> {
        let h = self.end_height(v)?;
        let hs = self.heights.as_ref().expect("checked by end_height");
        Ok(self
            .adjacent(v)
            .iter()
            .map(|&(w, _)| w as usize)
            .find(|&w| hs[w] == h - 1))
    }

    /// One line per edge: `u_key<TAB>v_key<TAB>label`.
    pub fn export_edge_list(&self) -> String {
        let mut out = String::new();
        for e in 0..self.n_edges() {
            out.push_str(&self.edge_key(e).to_string());
            out.push('\n');
        }
        out
    }
}

/// Letter `i` of the ray toward the fixed end.
pub(crate) fn end_ray_letter(i: usize) -> u8 {
    (i % 2) as u8
}

/// `|w| - 2 * lcp(w, ray)`.
pub(crate) fn fixed_end_height(w: &[u8]) -> i64 {
    let lcp = w
        .iter()
        .enumerate()
        .take_while(|&(i, &l)| l == end_ray_letter(i))
        .count();
    w.len() as i64 - 2 * lcp as i64
}
