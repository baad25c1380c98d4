//! Random paths in the lamplighter graph over Z whose intersections have a
//! geometric tail.
//!
//! The base walk is the fixed word
//! `Wa Wa' Wg Wb Wb' Wg' Wa Wa' Wg Wb Wb'` (primes are inverses), where `Wg`
//! walks from 0 to the target position while visiting every lit lamp of the
//! target, and `Wa`, `Wb` walk `|Wg|` steps along two disjoint rays leaving
//! 0 and the target position. After each base letter a lamp letter in
//! `Z_m` (0 meaning no move) is applied at the current site. Lamp letters are
//! uniform subject to the product of the letters applied at each site
//! matching the target lamp there; the last visit to each site carries the
//! constraint.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectivity::PathPairStats;
use crate::error::{Error, Result};
use crate::graph::{EdgeKey, Family, GraphBall, Vertex};
use crate::percolation::CouplingSeed;
use crate::rng::{CounterRng, Stream};

/// Base walk of the construction for the target `(lamps, gamma)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseWord {
    /// `+1` or `-1` per letter.
    pub steps: Vec<i8>,
    /// Length of the covering walk `Wg`; the word has length `11 n`.
    pub n: usize,
}

/// Shortest walk from 0 to `gamma` visiting every site in `sites`, going to
/// the left end first on ties.
fn covering_walk(sites: &[i64], gamma: i64) -> Vec<i8> {
    let lo = sites.iter().copied().chain([0, gamma]).min().expect("nonempty");
    let hi = sites.iter().copied().chain([0, gamma]).max().expect("nonempty");
    let left_first = (0 - lo) + (hi - lo) + (hi - gamma);
    let right_first = hi + (hi - lo) + (gamma - lo);
    let legs: [(i64, i64); 3] = if left_first <= right_first {
        [(0, lo), (lo, hi), (hi, gamma)]
    } else {
        [(0, hi), (hi, lo), (lo, gamma)]
    };
    let mut out = Vec::new();
    for (a, b) in legs {
        let s = if b >= a { 1 } else { -1 };
        out.extend(std::iter::repeat_n(s, (b - a).unsigned_abs() as usize));
    }
    out
}

pub fn base_word(lit_sites: &[i64], gamma: i64) -> BaseWord {
    let wg = covering_walk(lit_sites, gamma);
    let n = wg.len();
    // Rays: away from the target on the origin side, beyond it on the other.
    let (alpha, beta): (i8, i8) = if gamma >= 0 { (-1, 1) } else { (1, -1) };
    let ray = |s: i8| vec![s; n];
    let wg_inv: Vec<i8> = wg.iter().rev().map(|s| -s).collect();
    let blocks: [Vec<i8>; 11] = [
        ray(alpha),
        ray(-alpha),
        wg.clone(),
        ray(beta),
        ray(-beta),
        wg_inv,
        ray(alpha),
        ray(-alpha),
        wg,
        ray(beta),
        ray(-beta),
    ];
    BaseWord {
        steps: blocks.concat(),
        n,
    }
}

/// One sampled path `w1 X1 w2 X2 ... wN XN`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LamplighterPath {
    pub base: BaseWord,
    /// Lamp letter after each base letter, in `0..m`.
    pub lamps: Vec<u8>,
    /// Group elements visited, starting at the identity.
    pub vertices: Vec<Vertex>,
    pub edges: Vec<EdgeKey>,
    pub digests: Vec<u64>,
    /// Every visited vertex lies in the ball.
    pub in_ball: bool,
}

fn lamplighter_modulus(ball: &GraphBall) -> Result<u8> {
    match ball.family() {
        Family::Lamplighter { base, modulus } if **base == (Family::Lattice { d: 1 }) => Ok(*modulus),
        other => Err(Error::WrongFamily {
            expected: "lamplighter(lattice(1), m)",
            got: other.tag(),
        }),
    }
}

pub fn lamplighter_path_sampler(
    ball: &GraphBall,
    target: &Vertex,
    seed: CouplingSeed,
) -> Result<LamplighterPath> {
    let m = lamplighter_modulus(ball)?;
    let fam = ball.family();
    if !fam.contains(target) {
        return Err(Error::Unreachable(format!("{target} is not a vertex of {}", fam.tag())));
    }
    if ball.find(target).is_none() {
        return Err(Error::Unreachable(format!("{target} is outside the ball")));
    }
    let (lit, gamma) = match target {
        Vertex::Lamp { lamps, pos } => (lamps.clone(), pos[0]),
        _ => unreachable!("contains() checked the encoding"),
    };
    let want: BTreeMap<i64, u8> = lit.iter().map(|(s, v)| (s[0], *v)).collect();
    let sites: Vec<i64> = want.keys().copied().collect();
    let base = base_word(&sites, gamma);

    let mut positions = Vec::with_capacity(base.steps.len());
    let mut x = 0i64;
    for &s in &base.steps {
        x += s as i64;
        positions.push(x);
    }
    let mut last_visit: BTreeMap<i64, usize> = BTreeMap::new();
    for (j, &v) in positions.iter().enumerate() {
        last_visit.insert(v, j);
    }
    let mut rng = CounterRng::new(seed.stream(Stream::PathSampler));
    let mut partial: BTreeMap<i64, u8> = BTreeMap::new();
    let mut lamps = Vec::with_capacity(positions.len());
    for (j, &v) in positions.iter().enumerate() {
        let acc = partial.entry(v).or_insert(0);
        let letter = if last_visit[&v] == j {
            let goal = want.get(&v).copied().unwrap_or(0);
            (goal + m - *acc) % m
        } else {
            rng.below(m as u64) as u8
        };
        *acc = (*acc + letter) % m;
        lamps.push(letter);
    }

    let mut cur = fam.identity();
    let mut vertices = vec![cur.clone()];
    let mut edges = Vec::new();
    let gens = fam.generators();
    let push = |g: usize, cur: &mut Vertex, vertices: &mut Vec<Vertex>, edges: &mut Vec<EdgeKey>| {
        let next = fam.apply(cur, g);
        edges.push(EdgeKey::new(cur.clone(), next.clone(), gens[g].edge_label.clone()));
        vertices.push(next.clone());
        *cur = next;
    };
    for (&s, &lamp) in base.steps.iter().zip(&lamps) {
        push(if s > 0 { 0 } else { 1 }, &mut cur, &mut vertices, &mut edges);
        if lamp != 0 {
            push(1 + lamp as usize, &mut cur, &mut vertices, &mut edges);
        }
    }
    if &cur != target {
        return Err(Error::Unreachable(format!("sampled path ended at {cur}, not {target}")));
    }
    let digests = edges.iter().map(EdgeKey::digest).collect();
    let in_ball = vertices.iter().all(|v| ball.find(v).is_some());
    Ok(LamplighterPath {
        base,
        lamps,
        vertices,
        edges,
        digests,
        in_ball,
    })
}

/// Shared edges of two paths, as edge sets.
pub fn shared_edges(a: &LamplighterPath, b: &LamplighterPath) -> usize {
    let sa: HashSet<u64> = a.digests.iter().copied().collect();
    let sb: HashSet<u64> = b.digests.iter().copied().collect();
    sa.intersection(&sb).count()
}

/// Intersection histogram over `pairs` independent path pairs. Pair `i`
/// uses sample indices `2i` and `2i + 1`.
pub fn lamplighter_pair_stats(
    ball: &GraphBall,
    target: &Vertex,
    pairs: u64,
    seed: u64,
) -> Result<PathPairStats> {
    let sizes: Vec<(usize, bool)> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let a = lamplighter_path_sampler(ball, target, CouplingSeed::new(seed, 2 * i))?;
            let b = lamplighter_path_sampler(ball, target, CouplingSeed::new(seed, 2 * i + 1))?;
            Ok((shared_edges(&a, &b), a.in_ball && b.in_ball))
        })
        .collect::<Result<_>>()?;
    Ok(PathPairStats::from_intersections(
        target.key(),
        "lamplighter_uniform_lamps".into(),
        sizes,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphSpec;

    fn ll_ball(m: u8, r: usize) -> GraphBall {
        GraphBall::build(&GraphSpec::new(
            Family::Lamplighter {
                base: Box::new(Family::Lattice { d: 1 }),
                modulus: m,
            },
            r,
        ))
        .unwrap()
    }

    /// Evaluate `w1 X1 ... wN XN` with a plain map of lamps.
    fn evaluate(path: &LamplighterPath, m: u8) -> (BTreeMap<i64, u8>, i64) {
        let mut lamps = BTreeMap::new();
        let mut x = 0i64;
        for (&s, &l) in path.base.steps.iter().zip(&path.lamps) {
            x += s as i64;
            let e = lamps.entry(x).or_insert(0u8);
            *e = (*e + l) % m;
        }
        lamps.retain(|_, v| *v != 0);
        (lamps, x)
    }

    #[test]
    fn word_length_is_eleven_n() {
        let w = base_word(&[-2, 3], 1);
        assert_eq!(w.steps.len(), 11 * w.n);
        assert_eq!(w.steps.iter().map(|&s| s as i64).sum::<i64>(), 1);
        assert_eq!(base_word(&[], 0).steps.len(), 0);
    }

    #[test]
    fn identity_target_gives_empty_path() {
        let b = ll_ball(2, 3);
        let p = lamplighter_path_sampler(&b, &b.vertex(0).clone(), CouplingSeed::new(0, 0)).unwrap();
        assert!(p.edges.is_empty());
        assert_eq!(p.vertices, vec![b.vertex(0).clone()]);
    }

    #[test]
    fn endpoints_match_target() {
        let b = ll_ball(3, 6);
        let targets = [
            Vertex::Lamp { lamps: vec![(vec![1], 2)], pos: vec![0] },
            Vertex::Lamp { lamps: vec![(vec![-1], 1), (vec![1], 1)], pos: vec![2] },
            Vertex::Lamp { lamps: vec![], pos: vec![-2] },
        ];
        for t in &targets {
            for s in 0..50 {
                let p = lamplighter_path_sampler(&b, t, CouplingSeed::new(4, s)).unwrap();
                let (lamps, x) = evaluate(&p, 3);
                let want: BTreeMap<i64, u8> = match t {
                    Vertex::Lamp { lamps, .. } => lamps.iter().map(|(s, v)| (s[0], *v)).collect(),
                    _ => unreachable!(),
                };
                let gamma = match t {
                    Vertex::Lamp { pos, .. } => pos[0],
                    _ => unreachable!(),
                };
                assert_eq!((lamps, x), (want, gamma));
                assert_eq!(p.vertices.last().unwrap(), t);
                for w in p.vertices.windows(2) {
                    assert!(!b.family().generators().is_empty());
                    assert!((0..b.degree()).any(|g| b.family().apply(&w[0], g) == w[1]));
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_family_and_far_target() {
        let z = GraphBall::build(&GraphSpec::new(Family::Lattice { d: 1 }, 2)).unwrap();
        let t = Vertex::Lattice(vec![1]);
        assert!(matches!(
            lamplighter_path_sampler(&z, &t, CouplingSeed::new(0, 0)),
            Err(Error::WrongFamily { .. })
        ));
        let b = ll_ball(2, 2);
        let far = Vertex::Lamp { lamps: vec![(vec![5], 1)], pos: vec![0] };
        assert!(matches!(
            lamplighter_path_sampler(&b, &far, CouplingSeed::new(0, 0)),
            Err(Error::Unreachable(_))
        ));
    }
}
