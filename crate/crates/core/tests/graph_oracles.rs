//! Balls checked against a brute-force generator that multiplies out every
//! word up to the radius with its own group arithmetic.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use percolab_core::graph::{Family, GraphBall, GraphSpec, Vertex};
use proptest::prelude::*;

type Gen<T> = Box<dyn Fn(&T) -> T>;

/// Distances of every element reachable by a word of length at most `r`,
/// found by enumerating all words.
fn enumerate_words<T: Clone + Eq + Hash>(id: T, gens: &[Gen<T>], r: usize) -> HashMap<T, usize> {
    let mut best = HashMap::from([(id.clone(), 0)]);
    let mut frontier = vec![id];
    for len in 1..=r {
        let mut next = Vec::with_capacity(frontier.len() * gens.len());
        for x in &frontier {
            for g in gens {
                let y = g(x);
                best.entry(y.clone()).or_insert(len);
                next.push(y);
            }
        }
        frontier = next;
    }
    best
}

struct Census {
    vertices: usize,
    edges: usize,
    spheres: Vec<usize>,
}

fn census<T: Clone + Eq + Hash>(id: T, gens: &[Gen<T>], r: usize) -> Census {
    let ball = enumerate_words(id, gens, r);
    let index: HashMap<&T, usize> = ball.keys().enumerate().map(|(i, x)| (x, i)).collect();
    let mut edges = HashSet::new();
    for x in ball.keys() {
        for g in gens {
            let y = g(x);
            if let Some(&j) = index.get(&y) {
                let i = index[x];
                if i != j {
                    edges.insert((i.min(j), i.max(j)));
                }
            }
        }
    }
    let mut spheres = vec![0; r + 1];
    for &d in ball.values() {
        spheres[d] += 1;
    }
    Census {
        vertices: ball.len(),
        edges: edges.len(),
        spheres,
    }
}

fn lattice_gens(d: usize) -> Vec<Gen<Vec<i64>>> {
    let mut gens: Vec<Gen<Vec<i64>>> = Vec::new();
    for i in 0..d {
        for s in [1, -1] {
            gens.push(Box::new(move |x: &Vec<i64>| {
                let mut y = x.clone();
                y[i] += s;
                y
            }));
        }
    }
    gens
}

fn tree_gens(b: u8) -> Vec<Gen<Vec<u8>>> {
    (0..b)
        .map(|i| -> Gen<Vec<u8>> {
            Box::new(move |w: &Vec<u8>| {
                let mut w = w.clone();
                if w.last() == Some(&i) {
                    w.pop();
                } else {
                    w.push(i);
                }
                w
            })
        })
        .collect()
}

fn free_group_gens(k: i8) -> Vec<Gen<Vec<i8>>> {
    let mut gens: Vec<Gen<Vec<i8>>> = Vec::new();
    for i in 1..=k {
        for s in [i, -i] {
            gens.push(Box::new(move |w: &Vec<i8>| {
                let mut w = w.clone();
                if w.last() == Some(&-s) {
                    w.pop();
                } else {
                    w.push(s);
                }
                w
            }));
        }
    }
    gens
}

/// `Z^2 * Z_2` as a list of symbols: `Some(v)` a nonzero lattice syllable,
/// `None` the involution. Adjacent syllables merge, zero syllables vanish
/// and adjacent involutions cancel.
type FreeProduct = Vec<Option<(i64, i64)>>;

fn free_product_gens() -> Vec<Gen<FreeProduct>> {
    let mut gens: Vec<Gen<FreeProduct>> = Vec::new();
    for step in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
        gens.push(Box::new(move |w: &FreeProduct| {
            let mut w = w.clone();
            match w.last_mut() {
                Some(Some(v)) => {
                    v.0 += step.0;
                    v.1 += step.1;
                    if *v == (0, 0) {
                        w.pop();
                    }
                }
                _ => w.push(Some(step)),
            }
            w
        }));
    }
    gens.push(Box::new(|w: &FreeProduct| {
        let mut w = w.clone();
        if w.last() == Some(&None) {
            w.pop();
        } else {
            w.push(None);
        }
        w
    }));
    gens
}

type Lamps = (BTreeMap<Vec<i64>, u8>, Vec<i64>);

fn lamplighter_gens(d: usize, m: u8) -> Vec<Gen<Lamps>> {
    let mut gens: Vec<Gen<Lamps>> = Vec::new();
    for i in 0..d {
        for s in [1, -1] {
            gens.push(Box::new(move |(l, x): &Lamps| {
                let mut x = x.clone();
                x[i] += s;
                (l.clone(), x)
            }));
        }
    }
    for j in 1..m {
        gens.push(Box::new(move |(l, x): &Lamps| {
            let mut l = l.clone();
            let v = (l.get(x).copied().unwrap_or(0) + j) % m;
            if v == 0 {
                l.remove(x);
            } else {
                l.insert(x.clone(), v);
            }
            (l, x.clone())
        }));
    }
    gens
}

fn product_gens<A: Clone + 'static, B: Clone + 'static>(
    left: Vec<Gen<A>>,
    right: Vec<Gen<B>>,
) -> Vec<Gen<(A, B)>> {
    let mut gens: Vec<Gen<(A, B)>> = Vec::new();
    for g in left {
        gens.push(Box::new(move |(a, b): &(A, B)| (g(a), b.clone())));
    }
    for g in right {
        gens.push(Box::new(move |(a, b): &(A, B)| (a.clone(), g(b))));
    }
    gens
}

fn oracle(family: &Family, r: usize) -> Census {
    match family {
        Family::Lattice { d } => census(vec![0; *d], &lattice_gens(*d), r),
        Family::RegularTree { b } | Family::FixedEndTree { b } => census(vec![], &tree_gens(*b as u8), r),
        Family::FreeGroup { k } => census(vec![], &free_group_gens(*k as i8), r),
        Family::FreeProductZ2Z2 => census(vec![], &free_product_gens(), r),
        Family::Lamplighter { base, modulus } => {
            let d = match **base {
                Family::Lattice { d } => d,
                _ => unreachable!(),
            };
            census((BTreeMap::new(), vec![0; d]), &lamplighter_gens(d, *modulus), r)
        }
        Family::Product { left, right } => match (&**left, &**right) {
            (Family::FreeGroup { k }, Family::Lattice { d }) => census(
                (vec![], vec![0; *d]),
                &product_gens(free_group_gens(*k as i8), lattice_gens(*d)),
                r,
            ),
            (Family::RegularTree { b }, Family::Lattice { d }) => census(
                (vec![], vec![0; *d]),
                &product_gens(tree_gens(*b as u8), lattice_gens(*d)),
                r,
            ),
            _ => unreachable!(),
        },
        Family::Torus { .. } => unreachable!("tori are checked separately"),
    }
}

fn families() -> Vec<Family> {
    let ll = |d, m| Family::Lamplighter {
        base: Box::new(Family::Lattice { d }),
        modulus: m,
    };
    vec![
        Family::Lattice { d: 1 },
        Family::Lattice { d: 2 },
        Family::Lattice { d: 3 },
        Family::RegularTree { b: 3 },
        Family::RegularTree { b: 4 },
        Family::FixedEndTree { b: 3 },
        Family::FreeGroup { k: 2 },
        Family::FreeProductZ2Z2,
        ll(1, 2),
        ll(1, 3),
        ll(1, 4),
        ll(2, 2),
        Family::Product {
            left: Box::new(Family::FreeGroup { k: 2 }),
            right: Box::new(Family::Lattice { d: 2 }),
        },
        Family::Product {
            left: Box::new(Family::RegularTree { b: 3 }),
            right: Box::new(Family::Lattice { d: 1 }),
        },
    ]
}

fn build(f: &Family, r: usize) -> GraphBall {
    GraphBall::build(&GraphSpec::new(f.clone(), r)).unwrap()
}

#[test]
fn counts_match_word_enumeration() {
    for f in families() {
        for r in 0..=4 {
            let ball = build(&f, r);
            let want = oracle(&f, r);
            let mut spheres = vec![0; r + 1];
            for v in 0..ball.n_vertices() {
                spheres[ball.distance(v) as usize] += 1;
            }
            assert_eq!(ball.n_vertices(), want.vertices, "{} R={r}", f.tag());
            assert_eq!(ball.n_edges(), want.edges, "{} R={r}", f.tag());
            assert_eq!(spheres, want.spheres, "{} R={r}", f.tag());
        }
    }
}

#[test]
fn torus_counts_match_enumeration() {
    for (d, side) in [(1, 3), (1, 5), (2, 3), (2, 4), (2, 5), (3, 3)] {
        let t = GraphBall::torus(d, side).unwrap();
        let gens: Vec<Gen<Vec<i64>>> = lattice_gens(d)
            .into_iter()
            .map(|g| -> Gen<Vec<i64>> {
                Box::new(move |x: &Vec<i64>| g(x).into_iter().map(|c| c.rem_euclid(side as i64)).collect())
            })
            .collect();
        let want = census(vec![0; d], &gens, d * side);
        assert_eq!(t.n_vertices(), want.vertices);
        assert_eq!(t.n_edges(), want.edges);
        for v in 0..t.n_vertices() {
            assert_eq!(t.neighbors(v).unwrap().len(), 2 * d);
            assert!(!t.is_boundary(v));
        }
    }
    let cycle = GraphBall::torus(1, 3).unwrap();
    assert_eq!((cycle.n_vertices(), cycle.n_edges()), (3, 3));
}

#[test]
fn word_reduction_reaches_exactly_the_ball() {
    for f in families() {
        for r in 0..=2 {
            let ball = build(&f, r);
            let deg = f.degree();
            let mut words = vec![(f.identity(), 0usize)];
            let mut reached: HashSet<Vertex> = HashSet::from([f.identity()]);
            for len in 1..=2 * r {
                let mut next = Vec::new();
                for (v, _) in &words {
                    for g in 0..deg {
                        let w = f.apply(v, g);
                        assert!(f.contains(&w), "{} produced non-canonical {w}", f.tag());
                        if let Some(i) = ball.find(&w) {
                            assert!(ball.distance(i) as usize <= len);
                        }
                        if len <= r {
                            reached.insert(w.clone());
                        }
                        next.push((w, len));
                    }
                }
                words = next;
            }
            let ball_set: HashSet<Vertex> = ball.vertices().iter().cloned().collect();
            assert_eq!(reached, ball_set, "{} R={r}", f.tag());
        }
    }
}

#[test]
fn lamplighter_distance_closed_form() {
    // Word length of (f, x) over Z: lamps cost one each, and the walk must
    // cover supp f and end at x, going to the nearer extreme first.
    for m in [2u8, 3] {
        let f = Family::Lamplighter {
            base: Box::new(Family::Lattice { d: 1 }),
            modulus: m,
        };
        let ball = build(&f, 8);
        for (i, v) in ball.vertices().iter().enumerate() {
            let Vertex::Lamp { lamps, pos } = v else { unreachable!() };
            let x = pos[0];
            let sites = lamps.iter().map(|(s, _)| s[0]);
            let lo = sites.clone().chain([0, x]).min().unwrap();
            let hi = sites.chain([0, x]).max().unwrap();
            let walk = (-lo + (hi - lo) + (hi - x)).min(hi + (hi - lo) + (x - lo));
            assert_eq!(ball.distance(i) as i64, lamps.len() as i64 + walk, "{v}");
        }
    }
}

#[test]
fn fixed_end_heights_along_the_ray() {
    for r in 1..=6 {
        let ball = build(&Family::FixedEndTree { b: 3 }, r);
        let heights = ball.heights().unwrap();
        assert_eq!(*heights.iter().min().unwrap(), -(r as i64));
        for k in 0..=r as i64 {
            let at: Vec<usize> = (0..ball.n_vertices()).filter(|&v| heights[v] == -k).collect();
            let nearest = *at.iter().min_by_key(|&&v| ball.distance(v)).unwrap();
            // The ray vertex: distance k, and every other vertex at that
            // height lies farther out.
            assert_eq!(ball.distance(nearest) as i64, k);
            assert_eq!(at.iter().filter(|&&v| ball.distance(v) as i64 == k).count(), 1);
            if k >= r as i64 - 1 {
                assert_eq!(at.len(), 1, "R={r} k={k}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_is_symmetric_and_interior_is_full(fi in 0usize..14, r in 0usize..5) {
        let f = &families()[fi];
        let ball = build(f, r);
        for v in 0..ball.n_vertices() {
            let nb = ball.neighbors(v).unwrap();
            prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
            if ball.distance(v) < r as u32 {
                prop_assert_eq!(nb.len(), f.degree());
            } else {
                prop_assert!(nb.len() <= f.degree());
            }
            for &w in &nb {
                prop_assert!(ball.neighbors(w).unwrap().contains(&v));
                prop_assert!(ball.distance(v).abs_diff(ball.distance(w)) <= 1);
            }
        }
    }

    #[test]
    fn vertex_keys_round_trip(fi in 0usize..14, r in 0usize..4) {
        let ball = build(&families()[fi], r);
        for (i, v) in ball.vertices().iter().enumerate() {
            let parsed = Vertex::parse(&v.key()).unwrap();
            prop_assert_eq!(ball.find(&parsed), Some(i));
        }
        for e in 0..ball.n_edges() {
            let k = ball.edge_key(e);
            prop_assert_eq!(ball.find_edge(&k).unwrap(), e);
        }
    }
}
