use serde::{Deserialize, Serialize};

use super::vertex::Vertex;
use crate::error::{Error, Result};

/// Hard cap on ball sizes, checked against an upper bound before anything
/// is allocated.
pub const MAX_BALL_VERTICES: u128 = 4_000_000;

/// Supported infinite transitive graphs (and their finite torus quotients).
///
/// Generator conventions:
/// - `lattice(d)`, `torus(d, L)`: `e1+ e1- ... ed+ ed-`, edge labels `e1..ed`.
/// - `regular_tree(b)`, `fixed_end_tree(b)`: the free product of `b` copies of
///   `Z_2`, involutions `a0..a{b-1}`.
/// - `free_group(k)`: `a0+ a0- ...`, edge labels `a0..`.
/// - `free_product_z2_z2` (`Z^2 * Z_2`): `a+ a- b+ b- c`, with `c` an involution.
/// - `product(A, B)`: generators of A prefixed `L:` then B prefixed `R:`.
/// - `lamplighter(base, m)`: base walk generators, then lamp moves `k1..k{m-1}`
///   adding `k` to the lamp under the lamplighter; edge label `k{min(k, m-k)}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Lattice { d: usize },
    Torus { d: usize, side: usize },
    RegularTree { b: usize },
    FreeGroup { k: usize },
    FreeProductZ2Z2,
    Product { left: Box<Family>, right: Box<Family> },
    Lamplighter { base: Box<Family>, modulus: u8 },
    FixedEndTree { b: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generator {
    pub name: String,
    pub edge_label: String,
}

fn bound(name: &'static str, value: usize, lo: usize, hi: usize) -> Result<()> {
    if (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(Error::BoundExceeded {
            name,
            value: value.to_string(),
            allowed: format!("{lo}..={hi}"),
        })
    }
}

fn lattice_gens(d: usize) -> Vec<Generator> {
    (1..=d)
        .flat_map(|i| {
            ["+", "-"].into_iter().map(move |s| Generator {
                name: format!("e{i}{s}"),
                edge_label: format!("e{i}"),
            })
        })
        .collect()
}

fn lattice_step(xs: &mut [i64], g: usize) {
    xs[g / 2] += if g.is_multiple_of(2) { 1 } else { -1 };
}

impl Family {
    pub fn validate(&self) -> Result<()> {
        match self {
            Family::Lattice { d } => bound("d", *d, 1, 4),
            Family::Torus { d, side } => {
                bound("d", *d, 1, 3)?;
                bound("side", *side, 3, 2048)
            }
            Family::RegularTree { b } | Family::FixedEndTree { b } => bound("b", *b, 2, 6),
            Family::FreeGroup { k } => bound("k", *k, 1, 3),
            Family::FreeProductZ2Z2 => Ok(()),
            Family::Product { left, right } => {
                for f in [left, right] {
                    if matches!(**f, Family::Torus { .. } | Family::FixedEndTree { .. }) {
                        return Err(Error::UnsupportedFamily(format!(
                            "{} as a product factor",
                            f.tag()
                        )));
                    }
                    f.validate()?;
                }
                Ok(())
            }
            Family::Lamplighter { base, modulus } => {
                match **base {
                    Family::Lattice { d } => bound("base d", d, 1, 2)?,
                    _ => {
                        return Err(Error::UnsupportedFamily(format!(
                            "lamplighter over {}",
                            base.tag()
                        )))
                    }
                }
                bound("modulus", *modulus as usize, 2, 4)
            }
        }
    }

    /// Short human-readable family tag, e.g. `regular_tree(3)`.
    pub fn tag(&self) -> String {
        match self {
            Family::Lattice { d } => format!("lattice({d})"),
            Family::Torus { d, side } => format!("torus({d},{side})"),
            Family::RegularTree { b } => format!("regular_tree({b})"),
            Family::FreeGroup { k } => format!("free_group({k})"),
            Family::FreeProductZ2Z2 => "free_product_z2_z2".into(),
            Family::Product { left, right } => format!("product({},{})", left.tag(), right.tag()),
            Family::Lamplighter { base, modulus } => {
                format!("lamplighter({},{modulus})", base.tag())
            }
            Family::FixedEndTree { b } => format!("fixed_end_tree({b})"),
        }
    }

    pub fn identity(&self) -> Vertex {
        match self {
            Family::Lattice { d } | Family::Torus { d, .. } => Vertex::Lattice(vec![0; *d]),
            Family::RegularTree { .. } | Family::FreeGroup { .. } | Family::FixedEndTree { .. } => {
                Vertex::Word(Vec::new())
            }
            Family::FreeProductZ2Z2 => Vertex::FreeProduct(vec![[0, 0]]),
            Family::Product { left, right } => {
                Vertex::Pair(Box::new(left.identity()), Box::new(right.identity()))
            }
            Family::Lamplighter { base, .. } => Vertex::Lamp {
                lamps: Vec::new(),
                pos: match base.identity() {
                    Vertex::Lattice(xs) => xs,
                    _ => unreachable!("validated lamplighter base"),
                },
            },
        }
    }

    pub fn generators(&self) -> Vec<Generator> {
        match self {
            Family::Lattice { d } | Family::Torus { d, .. } => lattice_gens(*d),
            Family::RegularTree { b } | Family::FixedEndTree { b } => (0..*b)
                .map(|i| Generator {
                    name: format!("a{i}"),
                    edge_label: format!("a{i}"),
                })
                .collect(),
            Family::FreeGroup { k } => (0..*k)
                .flat_map(|i| {
                    ["+", "-"].into_iter().map(move |s| Generator {
                        name: format!("a{i}{s}"),
                        edge_label: format!("a{i}"),
                    })
                })
                .collect(),
            Family::FreeProductZ2Z2 => ["a+", "a-", "b+", "b-", "c"]
                .into_iter()
                .map(|n| Generator {
                    name: n.into(),
                    edge_label: n[..1].into(),
                })
                .collect(),
            Family::Product { left, right } => {
                let mut gens: Vec<Generator> = left
                    .generators()
                    .into_iter()
                    .map(|g| Generator {
                        name: format!("L:{}", g.name),
                        edge_label: format!("L:{}", g.edge_label),
                    })
                    .collect();
                gens.extend(right.generators().into_iter().map(|g| Generator {
                    name: format!("R:{}", g.name),
                    edge_label: format!("R:{}", g.edge_label),
                }));
                gens
            }
            Family::Lamplighter { base, modulus } => {
                let m = *modulus;
                let mut gens = base.generators();
                gens.extend((1..m).map(|k| Generator {
                    name: format!("k{k}"),
                    edge_label: format!("k{}", k.min(m - k)),
                }));
                gens
            }
        }
    }

    /// Degree of the infinite graph (of the torus, for tori).
    pub fn degree(&self) -> usize {
        match self {
            Family::Lattice { d } | Family::Torus { d, .. } => 2 * d,
            Family::RegularTree { b } | Family::FixedEndTree { b } => *b,
            Family::FreeGroup { k } => 2 * k,
            Family::FreeProductZ2Z2 => 5,
            Family::Product { left, right } => left.degree() + right.degree(),
            Family::Lamplighter { base, modulus } => base.degree() + *modulus as usize - 1,
        }
    }

    /// Right multiplication by generator `g`.
    pub fn apply(&self, v: &Vertex, g: usize) -> Vertex {
        match (self, v) {
            (Family::Lattice { .. }, Vertex::Lattice(xs)) => {
                let mut xs = xs.clone();
                lattice_step(&mut xs, g);
                Vertex::Lattice(xs)
            }
            (Family::Torus { side, .. }, Vertex::Lattice(xs)) => {
                let mut xs = xs.clone();
                lattice_step(&mut xs, g);
                let i = g / 2;
                xs[i] = xs[i].rem_euclid(*side as i64);
                Vertex::Lattice(xs)
            }
            (Family::RegularTree { .. } | Family::FixedEndTree { .. }, Vertex::Word(w)) => {
                let mut w = w.clone();
                let l = g as u8;
                if w.last() == Some(&l) {
                    w.pop();
                } else {
                    w.push(l);
                }
                Vertex::Word(w)
            }
            (Family::FreeGroup { .. }, Vertex::Word(w)) => {
                let mut w = w.clone();
                let l = g as u8;
                if w.last() == Some(&(l ^ 1)) {
                    w.pop();
                } else {
                    w.push(l);
                }
                Vertex::Word(w)
            }
            (Family::FreeProductZ2Z2, Vertex::FreeProduct(syl)) => {
                let mut syl = syl.clone();
                if g < 4 {
                    let last = syl.last_mut().expect("normal form is nonempty");
                    last[g / 2] += if g.is_multiple_of(2) { 1 } else { -1 };
                } else if syl.len() >= 2 && syl.last() == Some(&[0, 0]) {
                    syl.pop();
                } else {
                    syl.push([0, 0]);
                }
                Vertex::FreeProduct(syl)
            }
            (Family::Product { left, right }, Vertex::Pair(a, b)) => {
                let nl = left.degree();
                if g < nl {
                    Vertex::Pair(Box::new(left.apply(a, g)), b.clone())
                } else {
                    Vertex::Pair(a.clone(), Box::new(right.apply(b, g - nl)))
                }
            }
            (Family::Lamplighter { base, modulus }, Vertex::Lamp { lamps, pos }) => {
                let nb = base.degree();
                let mut lamps = lamps.clone();
                let mut pos = pos.clone();
                if g < nb {
                    lattice_step(&mut pos, g);
                } else {
                    let k = (g - nb + 1) as u8;
                    match lamps.binary_search_by(|(site, _)| site.cmp(&pos)) {
                        Ok(i) => {
                            let nv = (lamps[i].1 + k) % modulus;
                            if nv == 0 {
                                lamps.remove(i);
                            } else {
                                lamps[i].1 = nv;
                            }
                        }
                        Err(i) => lamps.insert(i, (pos.clone(), k)),
                    }
                }
                Vertex::Lamp { lamps, pos }
            }
            _ => panic!("vertex {v} does not belong to {}", self.tag()),
        }
    }

    /// Is `v` a canonical encoding of a vertex of this family?
    pub fn contains(&self, v: &Vertex) -> bool {
        match (self, v) {
            (Family::Lattice { d }, Vertex::Lattice(xs)) => xs.len() == *d,
            (Family::Torus { d, side }, Vertex::Lattice(xs)) => {
                xs.len() == *d && xs.iter().all(|&x| (0..*side as i64).contains(&x))
            }
            (Family::RegularTree { b } | Family::FixedEndTree { b }, Vertex::Word(w)) => {
                w.iter().all(|&l| (l as usize) < *b) && w.windows(2).all(|p| p[0] != p[1])
            }
            (Family::FreeGroup { k }, Vertex::Word(w)) => {
                w.iter().all(|&l| (l as usize) < 2 * k) && w.windows(2).all(|p| p[0] != p[1] ^ 1)
            }
            (Family::FreeProductZ2Z2, Vertex::FreeProduct(syl)) => {
                !syl.is_empty()
                    && (syl.len() < 3 || syl[1..syl.len() - 1].iter().all(|z| *z != [0, 0]))
            }
            (Family::Product { left, right }, Vertex::Pair(a, b)) => {
                left.contains(a) && right.contains(b)
            }
            (Family::Lamplighter { base, modulus }, Vertex::Lamp { lamps, pos }) => {
                let d = base.degree() / 2;
                pos.len() == d
                    && lamps
                        .iter()
                        .all(|(s, val)| s.len() == d && *val > 0 && val < modulus)
                    && lamps.windows(2).all(|p| p[0].0 < p[1].0)
            }
            _ => false,
        }
    }

    /// Index of the generator with the given name.
    pub fn generator_index(&self, name: &str) -> Option<usize> {
        self.generators().iter().position(|g| g.name == name)
    }

    /// Upper bound on the number of vertices at distance exactly `r`, for
    /// each `r` in `0..=radius`. Exact for lattices, trees, free groups,
    /// `Z^2 * Z_2` and products of those.
    pub fn sphere_bounds(&self, radius: usize) -> Vec<u128> {
        let n = radius + 1;
        match self {
            Family::Lattice { d } => {
                let line: Vec<u128> = (0..n).map(|r| if r == 0 { 1 } else { 2 }).collect();
                let mut s = line.clone();
                for _ in 1..*d {
                    s = convolve(&s, &line, n);
                }
                s
            }
            Family::Torus { d, side } => {
                let total = (*side as u128).saturating_pow(*d as u32);
                (0..n).map(|_| total).collect()
            }
            Family::RegularTree { b } | Family::FixedEndTree { b } => {
                non_backtracking(*b as u128, n)
            }
            Family::FreeGroup { k } => non_backtracking(2 * *k as u128, n),
            Family::FreeProductZ2Z2 => {
                // F = Z + x Z^2 / (1 - x (Z - 1)) with Z the sphere series of Z^2.
                let z = Family::Lattice { d: 2 }.sphere_bounds(radius);
                let mut zp = z.clone();
                zp[0] = 0;
                let mut xzp = vec![0u128; n];
                for r in 1..n {
                    xzp[r] = zp[r - 1];
                }
                // geometric series 1/(1 - xzp)
                let mut geo = vec![0u128; n];
                geo[0] = 1;
                for r in 1..n {
                    let mut acc = 0u128;
                    for j in 1..=r {
                        acc = acc.saturating_add(xzp[j].saturating_mul(geo[r - j]));
                    }
                    geo[r] = acc;
                }
                let z2 = convolve(&z, &z, n);
                let mut xz2 = vec![0u128; n];
                for r in 1..n {
                    xz2[r] = z2[r - 1];
                }
                let tail = convolve(&xz2, &geo, n);
                (0..n).map(|r| z[r].saturating_add(tail[r])).collect()
            }
            Family::Product { left, right } => {
                convolve(&left.sphere_bounds(radius), &right.sphere_bounds(radius), n)
            }
            Family::Lamplighter { .. } => non_backtracking(self.degree() as u128, n),
        }
    }

    pub fn volume_bound(&self, radius: usize) -> u128 {
        let total = self
            .sphere_bounds(radius)
            .into_iter()
            .fold(0u128, |a, b| a.saturating_add(b));
        match self {
            Family::Torus { d, side } => (*side as u128).saturating_pow(*d as u32).min(total),
            _ => total,
        }
    }
}

fn non_backtracking(deg: u128, n: usize) -> Vec<u128> {
    let mut s = vec![1u128; n];
    for r in 1..n {
        s[r] = if r == 1 {
            deg
        } else {
            s[r - 1].saturating_mul(deg.saturating_sub(1))
        };
    }
    s
}

fn convolve(a: &[u128], b: &[u128], n: usize) -> Vec<u128> {
    let mut out = vec![0u128; n];
    for (i, &x) in a.iter().enumerate().take(n) {
        for (j, &y) in b.iter().enumerate().take(n - i) {
            out[i + j] = out[i + j].saturating_add(x.saturating_mul(y));
        }
    }
    out
}
