use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical vertex encodings.
///
/// Each family uses exactly one variant, and each group element has exactly
/// one encoding:
/// - `Lattice`: integer coordinates (reduced mod `L` on tori).
/// - `Word`: reduced word of letter codes. Trees use involutions `0..b`;
///   free groups use `2i` for `a_i` and `2i + 1` for its inverse.
/// - `FreeProduct`: normal form `z0 c z1 c ... c zn` of `Z^2 * Z_2`, stored
///   as the syllables `z0..zn`; interior syllables are nonzero.
/// - `Lamp`: lit lamps sorted by site (values nonzero mod m) and the
///   lamplighter position.
/// - `Pair`: product graph vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Vertex {
    Lattice(Vec<i64>),
    Word(Vec<u8>),
    FreeProduct(Vec<[i64; 2]>),
    Lamp {
        lamps: Vec<(Vec<i64>, u8)>,
        pos: Vec<i64>,
    },
    Pair(Box<Vertex>, Box<Vertex>),
}

impl Vertex {
    /// Serialization used in edge keys and exports.
    pub fn key(&self) -> String {
        self.to_string()
    }

    pub fn parse(key: &str) -> Result<Vertex> {
        let mut p = Parser {
            src: key.as_bytes(),
            at: 0,
        };
        let v = p
            .vertex()
            .ok_or_else(|| Error::BadVertexKey(key.to_string()))?;
        if p.at != p.src.len() {
            return Err(Error::BadVertexKey(key.to_string()));
        }
        Ok(v)
    }
}

fn write_coords(f: &mut fmt::Formatter<'_>, xs: &[i64]) -> fmt::Result {
    write!(f, "(")?;
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{x}")?;
    }
    write!(f, ")")
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::Lattice(xs) => {
                write!(f, "z")?;
                write_coords(f, xs)
            }
            Vertex::Word(w) => {
                write!(f, "w:")?;
                for (i, l) in w.iter().enumerate() {
                    if i > 0 {
                        write!(f, ".")?;
                    }
                    write!(f, "{l}")?;
                }
                Ok(())
            }
            Vertex::FreeProduct(syl) => {
                write!(f, "fp:")?;
                for (i, z) in syl.iter().enumerate() {
                    if i > 0 {
                        write!(f, "c")?;
                    }
                    write_coords(f, z)?;
                }
                Ok(())
            }
            Vertex::Lamp { lamps, pos } => {
                write!(f, "l{{")?;
                for (i, (site, val)) in lamps.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write_coords(f, site)?;
                    write!(f, ":{val}")?;
                }
                write!(f, "}}@")?;
                write_coords(f, pos)
            }
            Vertex::Pair(a, b) => write!(f, "<{a}|{b}>"),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    at: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.at).copied()
    }

    fn eat(&mut self, c: u8) -> Option<()> {
        (self.peek()? == c).then(|| self.at += 1)
    }

    fn eat_str(&mut self, s: &str) -> Option<()> {
        let end = self.at + s.len();
        (self.src.get(self.at..end)? == s.as_bytes()).then(|| self.at = end)
    }

    fn int(&mut self) -> Option<i64> {
        let start = self.at;
        if self.peek() == Some(b'-') {
            self.at += 1;
        }
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.at += 1;
        }
        std::str::from_utf8(&self.src[start..self.at])
            .ok()?
            .parse()
            .ok()
    }

    fn coords(&mut self) -> Option<Vec<i64>> {
        self.eat(b'(')?;
        let mut xs = Vec::new();
        if self.eat(b')').is_some() {
            return Some(xs);
        }
        loop {
            xs.push(self.int()?);
            if self.eat(b')').is_some() {
                return Some(xs);
            }
            self.eat(b',')?;
        }
    }

    fn vertex(&mut self) -> Option<Vertex> {
        match self.peek()? {
            b'z' => {
                self.at += 1;
                Some(Vertex::Lattice(self.coords()?))
            }
            b'w' => {
                self.eat_str("w:")?;
                let mut w = Vec::new();
                if matches!(self.peek(), Some(b'0'..=b'9')) {
                    loop {
                        let l = self.int()?;
                        w.push(u8::try_from(l).ok()?);
                        if self.eat(b'.').is_none() {
                            break;
                        }
                    }
                }
                Some(Vertex::Word(w))
            }
            b'f' => {
                self.eat_str("fp:")?;
                let mut syl = Vec::new();
                loop {
                    let z = self.coords()?;
                    if z.len() != 2 {
                        return None;
                    }
                    syl.push([z[0], z[1]]);
                    if self.eat(b'c').is_none() {
                        break;
                    }
                }
                Some(Vertex::FreeProduct(syl))
            }
            b'l' => {
                self.eat_str("l{")?;
                let mut lamps = Vec::new();
                if self.eat(b'}').is_none() {
                    loop {
                        let site = self.coords()?;
                        self.eat(b':')?;
                        let val = u8::try_from(self.int()?).ok()?;
                        lamps.push((site, val));
                        if self.eat(b'}').is_some() {
                            break;
                        }
                        self.eat(b',')?;
                    }
                }
                self.eat(b'@')?;
                let pos = self.coords()?;
                Some(Vertex::Lamp { lamps, pos })
            }
            b'<' => {
                self.at += 1;
                let a = self.vertex()?;
                self.eat(b'|')?;
                let b = self.vertex()?;
                self.eat(b'>')?;
                Some(Vertex::Pair(Box::new(a), Box::new(b)))
            }
            _ => None,
        }
    }
}
