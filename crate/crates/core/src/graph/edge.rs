use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::vertex::Vertex;

/// Unordered edge identity: endpoints in vertex-encoding order plus the
/// generator label. Independent of any particular ball.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub lo: Vertex,
    pub hi: Vertex,
    pub label: String,
}

impl EdgeKey {
    pub fn new(a: Vertex, b: Vertex, label: impl Into<String>) -> Self {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        EdgeKey {
            lo,
            hi,
            label: label.into(),
        }
    }

    /// 64-bit digest used as the counter of every per-edge random stream.
    pub fn digest(&self) -> u64 {
        edge_digest(&self.lo, &self.hi, &self.label)
    }
}

/// Digest of `"{lo}\t{hi}\t{label}"`: first 8 bytes of SHA-256, little endian.
/// Argument order does not matter.
pub fn edge_digest(a: &Vertex, b: &Vertex, label: &str) -> u64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let h = Sha256::digest(format!("{lo}\t{hi}\t{label}").as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("sha256 has 32 bytes"))
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.lo, self.hi, self.label)
    }
}
