//! Finite balls and torus quotients of Cayley graphs.

mod ball;
mod edge;
mod family;
mod vertex;

pub use ball::{Edge, GraphBall, GraphSpec};
pub use edge::{edge_digest, EdgeKey};
pub use family::{Family, Generator, MAX_BALL_VERTICES};
pub use vertex::Vertex;
