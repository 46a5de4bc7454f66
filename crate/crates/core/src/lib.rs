//! Control contraction metric synthesis for polynomial control-affine
//! systems: polynomial algebra, a dense SDP solver, sum-of-squares
//! compilation, metric synthesis, constant-metric geometry, controller and
//! observer realization, and closed-loop simulation.

pub mod poly;
pub mod sdp;
pub mod sos;
pub mod synth;
pub mod geom;
pub mod realize;
pub mod sim;
