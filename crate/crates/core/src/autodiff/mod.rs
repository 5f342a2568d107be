//! Reverse-mode differentiation with embedded forward propagation of input
//! derivatives.
//!
//! The network value, its input-gradient and (optionally) its input-Hessian
//! are all tape nodes, so penalties built from them (for instance the mean
//! squared gradient norm) differentiate with respect to network parameters
//! like any other loss.

mod jet;
mod tape;

pub use jet::{forward_jet, hessian_pairs, record_requ_stack, Jet, JetNodes, JetOrder};
pub use tape::{NodeId, ParamGrads, Tape};

pub(crate) use tape::softmax_row;

/// Rectified quadratic unit, `max(z, 0)²`.
#[inline]
pub fn requ(z: f64) -> f64 {
    let r = z.max(0.0);
    r * r
}

/// `2·max(z, 0)`, zero at the kink.
#[inline]
pub fn requ_prime(z: f64) -> f64 {
    2.0 * z.max(0.0)
}

/// `2·[z > 0]`, zero at the kink.
#[inline]
pub fn requ_second(z: f64) -> f64 {
    2.0 * step(z)
}

#[inline]
pub(crate) fn relu(z: f64) -> f64 {
    z.max(0.0)
}

#[inline]
pub(crate) fn step(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}
