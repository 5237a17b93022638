//! Dense matrices, seedable randomness and a reverse-mode AD tape.

mod matrix;
mod rng;
mod tape;

pub use matrix::Matrix;
pub use rng::{Rng, Stream};
pub use tape::{Gradients, GruVars, Tape, Var, SAFE_EPS};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("index {index} out of bounds ({bound}) in {op}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{0} needs at least one operand")]
    Empty(&'static str),
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
}

/// Central-difference gradient of a scalar function.
///
/// Coordinate `i` is estimated as `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`.
pub fn finite_diff(mut f: impl FnMut(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    assert!(h > 0.0, "finite_diff step must be positive");
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`, used by gradient checks.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
