//! Observation-driven hypergraphs and spectral hypergraph convolution.
//!
//! The incidence matrix `H` (agents × hyperedges) has a learned block
//! `relu(Z·W + b)` followed by a scaled identity block `μ·Iₙ`, where `μ` is
//! the mean of the learned block. The convolution
//! `x' = D^{-1/2} H |W| B^{-1} Hᵀ D^{-1/2} x` uses diagonal pseudo-inverses,
//! so zero-degree vertices or hyperedges contribute nothing instead of
//! producing infinities.

pub mod ops;

use std::io::{self, Write};

use crate::numcore::{Matrix, NumError, Tape};
pub use ops::OneHotScale;

/// A single hypergraph over `n` agents with `m` learned hyperedges.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypergraph {
    pub n: usize,
    pub m: usize,
    /// `n × (m+n)` incidence.
    pub h: Matrix,
    pub mu: f64,
}

/// Diagonal degree vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Degrees {
    /// Vertex degrees, length `n`.
    pub vertex: Vec<f64>,
    /// Hyperedge degrees, length `m+n`.
    pub edge: Vec<f64>,
}

impl Hypergraph {
    /// Extracts sample `g` from a stacked `(G·n) × (m+n)` incidence.
    pub fn from_batch(h: &Matrix, mu: &Matrix, n: usize, g: usize) -> Self {
        let cols = h.cols();
        let mut out = Matrix::zeros(n, cols);
        for i in 0..n {
            out.row_slice_mut(i).copy_from_slice(h.row_slice(g * n + i));
        }
        Self {
            n,
            m: cols - n,
            h: out,
            mu: mu.get(g, 0),
        }
    }

    /// Learned block `H₁` (`n × m`).
    pub fn learned(&self) -> Matrix {
        self.h.column_range(0, self.m)
    }

    /// One-hot block `H₂` (`n × n`).
    pub fn one_hot(&self) -> Matrix {
        self.h.column_range(self.m, self.m + self.n)
    }

    /// Checks non-negativity and the `μ·Iₙ` block structure.
    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some(v) = self.h.data().iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(format!("incidence entry {v} is negative or non-finite"));
        }
        for i in 0..self.n {
            for j in 0..self.n {
                let expected = if i == j { self.mu } else { 0.0 };
                if self.h.get(i, self.m + j) != expected {
                    return Err(format!("one-hot block ({i},{j}) != {expected}"));
                }
            }
        }
        Ok(())
    }

    /// Writes one `agent,hyperedge,weight` row per incidence entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "agent,hyperedge,weight")?;
        for i in 0..self.n {
            for e in 0..self.h.cols() {
                writeln!(out, "{i},{e},{}", self.h.get(i, e))?;
            }
        }
        Ok(())
    }
}

fn edge_row(w: &[f64]) -> Matrix {
    Matrix::row(w)
}

/// Builds `H` from observations `Z` (`n × d_obs`) and a generator `d_obs × m`.
pub fn build_hypergraph(z: &Matrix, weight: &Matrix, bias: &Matrix) -> Result<Hypergraph, NumError> {
    let n = z.rows();
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let gen = ops::Generator {
        weight: tape.constant(weight.clone()),
        bias: tape.constant(bias.clone()),
    };
    let hg = ops::build_hypergraph(&mut tape, zv, Some(gen), n, OneHotScale::MeanOfLearned)?;
    Ok(Hypergraph::from_batch(tape.value(hg.h), tape.value(hg.mu), n, 0))
}

/// Degrees of `h` (`n × E`) under effective weights `|w|`.
pub fn degree_matrices(h: &Matrix, w: &[f64]) -> Result<Degrees, NumError> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let wv = tape.constant(edge_row(w));
    let w_abs = tape.abs(wv)?;
    let d = ops::degree_matrices(&mut tape, hv, w_abs, h.rows())?;
    Ok(Degrees {
        vertex: tape.value(d.vertex).data().to_vec(),
        edge: tape.value(d.edge).data().to_vec(),
    })
}

/// One convolution of `x` (`n × f`) over `h` (`n × E`).
pub fn hgcn_layer(x: &Matrix, h: &Matrix, w: &[f64]) -> Result<Matrix, NumError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h.clone());
    let wv = tape.constant(edge_row(w));
    let out = ops::hgcn_layer(&mut tape, xv, hv, wv, h.rows())?;
    Ok(tape.value(out).clone())
}

/// Two convolutions with edge weights `w1` then `w2`.
pub fn hgcn_transform(q: &Matrix, h: &Matrix, w1: &[f64], w2: &[f64]) -> Result<Matrix, NumError> {
    let mut tape = Tape::new();
    let qv = tape.constant(q.clone());
    let hv = tape.constant(h.clone());
    let w1v = tape.constant(edge_row(w1));
    let w2v = tape.constant(edge_row(w2));
    let out = ops::hgcn_transform(&mut tape, qv, hv, w1v, w2v, h.rows())?;
    Ok(tape.value(out).clone())
}

/// The `n × n` linear map applied by one convolution layer.
pub fn mixing_matrix(h: &Matrix, w: &[f64]) -> Result<Matrix, NumError> {
    hgcn_layer(&Matrix::identity(h.rows()), h, w)
}
