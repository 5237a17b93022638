//! Tape-recorded hypergraph construction and convolution.
//!
//! Everything works on a batch of `G` independent hypergraphs over the same
//! `n` agents, stacked row-wise: agent `i` of sample `g` lives on row
//! `g·n + i`. Incidence matrices are therefore `(G·n) × (m+n)`, agent signals
//! `(G·n) × f`, and per-hyperedge quantities `G × (m+n)`.

use crate::numcore::{Matrix, NumError, Tape, Var};

/// How the one-hot block `H₂` is scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OneHotScale {
    /// `μ·Iₙ` with `μ` the mean of the learned block.
    MeanOfLearned,
    /// Plain `Iₙ` (no learned block).
    Unit,
}

#[derive(Clone, Copy, Debug)]
pub struct HypergraphVars {
    /// Incidence `(G·n) × (m+n)`.
    pub h: Var,
    /// Per-sample mean of the learned block, `G × 1`.
    pub mu: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DegreeVars {
    /// Vertex degrees, `(G·n) × 1`.
    pub vertex: Var,
    /// Hyperedge degrees, `G × (m+n)`.
    pub edge: Var,
}

/// Learned incidence generator: one linear map shared by all agents.
#[derive(Clone, Copy, Debug)]
pub struct Generator {
    /// `d_obs × m`.
    pub weight: Var,
    /// `1 × m`.
    pub bias: Var,
}

/// `Iₙ` stacked `groups` times.
pub fn tiled_identity(n: usize, groups: usize) -> Matrix {
    let mut m = Matrix::zeros(n * groups, n);
    for g in 0..groups {
        for i in 0..n {
            m.set(g * n + i, i, 1.0);
        }
    }
    m
}

/// `H = [relu(Z·W + b) | μ·Iₙ]`, or `Iₙ` alone when `generator` is `None`.
pub fn build_hypergraph(
    tape: &mut Tape,
    z: Var,
    generator: Option<Generator>,
    n: usize,
    one_hot: OneHotScale,
) -> Result<HypergraphVars, NumError> {
    let rows = tape.shape(z).0;
    if n == 0 || !rows.is_multiple_of(n) {
        return Err(NumError::Dimension {
            op: "build-hypergraph",
            lhs: tape.shape(z),
            rhs: (n, 1),
        });
    }
    let groups = rows / n;
    let eye = tape.constant(tiled_identity(n, groups));
    let learned = match generator {
        Some(g) => {
            let pre = tape.matmul(z, g.weight)?;
            let pre = tape.add(pre, g.bias)?;
            Some(tape.relu(pre)?)
        }
        None => None,
    };
    let (h, mu) = match (learned, one_hot) {
        (Some(h1), OneHotScale::MeanOfLearned) => {
            let m = tape.shape(h1).1;
            let per_row = tape.row_sums(h1)?;
            let per_sample = tape.segment_sum(per_row, n)?;
            let mu = tape.scale(per_sample, 1.0 / (n * m) as f64)?;
            let mu_rows = tape.repeat_rows(mu, n)?;
            let h2 = tape.mul(eye, mu_rows)?;
            (tape.concat_cols(&[h1, h2])?, mu)
        }
        (Some(h1), OneHotScale::Unit) => {
            let mu = tape.constant(Matrix::ones(groups, 1));
            (tape.concat_cols(&[h1, eye])?, mu)
        }
        (None, _) => {
            let mu = tape.constant(Matrix::ones(groups, 1));
            (eye, mu)
        }
    };
    Ok(HypergraphVars { h, mu })
}

/// `D_i = Σ_ε |w_ε|·H_iε`, `B_ε = Σ_i H_iε`; `w_abs` is `1 × (m+n)`, already non-negative.
pub fn degree_matrices(tape: &mut Tape, h: Var, w_abs: Var, n: usize) -> Result<DegreeVars, NumError> {
    let weighted = tape.mul(h, w_abs)?;
    let vertex = tape.row_sums(weighted)?;
    let edge = tape.segment_sum(h, n)?;
    Ok(DegreeVars { vertex, edge })
}

/// `D^{-1/2} H |W| B^{-1} Hᵀ D^{-1/2} x` for every sample, with safe inverses.
///
/// `w` holds raw edge weights (`1 × (m+n)`); the absolute value is taken here.
pub fn hgcn_layer(tape: &mut Tape, x: Var, h: Var, w: Var, n: usize) -> Result<Var, NumError> {
    if tape.shape(x).0 != tape.shape(h).0 {
        return Err(NumError::Dimension {
            op: "hgcn-layer",
            lhs: tape.shape(x),
            rhs: tape.shape(h),
        });
    }
    let w_abs = tape.abs(w)?;
    let deg = degree_matrices(tape, h, w_abs, n)?;
    let d_inv_sqrt = tape.rsqrt_safe(deg.vertex)?;
    let b_inv = tape.recip_safe(deg.edge)?;
    let edge_coef = tape.mul(b_inv, w_abs)?;
    let f = tape.shape(x).1;
    let mut outs = Vec::with_capacity(f);
    for j in 0..f {
        let xj = if f == 1 { x } else { tape.select_cols(x, vec![j])? };
        let y = tape.mul(xj, d_inv_sqrt)?;
        let hy = tape.mul(h, y)?;
        let per_edge = tape.segment_sum(hy, n)?;
        let per_edge = tape.mul(per_edge, edge_coef)?;
        let spread = tape.repeat_rows(per_edge, n)?;
        let back = tape.mul(h, spread)?;
        let s = tape.row_sums(back)?;
        outs.push(tape.mul(s, d_inv_sqrt)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_cols(&outs)
    }
}

/// Two stacked convolutions with distinct edge weights.
pub fn hgcn_transform(
    tape: &mut Tape,
    q: Var,
    h: Var,
    w1: Var,
    w2: Var,
    n: usize,
) -> Result<Var, NumError> {
    let x = hgcn_layer(tape, q, h, w1, n)?;
    hgcn_layer(tape, x, h, w2, n)
}
