//! Independent reference implementations and check harnesses shared by the
//! integration suites. Nothing here calls the tape; oracles work on plain
//! `Vec<f64>` / `Matrix` values with textbook loops.
#![allow(dead_code)]

pub mod criteria;
pub mod grad_suite;

use hypermix::numcore::{Matrix, Rng, Tape, Var};

pub fn rand_matrix(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform_range(lo, hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Random matrix whose entries all satisfy `|x| >= gap`.
pub fn rand_away_from_zero(rng: &mut Rng, rows: usize, cols: usize, scale: f64, gap: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let mag = rng.uniform_range(gap, scale);
            if rng.uniform() < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

// ---------------------------------------------------------------- gradients

/// Result of one finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Norm-wise relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖, 1e-8)` over all inputs.
    pub rel_error: f64,
    pub grad_norm: f64,
    /// Some coordinate sits on a kink at the finite-difference scale.
    pub kinked: bool,
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Second differences above this (relative to `max(1, |f|)`) mark a kink.
const KINK_CURVATURE: f64 = 1e-7;

/// Compares tape gradients of `⟨R, f(inputs)⟩` with central differences.
///
/// `build` records `f` on a fresh tape given input leaves; `R` is a fixed
/// random projection so non-scalar outputs are covered in every direction.
pub fn grad_check(inputs: &[Matrix], rng: &mut Rng, build: impl Fn(&mut Tape, &[Var]) -> Var) -> GradCheck {
    let forward = |xs: &[Matrix]| -> Matrix {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).clone()
    };
    let y0 = forward(inputs);
    let proj = rand_matrix(rng, y0.rows(), y0.cols(), -1.0, 1.0);
    let dot = |y: &Matrix| -> f64 { y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum() };
    let f0 = dot(&y0);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.gradient(&[(out, proj.clone())]).unwrap();

    let (mut diff2, mut ad2, mut fd2) = (0.0, 0.0, 0.0);
    let mut kinked = false;
    let mut xs = inputs.to_vec();
    for k in 0..inputs.len() {
        let ad = grads.get_or_zeros(vars[k], &inputs[k]);
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            xs[k].data_mut()[i] = orig + FD_STEP;
            let up = dot(&forward(&xs));
            xs[k].data_mut()[i] = orig - FD_STEP;
            let down = dot(&forward(&xs));
            xs[k].data_mut()[i] = orig;
            if (up - 2.0 * f0 + down).abs() > KINK_CURVATURE * f0.abs().max(1.0) {
                kinked = true;
            }
            let fd = (up - down) / (2.0 * FD_STEP);
            let a = ad.data()[i];
            diff2 += (a - fd).powi(2);
            ad2 += a * a;
            fd2 += fd * fd;
        }
    }
    let (ad_n, fd_n) = (ad2.sqrt(), fd2.sqrt());
    GradCheck {
        rel_error: diff2.sqrt() / ad_n.max(fd_n).max(1e-8),
        grad_norm: ad_n,
        kinked,
    }
}

/// Summary of a gradient sweep over random points.
#[derive(Debug, Clone, Copy)]
pub struct SweepResult {
    pub points: usize,
    pub rejected: usize,
    pub worst: f64,
}

impl SweepResult {
    pub fn passed(&self) -> bool {
        self.worst <= FD_REL_TOL && self.rejected * 5 < self.points
    }
}

/// Checks `points` random non-kink instances; kinked draws are resampled.
pub fn grad_sweep(
    points: usize,
    seed: u64,
    mut sample: impl FnMut(&mut Rng) -> Vec<Matrix>,
    build: impl Fn(&mut Tape, &[Var]) -> Var + Copy,
) -> SweepResult {
    let mut rng = Rng::new(seed);
    let mut res = SweepResult {
        points,
        rejected: 0,
        worst: 0.0,
    };
    let mut done = 0;
    while done < points {
        let inputs = sample(&mut rng);
        let c = grad_check(&inputs, &mut rng, build);
        if c.kinked {
            res.rejected += 1;
            assert!(res.rejected <= points, "almost every draw is on a kink");
            continue;
        }
        res.worst = res.worst.max(c.rel_error);
        done += 1;
    }
    res
}

// ---------------------------------------------------------------- hypergraph

/// Dense `D^{-1/2} H |W| B^{-1} Hᵀ D^{-1/2} x` with explicit diagonal matrices.
pub fn dense_hgcn_layer(x: &[f64], h: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let n = h.len();
    let e = w.len();
    let inv = |v: f64| if v > 1e-8 { 1.0 / v } else { 0.0 };
    let inv_sqrt = |v: f64| if v > 1e-8 { 1.0 / v.sqrt() } else { 0.0 };
    let mut dm = vec![vec![0.0; n]; n];
    for i in 0..n {
        let d: f64 = (0..e).map(|j| w[j].abs() * h[i][j]).sum();
        dm[i][i] = inv_sqrt(d);
    }
    let mut bm = vec![vec![0.0; e]; e];
    for j in 0..e {
        let b: f64 = (0..n).map(|i| h[i][j]).sum();
        bm[j][j] = inv(b) * w[j].abs();
    }
    let mm = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let (r, k, c) = (a.len(), b.len(), b[0].len());
        let mut o = vec![vec![0.0; c]; r];
        for i in 0..r {
            for p in 0..k {
                for j in 0..c {
                    o[i][j] += a[i][p] * b[p][j];
                }
            }
        }
        o
    };
    let ht: Vec<Vec<f64>> = (0..e).map(|j| (0..n).map(|i| h[i][j]).collect()).collect();
    let p = mm(&mm(&mm(&mm(&dm, &h.to_vec()), &bm), &ht), &dm);
    (0..n).map(|i| (0..n).map(|k| p[i][k] * x[k]).sum()).collect()
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row_slice(r).to_vec()).collect()
}

// ---------------------------------------------------------------- networks

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y = x W + b` for one row.
pub fn affine(x: &[f64], w: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..w.cols())
        .map(|j| b.get(0, j) + (0..w.rows()).map(|i| x[i] * w.get(i, j)).sum::<f64>())
        .collect()
}

/// GRU step written from the gate equations, gate blocks ordered reset, update, candidate.
pub fn gru_oracle(x: &[f64], h: &[f64], w_ih: &Matrix, w_hh: &Matrix, b_ih: &Matrix, b_hh: &Matrix) -> Vec<f64> {
    let hid = h.len();
    let gi = affine(x, w_ih, b_ih);
    let gh = affine(h, w_hh, b_hh);
    (0..hid)
        .map(|j| {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[hid + j] + gh[hid + j]);
            let n = (gi[2 * hid + j] + r * gh[2 * hid + j]).tanh();
            (1.0 - z) * n + z * h[j]
        })
        .collect()
}

pub fn relu_vec(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}
