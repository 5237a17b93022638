//! The finite-difference gradient suite: every tape primitive, every layer and
//! the full `Q_tot` composite of each mixer, as named sweep results.

use hypermix::agents::{AgentConfig, AgentNetwork};
use hypermix::envs::EnvSpec;
use hypermix::hypergraph::ops::{self as hg, Generator, OneHotScale};
use hypermix::mixers::{Mixer, MixerConfig, MixerKind};
use hypermix::nn::{self, Activation, Binding, LayerSpec, ParameterStore};
use hypermix::numcore::{GruVars, Matrix, Rng, Tape, Var};

use super::{grad_sweep, rand_away_from_zero, rand_matrix, SweepResult};

pub type Named = (String, SweepResult);

/// Every group of the suite with `points` accepted points per sweep.
pub fn all(points: usize) -> Vec<Named> {
    let mut out = Vec::new();
    for group in [elementwise, safe_inverses, broadcasting, structural, gru_cell, layers, agent, hypergraph, q_tot] {
        group(points, &mut out);
    }
    out
}



fn unary(points: usize, out: &mut Vec<Named>, name: &str, seed: u64, gap: f64, op: fn(&mut Tape, Var) -> Var) {
    let r = grad_sweep(
        points,
        seed,
        |rng| vec![rand_away_from_zero(rng, 3, 4, 2.0, gap)],
        move |t, v| op(t, v[0]),
    );
    out.push((name.to_string(), r));
}

pub fn elementwise(points: usize, out: &mut Vec<Named>) {
    unary(points, out, "relu", 1, 0.01, |t, a| t.relu(a).unwrap());
    unary(points, out, "elu", 2, 0.01, |t, a| t.elu(a).unwrap());
    unary(points, out, "abs", 3, 0.01, |t, a| t.abs(a).unwrap());
    unary(points, out, "sigmoid", 4, 0.0, |t, a| t.sigmoid(a).unwrap());
    unary(points, out, "tanh", 5, 0.0, |t, a| t.tanh(a).unwrap());
    unary(points, out, "scale", 6, 0.0, |t, a| t.scale(a, -1.7).unwrap());
    unary(points, out, "sum", 7, 0.0, |t, a| t.sum(a).unwrap());
    unary(points, out, "mean", 8, 0.0, |t, a| t.mean(a).unwrap());
    unary(points, out, "row-sums", 9, 0.0, |t, a| t.row_sums(a).unwrap());
    unary(points, out, "reshape", 10, 0.0, |t, a| {
        let r = t.reshape(a, 2, 6).unwrap();
        t.tanh(r).unwrap()
    });
    unary(points, out, "select-rows", 11, 0.0, |t, a| t.select_rows(a, vec![2, 0, 2]).unwrap());
    unary(points, out, "select-cols", 12, 0.0, |t, a| t.select_cols(a, vec![3, 1]).unwrap());
    unary(points, out, "gather-cols", 13, 0.0, |t, a| t.gather_cols(a, vec![3, 0, 1]).unwrap());
}

pub fn safe_inverses(points: usize, out: &mut Vec<Named>) {
    for (name, seed, op) in [
        ("reciprocal-sqrt", 20u64, (|t: &mut Tape, a| t.rsqrt_safe(a).unwrap()) as fn(&mut Tape, Var) -> Var),
        ("safe-reciprocal", 21, |t: &mut Tape, a| t.recip_safe(a).unwrap()),
    ] {
        let r = grad_sweep(points, seed, |rng| vec![rand_matrix(rng, 3, 3, 0.2, 3.0)], move |t, v| op(t, v[0]));
        out.push((name.to_string(), r));
    }
}

pub fn broadcasting(points: usize, out: &mut Vec<Named>) {
    let shapes = [(3, 4), (1, 4), (3, 1), (1, 1)];
    for (k, &(br, bc)) in shapes.iter().enumerate() {
        for (name, op) in [
            ("add", (|t: &mut Tape, a, b| t.add(a, b).unwrap()) as fn(&mut Tape, Var, Var) -> Var),
            ("sub", |t: &mut Tape, a, b| t.sub(a, b).unwrap()),
            ("elementwise-multiply", |t: &mut Tape, a, b| t.mul(a, b).unwrap()),
        ] {
            let r = grad_sweep(
                points,
                30 + k as u64,
                |rng| vec![rand_matrix(rng, 3, 4, -2.0, 2.0), rand_matrix(rng, br, bc, -2.0, 2.0)],
                move |t, v| op(t, v[0], v[1]),
            );
            out.push((format!("{name} rhs {br}x{bc}"), r));
        }
    }
}

pub fn structural(points: usize, out: &mut Vec<Named>) {
    let r = grad_sweep(
        points,
        40,
        |rng| vec![rand_matrix(rng, 3, 4, -1.0, 1.0), rand_matrix(rng, 4, 2, -1.0, 1.0)],
        |t, v| t.matmul(v[0], v[1]).unwrap(),
    );
    out.push(("matmul".to_string(), r));
    let r = grad_sweep(
        points,
        41,
        |rng| vec![rand_matrix(rng, 3, 2, -1.0, 1.0), rand_matrix(rng, 3, 1, -1.0, 1.0)],
        |t, v| t.concat_cols(&[v[0], v[1], v[0]]).unwrap(),
    );
    out.push(("concat-columns".to_string(), r));
    let r = grad_sweep(
        points,
        42,
        |rng| vec![rand_matrix(rng, 2, 3, -1.0, 1.0), rand_matrix(rng, 1, 3, -1.0, 1.0)],
        |t, v| t.concat_rows(&[v[0], v[1]]).unwrap(),
    );
    out.push(("concat-rows".to_string(), r));
    let r = grad_sweep(points, 43, |rng| vec![rand_matrix(rng, 6, 2, -1.0, 1.0)], |t, v| {
        t.segment_sum(v[0], 3).unwrap()
    });
    out.push(("segment-sum".to_string(), r));
    let r = grad_sweep(points, 44, |rng| vec![rand_matrix(rng, 2, 3, -1.0, 1.0)], |t, v| {
        t.repeat_rows(v[0], 3).unwrap()
    });
    out.push(("repeat-rows".to_string(), r));
}

pub fn gru_cell(points: usize, out: &mut Vec<Named>) {
    let (rows, inp, hid) = (3, 4, 5);
    let r = grad_sweep(
        points,
        50,
        |rng| {
            vec![
                rand_matrix(rng, rows, inp, -1.0, 1.0),
                rand_matrix(rng, rows, hid, -1.0, 1.0),
                rand_matrix(rng, inp, 3 * hid, -0.5, 0.5),
                rand_matrix(rng, hid, 3 * hid, -0.5, 0.5),
                rand_matrix(rng, 1, 3 * hid, -0.5, 0.5),
                rand_matrix(rng, 1, 3 * hid, -0.5, 0.5),
            ]
        },
        |t, v| {
            t.gru_cell(GruVars {
                x: v[0],
                h: v[1],
                w_ih: v[2],
                w_hh: v[3],
                b_ih: v[4],
                b_hh: v[5],
            })
            .unwrap()
        },
    );
    out.push(("gru-cell".to_string(), r));
}

// ------------------------------------------------------------------ layers

/// Parameters of `store` as sweep inputs plus a builder that rebinds them.
fn store_inputs(store: &ParameterStore) -> (Vec<String>, Vec<Matrix>) {
    store.iter().map(|(k, p)| (k.to_string(), p.value.clone())).unzip()
}

fn binding(names: &[String], vars: &[Var]) -> Binding {
    Binding::from_pairs(names.iter().cloned().zip(vars.iter().copied()))
}

fn layer_sweep(points: usize, out: &mut Vec<Named>, name: &str, seed: u64, spec: LayerSpec, build: fn(&mut Tape, &Binding, Var) -> Var) {
    let mut store = ParameterStore::new();
    nn::init_params(&spec, "l", &mut Rng::new(seed), &mut store).unwrap();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let r = grad_sweep(
        points,
        seed,
        |rng| {
            let mut s = ParameterStore::new();
            nn::init_params(&spec, "l", rng, &mut s).unwrap();
            // biases start at zero; randomize them too
            let (_, mut xs) = store_inputs(&s);
            for m in xs.iter_mut() {
                for v in m.data_mut() {
                    *v += rng.uniform_range(-0.3, 0.3);
                }
            }
            xs.push(rand_matrix(rng, 3, spec.input_dim, -1.0, 1.0));
            xs
        },
        |t, v| {
            let (params, x) = v.split_at(v.len() - 1);
            let b = binding(&names, params);
            build(t, &b, x[0])
        },
    );
    out.push((name.to_string(), r));
}

pub fn layers(points: usize, out: &mut Vec<Named>) {
    layer_sweep(points, out, "linear", 60, LayerSpec::linear(4, 3), |t, b, x| nn::linear(t, b, "l", x).unwrap());
    layer_sweep(points, out, "mlp", 61, LayerSpec::mlp(4, 6, 3, Activation::Relu), |t, b, x| {
        nn::mlp(t, b, "l", Activation::Relu, x).unwrap()
    });
    layer_sweep(points, out, "mlp-elu", 62, LayerSpec::mlp(4, 6, 3, Activation::Elu), |t, b, x| {
        nn::mlp(t, b, "l", Activation::Elu, x).unwrap()
    });
    layer_sweep(points, out, "gru-layer", 63, LayerSpec::gru_cell(4, 4), |t, b, x| {
        let h = t.tanh(x).unwrap();
        nn::gru_cell(t, b, "l", x, h).unwrap()
    });
}

pub fn agent(points: usize, out: &mut Vec<Named>) {
    let net = AgentNetwork::new(3, 4, 2, AgentConfig { hidden: 5, rnn_hidden: 4 });
    let mut s = ParameterStore::new();
    net.init(&mut s, &mut Rng::new(0)).unwrap();
    let names: Vec<String> = s.names().map(str::to_string).collect();
    let r = grad_sweep(
        points,
        70,
        |rng| {
            let mut s = ParameterStore::new();
            net.init(&mut s, rng).unwrap();
            let (_, mut xs) = store_inputs(&s);
            xs.push(rand_matrix(rng, 4, net.input_dim(), -1.0, 1.0));
            xs.push(rand_matrix(rng, 4, net.input_dim(), -1.0, 1.0));
            xs
        },
        |t, v| {
            let (params, x) = v.split_at(v.len() - 2);
            let b = binding(&names, params);
            let h0 = t.constant(net.initial_hidden(4));
            let (_, h1) = net.forward(t, &b, x[0], h0).unwrap();
            let (q, _) = net.forward(t, &b, x[1], h1).unwrap();
            q
        },
    );
    out.push(("agent".to_string(), r));
}

// -------------------------------------------------------------- hypergraph

pub fn hypergraph(points: usize, out: &mut Vec<Named>) {
    let (n, m, groups) = (3, 2, 2);
    let r = grad_sweep(
        points,
        80,
        |rng| {
            vec![
                rand_matrix(rng, groups * n, 2, -2.0, 2.0),
                rand_matrix(rng, groups * n, m + n, 0.2, 1.5),
                rand_away_from_zero(rng, 1, m + n, 2.0, 0.05),
            ]
        },
        |t, v| hg::hgcn_layer(t, v[0], v[1], v[2], n).unwrap(),
    );
    out.push(("hgcn-layer (x, H, w)".to_string(), r));

    let r = grad_sweep(
        points,
        81,
        |rng| {
            vec![
                rand_matrix(rng, groups * n, 1, -2.0, 2.0),
                rand_matrix(rng, groups * n, 4, -1.0, 1.0),
                rand_matrix(rng, 4, m, -1.0, 1.0),
                rand_matrix(rng, 1, m, -0.5, 0.5),
                rand_away_from_zero(rng, 1, m + n, 2.0, 0.05),
                rand_away_from_zero(rng, 1, m + n, 2.0, 0.05),
            ]
        },
        |t, v| {
            let g = hg::build_hypergraph(
                t,
                v[1],
                Some(Generator {
                    weight: v[2],
                    bias: v[3],
                }),
                n,
                OneHotScale::MeanOfLearned,
            )
            .unwrap();
            hg::hgcn_transform(t, v[0], g.h, v[4], v[5], n).unwrap()
        },
    );
    out.push(("hgcn-transform with generator".to_string(), r));
}

// --------------------------------------------------------------- composite

fn small_spec(n: usize) -> EnvSpec {
    EnvSpec {
        n_agents: n,
        n_actions: 3,
        obs_dim: 4,
        state_dim: 5,
        episode_limit: 1,
        gamma: 0.99,
    }
}

/// `Q_tot` of every mixer as a function of all mixer parameters, the agent
/// values, observations and state.
fn q_tot_sweep(kind: MixerKind, seed: u64, points: usize) -> SweepResult {
    let n = 3;
    let groups = 2;
    let spec = small_spec(n);
    let cfg = MixerConfig {
        embed: 3,
        hypernet_hidden: 4,
        hyperedges: 2,
    };
    let mixer = Mixer::new(kind, &spec, cfg);
    let mut s = ParameterStore::new();
    mixer.init(&mut s, &mut Rng::new(seed)).unwrap();
    let names: Vec<String> = s.names().map(str::to_string).collect();
    grad_sweep(
        points,
        seed,
        |rng| {
            let mut s = ParameterStore::new();
            mixer.init(&mut s, rng).unwrap();
            let mut xs: Vec<Matrix> = s
                .iter()
                .map(|(name, p)| {
                    let mut m = p.value.clone();
                    if name.ends_with(".w1") || name.ends_with(".w2") {
                        m = rand_away_from_zero(rng, m.rows(), m.cols(), 2.0, 0.05);
                    } else {
                        m.data_mut().iter_mut().for_each(|v| *v += rng.uniform_range(-0.2, 0.2));
                    }
                    m
                })
                .collect();
            xs.push(rand_matrix(rng, groups * n, 1, -2.0, 2.0));
            xs.push(rand_matrix(rng, groups * n, spec.obs_dim, -1.0, 1.0));
            xs.push(rand_matrix(rng, groups, spec.state_dim, -1.0, 1.0));
            xs
        },
        |t, v| {
            let (params, rest) = v.split_at(v.len() - 3);
            let b = binding(&names, params);
            mixer.forward(t, &b, rest[0], rest[1], rest[2]).unwrap().q_tot
        },
    )
}

pub fn q_tot(points: usize, out: &mut Vec<Named>) {
    for (k, kind) in MixerKind::ALL.into_iter().enumerate() {
        let r = q_tot_sweep(kind, 90 + k as u64, points);
        out.push((format!("Q_tot {kind}"), r));
    }
}

