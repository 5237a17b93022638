//! Joint-value heads.
//!
//! Inputs are batched per sample: `G` samples of `n` agents give chosen-action
//! values `q` of shape `(G·n) × 1`, observations `(G·n) × d_obs` and states
//! `G × d_state`. Every head returns `Q_tot` of shape `G × 1`.
//!
//! The state module turns `s` into non-negative mixing weights through
//! hypernetworks, so `Q_tot` is nondecreasing in every agent value. HGCN-MIX
//! first passes `q` through two hypergraph convolutions, which are
//! non-negative linear maps, and keeps that property.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::{joint_actions, EnvSpec};
use crate::hypergraph::Hypergraph;
use crate::hypergraph::ops::{self as hg, Generator, HypergraphVars, OneHotScale};
use crate::nn::{self, Activation, Binding, LayerSpec, ParameterStore};
use crate::numcore::{Matrix, Rng, Tape, Var};
use crate::Error;

const PREFIX: &str = "mixer";

/// Largest joint action space `igm_check` enumerates.
pub const MAX_JOINT_ACTIONS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixerKind {
    Vdn,
    Qmix,
    HgcnMix,
    /// HGCN-MIX with the learned block removed: `H = Iₙ`.
    HgcnMixOh,
}

impl MixerKind {
    pub const ALL: [MixerKind; 4] = [MixerKind::Vdn, MixerKind::Qmix, MixerKind::HgcnMix, MixerKind::HgcnMixOh];

    pub fn as_str(self) -> &'static str {
        match self {
            MixerKind::Vdn => "vdn",
            MixerKind::Qmix => "qmix",
            MixerKind::HgcnMix => "hgcn-mix",
            MixerKind::HgcnMixOh => "hgcn-mix-oh",
        }
    }

    pub fn uses_hypergraph(self) -> bool {
        matches!(self, MixerKind::HgcnMix | MixerKind::HgcnMixOh)
    }
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MixerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mixer {s:?} (expected vdn, qmix, hgcn-mix, hgcn-mix-oh)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixerConfig {
    /// Width of the mixing embedding.
    pub embed: usize,
    /// Hidden width of the weight hypernetworks and of `V(s)`.
    pub hypernet_hidden: usize,
    /// Learned hyperedges `m`; 0 falls back to the one-hot hypergraph.
    pub hyperedges: usize,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            embed: 32,
            hypernet_hidden: 64,
            hyperedges: 32,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MixOutput {
    /// `G × 1`.
    pub q_tot: Var,
    /// Transformed agent values `(G·n) × 1` (hypergraph mixers only).
    pub q_prime: Option<Var>,
    pub hypergraph: Option<HypergraphVars>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mixer {
    pub kind: MixerKind,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub config: MixerConfig,
}

fn p(name: &str) -> String {
    format!("{PREFIX}.{name}")
}

impl Mixer {
    pub fn new(kind: MixerKind, spec: &EnvSpec, config: MixerConfig) -> Self {
        Self {
            kind,
            n_agents: spec.n_agents,
            obs_dim: spec.obs_dim,
            state_dim: spec.state_dim,
            config,
        }
    }

    /// Learned hyperedge count actually used (0 for the one-hot variant).
    pub fn learned_hyperedges(&self) -> usize {
        match self.kind {
            MixerKind::HgcnMix => self.config.hyperedges,
            _ => 0,
        }
    }

    fn has_state_module(&self) -> bool {
        self.kind != MixerKind::Vdn
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<(), Error> {
        let (n, sd) = (self.n_agents, self.state_dim);
        let MixerConfig {
            embed, hypernet_hidden, ..
        } = self.config;
        if self.kind.uses_hypergraph() {
            let m = self.learned_hyperedges();
            if m > 0 {
                nn::init_params(&LayerSpec::linear(self.obs_dim, m), &p("hgcn.generator"), rng, store)?;
            }
            store.insert(p("hgcn.w1"), Matrix::ones(1, m + n))?;
            store.insert(p("hgcn.w2"), Matrix::ones(1, m + n))?;
        }
        if self.has_state_module() {
            let relu = Activation::Relu;
            nn::init_params(&LayerSpec::mlp(sd, hypernet_hidden, n * embed, relu), &p("hyper_w1"), rng, store)?;
            nn::init_params(&LayerSpec::linear(sd, embed), &p("hyper_b1"), rng, store)?;
            nn::init_params(&LayerSpec::mlp(sd, hypernet_hidden, embed, relu), &p("hyper_w2"), rng, store)?;
            nn::init_params(&LayerSpec::mlp(sd, hypernet_hidden, 1, relu), &p("v"), rng, store)?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, q: Var, obs: Var, state: Var) -> Result<MixOutput, Error> {
        let n = self.n_agents;
        let (qr, qc) = tape.shape(q);
        let groups = tape.shape(state).0;
        if qc != 1 || qr != groups * n || tape.shape(obs) != (qr, self.obs_dim) || tape.shape(state).1 != self.state_dim {
            return Err(Error::Dimension(format!(
                "mixer inputs q {:?}, obs {:?}, state {:?} for {n} agents",
                tape.shape(q),
                tape.shape(obs),
                tape.shape(state)
            )));
        }
        match self.kind {
            MixerKind::Vdn => Ok(MixOutput {
                q_tot: vdn_mix(tape, q, n)?,
                q_prime: None,
                hypergraph: None,
            }),
            MixerKind::Qmix => Ok(MixOutput {
                q_tot: state_module(tape, params, q, state, n, self.config.embed)?,
                q_prime: None,
                hypergraph: None,
            }),
            MixerKind::HgcnMix | MixerKind::HgcnMixOh => {
                let generator = if self.learned_hyperedges() > 0 {
                    Some(Generator {
                        weight: params.get(&p("hgcn.generator.weight"))?,
                        bias: params.get(&p("hgcn.generator.bias"))?,
                    })
                } else {
                    None
                };
                let scale = if generator.is_some() {
                    OneHotScale::MeanOfLearned
                } else {
                    OneHotScale::Unit
                };
                let graph = hg::build_hypergraph(tape, obs, generator, n, scale)?;
                let w1 = params.get(&p("hgcn.w1"))?;
                let w2 = params.get(&p("hgcn.w2"))?;
                let q_prime = hg::hgcn_transform(tape, q, graph.h, w1, w2, n)?;
                let q_tot = state_module(tape, params, q_prime, state, n, self.config.embed)?;
                Ok(MixOutput {
                    q_tot,
                    q_prime: Some(q_prime),
                    hypergraph: Some(graph),
                })
            }
        }
    }

    /// Hypergraph built from one sample's observations (`n × obs_dim`).
    pub fn hypergraph(&self, store: &ParameterStore, obs: &Matrix) -> Result<Hypergraph, Error> {
        if !self.kind.uses_hypergraph() {
            return Err(Error::UnsupportedMixer(self.kind.to_string()));
        }
        let n = self.n_agents;
        let mut tape = Tape::new();
        let params = store.bind_frozen(&mut tape);
        let q = tape.constant(Matrix::zeros(n, 1));
        let ov = tape.constant(obs.clone());
        let sv = tape.constant(Matrix::zeros(1, self.state_dim));
        let out = self.forward(&mut tape, &params, q, ov, sv)?;
        let graph = out.hypergraph.expect("hypergraph mixer");
        Ok(Hypergraph::from_batch(tape.value(graph.h), tape.value(graph.mu), n, 0))
    }

    /// `Q_tot` for plain matrices, without gradients.
    pub fn joint_values(&self, store: &ParameterStore, q: &Matrix, obs: &Matrix, state: &Matrix) -> Result<Matrix, Error> {
        let mut tape = Tape::new();
        let params = store.bind_frozen(&mut tape);
        let qv = tape.constant(q.clone());
        let ov = tape.constant(obs.clone());
        let sv = tape.constant(state.clone());
        let out = self.forward(&mut tape, &params, qv, ov, sv)?;
        Ok(tape.value(out.q_tot).clone())
    }
}

/// `Q_tot = Σ_a Q_a` per sample.
pub fn vdn_mix(tape: &mut Tape, q: Var, n: usize) -> Result<Var, Error> {
    Ok(tape.segment_sum(q, n)?)
}

/// State-conditioned monotone mixing of `q_prime` (`(G·n) × 1`).
///
/// `Q'' = elu(|W₁(s)|ᵀ Q' + b₁(s))`, `Q_tot = |W₂(s)|ᵀ Q'' + V(s)`.
pub fn state_module(tape: &mut Tape, params: &Binding, q_prime: Var, state: Var, n: usize, embed: usize) -> Result<Var, Error> {
    let groups = tape.shape(state).0;
    let w1 = nn::mlp(tape, params, &p("hyper_w1"), Activation::Relu, state)?;
    let w1 = tape.abs(w1)?;
    let w1 = tape.reshape(w1, groups * n, embed)?;
    let weighted = tape.mul(w1, q_prime)?;
    let mixed = tape.segment_sum(weighted, n)?;
    let b1 = nn::linear(tape, params, &p("hyper_b1"), state)?;
    let hidden = tape.add(mixed, b1)?;
    let hidden = tape.elu(hidden)?;
    let w2 = nn::mlp(tape, params, &p("hyper_w2"), Activation::Relu, state)?;
    let w2 = tape.abs(w2)?;
    let out = tape.mul(hidden, w2)?;
    let out = tape.row_sums(out)?;
    let v = nn::mlp(tape, params, &p("v"), Activation::Relu, state)?;
    Ok(tape.add(out, v)?)
}

/// Checks the individual-global-max property by enumeration.
///
/// `q_tables[a][u]` is agent `a`'s value for action `u`; `joint_value` maps a
/// stacked batch of chosen values (`(J·n) × 1`, one sample per joint action)
/// to the `J` joint values. Returns whether the per-agent greedy tuple
/// reaches the enumerated maximum to within `1e-9`.
pub fn igm_check_with(
    q_tables: &[Vec<f64>],
    mut joint_value: impl FnMut(&Matrix) -> Result<Vec<f64>, Error>,
) -> Result<bool, Error> {
    let n = q_tables.len();
    let size = q_tables.iter().try_fold(1usize, |acc, t| acc.checked_mul(t.len()));
    match size {
        Some(s) if s <= MAX_JOINT_ACTIONS => {}
        _ => return Err(Error::TooLarge(size.unwrap_or(usize::MAX))),
    }
    let avail: Vec<Vec<bool>> = q_tables.iter().map(|t| vec![true; t.len()]).collect();
    let joints = joint_actions(&avail)?;
    let mut q = Matrix::zeros(joints.len() * n, 1);
    for (j, joint) in joints.iter().enumerate() {
        for (a, &u) in joint.iter().enumerate() {
            q.set(j * n + a, 0, q_tables[a][u]);
        }
    }
    let values = joint_value(&q)?;
    let greedy: Vec<usize> = q_tables
        .iter()
        .map(|t| crate::agents::greedy_action(t, &vec![true; t.len()]).expect("non-empty table"))
        .collect();
    let greedy_idx = joints.iter().position(|j| *j == greedy).expect("greedy tuple enumerated");
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(values[greedy_idx] >= best - 1e-9)
}

/// [`igm_check_with`] for a mixer at a fixed state and observation set.
pub fn igm_check(mixer: &Mixer, store: &ParameterStore, q_tables: &[Vec<f64>], state: &[f64], obs: &Matrix) -> Result<bool, Error> {
    let n = mixer.n_agents;
    igm_check_with(q_tables, |q| {
        let joints = q.rows() / n;
        let mut obs_b = Matrix::zeros(joints * n, obs.cols());
        let mut state_b = Matrix::zeros(joints, state.len());
        for j in 0..joints {
            for a in 0..n {
                obs_b.row_slice_mut(j * n + a).copy_from_slice(obs.row_slice(a));
            }
            state_b.row_slice_mut(j).copy_from_slice(state);
        }
        Ok(mixer.joint_values(store, q, &obs_b, &state_b)?.into_vec())
    })
}
