//! Per-agent recurrent Q-networks and decentralized action selection.
//!
//! All agents share one network `fc → relu → GRU → fc`; rows are independent,
//! so a batch of agents (or of episodes) is evaluated in one pass without any
//! row seeing another row's input. Each agent's input is its own observation,
//! a one-hot of its previous action and a one-hot of its id.

use serde::{Deserialize, Serialize};

use crate::nn::{self, Activation, Binding, LayerSpec, ParameterStore};
use crate::numcore::{Matrix, Rng, Tape, Var};
use crate::Error;

/// Observation value used for every component of a dead agent's observation.
pub const DEAD_MASK_VALUE: f64 = -1.0;

const PREFIX: &str = "agent";

/// Replaces a dead agent's observation by the fixed mask.
pub fn mask_dead_agent(observation: &[f64]) -> Vec<f64> {
    vec![DEAD_MASK_VALUE; observation.len()]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentInput {
    pub observation: Vec<f64>,
    /// One-hot previous action, all zeros at the first step.
    pub last_action: Vec<f64>,
    pub agent_id: Vec<f64>,
}

impl AgentInput {
    pub fn new(
        observation: Vec<f64>,
        last_action: Option<usize>,
        n_actions: usize,
        agent: usize,
        n_agents: usize,
    ) -> Self {
        let mut la = vec![0.0; n_actions];
        if let Some(a) = last_action {
            la[a] = 1.0;
        }
        let mut id = vec![0.0; n_agents];
        id[agent] = 1.0;
        Self {
            observation,
            last_action: la,
            agent_id: id,
        }
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.observation.len() + self.last_action.len() + self.agent_id.len());
        row.extend_from_slice(&self.observation);
        row.extend_from_slice(&self.last_action);
        row.extend_from_slice(&self.agent_id);
        row
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Width of the input layer.
    pub hidden: usize,
    /// GRU hidden size.
    pub rnn_hidden: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            rnn_hidden: 64,
        }
    }
}

/// Shared DRQN used by every agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentNetwork {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    pub config: AgentConfig,
}

impl AgentNetwork {
    pub fn new(obs_dim: usize, n_actions: usize, n_agents: usize, config: AgentConfig) -> Self {
        Self {
            obs_dim,
            n_actions,
            n_agents,
            config,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    pub fn rnn_hidden(&self) -> usize {
        self.config.rnn_hidden
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<(), Error> {
        nn::init_params(
            &LayerSpec::linear(self.input_dim(), self.config.hidden),
            &format!("{PREFIX}.fc1"),
            rng,
            store,
        )?;
        nn::init_params(
            &LayerSpec::gru_cell(self.config.hidden, self.config.rnn_hidden),
            &format!("{PREFIX}.gru"),
            rng,
            store,
        )?;
        nn::init_params(
            &LayerSpec::linear(self.config.rnn_hidden, self.n_actions),
            &format!("{PREFIX}.fc2"),
            rng,
            store,
        )?;
        Ok(())
    }

    /// One step for a batch of rows: `(rows × input_dim, rows × rnn_hidden) → (Q, hidden')`.
    pub fn forward(&self, tape: &mut Tape, params: &Binding, inputs: Var, hidden: Var) -> Result<(Var, Var), Error> {
        let (rows, cols) = tape.shape(inputs);
        if cols != self.input_dim() || tape.shape(hidden) != (rows, self.config.rnn_hidden) {
            return Err(Error::Dimension(format!(
                "agent input {:?} / hidden {:?}, expected width {} / {}",
                tape.shape(inputs),
                tape.shape(hidden),
                self.input_dim(),
                self.config.rnn_hidden
            )));
        }
        let x = nn::linear(tape, params, &format!("{PREFIX}.fc1"), inputs)?;
        let x = nn::activate(tape, x, Activation::Relu)?;
        let h = nn::gru_cell(tape, params, &format!("{PREFIX}.gru"), x, hidden)?;
        let q = nn::linear(tape, params, &format!("{PREFIX}.fc2"), h)?;
        Ok((q, h))
    }

    pub fn initial_hidden(&self, rows: usize) -> Matrix {
        Matrix::zeros(rows, self.config.rnn_hidden)
    }

    /// Evaluates one agent's input without recording gradients.
    pub fn agent_forward(
        &self,
        store: &ParameterStore,
        input: &AgentInput,
        hidden: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), Error> {
        let (q, h) = self.forward_rows(store, std::slice::from_ref(input), &Matrix::row(hidden))?;
        Ok((q.data().to_vec(), h.data().to_vec()))
    }

    /// Evaluates several independent agent inputs, one row each.
    pub fn forward_rows(
        &self,
        store: &ParameterStore,
        inputs: &[AgentInput],
        hidden: &Matrix,
    ) -> Result<(Matrix, Matrix), Error> {
        let rows: Vec<Vec<f64>> = inputs.iter().map(AgentInput::to_row).collect();
        if let Some(bad) = rows.iter().find(|r| r.len() != self.input_dim()) {
            return Err(Error::Dimension(format!(
                "agent input has {} features, expected {}",
                bad.len(),
                self.input_dim()
            )));
        }
        let mut tape = Tape::new();
        let params = store.bind_frozen_prefix(&mut tape, "agent.");
        let x = tape.constant(Matrix::from_rows(&rows));
        let h = tape.constant(hidden.clone());
        let (q, h2) = self.forward(&mut tape, &params, x, h)?;
        Ok((tape.value(q).clone(), tape.value(h2).clone()))
    }
}

/// Masked argmax with ties broken toward the lowest index.
pub fn greedy_action(q_values: &[f64], avail: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (a, (&q, &ok)) in q_values.iter().zip(avail).enumerate() {
        if ok && best.is_none_or(|b| q > q_values[b]) {
            best = Some(a);
        }
    }
    best
}

/// ε-greedy over the available actions.
pub fn select_action(q_values: &[f64], avail: &[bool], epsilon: f64, rng: &mut Rng) -> Result<usize, Error> {
    if q_values.len() != avail.len() {
        return Err(Error::Dimension(format!(
            "{} q-values for {} availability flags",
            q_values.len(),
            avail.len()
        )));
    }
    let available: Vec<usize> = avail.iter().enumerate().filter(|(_, &ok)| ok).map(|(a, _)| a).collect();
    if available.is_empty() {
        return Err(Error::EnvContract("empty availability mask".into()));
    }
    if epsilon > 0.0 && rng.uniform() < epsilon {
        return Ok(available[rng.below(available.len())]);
    }
    Ok(greedy_action(q_values, avail).expect("non-empty mask"))
}
