use super::{check_actions, one_hot, Env, EnvError, EnvSpec, StepResult, TimeStep};
use crate::numcore::Rng;

/// Two agents, one simultaneous move, reward read from a payoff table.
///
/// Agents observe only their own id; the state is the constant `(1)`.
#[derive(Clone, Debug)]
pub struct OneStepMatrixGame {
    payoff: Vec<Vec<f64>>,
    gamma: f64,
    done: bool,
}

impl OneStepMatrixGame {
    pub fn new(payoff: Vec<Vec<f64>>, gamma: f64) -> Result<Self, EnvError> {
        let rows = payoff.len();
        if rows < 2 || payoff.iter().any(|r| r.len() != rows) {
            return Err(EnvError::Config("payoff must be a square table with at least 2 actions".into()));
        }
        if payoff.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EnvError::Config("payoff entries must be finite".into()));
        }
        Ok(Self {
            payoff,
            gamma,
            done: false,
        })
    }

    pub fn payoff(&self) -> &[Vec<f64>] {
        &self.payoff
    }

    fn n_actions(&self) -> usize {
        self.payoff.len()
    }

    fn avail(&self) -> Vec<Vec<bool>> {
        vec![vec![true; self.n_actions()]; 2]
    }
}

impl Env for OneStepMatrixGame {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            n_agents: 2,
            n_actions: self.n_actions(),
            obs_dim: 2,
            state_dim: 1,
            episode_limit: 1,
            gamma: self.gamma,
        }
    }

    fn reset(&mut self, _rng: &mut Rng) -> TimeStep {
        self.done = false;
        self.observe()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        check_actions(&self.avail(), actions)?;
        self.done = true;
        Ok(StepResult {
            reward: self.payoff[actions[0]][actions[1]],
            terminated: true,
            truncated: false,
            next: self.observe(),
        })
    }

    fn observe(&self) -> TimeStep {
        TimeStep {
            observations: (0..2).map(|i| one_hot(2, i)).collect(),
            state: vec![1.0],
            avail: self.avail(),
        }
    }

    fn state_key(&self) -> Vec<i64> {
        vec![self.done as i64]
    }

    fn optimal_return(&self) -> Result<f64, EnvError> {
        if self.done {
            return Ok(0.0);
        }
        Ok(self
            .payoff
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max))
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
