//! Cooperative Dec-POMDP environments.
//!
//! Every environment shares one scalar reward among its agents, exposes
//! per-agent observations and action-availability masks, and a global state
//! that only the centralized mixer sees during training.

mod grid;
mod matrix_game;
mod two_step;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::LazyCoordination;
pub use matrix_game::OneStepMatrixGame;
pub use two_step::{TwoStepGame, TwoStepStage};

use crate::numcore::Rng;

pub const DEFAULT_GAMMA: f64 = 0.99;

/// Largest search the exhaustive optimum will attempt.
pub const MAX_SEARCH_NODES: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("agent {agent} chose unavailable action {action}")]
    Unavailable { agent: usize, action: usize },
    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },
    #[error("agent {agent} has no available action")]
    NoAvailableAction { agent: usize },
    #[error("step called after the episode ended")]
    Finished,
    #[error("search space too large for exhaustive optimum (> {0} nodes)")]
    TooLarge(usize),
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub episode_limit: usize,
    pub gamma: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_agents == 0 {
            return Err(EnvError::Config("need at least one agent".into()));
        }
        if self.n_actions < 2 {
            return Err(EnvError::Config("need at least two actions".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(EnvError::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.episode_limit == 0 {
            return Err(EnvError::Config("episode limit must be positive".into()));
        }
        Ok(())
    }
}

/// What the agents and the mixer see at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeStep {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub avail: Vec<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    /// The episode is over (goal reached, game finished, or limit hit).
    pub terminated: bool,
    /// The episode ended only because the step limit was reached.
    pub truncated: bool,
    pub next: TimeStep,
}

pub trait Env: Send + Sync {
    fn spec(&self) -> EnvSpec;

    /// Starts a new episode; the rng is only used for random start layouts.
    fn reset(&mut self, rng: &mut Rng) -> TimeStep;

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError>;

    /// Current observation without advancing.
    fn observe(&self) -> TimeStep;

    /// Hashable key of the full current state, including the step counter.
    fn state_key(&self) -> Vec<i64>;

    /// Agents whose observations are masked as dead.
    fn dead_agents(&self) -> Vec<bool> {
        vec![false; self.spec().n_agents]
    }

    /// Best achievable undiscounted return from the current state.
    fn optimal_return(&self) -> Result<f64, EnvError> {
        brute_force_optimal(self)
    }

    fn box_clone(&self) -> Box<dyn Env>;
}

impl Clone for Box<dyn Env> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Checks a joint action against the masks; shared by every environment.
pub(crate) fn check_actions(avail: &[Vec<bool>], actions: &[usize]) -> Result<(), EnvError> {
    if actions.len() != avail.len() {
        return Err(EnvError::ActionCount {
            expected: avail.len(),
            found: actions.len(),
        });
    }
    for (agent, (&a, mask)) in actions.iter().zip(avail).enumerate() {
        if !mask.get(a).copied().unwrap_or(false) {
            return Err(EnvError::Unavailable { agent, action: a });
        }
    }
    Ok(())
}

pub(crate) fn one_hot(len: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Every joint action admitted by the masks, in lexicographic order.
pub fn joint_actions(avail: &[Vec<bool>]) -> Result<Vec<Vec<usize>>, EnvError> {
    let per_agent: Vec<Vec<usize>> = avail
        .iter()
        .enumerate()
        .map(|(agent, m)| {
            let acts: Vec<usize> = m.iter().enumerate().filter(|(_, &ok)| ok).map(|(a, _)| a).collect();
            if acts.is_empty() {
                Err(EnvError::NoAvailableAction { agent })
            } else {
                Ok(acts)
            }
        })
        .collect::<Result<_, _>>()?;
    let mut out = vec![Vec::new()];
    for acts in &per_agent {
        let mut next = Vec::with_capacity(out.len() * acts.len());
        for prefix in &out {
            for &a in acts {
                let mut p = prefix.clone();
                p.push(a);
                next.push(p);
            }
        }
        out = next;
    }
    Ok(out)
}

/// Exact best undiscounted return from the env's current state.
///
/// Depth-first search over joint actions with memoization on
/// [`Env::state_key`]; valid for the deterministic environments here.
pub fn brute_force_optimal<E: Env + ?Sized>(env: &E) -> Result<f64, EnvError> {
    let mut memo = HashMap::new();
    let mut visited = 0usize;
    search(env.box_clone(), &mut memo, &mut visited)
}

fn search(
    env: Box<dyn Env>,
    memo: &mut HashMap<Vec<i64>, f64>,
    visited: &mut usize,
) -> Result<f64, EnvError> {
    let key = env.state_key();
    if let Some(&v) = memo.get(&key) {
        return Ok(v);
    }
    let joints = joint_actions(&env.observe().avail)?;
    let mut best = f64::NEG_INFINITY;
    for joint in joints {
        *visited += 1;
        if *visited > MAX_SEARCH_NODES {
            return Err(EnvError::TooLarge(MAX_SEARCH_NODES));
        }
        let mut child = env.box_clone();
        let res = child.step(&joint)?;
        let value = if res.terminated {
            res.reward
        } else {
            res.reward + search(child, memo, visited)?
        };
        best = best.max(value);
    }
    memo.insert(key, best);
    Ok(best)
}

/// Environment selection as it appears in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvConfig {
    MatrixGame {
        payoff: Vec<Vec<f64>>,
    },
    TwoStep,
    LazyCoordination {
        agents: usize,
        length: usize,
        #[serde(default)]
        freeze: bool,
    },
}

impl EnvConfig {
    /// The climbing payoff used throughout the tests.
    pub fn climbing_game() -> Self {
        EnvConfig::MatrixGame {
            payoff: vec![
                vec![11.0, -30.0, 0.0],
                vec![-30.0, 7.0, 6.0],
                vec![0.0, 0.0, 5.0],
            ],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::MatrixGame { .. } => "matrix-game",
            EnvConfig::TwoStep => "two-step",
            EnvConfig::LazyCoordination { .. } => "lazy-coordination",
        }
    }

    pub fn build(&self, gamma: f64) -> Result<Box<dyn Env>, EnvError> {
        let env: Box<dyn Env> = match self {
            EnvConfig::MatrixGame { payoff } => Box::new(OneStepMatrixGame::new(payoff.clone(), gamma)?),
            EnvConfig::TwoStep => Box::new(TwoStepGame::new(gamma)),
            EnvConfig::LazyCoordination {
                agents,
                length,
                freeze,
            } => Box::new(LazyCoordination::new(*agents, *length, *freeze, gamma)?),
        };
        env.spec().validate()?;
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_actions_respect_masks() {
        let j = joint_actions(&[vec![true, false, true], vec![true, true]]).unwrap();
        assert_eq!(j, vec![vec![0, 0], vec![0, 1], vec![2, 0], vec![2, 1]]);
        assert!(joint_actions(&[vec![false, false]]).is_err());
    }

    #[test]
    fn config_parses_from_json() {
        let c: EnvConfig = serde_json::from_str(r#"{"kind":"lazy-coordination","agents":3,"length":5}"#).unwrap();
        assert_eq!(
            c,
            EnvConfig::LazyCoordination {
                agents: 3,
                length: 5,
                freeze: false
            }
        );
        let c: EnvConfig = serde_json::from_str(r#"{"kind":"matrix-game","payoff":[[1,2],[3,4]]}"#).unwrap();
        assert!(c.build(0.99).is_ok());
    }

    #[test]
    fn bad_gamma_rejected() {
        assert!(EnvConfig::TwoStep.build(1.0).is_err());
    }
}
