use super::{check_actions, one_hot, Env, EnvError, EnvSpec, StepResult, TimeStep};
use crate::numcore::Rng;

pub const LEFT: usize = 0;
pub const STAY: usize = 1;
pub const RIGHT: usize = 2;

/// `n` agents on a corridor of `length` cells, each with a private target.
///
/// The shared reward is 1, and the episode ends, only when every agent stands
/// on its target at the same time. Each agent observes its own position and
/// target as two one-hot blocks; the state concatenates all of them. The
/// episode limit is `2·length` steps.
///
/// With `freeze` set, an agent that reaches its target stops there: its only
/// available action is `STAY` and it is reported dead, so learners mask its
/// observation.
#[derive(Clone, Debug)]
pub struct LazyCoordination {
    n: usize,
    length: usize,
    freeze: bool,
    gamma: f64,
    pos: Vec<usize>,
    target: Vec<usize>,
    frozen: Vec<bool>,
    t: usize,
    done: bool,
}

impl LazyCoordination {
    pub fn new(n: usize, length: usize, freeze: bool, gamma: f64) -> Result<Self, EnvError> {
        if n == 0 || length < 2 {
            return Err(EnvError::Config(format!(
                "lazy-coordination needs agents >= 1 and length >= 2 (got {n}, {length})"
            )));
        }
        Ok(Self {
            n,
            length,
            freeze,
            gamma,
            pos: vec![0; n],
            target: vec![1; n],
            frozen: vec![false; n],
            t: 0,
            done: false,
        })
    }

    /// Places agents and targets explicitly (tests, tools).
    pub fn set_layout(&mut self, pos: Vec<usize>, target: Vec<usize>) -> Result<(), EnvError> {
        if pos.len() != self.n || target.len() != self.n {
            return Err(EnvError::Config("layout length must equal agent count".into()));
        }
        if pos.iter().chain(&target).any(|&p| p >= self.length) {
            return Err(EnvError::Config("layout cell outside corridor".into()));
        }
        self.pos = pos;
        self.target = target;
        self.t = 0;
        self.done = false;
        self.refresh_frozen();
        Ok(())
    }

    pub fn positions(&self) -> &[usize] {
        &self.pos
    }

    pub fn targets(&self) -> &[usize] {
        &self.target
    }

    pub fn limit(&self) -> usize {
        2 * self.length
    }

    /// The joint action that moves every agent one step toward its target.
    pub fn greedy_actions(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| match self.pos[i].cmp(&self.target[i]) {
                std::cmp::Ordering::Less if !self.frozen[i] => RIGHT,
                std::cmp::Ordering::Greater if !self.frozen[i] => LEFT,
                _ => STAY,
            })
            .collect()
    }

    fn refresh_frozen(&mut self) {
        for i in 0..self.n {
            self.frozen[i] = self.freeze && self.pos[i] == self.target[i];
        }
    }

    fn all_on_target(&self) -> bool {
        self.pos.iter().zip(&self.target).all(|(p, t)| p == t)
    }

    fn agent_obs(&self, i: usize) -> Vec<f64> {
        let mut o = one_hot(self.length, self.pos[i]);
        o.extend(one_hot(self.length, self.target[i]));
        o
    }

    fn avail(&self) -> Vec<Vec<bool>> {
        (0..self.n)
            .map(|i| {
                if self.frozen[i] {
                    vec![false, true, false]
                } else {
                    vec![self.pos[i] > 0, true, self.pos[i] + 1 < self.length]
                }
            })
            .collect()
    }
}

impl Env for LazyCoordination {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            n_agents: self.n,
            n_actions: 3,
            obs_dim: 2 * self.length,
            state_dim: 2 * self.length * self.n,
            episode_limit: self.limit(),
            gamma: self.gamma,
        }
    }

    fn reset(&mut self, rng: &mut Rng) -> TimeStep {
        loop {
            self.pos = (0..self.n).map(|_| rng.below(self.length)).collect();
            self.target = (0..self.n).map(|_| rng.below(self.length)).collect();
            if !self.all_on_target() {
                break;
            }
        }
        self.t = 0;
        self.done = false;
        self.refresh_frozen();
        self.observe()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        check_actions(&self.avail(), actions)?;
        for (p, &a) in self.pos.iter_mut().zip(actions) {
            match a {
                LEFT => *p -= 1,
                RIGHT => *p += 1,
                _ => {}
            }
        }
        self.t += 1;
        self.refresh_frozen();
        let success = self.all_on_target();
        let at_limit = self.t >= self.limit();
        self.done = success || at_limit;
        Ok(StepResult {
            reward: if success { 1.0 } else { 0.0 },
            terminated: self.done,
            truncated: at_limit && !success,
            next: self.observe(),
        })
    }

    fn observe(&self) -> TimeStep {
        let observations: Vec<Vec<f64>> = (0..self.n).map(|i| self.agent_obs(i)).collect();
        let state = observations.concat();
        TimeStep {
            observations,
            state,
            avail: self.avail(),
        }
    }

    fn state_key(&self) -> Vec<i64> {
        let mut k: Vec<i64> = self.pos.iter().map(|&p| p as i64).collect();
        k.extend(self.target.iter().map(|&p| p as i64));
        k.push(self.t as i64);
        k.push(self.done as i64);
        k
    }

    fn dead_agents(&self) -> Vec<bool> {
        self.frozen.clone()
    }

    fn optimal_return(&self) -> Result<f64, EnvError> {
        if self.done {
            return Ok(0.0);
        }
        let worst = self
            .pos
            .iter()
            .zip(&self.target)
            .map(|(&p, &t)| p.abs_diff(t))
            .max()
            .unwrap_or(0);
        Ok(if worst <= self.limit() - self.t { 1.0 } else { 0.0 })
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
