use super::{check_actions, one_hot, Env, EnvError, EnvSpec, StepResult, TimeStep};
use crate::numcore::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwoStepStage {
    First,
    /// Every joint action pays 7.
    BranchA,
    /// Pays `[[0, 1], [1, 8]]`.
    BranchB,
    Done,
}

/// Two-stage commitment game: agent 0's first action picks the branch,
/// the second joint action is paid according to that branch.
///
/// Both agents observe the one-hot stage, which is also the global state.
#[derive(Clone, Debug)]
pub struct TwoStepGame {
    stage: TwoStepStage,
    gamma: f64,
}

const BRANCH_B: [[f64; 2]; 2] = [[0.0, 1.0], [1.0, 8.0]];

impl TwoStepGame {
    pub fn new(gamma: f64) -> Self {
        Self {
            stage: TwoStepStage::First,
            gamma,
        }
    }

    pub fn stage(&self) -> TwoStepStage {
        self.stage
    }

    fn stage_index(&self) -> usize {
        match self.stage {
            TwoStepStage::First => 0,
            TwoStepStage::BranchA => 1,
            TwoStepStage::BranchB | TwoStepStage::Done => 2,
        }
    }
}

impl Env for TwoStepGame {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            n_agents: 2,
            n_actions: 2,
            obs_dim: 3,
            state_dim: 3,
            episode_limit: 2,
            gamma: self.gamma,
        }
    }

    fn reset(&mut self, _rng: &mut Rng) -> TimeStep {
        self.stage = TwoStepStage::First;
        self.observe()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        check_actions(&self.observe().avail, actions)?;
        let (reward, next) = match self.stage {
            TwoStepStage::First if actions[0] == 0 => (0.0, TwoStepStage::BranchA),
            TwoStepStage::First => (0.0, TwoStepStage::BranchB),
            TwoStepStage::BranchA => (7.0, TwoStepStage::Done),
            TwoStepStage::BranchB => (BRANCH_B[actions[0]][actions[1]], TwoStepStage::Done),
            TwoStepStage::Done => return Err(EnvError::Finished),
        };
        // the terminal observation keeps the branch it ended in
        if next != TwoStepStage::Done {
            self.stage = next;
        }
        let ts = self.observe();
        if next == TwoStepStage::Done {
            self.stage = TwoStepStage::Done;
        }
        Ok(StepResult {
            reward,
            terminated: next == TwoStepStage::Done,
            truncated: false,
            next: ts,
        })
    }

    fn observe(&self) -> TimeStep {
        let s = one_hot(3, self.stage_index());
        TimeStep {
            observations: vec![s.clone(), s.clone()],
            state: s,
            avail: vec![vec![true, true]; 2],
        }
    }

    fn state_key(&self) -> Vec<i64> {
        vec![self.stage as i64]
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
