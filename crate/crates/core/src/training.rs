//! Episode collection, replay, one-step TD learning and evaluation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::agents::{self, mask_dead_agent, AgentConfig, AgentInput, AgentNetwork};
use crate::envs::{Env, EnvConfig, EnvSpec, TimeStep, DEFAULT_GAMMA};
use crate::mixers::{Mixer, MixerConfig, MixerKind};
use crate::nn::{Binding, ParameterStore, RmsProp};
use crate::numcore::{Matrix, Rng, Stream, Tape, Var};
use crate::Error;

/// Linear ε annealing, clamped at `end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            anneal_steps: 50_000,
        }
    }
}

impl Schedule {
    /// ε after `t` environment steps.
    pub fn epsilon(&self, t: u64) -> f64 {
        if self.anneal_steps == 0 || t >= self.anneal_steps {
            return self.end;
        }
        let frac = t as f64 / self.anneal_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// One recorded episode of `len` steps.
///
/// Observations, states and masks have `len + 1` entries (the last one is what
/// the agents saw after the final step); actions, rewards and termination
/// flags have `len`. Observations of dead agents are already masked. Batches
/// pad shorter episodes and exclude the padding through a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub observations: Vec<Matrix>,
    pub states: Vec<Vec<f64>>,
    pub avail: Vec<Vec<Vec<bool>>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    /// True at a step after which there is nothing to bootstrap from.
    pub terminated: Vec<bool>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Validity mask over `limit` slots: 1 for filled steps, 0 for padding.
    pub fn padded_mask(&self, limit: usize) -> Vec<f64> {
        (0..limit).map(|t| if t < self.len() { 1.0 } else { 0.0 }).collect()
    }

    fn push_view(&mut self, ts: &TimeStep, dead: &[bool]) {
        let obs: Vec<Vec<f64>> = ts
            .observations
            .iter()
            .zip(dead)
            .map(|(o, &d)| if d { mask_dead_agent(o) } else { o.clone() })
            .collect();
        self.observations.push(Matrix::from_rows(&obs));
        self.states.push(ts.state.clone());
        self.avail.push(ts.avail.clone());
    }
}

/// Ring buffer of whole episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1024)),
            inserted: 0,
        }
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn can_sample(&self, batch: usize) -> bool {
        self.episodes.len() >= batch
    }

    /// `batch` distinct episodes, uniformly from the filled region.
    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Vec<&Episode> {
        rng.sample_without_replacement(self.episodes.len(), batch)
            .into_iter()
            .map(|i| &self.episodes[i])
            .collect()
    }
}

/// Training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Episodes to collect.
    pub episodes: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Train steps between hard target copies.
    pub target_update_interval: u64,
    /// Episodes between evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Window of the reported loss moving average.
    pub loss_window: usize,
    pub optimizer: RmsProp,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 20_000,
            batch_size: 32,
            buffer_capacity: 5_000,
            target_update_interval: 200,
            eval_interval: 500,
            eval_episodes: 32,
            loss_window: 100,
            optimizer: RmsProp::default(),
            schedule: Schedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("train.batch_size must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("train.buffer_capacity must be at least train.batch_size");
        }
        if self.target_update_interval == 0 {
            return bad("train.target_update_interval must be positive");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("train.eval_interval and train.eval_episodes must be positive");
        }
        if !(self.optimizer.lr > 0.0 && (0.0..1.0).contains(&self.optimizer.decay) && self.optimizer.eps > 0.0) {
            return bad("train.optimizer needs lr > 0, 0 <= decay < 1, eps > 0");
        }
        let s = self.schedule;
        if !(0.0..=1.0).contains(&s.start) || !(0.0..=1.0).contains(&s.end) || s.end > s.start {
            return bad("train.schedule needs 0 <= end <= start <= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Online and target networks plus optimizer state for one run.
#[derive(Clone, Debug)]
pub struct Learner {
    pub spec: EnvSpec,
    pub agent: AgentNetwork,
    pub mixer: Mixer,
    pub params: ParameterStore,
    pub target: ParameterStore,
    pub optimizer: RmsProp,
    pub target_update_interval: u64,
    pub train_steps: u64,
}

/// Padded tensors for a batch of episodes, laid out row `b·n + a` per step.
struct Batch {
    b: usize,
    t_max: usize,
    inputs: Vec<Matrix>,
    actions: Vec<Vec<usize>>,
    avail: Vec<Vec<Vec<bool>>>,
    obs: Vec<Matrix>,
    states: Vec<Matrix>,
    rewards: Vec<f64>,
    terminated: Vec<bool>,
    mask: Vec<f64>,
}

impl Batch {
    fn new(episodes: &[&Episode], agent: &AgentNetwork, spec: &EnvSpec) -> Self {
        let b = episodes.len();
        let n = spec.n_agents;
        let t_max = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        let mut inputs = Vec::with_capacity(t_max + 1);
        let mut obs = Vec::with_capacity(t_max + 1);
        let mut states = Vec::with_capacity(t_max + 1);
        let mut avail = Vec::with_capacity(t_max + 1);
        let mut actions = Vec::with_capacity(t_max);
        for t in 0..=t_max {
            let mut x = Matrix::zeros(b * n, agent.input_dim());
            let mut o = Matrix::zeros(b * n, spec.obs_dim);
            let mut s = Matrix::zeros(b, spec.state_dim);
            let mut av = vec![vec![true; spec.n_actions]; b * n];
            let mut act = vec![0usize; b * n];
            for (bi, ep) in episodes.iter().enumerate() {
                if t > ep.len() {
                    continue;
                }
                s.row_slice_mut(bi).copy_from_slice(&ep.states[t]);
                for a in 0..n {
                    let row = bi * n + a;
                    let last = if t == 0 { None } else { Some(ep.actions[t - 1][a]) };
                    let input = AgentInput::new(ep.observations[t].row_slice(a).to_vec(), last, spec.n_actions, a, n);
                    x.row_slice_mut(row).copy_from_slice(&input.to_row());
                    o.row_slice_mut(row).copy_from_slice(ep.observations[t].row_slice(a));
                    av[row] = ep.avail[t][a].clone();
                    if t < ep.len() {
                        act[row] = ep.actions[t][a];
                    }
                }
            }
            inputs.push(x);
            obs.push(o);
            states.push(s);
            avail.push(av);
            if t < t_max {
                actions.push(act);
            }
        }
        let mut rewards = vec![0.0; t_max * b];
        let mut terminated = vec![true; t_max * b];
        let mut mask = vec![0.0; t_max * b];
        for t in 0..t_max {
            for (bi, ep) in episodes.iter().enumerate() {
                if t < ep.len() {
                    let g = t * b + bi;
                    rewards[g] = ep.rewards[t];
                    terminated[g] = ep.terminated[t];
                    mask[g] = 1.0;
                }
            }
        }
        Self {
            b,
            t_max,
            inputs,
            actions,
            avail,
            obs,
            states,
            rewards,
            terminated,
            mask,
        }
    }
}

/// Targets and validity mask for a batch, both indexed `t·B + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub y: Vec<f64>,
    pub mask: Vec<f64>,
    pub batch: usize,
}

impl Learner {
    pub fn new(
        spec: EnvSpec,
        kind: MixerKind,
        agent_config: AgentConfig,
        mixer_config: MixerConfig,
        optimizer: RmsProp,
        seed: u64,
    ) -> Result<Self, Error> {
        spec.validate()?;
        let agent = AgentNetwork::new(spec.obs_dim, spec.n_actions, spec.n_agents, agent_config);
        let mixer = Mixer::new(kind, &spec, mixer_config);
        let mut rng = Rng::stream(seed, Stream::Init);
        let mut params = ParameterStore::new();
        agent.init(&mut params, &mut rng)?;
        mixer.init(&mut params, &mut rng)?;
        let target = params.clone();
        Ok(Self {
            spec,
            agent,
            mixer,
            params,
            target,
            optimizer,
            target_update_interval: 200,
            train_steps: 0,
        })
    }

    /// Rolls out one episode with ε-greedy decentralized policies.
    ///
    /// Each agent's action depends only on its own observation, previous
    /// action, id and recurrent state; hidden states start at zero.
    pub fn collect_episode(&self, env: &mut dyn Env, epsilon: f64, env_rng: &mut Rng, explore_rng: &mut Rng) -> Result<Episode, Error> {
        let n = self.spec.n_agents;
        let mut ep = Episode {
            observations: Vec::new(),
            states: Vec::new(),
            avail: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: Vec::new(),
        };
        let ts = env.reset(env_rng);
        ep.push_view(&ts, &env.dead_agents());
        let mut hidden = self.agent.initial_hidden(n);
        let mut last: Vec<Option<usize>> = vec![None; n];
        for _ in 0..self.spec.episode_limit {
            let t = ep.actions.len();
            let inputs: Vec<AgentInput> = (0..n)
                .map(|a| AgentInput::new(ep.observations[t].row_slice(a).to_vec(), last[a], self.spec.n_actions, a, n))
                .collect();
            let (q, h) = self.agent.forward_rows(&self.params, &inputs, &hidden)?;
            hidden = h;
            let joint = (0..n)
                .map(|a| agents::select_action(q.row_slice(a), &ep.avail[t][a], epsilon, explore_rng))
                .collect::<Result<Vec<_>, _>>()?;
            let res = env.step(&joint)?;
            if !res.reward.is_finite() {
                return Err(Error::EnvContract(format!("non-finite reward {}", res.reward)));
            }
            ep.push_view(&res.next, &env.dead_agents());
            ep.rewards.push(res.reward);
            ep.terminated.push(res.terminated && !res.truncated);
            last = joint.iter().copied().map(Some).collect();
            ep.actions.push(joint);
            if res.terminated {
                return Ok(ep);
            }
        }
        Ok(ep)
    }

    /// Chosen-action values and `Q_tot` for steps `0..T` with the online net.
    fn online_q_tot(&self, tape: &mut Tape, batch: &Batch, trainable: bool) -> Result<(Var, Binding), Error> {
        let params = if trainable { self.params.bind(tape) } else { self.params.bind_frozen(tape) };
        let rows = batch.b * self.spec.n_agents;
        let mut hidden = tape.constant(self.agent.initial_hidden(rows));
        let mut chosen = Vec::with_capacity(batch.t_max);
        for t in 0..batch.t_max {
            let x = tape.constant(batch.inputs[t].clone());
            let (q, h) = self.agent.forward(tape, &params, x, hidden)?;
            hidden = h;
            chosen.push(tape.gather_cols(q, batch.actions[t].clone())?);
        }
        let q = tape.concat_rows(&chosen)?;
        let obs = tape.constant(stack_rows(&batch.obs[..batch.t_max]));
        let states = tape.constant(stack_rows(&batch.states[..batch.t_max]));
        let q_tot = self.mixer.forward(tape, &params, q, obs, states)?.q_tot;
        Ok((q_tot, params))
    }

    /// `Q_tot` of the target networks at steps `1..=T`, each agent acting
    /// greedily (over available actions) on its own target values.
    fn target_next_q_tot(&self, batch: &Batch) -> Result<Vec<f64>, Error> {
        let mut tape = Tape::new();
        let params = self.target.bind_frozen(&mut tape);
        let rows = batch.b * self.spec.n_agents;
        let mut hidden = tape.constant(self.agent.initial_hidden(rows));
        let mut chosen = Vec::with_capacity(batch.t_max);
        for t in 0..=batch.t_max {
            let x = tape.constant(batch.inputs[t].clone());
            let (q, h) = self.agent.forward(&mut tape, &params, x, hidden)?;
            hidden = h;
            if t == 0 {
                continue;
            }
            let qv = tape.value(q);
            let greedy: Vec<usize> = (0..rows)
                .map(|r| agents::greedy_action(qv.row_slice(r), &batch.avail[t][r]).unwrap_or(0))
                .collect();
            chosen.push(tape.gather_cols(q, greedy)?);
        }
        let q = tape.concat_rows(&chosen)?;
        let obs = tape.constant(stack_rows(&batch.obs[1..]));
        let states = tape.constant(stack_rows(&batch.states[1..]));
        let out = self.mixer.forward(&mut tape, &params, q, obs, states)?;
        Ok(tape.value(out.q_tot).data().to_vec())
    }

    /// One-step targets `y = r + γ·Q_tot⁻(next)`, with `y = r` at terminal steps.
    pub fn td_targets(&self, episodes: &[&Episode]) -> Result<Targets, Error> {
        let batch = Batch::new(episodes, &self.agent, &self.spec);
        self.targets_for(&batch)
    }

    fn targets_for(&self, batch: &Batch) -> Result<Targets, Error> {
        if batch.t_max == 0 {
            return Ok(Targets {
                y: vec![],
                mask: vec![],
                batch: batch.b,
            });
        }
        let next = self.target_next_q_tot(batch)?;
        let y = (0..next.len())
            .map(|g| {
                let r = batch.rewards[g];
                if batch.terminated[g] {
                    r
                } else {
                    r + self.spec.gamma * next[g]
                }
            })
            .collect();
        Ok(Targets {
            y,
            mask: batch.mask.clone(),
            batch: batch.b,
        })
    }

    /// Online `Q_tot` for every (step, episode), indexed `t·B + b`.
    pub fn q_tot(&self, episodes: &[&Episode]) -> Result<Vec<f64>, Error> {
        let batch = Batch::new(episodes, &self.agent, &self.spec);
        let mut tape = Tape::new();
        let (q, _) = self.online_q_tot(&mut tape, &batch, false)?;
        Ok(tape.value(q).data().to_vec())
    }

    /// TD update toward freshly computed targets; returns the loss.
    pub fn train_step(&mut self, episodes: &[&Episode]) -> Result<f64, Error> {
        let batch = Batch::new(episodes, &self.agent, &self.spec);
        let targets = self.targets_for(&batch)?;
        self.step_on(&batch, &targets)
    }

    /// TD update toward given targets (treated as constants).
    pub fn train_step_with_targets(&mut self, episodes: &[&Episode], targets: &Targets) -> Result<f64, Error> {
        let batch = Batch::new(episodes, &self.agent, &self.spec);
        self.step_on(&batch, targets)
    }

    fn step_on(&mut self, batch: &Batch, targets: &Targets) -> Result<f64, Error> {
        let count: f64 = targets.mask.iter().sum();
        if count == 0.0 {
            return Ok(0.0);
        }
        if targets.y.len() != batch.t_max * batch.b {
            return Err(Error::Dimension(format!(
                "{} targets for {} batch slots",
                targets.y.len(),
                batch.t_max * batch.b
            )));
        }
        let mut tape = Tape::new();
        let (q_tot, binding) = self.online_q_tot(&mut tape, batch, true)?;
        let y = tape.constant(Matrix::column(&targets.y));
        let mask = tape.constant(Matrix::column(&targets.mask));
        let err = tape.sub(q_tot, y)?;
        let err = tape.mul(err, mask)?;
        let sq = tape.mul(err, err)?;
        let total = tape.sum(sq)?;
        let loss = tape.scale(total, 0.5 / count)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::Training(format!("non-finite loss {loss_value} at train step {}", self.train_steps)));
        }
        let grads = tape.backward(loss)?;
        self.params.zero_grads();
        self.params.accumulate(&binding, &grads);
        self.params.clip_grad_norm(self.optimizer.grad_clip);
        self.optimizer.step(&mut self.params)?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.target_update_interval) {
            self.update_target();
        }
        Ok(loss_value)
    }

    /// Hard copy of the online parameters into the target networks.
    pub fn update_target(&mut self) {
        self.target
            .copy_values_from(&self.params)
            .expect("target mirrors online parameters");
    }

    /// Greedy rollouts; success means reaching the optimal return from the start state.
    pub fn evaluate(&self, env: &mut dyn Env, episodes: usize, rng: &mut Rng) -> Result<EvalStats, Error> {
        let mut total = 0.0;
        let mut successes = 0usize;
        let mut no_explore = Rng::new(0);
        for _ in 0..episodes {
            let probe = {
                let mut r = rng.clone();
                env.reset(&mut r);
                env.optimal_return()?
            };
            let ep = self.collect_episode(env, 0.0, rng, &mut no_explore)?;
            let ret = ep.episode_return();
            total += ret;
            if ret >= probe - 1e-9 {
                successes += 1;
            }
        }
        Ok(EvalStats {
            mean_return: total / episodes as f64,
            success_rate: successes as f64 / episodes as f64,
        })
    }
}

fn stack_rows(parts: &[Matrix]) -> Matrix {
    let cols = parts.first().map_or(0, Matrix::cols);
    let rows = parts.iter().map(Matrix::rows).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Matrix::from_vec(rows, cols, data).expect("stacked")
}

/// Everything that defines one training run except the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub env: EnvConfig,
    pub gamma: f64,
    pub mixer: MixerKind,
    pub agent: AgentConfig,
    pub mixer_config: MixerConfig,
    pub train: TrainConfig,
}

impl RunSpec {
    pub fn new(env: EnvConfig, mixer: MixerKind) -> Self {
        Self {
            env,
            gamma: DEFAULT_GAMMA,
            mixer,
            agent: AgentConfig::default(),
            mixer_config: MixerConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub episode: u64,
    pub mixer: String,
    pub seed: u64,
    pub mean_return: f64,
    pub success_rate: f64,
    pub loss_ma: Option<f64>,
    pub epsilon: f64,
}

pub struct RunOutcome {
    pub learner: Learner,
    pub metrics: Vec<MetricRecord>,
}

/// Trains one seed; `on_eval` sees every metric record as it is produced.
pub fn run(spec: &RunSpec, seed: u64, mut on_eval: impl FnMut(&MetricRecord) -> Result<(), Error>) -> Result<RunOutcome, Error> {
    spec.train.validate()?;
    let cfg = &spec.train;
    let mut env = spec.env.build(spec.gamma)?;
    let mut eval_env = spec.env.build(spec.gamma)?;
    let mut learner = Learner::new(env.spec(), spec.mixer, spec.agent, spec.mixer_config, cfg.optimizer, seed)?;
    learner.target_update_interval = cfg.target_update_interval;

    let mut env_rng = Rng::stream(seed, Stream::Env);
    let mut explore_rng = Rng::stream(seed, Stream::Exploration);
    let mut replay_rng = Rng::stream(seed, Stream::Replay);
    let mut eval_rng = Rng::stream(seed, Stream::Eval);

    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut losses: VecDeque<f64> = VecDeque::with_capacity(cfg.loss_window);
    let mut metrics = Vec::new();
    let mut t_env: u64 = 0;

    let mut record = |learner: &Learner, episode: u64, t_env: u64, losses: &VecDeque<f64>, eval_rng: &mut Rng| -> Result<MetricRecord, Error> {
        let stats = learner.evaluate(eval_env.as_mut(), cfg.eval_episodes, eval_rng)?;
        let loss_ma = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        Ok(MetricRecord {
            step: t_env,
            episode,
            mixer: spec.mixer.to_string(),
            seed,
            mean_return: stats.mean_return,
            success_rate: stats.success_rate,
            loss_ma,
            epsilon: cfg.schedule.epsilon(t_env),
        })
    };

    let first = record(&learner, 0, 0, &losses, &mut eval_rng)?;
    on_eval(&first)?;
    metrics.push(first);

    for episode in 1..=cfg.episodes {
        let eps = cfg.schedule.epsilon(t_env);
        let ep = learner.collect_episode(env.as_mut(), eps, &mut env_rng, &mut explore_rng)?;
        t_env += ep.len() as u64;
        buffer.push(ep);
        if buffer.can_sample(cfg.batch_size) {
            let sample = buffer.sample(cfg.batch_size, &mut replay_rng);
            let loss = learner.train_step(&sample)?;
            if losses.len() == cfg.loss_window {
                losses.pop_front();
            }
            losses.push_back(loss);
        }
        if episode % cfg.eval_interval == 0 || episode == cfg.episodes {
            let rec = record(&learner, episode, t_env, &losses, &mut eval_rng)?;
            log::debug!(
                "{} seed {seed} episode {episode}: return {:.3} success {:.2}",
                spec.mixer,
                rec.mean_return,
                rec.success_rate
            );
            on_eval(&rec)?;
            metrics.push(rec);
        }
    }
    Ok(RunOutcome { learner, metrics })
}
