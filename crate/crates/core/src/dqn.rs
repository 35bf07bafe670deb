//! Deep Q-learning on the pit mazes: replay buffer, ε-greedy exploration,
//! a frozen target network and the squared TD loss.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::layers::{InitRange, Network, NetworkSpec};
use crate::maze::{encode_coordinates, encode_matrix, step, Action, EpisodeState, MazeInstance, Termination};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{stream, Stream};

pub const NUM_ACTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Goal or pit. Timeouts are truncations and keep bootstrapping.
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    width: usize,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 100_000;

    pub fn new(capacity: usize, width: usize) -> Result<Self> {
        if capacity == 0 || width == 0 {
            return Err(Error::Config("replay capacity and state width must be positive".into()));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
            width,
        })
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.state.len() != self.width || t.next_state.len() != self.width {
            return Err(Error::Contract(format!(
                "transition encodings must have width {}, got {} and {}",
                self.width,
                t.state.len(),
                t.next_state.len()
            )));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform draws with replacement.
    pub fn sample<'a, R: Rng>(&'a self, n: usize, rng: &mut R) -> Result<Vec<&'a Transition>> {
        if self.items.is_empty() {
            return Err(Error::Contract("cannot sample an empty replay buffer".into()));
        }
        Ok((0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
    pub total_timesteps: usize,
}

impl EpsilonSchedule {
    pub fn new(total_timesteps: usize) -> Self {
        Self {
            start: 1.0,
            end: 0.02,
            fraction: 0.1,
            total_timesteps,
        }
    }

    /// Linear ramp over the first `fraction · T` steps, flat afterwards.
    pub fn epsilon_at(&self, t: usize) -> f64 {
        let ramp = self.fraction * self.total_timesteps as f64;
        if ramp <= 0.0 {
            return self.end;
        }
        let progress = (t as f64 / ramp).min(1.0);
        self.start + progress * (self.end - self.start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Coordinates,
    Matrix,
}

impl Encoding {
    pub fn width(self) -> usize {
        match self {
            Encoding::Coordinates => 2,
            Encoding::Matrix => crate::maze::CELLS,
        }
    }

    pub fn encode(self, maze: &MazeInstance, state: &EpisodeState) -> Vec<f64> {
        match self {
            Encoding::Coordinates => encode_coordinates(state).to_vec(),
            Encoding::Matrix => encode_matrix(maze, state),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Urbf,
    Mrbf,
}

/// Q-network layouts: `in → 128 → latent → 128 → 4`, with the latent layer
/// turned into an M-RBF layer, or followed by a U-RBF expansion.
pub fn q_network_spec(arch: Architecture, input_dim: usize, latent: usize, nnpi: usize, range: InitRange) -> Result<NetworkSpec> {
    let layers: Vec<String> = match arch {
        Architecture::Mlp => vec!["affine:128".into(), format!("affine:{latent}"), "affine:128".into()],
        Architecture::Urbf => vec![
            "affine:128".into(),
            format!("affine:{latent}"),
            format!("urbf:{nnpi}"),
            "affine:128".into(),
        ],
        Architecture::Mrbf => vec!["affine:128".into(), format!("mrbf:{latent}"), "affine:128".into()],
    };
    NetworkSpec::from_descriptors(input_dim, &layers, NUM_ACTIONS, range, true, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_start: usize,
    pub sync_period: usize,
    pub total_timesteps: usize,
    /// Treat the step limit as a true terminal (no bootstrap). `false`
    /// bootstraps through timeouts as a truncation.
    pub timeout_is_terminal: bool,
    /// Act uniformly at random until learning starts.
    pub random_warmup: bool,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 8e-4,
            batch_size: 64,
            buffer_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            learning_start: 30_000,
            sync_period: 1000,
            total_timesteps: 50_000,
            timeout_is_terminal: true,
            random_warmup: true,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.sync_period == 0 {
            return bad("batch size, buffer capacity and sync period must be positive");
        }
        Ok(())
    }
}

/// Online and frozen target Q-networks plus optimizer state.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    online: Network,
    target: Network,
    adam: Adam,
    gamma: f64,
    batch_size: usize,
    learning_start: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainOutcome {
    NotStarted,
    Loss(f64),
}

impl DqnAgent {
    pub fn new(spec: NetworkSpec, cfg: &DqnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if spec.output_dim() != NUM_ACTIONS {
            return Err(Error::Config(format!("Q-network must have {NUM_ACTIONS} outputs")));
        }
        let online = Network::new(spec, &mut stream(seed, Stream::Init))?;
        Ok(Self {
            target: online.clone(),
            online,
            adam: Adam::new(AdamConfig::with_learning_rate(cfg.learning_rate)),
            gamma: cfg.gamma,
            batch_size: cfg.batch_size,
            learning_start: cfg.learning_start,
        })
    }

    pub fn online(&self) -> &Network {
        &self.online
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    pub fn online_mut(&mut self) -> &mut Network {
        &mut self.online
    }

    pub fn q_values(&self, encoding: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::matrix(1, encoding.len(), encoding.to_vec())?;
        Ok(self.online.predict(&x)?.into_data())
    }

    pub fn select_action<R: Rng>(&self, encoding: &[f64], epsilon: f64, rng: &mut R) -> Result<Action> {
        if rng.gen::<f64>() < epsilon {
            return Action::try_from(rng.gen_range(0..NUM_ACTIONS));
        }
        Action::try_from(argmax(&self.q_values(encoding)?))
    }

    /// `r + γ max_a' Q̄(s', a')`, or `r` for terminal transitions.
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::Contract("TD targets need a non-empty batch".into()));
        }
        let width = batch[0].next_state.len();
        let next = Tensor::matrix(
            batch.len(),
            width,
            batch.iter().flat_map(|t| t.next_state.iter().copied()).collect(),
        )?;
        let q_next = self.target.predict(&next)?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if t.terminal {
                    t.reward
                } else {
                    let best = q_next.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    t.reward + self.gamma * best
                }
            })
            .collect())
    }

    /// Mean squared TD error over `batch` and the graph pieces needed to
    /// step the optimizer.
    fn td_loss(&self, batch: &[&Transition]) -> Result<(Graph, crate::autodiff::Var, Vec<crate::autodiff::Var>)> {
        let targets = self.td_targets(batch)?;
        let n = batch.len();
        let width = batch[0].state.len();
        let states = Tensor::matrix(n, width, batch.iter().flat_map(|t| t.state.iter().copied()).collect())?;
        let mut mask = Tensor::zeros(&[n, NUM_ACTIONS]);
        let mut wanted = Tensor::zeros(&[n, NUM_ACTIONS]);
        for (i, (t, y)) in batch.iter().zip(&targets).enumerate() {
            mask.data_mut()[i * NUM_ACTIONS + t.action.index()] = 1.0;
            wanted.data_mut()[i * NUM_ACTIONS + t.action.index()] = *y;
        }
        let mut g = Graph::new();
        let x = g.constant(states);
        let (q, leaves) = self.online.forward(&mut g, x)?;
        let m = g.constant(mask);
        let y = g.constant(wanted);
        let q_sa = g.mul(q, m)?;
        let diff = g.sub(q_sa, y)?;
        let sq = g.square(diff)?;
        let total = g.sum(sq)?;
        let count = g.constant(Tensor::scalar(n as f64));
        let loss = g.div(total, count)?;
        Ok((g, loss, leaves))
    }

    /// One Adam step on the online network, or `NotStarted` while the
    /// buffer is below the learning-start threshold.
    pub fn train_step<R: Rng>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<TrainOutcome> {
        if buffer.len() < self.learning_start.max(self.batch_size) {
            return Ok(TrainOutcome::NotStarted);
        }
        let batch = buffer.sample(self.batch_size, rng)?;
        let (mut g, loss, leaves) = self.td_loss(&batch)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(batch_dump(&batch)));
        }
        g.backward(loss)?;
        self.online.apply_gradients(&mut self.adam, &g, &leaves)?;
        Ok(TrainOutcome::Loss(value))
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

fn batch_dump(batch: &[&Transition]) -> String {
    let mut s = format!("TD loss is not finite; last batch of {}:", batch.len());
    for t in batch {
        s.push_str(&format!(
            "\n  s={:?} a={:?} r={} s'={:?} terminal={}",
            t.state, t.action, t.reward, t.next_state, t.terminal
        ));
    }
    s
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Decision maker plugged into [`run_interaction`].
pub trait Actor {
    fn act(&mut self, maze: &MazeInstance, state: &EpisodeState, encoding: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> Result<Action>;

    /// Called once per environment step after the transition is stored.
    fn learn(&mut self, _t: usize, _buffer: &ReplayBuffer, _rng: &mut ChaCha8Rng) -> Result<TrainOutcome> {
        Ok(TrainOutcome::NotStarted)
    }
}

/// Neural agent with periodic hard target synchronization.
pub struct DqnActor {
    pub agent: DqnAgent,
    pub sync_period: usize,
}

impl Actor for DqnActor {
    fn act(&mut self, _: &MazeInstance, _: &EpisodeState, encoding: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> Result<Action> {
        self.agent.select_action(encoding, epsilon, rng)
    }

    fn learn(&mut self, t: usize, buffer: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<TrainOutcome> {
        let out = self.agent.train_step(buffer, rng)?;
        if (t + 1).is_multiple_of(self.sync_period) {
            self.agent.sync_target();
        }
        Ok(out)
    }
}

/// Scripted behaviour from a plain function of the episode state.
pub struct ScriptedActor<F>(pub F);

impl<F: FnMut(&MazeInstance, &EpisodeState) -> Action> Actor for ScriptedActor<F> {
    fn act(&mut self, maze: &MazeInstance, state: &EpisodeState, _: &[f64], _: f64, _: &mut ChaCha8Rng) -> Result<Action> {
        Ok((self.0)(maze, state))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    /// Global timestep at which the episode ended (1-based count of steps).
    pub end_timestep: usize,
    pub ret: f64,
    pub epsilon: f64,
}

impl EpisodeRecord {
    /// Returns are exactly +100, -100 or 0, which identifies the ending.
    pub fn cause(&self) -> Termination {
        if self.ret > 0.0 {
            Termination::Goal
        } else if self.ret < 0.0 {
            Termination::Pit
        } else {
            Termination::Timeout
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DqnRun {
    pub episodes: Vec<EpisodeRecord>,
    pub total_reward: f64,
    pub timesteps: usize,
    pub train_steps: usize,
    pub mean_loss: Option<f64>,
}

impl DqnRun {
    pub fn average_reward_per_timestep(&self) -> f64 {
        if self.timesteps == 0 {
            0.0
        } else {
            self.total_reward / self.timesteps as f64
        }
    }

    /// Mean return over the last `ceil(10%)` of completed episodes.
    pub fn final_return_mean(&self) -> Option<f64> {
        let n = self.episodes.len();
        if n == 0 {
            return None;
        }
        let tail = n.div_ceil(10);
        Some(self.episodes[n - tail..].iter().map(|e| e.ret).sum::<f64>() / tail as f64)
    }

    /// `episode_index, end_timestep, return, epsilon`, one line per episode.
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "episode_index,end_timestep,return,epsilon")?;
        for e in &self.episodes {
            writeln!(f, "{},{},{},{}", e.index, e.end_timestep, e.ret, e.epsilon)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Runs `total_timesteps` environment steps on a fixed maze, resetting on
/// termination and handing every step to `actor.learn`.
pub fn run_interaction(
    maze: &MazeInstance,
    encoding: Encoding,
    cfg: &DqnConfig,
    actor: &mut dyn Actor,
    seed: u64,
) -> Result<DqnRun> {
    cfg.validate()?;
    let schedule = EpsilonSchedule::new(cfg.total_timesteps);
    let mut policy_rng = stream(seed, Stream::Policy);
    let mut replay_rng = stream(seed, Stream::Replay);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, encoding.width())?;
    let mut run = DqnRun {
        timesteps: cfg.total_timesteps,
        ..DqnRun::default()
    };
    let mut loss_sum = 0.0;
    let mut state = maze.initial_state();
    let mut obs = encoding.encode(maze, &state);
    let mut ret = 0.0;

    for t in 0..cfg.total_timesteps {
        let eps = if cfg.random_warmup && t < cfg.learning_start {
            1.0
        } else {
            schedule.epsilon_at(t)
        };
        let action = actor.act(maze, &state, &obs, eps, &mut policy_rng)?;
        let (next, reward) = step(maze, &state, action)?;
        let next_obs = encoding.encode(maze, &next);
        run.total_reward += reward;
        ret += reward;
        buffer.push(Transition {
            state: obs,
            action,
            reward,
            next_state: next_obs.clone(),
            terminal: match next.terminal {
                Some(Termination::Goal | Termination::Pit) => true,
                Some(Termination::Timeout) => cfg.timeout_is_terminal,
                None => false,
            },
        })?;
        if let TrainOutcome::Loss(l) = actor.learn(t, &buffer, &mut replay_rng)? {
            run.train_steps += 1;
            loss_sum += l;
        }
        if next.is_terminal() {
            run.episodes.push(EpisodeRecord {
                index: run.episodes.len(),
                end_timestep: t + 1,
                ret,
                epsilon: eps,
            });
            state = maze.initial_state();
            obs = encoding.encode(maze, &state);
            ret = 0.0;
        } else {
            state = next;
            obs = next_obs;
        }
    }
    if run.train_steps > 0 {
        run.mean_loss = Some(loss_sum / run.train_steps as f64);
    }
    Ok(run)
}

/// Trains a fresh agent for `spec` on `maze`.
pub fn train_dqn(maze: &MazeInstance, encoding: Encoding, spec: NetworkSpec, cfg: &DqnConfig, seed: u64) -> Result<(DqnAgent, DqnRun)> {
    if spec.input_dim() != encoding.width() {
        return Err(Error::Config(format!(
            "network input {} does not match {:?} encoding width {}",
            spec.input_dim(),
            encoding,
            encoding.width()
        )));
    }
    let mut actor = DqnActor {
        agent: DqnAgent::new(spec, cfg, seed)?,
        sync_period: cfg.sync_period,
    };
    let run = run_interaction(maze, encoding, cfg, &mut actor, seed)?;
    Ok((actor.agent, run))
}
