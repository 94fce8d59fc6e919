//! Deep Q-network agent: online and target MLPs, replay and epsilon-greedy selection.

pub mod checkpoint;
pub mod network;
pub mod replay;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_network, read_network, save_network, write_network};
pub use network::{Adam, Dense, Gradients, QNetwork};
pub use replay::ReplayBuffer;

use crate::seed::rng_from_seed;

/// Actions are flip percentages `0..=30`.
pub const NUM_ACTIONS: usize = 31;

/// Hidden-layer shapes explored in the hyperparameter sweep.
pub const LAYER_OPTIONS: [&str; 5] = ["32_32_32_32_32", "64_64_64_64", "128_128_128", "256_256", "512_512"];

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("state has {got} features, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid network shape: {0}")]
    Shape(String),
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("action {0} outside 0..{NUM_ACTIONS}")]
    BadAction(usize),
    #[error("reward {0} outside {{-1, 0, 1}}")]
    BadReward(i8),
    #[error("training diverged: non-finite loss {0}")]
    Divergence(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: i8,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

impl Transition {
    pub fn new(state: Vec<f64>, action: usize, reward: i8, next_state: Vec<f64>, terminal: bool) -> Result<Self, DqnError> {
        if action >= NUM_ACTIONS {
            return Err(DqnError::BadAction(action));
        }
        if !(-1..=1).contains(&reward) {
            return Err(DqnError::BadReward(reward));
        }
        if state.len() != next_state.len() {
            return Err(DqnError::Dimension {
                expected: state.len(),
                got: next_state.len(),
            });
        }
        Ok(Self {
            state,
            action,
            reward,
            next_state,
            terminal,
        })
    }
}

/// Parses an underscore-separated width list such as `128_128_128`.
pub fn parse_hidden_layers(s: &str) -> Result<Vec<usize>, DqnError> {
    let widths: Result<Vec<usize>, _> = s.split('_').map(|p| p.trim().parse::<usize>()).collect();
    match widths {
        Ok(w) if !w.is_empty() && !w.contains(&0) => Ok(w),
        _ => Err(DqnError::Config(format!("bad hidden layer spec {s:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub hidden_layers: Vec<usize>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the run's decisions over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Explicit decay length in decisions; overrides the fraction when set.
    pub epsilon_decay_steps: Option<u64>,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Copy online weights to the target network every this many training steps.
    pub target_sync_steps: u64,
    /// Transitions collected before training starts.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            gamma: 0.99,
            hidden_layers: vec![128, 128, 128],
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.2,
            epsilon_decay_steps: None,
            replay_capacity: 10_000,
            batch_size: 64,
            target_sync_steps: 500,
            warmup: 256,
            seed: 101,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: &str| Err(DqnError::Config(m.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return bad("hidden_layers must be a non-empty list of positive widths");
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.epsilon_start) || !eps_ok(self.epsilon_end) {
            return bad("epsilon bounds must lie in [0, 1]");
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return bad("epsilon_decay_fraction must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("batch_size must be positive and fit in the replay buffer");
        }
        if self.target_sync_steps == 0 {
            return bad("target_sync_steps must be positive");
        }
        Ok(())
    }
}

/// Decision count used for the epsilon schedule before a horizon is known.
const DEFAULT_HORIZON: u64 = 1_000;

pub struct DqnAgent {
    config: AgentConfig,
    online: QNetwork,
    target: QNetwork,
    optimizer: Adam,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    decay_steps: u64,
    decisions: u64,
    train_steps: u64,
    last_loss: Option<f64>,
}

impl DqnAgent {
    pub fn new(input_dim: usize, config: AgentConfig) -> Result<Self, DqnError> {
        config.validate()?;
        let online = QNetwork::new(input_dim, &config.hidden_layers, config.seed)?;
        Self::with_network(online, config)
    }

    /// Starts from given weights (for example a loaded checkpoint).
    pub fn with_network(online: QNetwork, config: AgentConfig) -> Result<Self, DqnError> {
        config.validate()?;
        let optimizer = Adam::new(&online, config.learning_rate);
        let replay = ReplayBuffer::new(config.replay_capacity)?;
        // Separate stream from weight init, which consumed `seed` directly.
        let rng = rng_from_seed(crate::seed::derive_seed(config.seed, &[0x5e1ec7]));
        let mut agent = Self {
            target: online.clone(),
            online,
            optimizer,
            replay,
            rng,
            decay_steps: 0,
            decisions: 0,
            train_steps: 0,
            last_loss: None,
            config,
        };
        agent.set_horizon(DEFAULT_HORIZON);
        Ok(agent)
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn input_dim(&self) -> usize {
        self.online.input_dim()
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    /// Sets the expected number of decisions, which fixes the epsilon decay length.
    pub fn set_horizon(&mut self, horizon: u64) {
        self.decay_steps = self
            .config
            .epsilon_decay_steps
            .unwrap_or_else(|| (self.config.epsilon_decay_fraction * horizon as f64).ceil() as u64)
            .max(1);
    }

    /// Exploration rate for the next decision.
    pub fn epsilon(&self) -> f64 {
        let (start, end) = (self.config.epsilon_start, self.config.epsilon_end);
        let progress = (self.decisions as f64 / self.decay_steps as f64).min(1.0);
        start + (end - start) * progress
    }

    /// Epsilon-greedy action; advances the decay schedule.
    pub fn select_action(&mut self, state: &[f64]) -> Result<usize, DqnError> {
        self.online.ensure_input_dim(state.len())?;
        let eps = self.epsilon();
        self.decisions += 1;
        if self.rng.random::<f64>() < eps {
            Ok(self.rng.random_range(0..NUM_ACTIONS))
        } else {
            self.greedy_action(state)
        }
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn greedy_action(&self, state: &[f64]) -> Result<usize, DqnError> {
        let q = self.online.forward(state)?;
        Ok(argmax(&q))
    }

    /// Stores a transition and, once warm, runs one training step on a replay batch.
    pub fn remember(&mut self, t: Transition) -> Result<Option<f64>, DqnError> {
        self.online.ensure_input_dim(t.state.len())?;
        self.replay.push(t);
        if self.replay.len() < self.config.warmup.max(self.config.batch_size) {
            return Ok(None);
        }
        self.train_from_replay()
    }

    pub fn train_from_replay(&mut self) -> Result<Option<f64>, DqnError> {
        let Some(batch) = self.replay.sample(&mut self.rng, self.config.batch_size) else {
            return Ok(None);
        };
        let batch: Vec<Transition> = batch.into_iter().cloned().collect();
        self.train_step(&batch).map(Some)
    }

    /// One gradient step on `batch`. Returns the loss measured before the update.
    pub fn train_step(&mut self, batch: &[Transition]) -> Result<f64, DqnError> {
        if batch.is_empty() {
            return Err(DqnError::Config("empty training batch".into()));
        }
        let dim = self.input_dim();
        let mut states = Array2::zeros((batch.len(), dim));
        let mut next_states = Array2::zeros((batch.len(), dim));
        let mut actions = Vec::with_capacity(batch.len());
        for (b, t) in batch.iter().enumerate() {
            if t.state.len() != dim || t.next_state.len() != dim {
                return Err(DqnError::Dimension {
                    expected: dim,
                    got: t.state.len(),
                });
            }
            if t.action >= NUM_ACTIONS {
                return Err(DqnError::BadAction(t.action));
            }
            states.row_mut(b).assign(&ndarray::ArrayView1::from(&t.state[..]));
            next_states.row_mut(b).assign(&ndarray::ArrayView1::from(&t.next_state[..]));
            actions.push(t.action);
        }
        let next_q = self.target.forward_batch(next_states.view());
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(b, t)| {
                let r = t.reward as f64;
                if t.terminal {
                    r
                } else {
                    let best = next_q.row(b).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    r + self.config.gamma * best
                }
            })
            .collect();

        let (loss, grads) = self.online.td_loss_and_grad(states.view(), &actions, &targets);
        if !loss.is_finite() {
            return Err(DqnError::Divergence(loss));
        }
        self.optimizer.step(&mut self.online, &grads);
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.config.target_sync_steps) {
            self.target = self.online.clone();
        }
        self.last_loss = Some(loss);
        Ok(loss)
    }
}

/// Index of the largest value; the first one wins ties. NaN never wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}
