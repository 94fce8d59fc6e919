//! Agent-driven eviction at eviction-interval (ETI) boundaries.
//!
//! When the table is full at a boundary, the installed flows are encoded in a
//! Bloom filter, the filter chunks plus per-rule metadata form the agent's
//! state, and the chosen action is a flip percentage applied to a copy of the
//! filter. Installed flows that no longer query true are "absent"; one of
//! them is evicted. An unperturbed filter has no false negatives, so action 0
//! never evicts.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bloom::{compute_size, BloomError, BloomFilter, BloomParams};
use crate::dqn::{DqnAgent, DqnError, Transition, NUM_ACTIONS};
use crate::flowspace::FlowId;
use crate::seed::derive_seed;
use crate::sim::{lfu_victim, lru_victim, FlowRule, FlowTable, SimConfig, SimError, TickPlan};

/// Decision maker consulted at each acting boundary.
pub trait EvictionAgent {
    /// Called once before the first decision with the state width and the
    /// number of boundaries the run will cross.
    fn begin_run(&mut self, _state_dim: usize, _horizon: usize) {}

    /// Picks a flip percentage in `0..NUM_ACTIONS`.
    fn act(&mut self, state: &[f64]) -> Result<usize, DqnError>;

    /// Receives the outcome of the previous decision. Returns the training
    /// loss when a gradient step ran.
    fn observe(&mut self, transition: Transition) -> Result<Option<f64>, DqnError>;
}

impl EvictionAgent for DqnAgent {
    fn begin_run(&mut self, state_dim: usize, horizon: usize) {
        debug_assert_eq!(state_dim, self.input_dim(), "agent built for a different state width");
        self.set_horizon(horizon as u64);
    }

    fn act(&mut self, state: &[f64]) -> Result<usize, DqnError> {
        self.select_action(state)
    }

    fn observe(&mut self, transition: Transition) -> Result<Option<f64>, DqnError> {
        self.remember(transition)
    }
}

/// Always plays the same action and learns nothing.
#[derive(Debug, Clone)]
pub struct FixedActionAgent {
    pub action: usize,
    pub observed: Vec<Transition>,
}

impl FixedActionAgent {
    pub fn new(action: usize) -> Result<Self, DqnError> {
        if action >= NUM_ACTIONS {
            return Err(DqnError::BadAction(action));
        }
        Ok(Self {
            action,
            observed: Vec::new(),
        })
    }
}

impl EvictionAgent for FixedActionAgent {
    fn act(&mut self, _state: &[f64]) -> Result<usize, DqnError> {
        Ok(self.action)
    }

    fn observe(&mut self, transition: Transition) -> Result<Option<f64>, DqnError> {
        self.observed.push(transition);
        Ok(None)
    }
}

/// Victim rule among absent flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvictMode {
    Lru,
    Lfu,
}

/// Width of the state vector for a table of `capacity` rules.
pub fn state_dim(capacity: usize, fp_rate: f64) -> Result<usize, BloomError> {
    let (m, _) = compute_size(capacity, fp_rate)?;
    Ok(m.div_ceil(32) + 2 * capacity)
}

/// Filter holding every installed flow, sized for a full table.
pub fn encode_table(table: &FlowTable, fp_rate: f64, hash_seed: u64) -> Result<BloomFilter, BloomError> {
    let mut filter = BloomFilter::new(BloomParams::new(table.capacity(), fp_rate, hash_seed)?);
    for rule in table.rules() {
        filter.insert(&rule.flow.canonical());
    }
    Ok(filter)
}

/// Normalised state: filter chunks, then `capacity` hit-count slots, then
/// `capacity` recentness slots. Rule slots follow ascending flow key and
/// unused slots stay zero. Every entry lies in `[0, 1]`.
pub fn build_state(table: &FlowTable, filter: &BloomFilter, now: u64, idle_ticks: Option<u64>) -> Vec<f64> {
    let cap = table.capacity();
    let mut state: Vec<f64> = filter.to_chunks().normalized().collect();
    let base = state.len();
    state.resize(base + 2 * cap, 0.0);

    let max_hits = table.rules().map(|r| r.hit_count).max().unwrap_or(0);
    for (slot, rule) in table.rules().take(cap).enumerate() {
        if max_hits > 0 {
            state[base + slot] = rule.hit_count as f64 / max_hits as f64;
        }
        state[base + cap + slot] = recentness(rule, now, idle_ticks);
    }
    state
}

/// Age since last match as a share of the idle timeout, clamped to `[0, 1]`.
/// Without an idle timeout there is no scale and the feature is 0.
fn recentness(rule: &FlowRule, now: u64, idle_ticks: Option<u64>) -> f64 {
    match idle_ticks {
        Some(idle) if idle > 0 => (now.saturating_sub(rule.last_match) as f64 / idle as f64).clamp(0.0, 1.0),
        _ => 0.0,
    }
}

/// Installed flows that query false on `filter`, in key order.
pub fn absent_flows(table: &FlowTable, filter: &BloomFilter) -> Vec<FlowId> {
    table
        .rules()
        .filter(|r| !filter.query(&r.flow.canonical()))
        .map(|r| r.flow)
        .collect()
}

/// Picks at most one victim among `absent`.
pub fn choose_victim(table: &FlowTable, absent: &[FlowId], mode: EvictMode) -> Option<FlowId> {
    let candidates = absent.iter().filter_map(|f| table.get(*f));
    match mode {
        EvictMode::Lru => lru_victim(candidates),
        EvictMode::Lfu => lfu_victim(candidates),
    }
}

/// Sign of the change in per-window hits.
pub fn compute_reward(hits_this_eti: u64, hits_prev_eti: u64) -> i8 {
    match hits_this_eti.cmp(&hits_prev_eti) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Equal => 0,
        std::cmp::Ordering::Less => -1,
    }
}

/// One acting boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub tick: u64,
    pub time_s: f64,
    pub action: usize,
    pub absent_count: usize,
    pub evicted: Option<FlowId>,
    /// Filled in at the next boundary, once the following window's hits are known.
    pub reward: Option<i8>,
    /// Loss of the training step triggered when this decision's transition was stored.
    pub loss: Option<f64>,
}

pub fn write_decisions_csv(records: &[DecisionRecord], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "action", "absent_count", "evicted_flow", "reward", "loss"])?;
    for r in records {
        w.write_record([
            r.time_s.to_string(),
            r.action.to_string(),
            r.absent_count.to_string(),
            r.evicted.map(|f| f.canonical()).unwrap_or_else(|| "none".into()),
            r.reward.map(|x| x.to_string()).unwrap_or_default(),
            r.loss.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Seed domain for the per-run hash seed.
const HASH_STREAM: u64 = 0xB100;
/// Seed domain for per-boundary perturbation draws.
const PERTURB_STREAM: u64 = 0xF11B;

struct PendingDecision {
    state: Vec<f64>,
    action: usize,
    record: usize,
    reward: Option<i8>,
}

/// Per-run hook state driven by the simulator at every boundary tick.
pub struct EtiHook {
    mode: EvictMode,
    fp_rate: f64,
    hash_seed: u64,
    perturb_seed: u64,
    capacity: usize,
    plan: TickPlan,
    prev_window_hits: Option<u64>,
    pending: Option<PendingDecision>,
    boundary: u64,
}

impl EtiHook {
    pub fn new(mode: EvictMode, config: &SimConfig, plan: TickPlan) -> Result<Self, SimError> {
        compute_size(config.capacity, config.eviction_fp_rate)?;
        Ok(Self {
            mode,
            fp_rate: config.eviction_fp_rate,
            hash_seed: derive_seed(config.seed, &[HASH_STREAM]),
            perturb_seed: derive_seed(config.seed, &[PERTURB_STREAM]),
            capacity: config.capacity,
            plan,
            prev_window_hits: None,
            pending: None,
            boundary: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.capacity, self.fp_rate).expect("sizing validated in new")
    }

    /// Runs one boundary. `window_hits` counts hits since the previous
    /// boundary. Returns the evicted flow, if any.
    pub fn on_boundary(
        &mut self,
        table: &mut FlowTable,
        now: u64,
        window_hits: u64,
        agent: &mut dyn EvictionAgent,
        decisions: &mut Vec<DecisionRecord>,
    ) -> Result<Option<FlowId>, SimError> {
        self.boundary += 1;
        // The first window after a decision determines its reward.
        if let (Some(p), Some(prev)) = (self.pending.as_mut(), self.prev_window_hits) {
            if p.reward.is_none() {
                let r = compute_reward(window_hits, prev);
                p.reward = Some(r);
                decisions[p.record].reward = Some(r);
            }
        }
        self.prev_window_hits = Some(window_hits);

        if !table.is_full() {
            return Ok(None);
        }

        let filter = encode_table(table, self.fp_rate, self.hash_seed)?;
        let state = build_state(table, &filter, now, self.plan.idle_ticks);

        if let Some(p) = self.pending.take() {
            if let Some(reward) = p.reward {
                let t = Transition::new(p.state, p.action, reward, state.clone(), false)?;
                decisions[p.record].loss = agent.observe(t)?;
            }
        }

        let action = agent.act(&state)?;
        if action >= NUM_ACTIONS {
            return Err(DqnError::BadAction(action).into());
        }
        let absent = if action == 0 {
            Vec::new()
        } else {
            let seed = derive_seed(self.perturb_seed, &[self.boundary]);
            absent_flows(table, &filter.perturb(action as f64, seed)?)
        };
        let victim = choose_victim(table, &absent, self.mode);
        if let Some(v) = victim {
            table.remove(v);
        }

        decisions.push(DecisionRecord {
            tick: now,
            time_s: self.plan.seconds(now),
            action,
            absent_count: absent.len(),
            evicted: victim,
            reward: None,
            loss: None,
        });
        self.pending = Some(PendingDecision {
            state,
            action,
            record: decisions.len() - 1,
            reward: None,
        });
        Ok(victim)
    }
}
