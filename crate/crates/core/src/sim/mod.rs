//! Discrete-time simulation of a reactive SDN forwarding table.
//!
//! Time advances in ticks of `tick_s` seconds. Within a tick the order is
//! fixed: idle rules expire, due installs complete (evicting with the
//! baseline policy if the table is full), the tick's packets are processed,
//! and finally, on eviction-interval boundaries, the agent hook runs.
//!
//! A miss on a flow with no pending install sends a packet-in; the rule is
//! installed `rti_s` later. Further packets of that flow are misses and do
//! not trigger new packet-ins. With `rti_s = 0` the install completes right
//! after the triggering packet, so the table behaves like a plain demand cache.
//!
//! Ticks are skipped when nothing can happen in them, so wall-clock cost
//! scales with packets and events rather than with simulated duration.

mod stats;
mod table;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stats::{EvictCause, IntervalStats, SimEvent, SimEventKind, SimStats};
pub use table::{
    evict_lfu, evict_lru, evict_optimal, lfu_victim, lru_victim, optimal_victim, FlowRule, FlowTable,
};

use crate::bloom::BloomError;
use crate::dqn::DqnError;
use crate::eviction::{DecisionRecord, EtiHook, EvictMode, EvictionAgent};
use crate::flowspace::FlowId;
use crate::trace::Trace;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("policy {0} needs an eviction agent")]
    MissingAgent(Policy),
    #[error("policy {0} does not use an eviction agent")]
    UnexpectedAgent(Policy),
    #[error("no eviction victim available for a full table at tick {0}")]
    EvictionFailed(u64),
    #[error(transparent)]
    Bloom(#[from] BloomError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "LRU")]
    Lru,
    #[serde(rename = "LFU")]
    Lfu,
    #[serde(rename = "OPTIMAL")]
    Optimal,
    #[serde(rename = "DQN_LRU")]
    DqnLru,
    #[serde(rename = "DQN_LFU")]
    DqnLfu,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::Lru, Policy::Lfu, Policy::Optimal, Policy::DqnLru, Policy::DqnLfu];

    pub fn uses_agent(self) -> bool {
        matches!(self, Policy::DqnLru | Policy::DqnLfu)
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::Lru => "LRU",
            Policy::Lfu => "LFU",
            Policy::Optimal => "OPTIMAL",
            Policy::DqnLru => "DQN_LRU",
            Policy::DqnLfu => "DQN_LFU",
        }
    }

    /// The victim rule applied when an install finds the table full.
    fn install_rule(self) -> InstallRule {
        match self {
            Policy::Lru | Policy::DqnLru => InstallRule::Lru,
            Policy::Lfu | Policy::DqnLfu => InstallRule::Lfu,
            Policy::Optimal => InstallRule::Optimal,
        }
    }

    fn eti_mode(self) -> Option<EvictMode> {
        match self {
            Policy::DqnLru => Some(EvictMode::Lru),
            Policy::DqnLfu => Some(EvictMode::Lfu),
            _ => None,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '+'], "_");
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| format!("unknown policy {s:?} (expected one of LRU, LFU, OPTIMAL, DQN_LRU, DQN_LFU)"))
    }
}

#[derive(Debug, Clone, Copy)]
enum InstallRule {
    Lru,
    Lfu,
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub capacity: usize,
    pub rti_s: f64,
    /// `f64::INFINITY` disables idle expiry.
    pub idle_timeout_s: f64,
    /// Eviction interval as a multiple of the RTI.
    pub eti_multiple: u32,
    /// Tick length; `None` means `rti_s / 10` (or 1 ms when `rti_s = 0`).
    pub tick_s: Option<f64>,
    pub policy: Policy,
    pub report_period_s: f64,
    /// Target false-positive rate of the filter built at each eviction interval.
    pub eviction_fp_rate: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            capacity: 32,
            rti_s: 0.01,
            idle_timeout_s: 30.0,
            eti_multiple: 100,
            tick_s: None,
            policy: Policy::Lru,
            report_period_s: 60.0,
            eviction_fp_rate: 0.01,
            seed: 101,
        }
    }
}

/// Tick used when `rti_s = 0` and no explicit tick is configured.
const ZERO_RTI_TICK_S: f64 = 0.001;

/// Integer tick quantities derived from a validated config.
#[derive(Debug, Clone, Copy)]
pub struct TickPlan {
    pub tick_s: f64,
    pub rti_ticks: u64,
    pub idle_ticks: Option<u64>,
    pub eti_ticks: u64,
}

impl TickPlan {
    /// Tick containing time `t` (floor, tolerant of representation error).
    pub fn tick_of(&self, t: f64) -> u64 {
        (t / self.tick_s + 1e-9).floor() as u64
    }

    pub fn seconds(&self, tick: u64) -> f64 {
        tick as f64 * self.tick_s
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<TickPlan, SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.capacity < 1 {
            return bad("capacity must be at least 1".into());
        }
        if !(self.rti_s.is_finite() && self.rti_s >= 0.0) {
            return bad(format!("rti_s must be finite and >= 0, got {}", self.rti_s));
        }
        if self.idle_timeout_s.is_nan() || self.idle_timeout_s <= 0.0 {
            return bad(format!("idle_timeout_s must be positive, got {}", self.idle_timeout_s));
        }
        if self.eti_multiple < 1 {
            return bad("eti_multiple must be at least 1".into());
        }
        if !(self.report_period_s.is_finite() && self.report_period_s > 0.0) {
            return bad(format!("report_period_s must be positive, got {}", self.report_period_s));
        }
        let tick_s = match self.tick_s {
            Some(t) => t,
            None if self.rti_s > 0.0 => self.rti_s / 10.0,
            None => ZERO_RTI_TICK_S,
        };
        if !(tick_s.is_finite() && tick_s > 0.0) {
            return bad(format!("tick_s must be positive, got {tick_s}"));
        }
        if self.rti_s > 0.0 && tick_s > self.rti_s {
            return bad(format!("tick_s ({tick_s}) must not exceed rti_s ({})", self.rti_s));
        }
        if self.policy.uses_agent() {
            if self.rti_s <= 0.0 {
                return bad("agent policies need rti_s > 0 to define the eviction interval".into());
            }
            if !(self.eviction_fp_rate > 0.0 && self.eviction_fp_rate < 1.0) {
                return bad(format!("eviction_fp_rate must lie in (0, 1), got {}", self.eviction_fp_rate));
            }
        }
        let rti_ticks = (self.rti_s / tick_s).round() as u64;
        let idle_ticks = self
            .idle_timeout_s
            .is_finite()
            .then(|| ((self.idle_timeout_s / tick_s) - 1e-9).ceil().max(1.0) as u64);
        Ok(TickPlan {
            tick_s,
            rti_ticks,
            idle_ticks,
            eti_ticks: rti_ticks * self.eti_multiple as u64,
        })
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub stats: SimStats,
    /// Hit (`true`) or miss per packet, in trace order.
    pub outcomes: Vec<bool>,
    pub events: Vec<SimEvent>,
    pub decisions: Vec<DecisionRecord>,
    pub plan: TickPlan,
}

/// Per-flow cursor over future packets, for the offline-optimal policy.
struct FutureIndex {
    next_same: Vec<Option<usize>>,
    next_of: HashMap<FlowId, usize>,
}

impl FutureIndex {
    fn new(trace: &Trace) -> Self {
        let packets = trace.packets();
        let mut next_same = vec![None; packets.len()];
        let mut next_of = HashMap::new();
        for (i, p) in packets.iter().enumerate().rev() {
            next_same[i] = next_of.insert(p.flow, i);
        }
        Self { next_same, next_of }
    }

    fn consume(&mut self, i: usize, flow: FlowId) {
        match self.next_same[i] {
            Some(j) => {
                self.next_of.insert(flow, j);
            }
            None => {
                self.next_of.remove(&flow);
            }
        }
    }
}

/// Runs `trace` through a table configured by `config`.
///
/// `agent` must be present exactly when the policy is agent-driven.
pub fn run_simulation(
    trace: &Trace,
    config: &SimConfig,
    agent: Option<&mut dyn EvictionAgent>,
) -> Result<SimOutcome, SimError> {
    let plan = config.validate()?;
    match (config.policy.uses_agent(), agent.is_some()) {
        (true, false) => return Err(SimError::MissingAgent(config.policy)),
        (false, true) => return Err(SimError::UnexpectedAgent(config.policy)),
        _ => {}
    }
    let mut sim = Simulator::new(trace, config, plan)?;
    sim.run(agent)?;
    Ok(sim.finish())
}

struct Simulator<'a> {
    trace: &'a Trace,
    plan: TickPlan,
    install_rule: InstallRule,
    table: FlowTable,
    future: Option<FutureIndex>,
    stats: SimStats,
    outcomes: Vec<bool>,
    events: Vec<SimEvent>,
    decisions: Vec<DecisionRecord>,
    hook: Option<EtiHook>,
    window_hits: u64,
}

impl<'a> Simulator<'a> {
    fn new(trace: &'a Trace, config: &'a SimConfig, plan: TickPlan) -> Result<Self, SimError> {
        let install_rule = config.policy.install_rule();
        let hook = match config.policy.eti_mode() {
            Some(mode) => Some(EtiHook::new(mode, config, plan)?),
            None => None,
        };
        Ok(Self {
            trace,
            plan,
            install_rule,
            table: FlowTable::new(config.capacity),
            future: matches!(install_rule, InstallRule::Optimal).then(|| FutureIndex::new(trace)),
            stats: SimStats::new(config.report_period_s),
            outcomes: Vec::with_capacity(trace.len()),
            events: Vec::new(),
            decisions: Vec::new(),
            hook,
            window_hits: 0,
        })
    }

    fn run(&mut self, mut agent: Option<&mut dyn EvictionAgent>) -> Result<(), SimError> {
        let packets = self.trace.packets();
        if packets.is_empty() {
            return Ok(());
        }
        let ticks: Vec<u64> = packets.iter().map(|p| self.plan.tick_of(p.timestamp)).collect();
        let eti = self.plan.eti_ticks;
        if let (Some(hook), Some(agent)) = (&self.hook, agent.as_deref_mut()) {
            let horizon = ticks[ticks.len() - 1] / eti;
            agent.begin_run(hook.state_dim(), horizon as usize);
        }

        let mut cursor = 0;
        let mut now = ticks[0];
        loop {
            self.expire_idle(now);
            self.complete_installs(now)?;
            while cursor < packets.len() && ticks[cursor] == now {
                self.process_packet(cursor, now)?;
                cursor += 1;
            }
            if let (Some(hook), Some(agent)) = (self.hook.as_mut(), agent.as_deref_mut()) {
                if now > 0 && now.is_multiple_of(eti) {
                    let window_hits = std::mem::take(&mut self.window_hits);
                    let decision = hook.on_boundary(&mut self.table, now, window_hits, agent, &mut self.decisions)?;
                    if let Some(victim) = decision {
                        self.events.push(SimEvent::evict(now, victim, EvictCause::Eti));
                    }
                }
            }
            debug_assert!(self.table.len() <= self.table.capacity());
            self.stats.max_occupancy = self.stats.max_occupancy.max(self.table.len());

            if cursor == packets.len() && self.table.pending_len() == 0 {
                break;
            }
            let mut next = u64::MAX;
            if cursor < packets.len() {
                next = next.min(ticks[cursor]);
            }
            if let Some(t) = self.table.next_due() {
                next = next.min(t);
            }
            if let Some(t) = self.table.next_idle_deadline(self.plan.idle_ticks) {
                next = next.min(t);
            }
            if self.hook.is_some() {
                next = next.min((now / eti + 1) * eti);
            }
            debug_assert!(next > now);
            now = next;
        }
        Ok(())
    }

    fn expire_idle(&mut self, now: u64) {
        for flow in self.table.expire_idle(now, self.plan.idle_ticks) {
            self.events.push(SimEvent::new(now, flow, SimEventKind::Expire));
        }
    }

    fn complete_installs(&mut self, now: u64) -> Result<(), SimError> {
        for flow in self.table.take_due(now) {
            if self.table.is_full() {
                let victim = self.install_victim().ok_or(SimError::EvictionFailed(now))?;
                self.table.remove(victim);
                self.events.push(SimEvent::evict(now, victim, EvictCause::Install));
            }
            self.table.install(flow, now);
            self.events.push(SimEvent::new(now, flow, SimEventKind::Install));
        }
        Ok(())
    }

    fn install_victim(&self) -> Option<FlowId> {
        match self.install_rule {
            InstallRule::Lru => evict_lru(&self.table),
            InstallRule::Lfu => evict_lfu(&self.table),
            InstallRule::Optimal => {
                let future = self.future.as_ref().expect("optimal policy keeps a future index");
                let packets = self.trace.packets();
                evict_optimal(&self.table, |f| future.next_of.get(&f).map(|&i| packets[i].timestamp))
            }
        }
    }

    fn process_packet(&mut self, i: usize, now: u64) -> Result<(), SimError> {
        let packet = self.trace.packets()[i];
        if let Some(future) = self.future.as_mut() {
            future.consume(i, packet.flow);
        }
        let hit = self.table.touch(packet.flow, now);
        self.stats.record(packet.timestamp, hit);
        self.outcomes.push(hit);
        if hit {
            self.window_hits += 1;
        } else if self.table.add_pending(packet.flow, now + self.plan.rti_ticks) {
            self.events.push(SimEvent::new(now, packet.flow, SimEventKind::PacketIn));
            if self.plan.rti_ticks == 0 {
                self.complete_installs(now)?;
            }
        }
        Ok(())
    }

    fn finish(self) -> SimOutcome {
        SimOutcome {
            stats: self.stats,
            outcomes: self.outcomes,
            events: self.events,
            decisions: self.decisions,
            plan: self.plan,
        }
    }
}

#[cfg(test)]
mod tests;
